use crate::error::{Error, Result};

/// Contiguous range of embedding dimensions owned by one shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimSlice {
    pub shard_id: usize,
    /// Inclusive.
    pub lo: usize,
    /// Exclusive.
    pub hi: usize,
}

impl DimSlice {
    pub fn width(&self) -> usize {
        self.hi - self.lo
    }
}

/// Splits `[0, dim)` among `shards` in shard order; the first `dim % shards`
/// shards get one extra dimension.
pub fn partition_dims(dim: usize, shards: usize) -> Result<Vec<DimSlice>> {
    if shards == 0 || shards > dim {
        return Err(Error::invalid(format!(
            "cannot split {} dimensions among {} shards",
            dim, shards
        )));
    }
    let base = dim / shards;
    let extra = dim % shards;
    let mut lo = 0;
    Ok((0..shards)
        .map(|shard_id| {
            let width = base + usize::from(shard_id < extra);
            let slice = DimSlice {
                shard_id,
                lo,
                hi: lo + width,
            };
            lo += width;
            slice
        })
        .collect())
}
