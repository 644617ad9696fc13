//! Paired input/output embedding matrices and named vector sets.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::{dot_f64, Real};
use crate::vocab::Vocabulary;

/// Default embedding dimensionality.
pub const DEFAULT_DIM: usize = 300;

/// Input (`v`) and output (`v'`) vectors for every vocabulary id, stored
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    rows: usize,
    input: Vec<T>,
    output: Vec<T>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            rows,
            input: vec![T::zero(); rows * dim],
            output: vec![T::zero(); rows * dim],
        }
    }

    /// Input entries uniform in `[-0.5/d, 0.5/d]`, output entries zero.
    pub fn init(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        Self::init_rows(vocab.len(), dim, seed)
    }

    pub fn init_rows(rows: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        let mut table = Self::zeros(rows, dim);
        let mut rng = SplitMix64::new(derive_seed(seed, &[0x1417]));
        let half_width = 0.5 / dim as f64;
        for x in &mut table.input {
            *x = T::from_f64_lossy((rng.next_f64() * 2.0 - 1.0) * half_width);
        }
        Ok(table)
    }

    pub fn from_parts(rows: usize, dim: usize, input: Vec<T>, output: Vec<T>) -> Result<Self> {
        if input.len() != rows * dim || output.len() != rows * dim {
            return Err(Error::invalid("matrix sizes do not match rows x dim"));
        }
        Ok(EmbeddingTable {
            dim,
            rows,
            input,
            output,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input(&self, id: usize) -> &[T] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output(&self, id: usize) -> &[T] {
        &self.output[id * self.dim..(id + 1) * self.dim]
    }

    pub fn input_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.output[id * self.dim..(id + 1) * self.dim]
    }

    /// Mutable input row of `center` together with output row of `context`.
    pub fn pair_mut(&mut self, center: usize, context: usize) -> (&mut [T], &mut [T]) {
        let d = self.dim;
        (
            &mut self.input[center * d..(center + 1) * d],
            &mut self.output[context * d..(context + 1) * d],
        )
    }

    pub fn input_matrix(&self) -> &[T] {
        &self.input
    }

    pub fn output_matrix(&self) -> &[T] {
        &self.output
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
    }

    pub fn input_vectors(&self, vocab: &Vocabulary) -> VectorSet<T> {
        self.named(vocab, &self.input)
    }

    pub fn output_vectors(&self, vocab: &Vocabulary) -> VectorSet<T> {
        self.named(vocab, &self.output)
    }

    fn named(&self, vocab: &Vocabulary, data: &[T]) -> VectorSet<T> {
        assert_eq!(vocab.len(), self.rows, "vocabulary does not match table");
        let tokens = vocab.entries().iter().map(|e| e.token.clone()).collect();
        VectorSet::new(tokens, self.dim, data.to_vec()).expect("shape checked")
    }
}

/// Cosine similarity with 64-bit accumulation.
pub fn cosine<T: Real>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let uu = dot_f64(u, u);
    let vv = dot_f64(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot_f64(u, v) / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Named vectors of one dimensionality, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet<T> {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> VectorSet<T> {
    pub fn new(tokens: Vec<String>, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != tokens.len() * dim {
            return Err(Error::invalid("vector data does not match tokens x dim"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token '{}'", t)));
            }
        }
        Ok(VectorSet {
            tokens,
            index,
            dim,
            data,
        })
    }

    pub fn empty(dim: usize) -> Self {
        VectorSet {
            tokens: Vec::new(),
            index: HashMap::new(),
            dim,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, token: String, vector: &[T]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: vector.len(),
                right: self.dim,
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::invalid(format!("duplicate token '{}'", token)));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[T]> {
        self.position(token).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.tokens
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.as_str(), self.row(i)))
    }

    /// Subset whose tokens satisfy `keep`, preserving order.
    pub fn filter<F: Fn(&str) -> bool>(&self, keep: F) -> Self {
        let mut out = Self::empty(self.dim);
        for (t, v) in self.iter() {
            if keep(t) {
                out.push(t.to_string(), v).expect("unique tokens");
            }
        }
        out
    }

    /// Text format: header `count dim`, then `token v1 ... vd` per line.
    /// Tokens may contain spaces; the last `dim` fields are the vector.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (t, v) in self.iter() {
            w.write_all(t.as_bytes())?;
            for x in v {
                write!(w, " {}", x)?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))??;
        let mut h = header.split_whitespace();
        let (Some(n), Some(dim), None) = (h.next(), h.next(), h.next()) else {
            return Err(Error::parse(1, "header must be '<count> <dim>'"));
        };
        let n: usize = n.parse().map_err(|_| Error::parse(1, "bad count"))?;
        let dim: usize = dim.parse().map_err(|_| Error::parse(1, "bad dim"))?;
        let mut set = Self::empty(dim);
        set.tokens.reserve(n);
        set.data.reserve(n * dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < dim + 1 {
                return Err(Error::parse(lineno, "too few fields"));
            }
            let split = fields.len() - dim;
            let token = fields[..split].join(" ");
            let mut row = Vec::with_capacity(dim);
            for f in &fields[split..] {
                row.push(
                    f.parse::<T>()
                        .map_err(|_| Error::parse(lineno, format!("bad number '{}'", f)))?,
                );
            }
            set.push(token, &row)
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        if set.len() != n {
            return Err(Error::parse(
                1,
                format!("header announces {} vectors, found {}", n, set.len()),
            ));
        }
        Ok(set)
    }
}
