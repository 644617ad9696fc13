//! Column-partitioned parameter-server training.
//!
//! Each shard owns a contiguous range of dimensions of every input and
//! output vector. Clients send pair ids and a sampling seed; shards answer
//! with partial dot products, clients reply with one coefficient per pair.
//! No vector data crosses the wire.
//!
//! Frames are `u32 length | u8 type | payload`, little-endian, with type
//! tags REQ=1, PART=2, COEF=3, CTRL=4.

mod client;
mod partition;
mod protocol;
mod runner;
mod shard;
mod transport;

pub use client::{client_aggregate, Client};
pub use partition::{partition_dims, DimSlice};
pub use protocol::{
    read_frame, CoefficientBroadcast, Control, DecodeError, Message, MinibatchRequest,
    PartialDotsResponse, FRAME_HEADER, MSG_COEF, MSG_CTRL, MSG_PART, MSG_REQ,
};
pub use runner::{
    client_ranges, run_distributed, serialized_order, ClientSchedule, PsConfig, PsEpochStats,
    PsOutcome,
};
pub use shard::{
    assemble_checkpoint, checkpoint_path, run_shard, shard_apply_updates, shard_handle_minibatch,
    ShardOptions, ShardState,
};
pub use transport::{
    wire, ByteCounter, ClientEndpoint, FrameSink, Inbound, ShardEndpoint, TrafficReport,
    TransportKind, TypeTraffic,
};
