//! Lossless compression for neural-network weights.
//!
//! Each fixed-size chunk of the input is split into byte groups (the exponent
//! byte of every element in one stream, the remaining bytes in others), and
//! each group is encoded independently with Huffman, an LZ backend, or stored
//! verbatim. See [`pipeline`] for the entry points.

pub mod analysis;
pub mod codec;
pub mod delta;
pub mod dtype;
pub mod error;
pub mod files;
pub mod format;
pub mod pipeline;
pub mod regroup;
pub mod safetensors;

pub use codec::{Method, SelectionMode};
pub use delta::{apply_delta, compress_delta, plan_bases, BaseMode, BaseSchedule};
pub use dtype::DType;
pub use error::{Error, Result};
pub use files::{apply_delta_file, compress_delta_file, compress_file, decompress_file, InputFormat};
pub use format::{Container, ContainerHeader};
pub use pipeline::{
    compress_bytes, compress_stream, decompress_chunk, decompress_container, decompress_stream, CompressConfig,
    CompressStats, ContainerReader,
};
pub use regroup::{regroup, ungroup, GroupedChunk};
