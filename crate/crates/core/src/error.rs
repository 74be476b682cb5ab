use std::io;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported entropy backend id {0}")]
    UnsupportedBackend(u8),

    #[error("offset arithmetic overflowed")]
    Overflow,

    #[error("input length {len} is not a multiple of the element size {element_bytes}")]
    MisalignedInput { len: u64, element_bytes: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: u64, actual: u64 },

    #[error("empty input")]
    EmptyInput,

    #[error("corrupt huffman table: {0}")]
    CorruptTable(&'static str),

    #[error("huffman payload ended before all symbols were decoded")]
    TruncatedPayload,

    #[error("huffman payload has {0} trailing bits (at most 7 allowed)")]
    ExcessBits(u64),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("base does not match the digest recorded in the delta container")]
    BaseDigestMismatch,

    #[error("container is not a delta container")]
    NotDelta,

    #[error("invalid base period {0}")]
    InvalidPeriod(usize),

    #[error("checkpoint count must be at least 1")]
    NoCheckpoints,

    #[error("exponent histogram requires a floating-point dtype")]
    OpaqueUnsupported,

    #[error("malformed safetensors header: {0}")]
    MalformedHeader(String),

    #[error("tensor spans overlap: {0}")]
    OverlappingSpans(String),

    #[error("tensor span out of bounds: {0}")]
    SpanOutOfBounds(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors that originate in the operating system rather than in
    /// the data being processed.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptPayload(msg.into())
    }
}
