use thiserror::Error;

/// Errors raised by the ring, FSS, sharing, and runtime layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("ring width mismatch: {0} vs {1} bits")]
    BitsMismatch(u32, u32),

    #[error("unsupported ring width {0} (expected 4..=64)")]
    UnsupportedBits(u32),

    #[error("precision mismatch: {0} vs {1} decimals")]
    PrecisionMismatch(u32, u32),

    #[error(
        "value {value} does not fit the signed range of a {bits}-bit ring at precision {precision}"
    )]
    FixedPointOverflow {
        value: f64,
        bits: u32,
        precision: u32,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed key: {0}")]
    MalformedKey(String),

    #[error("key file: {0}")]
    Format(String),

    #[error("preprocessing material {kind} with ids {first}..{end} was already consumed")]
    Reuse {
        kind: &'static str,
        first: u64,
        end: u64,
    },

    #[error("preprocessing exhausted: need {0}")]
    PrepExhausted(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("transport: {0}")]
    Transport(String),

    #[error("timed out after {0} ms waiting for peer")]
    Timeout(u64),

    #[error("protocol desync: expected frame tag {expected:#04x}, got {got:#04x}")]
    Desync { expected: u8, got: u8 },

    #[error("peer aborted the session: {0}")]
    PeerAborted(String),

    #[error("session closed")]
    SessionClosed,

    #[error("audit failed at indices {0:?}")]
    AuditFailed(Vec<usize>),

    #[error("federated round aborted: {0}")]
    FederatedAbort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
