use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("location {id} is outside a grid of {cells} cells")]
    InvalidLocation { id: u32, cells: u32 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("slots must be strictly increasing (slot {next} follows {prev})")]
    NonMonotonicSlots { prev: u32, next: u32 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: alloc::vec::Vec<usize>, got: alloc::vec::Vec<usize> },
    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("trajectory belongs to user {got}, expected {expected}")]
    ForeignTrajectory { expected: u32, got: u32 },
    #[error("message decode failed: {0}")]
    Decode(String),
    #[error("only {available} usable clients, need at least {required}")]
    InsufficientClients { available: usize, required: usize },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
