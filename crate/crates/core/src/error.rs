use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range for vocab of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },

    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("weights are not aligned with the loss mask: {0}")]
    MisalignedWeights(String),

    #[error("position ({seq}, {pos}) is not supervised")]
    UnsupervisedPosition { seq: usize, pos: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("not a distribution: {0}")]
    NotADistribution(String),

    #[error("missing input for strategy {strategy}: {what}")]
    MissingInput {
        strategy: &'static str,
        what: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),

    #[error("cannot build disjoint splits: {0}")]
    Unsatisfiable(String),
}
