use alloc::string::String;

/// Errors produced by the steering core.
///
/// Variants are grouped loosely by cause: malformed inputs, model contract
/// violations, and numeric degeneracies. The CLI maps these groups onto
/// distinct exit codes via [`Error::is_numeric`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("singular spectrum has no positive values")]
    DegenerateSpectrum,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    InvalidToken { id: u32, vocab_size: usize },
    #[error("sequence of {len} tokens exceeds capacity {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("hook at layer {layer} returned a vector of dim {found}, expected {expected}")]
    HookContractViolation { layer: usize, expected: usize, found: usize },
    #[error("layer {layer} out of range for a {n_layers}-layer model")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("positive and negative activations are indistinguishable at layer {layer} (|delta| = {norm:e})")]
    DegeneratePrototype { layer: usize, norm: f64 },
    #[error("activation has zero norm")]
    ZeroActivation,
    #[error("activation is antipodal to the target direction; geodesic is undefined")]
    AntipodalDirection,
    #[error("invalid gate parameters: {0}")]
    InvalidGateParams(String),
    #[error("invalid steering plan: {0}")]
    InvalidPlan(String),
    #[error("item {item}: expected {expected} scores, found {found}")]
    IncompleteScores { item: usize, expected: usize, found: usize },
}

impl Error {
    /// True for failures of the math itself rather than of the inputs' shape
    /// or encoding.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSpectrum
                | Error::DegeneratePrototype { .. }
                | Error::ZeroActivation
                | Error::AntipodalDirection
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
