use thiserror::Error;

pub type Result<T> = std::result::Result<T, FmbError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmbError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate fitness: no variant with positive weight has positive performance")]
    DegenerateFitness,

    #[error("unsupported mass creation at index {0}: q is zero but the change is not")]
    UnsupportedMassCreation(usize),

    #[error("infinite divergence at index {0}: p has mass where r has none")]
    InfiniteDivergence(usize),

    #[error("non-concave locus: curvature has no repairable direction")]
    NonConcaveLocus,

    #[error("degenerate importance weights: effective sample size {ess:.3} below {min}")]
    DegenerateImportanceWeights { ess: f64, min: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("outside potential domain: {0}")]
    OutsideDomain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("evidence underflow: no support point carries finite likelihood")]
    EvidenceUnderflow,

    #[error("support violation at index {0}: estimated posterior has mass outside the prior support")]
    SupportViolation(usize),

    #[error("non-factorizable support: {0}")]
    NonFactorizable(String),

    #[error("empty group at index {0}")]
    EmptyGroup(usize),

    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl FmbError {
    /// Short machine-readable tag, used by the CLI's JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            FmbError::Dimension(_) => "dimension",
            FmbError::InvalidProbability(_) => "invalid_probability",
            FmbError::InvalidInput(_) => "invalid_input",
            FmbError::DegenerateFitness => "degenerate_fitness",
            FmbError::UnsupportedMassCreation(_) => "unsupported_mass_creation",
            FmbError::InfiniteDivergence(_) => "infinite_divergence",
            FmbError::NonConcaveLocus => "non_concave_locus",
            FmbError::DegenerateImportanceWeights { .. } => "degenerate_importance_weights",
            FmbError::NonFinite(_) => "non_finite",
            FmbError::OutsideDomain(_) => "outside_domain",
            FmbError::Singular(_) => "singular",
            FmbError::EvidenceUnderflow => "evidence_underflow",
            FmbError::SupportViolation(_) => "support_violation",
            FmbError::NonFactorizable(_) => "non_factorizable",
            FmbError::EmptyGroup(_) => "empty_group",
            FmbError::Unsupported(_) => "unsupported",
        }
    }
}
