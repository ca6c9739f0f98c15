use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural parameter is outside its admissible range.
    #[error("parameter violation: {0}")]
    Parameter(String),

    /// The root has no parent.
    #[error("the root vertex has no parent")]
    NoParent,

    /// A vertex lies outside the truncated tree or violates the branching rule.
    #[error("invalid vertex {address}: {reason}")]
    InvalidVertex { address: String, reason: String },

    /// Two boundary addresses coincide, so their distance is below resolution.
    #[error("same cell: distance below resolution at depth {depth}")]
    SameCell { depth: usize },

    /// An operation requires a regular (uniformly branching) tree.
    #[error("unsupported on non-regular trees: {0}")]
    NonRegular(String),

    /// A claimed upper gradient fails the upper-gradient inequality.
    #[error("not an upper gradient: {0}")]
    NotAnUpperGradient(String),

    /// A smoothness/integrability exponent is outside the regime where the
    /// operation is defined; carries the admissible interval.
    #[error("regime violation: {what} = {value} outside admissible ({lo}, {hi}{closed}")]
    Regime {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
        /// "]" if the upper endpoint is admissible, ")" otherwise.
        closed: &'static str,
    },

    /// The growth condition required for an energy pullback fails.
    #[error("pullback condition failure at vertex {vertex}: left side {value} keeps growing")]
    ConditionFailure { vertex: String, value: f64 },

    /// Too few usable samples to perform a fit.
    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    /// Induced boundary map cannot be resolved at the current depth.
    #[error("resolution insufficient: {0}")]
    ResolutionInsufficient(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
