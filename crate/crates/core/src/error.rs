use thiserror::Error;

/// Errors raised by the simulation and exact-algebra layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("box of {box_len} sites cannot hold a support of diameter {diameter}")]
    SupportExceedsBox { diameter: usize, box_len: usize },

    #[error("particle count {m} outside 0..={box_len}")]
    CountOutOfRange { m: usize, box_len: usize },

    #[error("window of {got} sites does not cover the {needed} sites of the local function")]
    WindowTooSmall { needed: usize, got: usize },

    #[error("support of the observer does not fit in a ring of {ring} sites: {reason}")]
    SupportOverflow { ring: usize, reason: String },

    #[error("ellipticity violated: rate {rate} outside [{floor}, {ceiling}]")]
    EllipticityViolated { rate: f64, floor: f64, ceiling: f64 },

    #[error("reversibility violated: rate table entry {index} depends on the occupancy of the exchanged sites")]
    ReversibilityViolated { index: usize },

    #[error("jump kernel has nonzero mean {mean}")]
    MeanNotZero { mean: f64 },

    #[error("jump kernel support {support:?} does not generate the integers")]
    NotIrreducible { support: Vec<i32> },

    #[error("asymmetry a_n = {a_n} gives jump probabilities outside [0, 1]")]
    AsymmetryOutOfRange { a_n: f64 },

    #[error("no transition has positive rate (frozen configuration)")]
    FrozenState,

    #[error("sector with {states} states exceeds the enumeration limit {limit}")]
    SectorTooLarge { states: u128, limit: usize },

    #[error("sector is not connected under the dynamics")]
    DisconnectedSector,

    #[error("function is not mean-zero on the sector (mean {mean})")]
    NotMeanZero { mean: f64 },

    #[error("supports of blocks {first} and {second} overlap")]
    OverlappingSupports { first: usize, second: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("scaling fit requires strictly positive data, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },

    #[error("covariance matrix is not positive semidefinite")]
    NotPositiveDefinite,

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("operation unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
