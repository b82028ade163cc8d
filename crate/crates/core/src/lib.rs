pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod lattice;
pub mod localfn;
pub mod outheory;
pub mod spectral;
pub mod stats;

pub use dynamics::{build_rate_model, evolve, ModelSpec, ObservationRecord, RateModel, Schedule, SimulationState, Transition};
pub use error::{Error, Result};
pub use fields::{Observer, TestFunction};
pub use lattice::{mobility, sample_product_measure, Configuration, ModelParams, RandomSource};
pub use localfn::{Correction, LocalFunction, Profile};
