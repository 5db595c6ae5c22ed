//! Bayesian spatially-explicit density estimation from counts of unmarked
//! or partially-marked animals.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: geometry, the Gaussian encounter kernel and likelihoods.
//! * [`simulator`]: synthetic datasets and the preset study designs.
//! * [`sampler`]: data-augmented Metropolis-within-Gibbs samplers.
//! * [`posterior`]: summaries, split R-hat, density rasters, calibration.
//! * [`oracle`]: brute-force validators for tiny instances.

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod model;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{
    AugmentedState, CountData, LatentCounts, MarkedObservations, ModelParams, Point, PriorSpec,
    SigmaPrior, StateSpace, TrapArray,
};
pub use sampler::{Algorithm, ChainOutput, McmcConfig, Problem};
pub use simulator::{Scenario, SimulatedTruth, TrapLayout};
pub use posterior::{CalibrationReport, DensityRaster, ParamSummary, PosteriorSummary};
