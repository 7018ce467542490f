//! Simulation and estimation toolkit for a two-photon (NOON state) Sagnac
//! fiber gyroscope: synthetic detection data under rotation, coincidence
//! extraction, fringe fitting and precision analysis against the standard
//! quantum and Heisenberg limits.

pub mod commands;
pub mod config;
pub mod error;
pub mod estimator;
pub mod formats;
pub mod par;
pub mod physics;
pub mod precision;
pub mod rotsim;
pub mod seed;
pub mod stats;
pub mod tagproc;

pub use error::{Error, Result};
pub use estimator::{fit_rate_model, FitOptions, FitResult, Weighting};
pub use physics::{InterferometerGeometry, RateModelParams};
pub use precision::{build_report, PrecisionReport};
pub use rotsim::{BinnedSeries, RotationProfile, SourceModel};
