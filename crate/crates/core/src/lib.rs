//! Nonlinear identification and compensation of parametric array
//! loudspeakers.
//!
//! The crate covers the whole offline workflow: a Berktay-model plant
//! simulator standing in for the hardware, a second-order Volterra baseline
//! with pth-order inverses, a from-scratch feedforward WaveNet used both as an
//! identified model and as an inverse preprocessor, and THD/IMD measurement.

pub mod config;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plant;
pub mod volterra;
pub mod workflow;

pub use config::RunConfig;
pub use dsp::{FirFilter, Signal, StftConfig};
pub use error::{Error, Result};
pub use metrics::{DistortionReport, MetricSettings, SystemUnderTest};
pub use nn::{WaveNetConfig, WaveNetModel, WaveNetParams};
pub use plant::{PlantConfig, PlantSpec};
pub use volterra::{LinearReferenceModel, NlmsConfig, VolterraModel};
