//! Recovery of MIMO channel state information from phase-distorted CSI.
//!
//! The crate is generic over the real scalar ([`Real`], implemented for `f32`
//! and `f64`); the `*64` aliases below fix it to `f64`, which is what the
//! experiment harness and the CLI use.

pub mod baseline;
pub mod crlb;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::{Cx, Real};

pub type PilotSet64 = model::PilotSet<f64>;
pub type PhaseDistortion64 = model::PhaseDistortion<f64>;
pub type ChannelState64 = model::ChannelState<f64>;
pub type Observation64 = model::Observation<f64>;
pub type FilterState64 = model::FilterState<f64>;
pub type EstimatorConfig64 = estimator::EstimatorConfig<f64>;
pub type MapSolution64 = estimator::MapSolution<f64>;
pub type KalmanMap64 = estimator::KalmanMap<f64>;
pub type SimTrace64 = sim::SimTrace<f64>;

pub type PilotSet32 = model::PilotSet<f32>;
pub type KalmanMap32 = estimator::KalmanMap<f32>;
