//! Radio-map-embedded CSI tracking toolkit: a synthetic massive-MIMO
//! scenario simulator, covariance radio maps, a switching Kalman filter with
//! adaptive pilot sensing, blind map construction from compressed
//! observations, reference baselines, and an experiment harness.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mapbuilder;
pub mod metrics;
pub mod radiomap;
pub mod scenario;
pub mod sensing;
pub mod tracker;

pub use error::{Error, Result};
