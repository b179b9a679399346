//! Active acquisition of Cartesian k-space columns as a sequential decision
//! problem: a simulated scanner environment, baseline and oracle policies, a
//! Double DQN agent, and the evaluation harness around them.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, with `*32` variants for `f32`. The agent, its
//! training loop and the reports work in `f64`.

pub mod data;
pub mod ddqn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod policies;
pub mod report;
pub mod scalar;
pub mod transforms;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image = transforms::Image<f64>;
pub type Image32 = transforms::Image<f32>;
pub type KSpace = transforms::KSpace<f64>;
pub type KSpace32 = transforms::KSpace<f32>;
pub type Reconstruction = transforms::Reconstruction<f64>;
pub type Reconstruction32 = transforms::Reconstruction<f32>;
pub type Dft2 = transforms::Dft2<f64>;
pub type Dft2_32 = transforms::Dft2<f32>;
pub type Mlp = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type AcquisitionEnv = env::AcquisitionEnv<f64>;
pub type AcquisitionEnv32 = env::AcquisitionEnv<f32>;
pub type Observation = env::Observation<f64>;
pub type EpisodeRecord = env::EpisodeRecord<f64>;
pub type MetricCurve = metrics::MetricCurve<f64>;
pub type Dealiaser = nn::Dealiaser<f64>;

pub use transforms::Mask;
