//! Desynchronization of thermostatically controlled loads (TCLs).
//!
//! A population of TCLs is modelled as a set of switching oscillators. A
//! distributed-averaging consensus drives every switching frequency to the
//! population mean, after which uniform phase offsets spread the ON windows
//! so the individual square waves cancel in aggregate. Around that core sit
//! the hybrid thermal model, a Boolean Kuramoto baseline, an empirical
//! offset-to-reduction table with a load-following controller, the grid
//! fluctuation metrics, and a small regressor that learns the offset map.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the bottom of this file fix the scalar to `f64`, which is what the CLI and
//! the acceptance suite use.

pub mod consensus;
pub mod delay;
pub mod ensemble;
mod error;
pub mod learned;
pub mod metrics;
mod scalar;
pub mod seed;
pub mod signals;
pub mod thermal;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TclParamsF64 = thermal::TclParams<f64>;
pub type TclParamsF32 = thermal::TclParams<f32>;
pub type TclThermalStateF64 = thermal::TclThermalState<f64>;
pub type WeightMatrixF64 = consensus::WeightMatrix<f64>;
pub type FrequencyVectorF64 = consensus::FrequencyVector<f64>;
pub type OscStateF64 = signals::OscState<f64>;
pub type PopulationConfigF64 = ensemble::PopulationConfig<f64>;
pub type PopulationConfigF32 = ensemble::PopulationConfig<f32>;
pub type PopulationF64 = ensemble::Population<f64>;
pub type SimResultF64 = ensemble::SimResult<f64>;
pub type SimResultF32 = ensemble::SimResult<f32>;
pub type SeriesF64 = metrics::Series<f64>;
pub type DelayTableF64 = delay::DelayTable<f64>;
pub type ReferenceScheduleF64 = delay::ReferenceSchedule<f64>;
pub type DatasetF64 = learned::Dataset<f64>;
pub type ScalerF64 = learned::Scaler<f64>;
pub type MlpModelF64 = learned::MlpModel<f64>;
pub type MlpModelF32 = learned::MlpModel<f32>;
