//! Marginal attribution by conditioning on output quantiles.
//!
//! The core is generic over the scalar type (`f32` or `f64`); the aliases at
//! the bottom fix it to `f64`, which is what the command line tool uses.

pub mod baselines;
pub mod data;
pub mod derivatives;
pub mod distortion;
pub mod engine;
pub mod error;
pub mod model;
pub mod quantile;
pub mod reference;
pub mod scalar;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{sigmoid, Scalar};

pub type Mlp = model::MlpModel<f64>;
pub type Report = engine::AttributionReport<f64>;
pub type Data = data::Dataset<f64>;
pub type Grid = quantile::QuantileGrid<f64>;
