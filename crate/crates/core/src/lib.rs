//! Walk-off insertion loss of a tilted Fabry-Perot etalon transmitting a
//! Gaussian beam in a unidirectional ring cavity.
//!
//! * [`analytic`]: closed-form loss limits, optimal offsets and reflectivities,
//!   selection loss.
//! * [`series`]: overlap of the transmitted field with the cavity mode as a
//!   sum over reflection orders, plus a grid-quadrature oracle.
//! * [`optimizer`]: minimization of the series loss over the lateral offset
//!   and sweeps over the walk-off.
//! * [`coating`]: material table, quarter-wave reflectivities and loss ratios.
//! * [`laser`]: output power versus tilt and fits of the fixed cavity loss.
//!
//! Every model is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`.

// `!(x > 0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod coating;
pub mod error;
pub mod laser;
pub mod minimize;
pub mod optimizer;
pub mod output;
pub mod quadrature;
pub mod scalar;
pub mod series;

pub use error::{Error, Result};
pub use scalar::{Scalar, SPEED_OF_LIGHT};

pub type BeamGeometryF64 = analytic::BeamGeometry<f64>;
pub type EtalonDesignF64 = analytic::EtalonDesign<f64>;
pub type WalkoffStateF64 = analytic::WalkoffState<f64>;
pub type SeriesParamsF64 = series::SeriesParams<f64>;
pub type OverlapResultF64 = series::OverlapResult<f64>;
pub type QuadratureSpecF64 = series::QuadratureSpec<f64>;
pub type OptimizationResultF64 = optimizer::OptimizationResult<f64>;
pub type SweepTableF64 = optimizer::SweepTable<f64>;
pub type LaserCavityParamsF64 = laser::LaserCavityParams<f64>;
pub type TuningDataPointF64 = laser::TuningDataPoint<f64>;
pub type TuningCurveF64 = laser::TuningCurve<f64>;
pub type FixedLossFitF64 = laser::FixedLossFit<f64>;

pub type BeamGeometryF32 = analytic::BeamGeometry<f32>;
pub type EtalonDesignF32 = analytic::EtalonDesign<f32>;
pub type SeriesParamsF32 = series::SeriesParams<f32>;
