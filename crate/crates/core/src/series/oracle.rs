//! Overlap evaluated by brute-force quadrature of the explicit fields.
//!
//! Works in waist units: the reference mode is the power-normalized Gaussian
//! `phi00(x - eta, y)` and the transmitted field is the weighted sum of
//! displaced copies `phi00(x + j delta, y)`. Shares no code with the closed
//! series beyond the parameter type.

use num_complex::Complex;
use num_traits::Zero;
use serde::Serialize;

use super::{OverlapResult, SeriesParams};
use crate::error::{Error, Result};
use crate::quadrature::{Nodes, Rule};
use crate::scalar::Scalar;

/// Minimum half-width, in waist radii, kept around each Gaussian that enters
/// the overlap.
pub const MIN_MARGIN: f64 = 6.0;

/// Orders with relative weight below this are not laid down on the grid.
const ORDER_WEIGHT_CUTOFF: f64 = 1e-17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSpec<T> {
    pub rule: Rule,
    pub nodes_x: usize,
    pub nodes_y: usize,
    /// Half-width of the x window in waist radii.
    pub half_width_x: T,
    /// Half-width of the y window in waist radii.
    pub half_width_y: T,
    /// Evaluate the y integral as its own 1-D rule (exactly equal to the 2-D
    /// tensor-product rule for a separable integrand).
    pub separable: bool,
}

impl<T: Scalar> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            rule: Rule::Trapezoid,
            nodes_x: 2001,
            nodes_y: 2001,
            half_width_x: T::lit(12.0),
            half_width_y: T::lit(12.0),
            separable: true,
        }
    }
}

impl<T: Scalar> QuadratureSpec<T> {
    fn check_coverage(&self, eta: T) -> Result<()> {
        let margin = T::lit(MIN_MARGIN);
        if self.half_width_x < margin + eta.abs() {
            return Err(Error::GridCoverage(format!(
                "x half-width {} must be at least {} + |eta| = {}",
                self.half_width_x,
                MIN_MARGIN,
                margin + eta.abs()
            )));
        }
        if self.half_width_y < margin {
            return Err(Error::GridCoverage(format!(
                "y half-width {} must be at least {}",
                self.half_width_y, MIN_MARGIN
            )));
        }
        Ok(())
    }

    fn x_nodes(&self) -> Result<Nodes<T>> {
        Nodes::new(
            self.rule,
            -self.half_width_x,
            self.half_width_x,
            self.nodes_x,
        )
    }

    fn y_nodes(&self) -> Result<Nodes<T>> {
        Nodes::new(
            self.rule,
            -self.half_width_y,
            self.half_width_y,
            self.nodes_y,
        )
    }
}

/// Power-normalized fundamental mode `sqrt(2/pi) exp(-(x^2 + y^2))` in waist
/// units.
fn fundamental<T: Scalar>(x: T, y: T) -> T {
    (T::lit(2.0) / T::PI()).sqrt() * (-(x * x + y * y)).exp()
}

/// One transverse factor of [`fundamental`].
fn fundamental_1d<T: Scalar>(x: T) -> T {
    (T::lit(2.0) / T::PI()).sqrt().sqrt() * (-(x * x)).exp()
}

/// Complex weights `t1 t2 tau p^j` of the orders that can touch the window.
fn order_weights<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    half_width_x: T,
) -> Vec<(T, Complex<T>)> {
    let t = params.surface_transmission();
    let base = Complex::new(t * t * params.bulk_amplitude_transmission(), T::zero());
    let p = params.roundtrip_parameter();
    let cutoff = T::lit(ORDER_WEIGHT_CUTOFF);
    let reach = half_width_x + T::lit(40.0);

    let mut out = Vec::new();
    let mut weight = base;
    let mut j = 0usize;
    while weight.norm() >= cutoff * base.norm() && j < 1_000_000 {
        let shift = T::from_usize(j).unwrap() * delta;
        if shift.abs() > reach {
            break;
        }
        out.push((shift, weight));
        weight = weight * p;
        j += 1;
    }
    out
}

/// Overlap `C = integral phi00*(x - eta, y) psi(x, y) dx dy` on a finite grid.
pub fn overlap_quadrature_oracle<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    eta: T,
    spec: &QuadratureSpec<T>,
) -> Result<OverlapResult<T>> {
    spec.check_coverage(eta)?;
    let xs = spec.x_nodes()?;
    let ys = spec.y_nodes()?;
    let orders = order_weights(params, delta, spec.half_width_x);

    let amplitude = if spec.separable {
        let cx = xs
            .points
            .iter()
            .zip(&xs.weights)
            .fold(Complex::<T>::zero(), |acc, (&x, &w)| {
                let psi = orders.iter().fold(Complex::<T>::zero(), |s, &(shift, a)| {
                    s + a * fundamental_1d(x + shift)
                });
                acc + psi * (w * fundamental_1d(x - eta))
            });
        let cy = ys.integrate(|y| {
            let g = fundamental_1d(y);
            g * g
        });
        cx * cy
    } else {
        let mut c = Complex::<T>::zero();
        for (&x, &wx) in xs.points.iter().zip(&xs.weights) {
            for (&y, &wy) in ys.points.iter().zip(&ys.weights) {
                let psi = orders.iter().fold(Complex::<T>::zero(), |s, &(shift, a)| {
                    s + a * fundamental(x + shift, y)
                });
                c = c + psi * (wx * wy * fundamental(x - eta, y));
            }
        }
        c
    };
    Ok(OverlapResult::from_amplitude(amplitude, orders.len()))
}

/// `integral |phi00|^2` on the grid of `spec`; 1 for an adequate grid.
pub fn power_normalization<T: Scalar>(spec: &QuadratureSpec<T>) -> Result<T> {
    let xs = spec.x_nodes()?;
    let ys = spec.y_nodes()?;
    let mut total = T::zero();
    for (&x, &wx) in xs.points.iter().zip(&xs.weights) {
        let row = ys.integrate(|y| {
            let f = fundamental(x, y);
            f * f
        });
        total = total + wx * row;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::overlap_series;

    #[test]
    fn fundamental_mode_is_power_normalized() {
        let spec = QuadratureSpec::<f64>::default();
        let norm = power_normalization(&spec).unwrap();
        assert!((norm - 1.0).abs() < 1e-10, "{norm}");
    }

    #[test]
    fn untilted_oracle_is_lossless() {
        let params = SeriesParams::new(0.5).unwrap();
        let res = overlap_quadrature_oracle(&params, 0.0, 0.0, &QuadratureSpec::default()).unwrap();
        assert!(res.loss < 1e-8, "{}", res.loss);
    }

    #[test]
    fn separable_and_full_grids_agree() {
        let params = SeriesParams::new(0.6).unwrap();
        let small = QuadratureSpec {
            nodes_x: 161,
            nodes_y: 121,
            half_width_x: 10.0,
            half_width_y: 7.0,
            ..QuadratureSpec::default()
        };
        let full = QuadratureSpec {
            separable: false,
            ..small
        };
        let a = overlap_quadrature_oracle(&params, 0.7, -0.4, &small).unwrap();
        let b = overlap_quadrature_oracle(&params, 0.7, -0.4, &full).unwrap();
        assert!((a.amplitude - b.amplitude).norm() < 1e-12);
    }

    #[test]
    fn matches_series_on_a_few_points() {
        let spec = QuadratureSpec::default();
        for &(r, d, e) in &[
            (0.27f64, 0.3, -0.1),
            (0.9, 1.0, -1.5),
            (0.05, 2.0, 0.0),
            (0.9, 0.0, -2.0),
        ] {
            let params = SeriesParams::new(r).unwrap();
            let q = overlap_quadrature_oracle(&params, d, e, &spec).unwrap();
            let s = overlap_series(&params, d, e).unwrap();
            assert!(
                (q.loss - s.loss).abs() < 1e-6,
                "R={r} d={d} e={e}: {} vs {}",
                q.loss,
                s.loss
            );
        }
    }

    #[test]
    fn gauss_legendre_grid() {
        let spec = QuadratureSpec {
            rule: Rule::GaussLegendre,
            nodes_x: 400,
            nodes_y: 120,
            ..QuadratureSpec::default()
        };
        let params = SeriesParams::new(0.5f64).unwrap();
        let q = overlap_quadrature_oracle(&params, 0.8, -0.6, &spec).unwrap();
        let s = overlap_series(&params, 0.8, -0.6).unwrap();
        assert!((q.loss - s.loss).abs() < 1e-8);
    }

    #[test]
    fn rejects_narrow_grid() {
        let params = SeriesParams::new(0.5).unwrap();
        let spec = QuadratureSpec {
            half_width_x: 7.0,
            ..QuadratureSpec::default()
        };
        assert!(matches!(
            overlap_quadrature_oracle(&params, 0.1, -2.0, &spec),
            Err(Error::GridCoverage(_))
        ));
        let spec = QuadratureSpec {
            half_width_y: 3.0,
            ..QuadratureSpec::default()
        };
        assert!(overlap_quadrature_oracle(&params, 0.1, 0.0, &spec).is_err());
    }
}
