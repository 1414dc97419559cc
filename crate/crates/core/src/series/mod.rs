//! Transmitted-field overlap from the sum over internal reflection orders.
//!
//! Order `j` leaves the etalon displaced by `-j * delta` waist radii and
//! weighted by `p^j`, with `p = R tau^2 exp(-i Phi)` the round-trip parameter.
//! Its overlap with a reference mode centred at `eta` is
//! `exp(-(j delta + eta)^2 / 2)`, so
//!
//! ```text
//! C = (1 - R) tau * sum_j p^j exp(-(j delta + eta)^2 / 2),   L = 1 - |C|^2
//! ```

mod oracle;

pub use oracle::{overlap_quadrature_oracle, power_normalization, QuadratureSpec};

use num_complex::Complex;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::analytic::{check_reflectivity, EtalonDesign};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gaussian exponents below this are treated as exact zeros.
const UNDERFLOW_EXPONENT: f64 = -745.0;

pub const DEFAULT_TRUNCATION_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_TERMS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesParams<T> {
    reflectivity: T,
    bulk_amplitude_transmission: T,
    roundtrip_phase: T,
    truncation_tolerance: T,
    max_terms: usize,
}

impl<T: Scalar> SeriesParams<T> {
    /// Resonant, lossless etalon with default truncation settings.
    pub fn new(reflectivity: T) -> Result<Self> {
        check_reflectivity(reflectivity)?;
        Ok(Self {
            reflectivity,
            bulk_amplitude_transmission: T::one(),
            roundtrip_phase: T::zero(),
            truncation_tolerance: T::lit(DEFAULT_TRUNCATION_TOLERANCE),
            max_terms: DEFAULT_MAX_TERMS,
        })
    }

    pub fn from_etalon(etalon: &EtalonDesign<T>) -> Result<Self> {
        Self::new(etalon.reflectivity())?
            .with_bulk_transmission(etalon.bulk_amplitude_transmission())?
            .with_roundtrip_phase(etalon.roundtrip_phase())
    }

    pub fn with_bulk_transmission(mut self, tau: T) -> Result<Self> {
        if !(tau > T::zero() && tau <= T::one()) {
            return Err(Error::invalid(
                "bulk_amplitude_transmission",
                "must lie in (0, 1]",
            ));
        }
        self.bulk_amplitude_transmission = tau;
        Ok(self)
    }

    pub fn with_roundtrip_phase(mut self, phase: T) -> Result<Self> {
        if !phase.is_finite() {
            return Err(Error::invalid("roundtrip_phase", "must be finite"));
        }
        self.roundtrip_phase = phase;
        Ok(self)
    }

    pub fn with_truncation(mut self, tolerance: T, max_terms: usize) -> Result<Self> {
        if !(tolerance > T::zero()) {
            return Err(Error::invalid("truncation_tolerance", "must be positive"));
        }
        if max_terms == 0 {
            return Err(Error::invalid("max_terms", "must be at least 1"));
        }
        self.truncation_tolerance = tolerance;
        self.max_terms = max_terms;
        Ok(self)
    }

    pub fn reflectivity(&self) -> T {
        self.reflectivity
    }

    pub fn bulk_amplitude_transmission(&self) -> T {
        self.bulk_amplitude_transmission
    }

    pub fn roundtrip_phase(&self) -> T {
        self.roundtrip_phase
    }

    pub fn truncation_tolerance(&self) -> T {
        self.truncation_tolerance
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    /// Amplitude transmission of one surface, `sqrt(1 - R)`.
    pub fn surface_transmission(&self) -> T {
        (T::one() - self.reflectivity).sqrt()
    }

    /// Amplitude reflectivity of one surface, `sqrt(R)`.
    pub fn surface_reflection(&self) -> T {
        self.reflectivity.sqrt()
    }

    /// `r1 r2 tau^2 exp(-i Phi)`.
    pub fn roundtrip_parameter(&self) -> Complex<T> {
        let tau = self.bulk_amplitude_transmission;
        let r = self.surface_reflection();
        Complex::from_polar(r * r * tau * tau, -self.roundtrip_phase)
    }

    /// `t1 t2 tau`.
    pub fn prefactor(&self) -> T {
        let t = self.surface_transmission();
        t * t * self.bulk_amplitude_transmission
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapResult<T> {
    #[serde(skip)]
    pub amplitude: Complex<T>,
    pub loss: T,
    pub terms_used: usize,
}

impl<T: Scalar> OverlapResult<T> {
    pub(crate) fn from_amplitude(amplitude: Complex<T>, terms_used: usize) -> Self {
        let loss = (T::one() - amplitude.norm_sqr())
            .max(T::zero())
            .min(T::one());
        Self {
            amplitude,
            loss,
            terms_used,
        }
    }
}

/// Sums reflection orders until the remaining tail is provably below
/// `truncation_tolerance * |partial sum|`.
///
/// The tail bound is `|p|^(J+1) g / (1 - |p|)` where `g` bounds the Gaussian
/// factor of every omitted order: `1` while the orders still approach the
/// reference mode, the next order's factor once they move away from it.
pub fn overlap_series<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    eta: T,
) -> Result<OverlapResult<T>> {
    if !(delta.is_finite() && eta.is_finite()) {
        return Err(Error::invalid("delta/eta", "must be finite"));
    }
    let p = params.roundtrip_parameter();
    let p_abs = p.norm();
    let underflow = T::lit(UNDERFLOW_EXPONENT);
    let half = T::lit(0.5);
    let tolerance = params.truncation_tolerance;

    let mut sum = Complex::<T>::zero();
    let mut weight = Complex::<T>::one();
    let mut weight_abs = T::one();
    let mut j = 0usize;
    loop {
        let offset = T::from_usize(j).unwrap() * delta + eta;
        let exponent = -half * offset * offset;
        if exponent >= underflow {
            sum = sum + weight * exponent.exp();
        }

        weight = weight * p;
        weight_abs = weight_abs * p_abs;
        let next = T::from_usize(j + 1).unwrap() * delta + eta;
        let receding =
            delta.is_zero() || next.is_zero() || (next > T::zero()) == (delta > T::zero());
        let gaussian_bound = if receding {
            let e = -half * next * next;
            if e >= underflow {
                e.exp()
            } else {
                T::zero()
            }
        } else {
            T::one()
        };
        let tail = if weight_abs.is_zero() || gaussian_bound.is_zero() {
            T::zero()
        } else {
            weight_abs * gaussian_bound / (T::one() - p_abs)
        };

        j += 1;
        if tail <= tolerance * sum.norm() {
            break;
        }
        if j >= params.max_terms {
            let partial = OverlapResult::from_amplitude(sum * params.prefactor(), j);
            return Err(Error::NotConverged {
                what: "overlap series",
                iterations: j,
                best: partial.loss.to_f64_lossy(),
            });
        }
    }
    Ok(OverlapResult::from_amplitude(sum * params.prefactor(), j))
}

/// Series loss with no truncation test, summing exactly `terms` orders. Used
/// as a brute-force reference.
pub fn overlap_series_fixed<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    eta: T,
    terms: usize,
) -> OverlapResult<T> {
    let p = params.roundtrip_parameter();
    let mut weight = Complex::<T>::one();
    let mut sum = Complex::<T>::zero();
    for j in 0..terms {
        let offset = T::from_usize(j).unwrap() * delta + eta;
        sum = sum + weight * (-(offset * offset) / T::lit(2.0)).exp();
        weight = weight * p;
    }
    OverlapResult::from_amplitude(sum * params.prefactor(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{generic_loss, max_loss, optimal_offset, optimized_loss};

    fn params(r: f64) -> SeriesParams<f64> {
        SeriesParams::new(r).unwrap()
    }

    #[test]
    fn untilted_beam_is_lossless() {
        for r in [0.0, 0.1, 0.27, 0.9] {
            let res = overlap_series(&params(r), 0.0, 0.0).unwrap();
            assert!(
                (res.amplitude.re - 1.0).abs() < 1e-11,
                "{r}: {:?}",
                res.amplitude
            );
            assert!(res.loss < 1e-11);
        }
    }

    #[test]
    fn separated_orders_reach_max_loss() {
        let res = overlap_series(&params(0.27), 5.0, 0.0).unwrap();
        assert!((res.loss - 0.46710).abs() < 1e-3);
        assert!((res.loss - max_loss(0.27)).abs() < 1e-5);
    }

    #[test]
    fn small_walkoff_matches_realigned_limit() {
        let eta = optimal_offset(0.27f64, 0.05);
        assert!((eta + 0.018493).abs() < 1e-6);
        let res = overlap_series(&params(0.27), 0.05, eta).unwrap();
        let limit = optimized_loss(0.27, 0.05);
        assert!(
            (res.loss - limit).abs() <= 0.02 * limit,
            "{} vs {limit}",
            res.loss
        );
    }

    #[test]
    fn zero_reflectivity_uses_one_term() {
        let res = overlap_series(&params(0.0), 0.4, -0.2).unwrap();
        assert_eq!(res.terms_used, 1);
        assert!((res.loss - (1.0 - (-0.04f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn high_reflectivity_needs_long_sums() {
        let res = overlap_series(&params(0.99), 0.0, 0.0).unwrap();
        assert!(
            res.terms_used > 2500 && res.terms_used < DEFAULT_MAX_TERMS,
            "{}",
            res.terms_used
        );
        assert!(res.loss < 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let p = params(0.99).with_truncation(1e-12, 50).unwrap();
        let err = overlap_series(&p, 0.01, 0.0).unwrap_err();
        assert!(err.is_convergence());
    }

    #[test]
    fn far_offset_underflows_to_total_loss() {
        let res = overlap_series(&params(0.3), 0.0, 60.0).unwrap();
        assert_eq!(res.loss, 1.0);
    }

    #[test]
    fn orders_approaching_the_mode_are_not_truncated_early() {
        // The orders pass the reference mode only after ~40 reflections.
        let p = params(0.9);
        let res = overlap_series(&p, 0.1, -4.0).unwrap();
        let brute = overlap_series_fixed(&p, 0.1, -4.0, 5000);
        assert!((res.loss - brute.loss).abs() < 1e-12);
    }

    #[test]
    fn truncation_bound_against_brute_force() {
        for &(r, d, e) in &[
            (0.27, 0.1, -0.03),
            (0.9, 0.5, -1.0),
            (0.6, 2.0, 0.0),
            (0.95, 0.01, -0.5),
        ] {
            let p = params(r);
            let res = overlap_series(&p, d, e).unwrap();
            let brute = overlap_series_fixed(&p, d, e, res.terms_used * 10);
            let diff = (res.amplitude - brute.amplitude).norm();
            // prefactor (1 - R) times the geometric tail |p|^J / (1 - |p|)
            let bound = r.powi(res.terms_used as i32);
            assert!(diff <= bound + 1e-15, "{r} {d} {e}: {diff} > {bound}");
            assert!(diff <= 1e-11 * brute.amplitude.norm());
        }
    }

    #[test]
    fn loss_saturates_monotonically() {
        for r in [0.05, 0.27, 0.5, 0.9] {
            let mut prev = 0.0;
            for i in 0..=500 {
                let d = i as f64 * 0.01;
                let l = overlap_series(&params(r), d, 0.0).unwrap().loss;
                assert!(l >= prev - 1e-14, "R={r} delta={d}");
                prev = l;
            }
            assert!((prev - max_loss(r)).abs() < 1e-3 * max_loss(r) + 1e-9);
        }
    }

    #[test]
    fn quadratic_form_is_the_small_walkoff_expansion() {
        for r in [0.05, 0.27, 0.5] {
            for d in [0.01, 0.03, 0.05] {
                for frac in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    let eta = frac * d;
                    let series = overlap_series(&params(r), d, eta).unwrap().loss;
                    let quad = generic_loss(r, d, eta);
                    assert!(
                        (series - quad).abs() <= 0.05 * series,
                        "R={r} d={d} eta={eta}: {series} vs {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn bulk_loss_reduces_transmission() {
        let p = params(0.27).with_bulk_transmission(0.99).unwrap();
        let res = overlap_series(&p, 0.0, 0.0).unwrap();
        let expected = 0.73 * 0.99 / (1.0 - 0.27 * 0.99 * 0.99);
        assert!((res.amplitude.re - expected).abs() < 1e-12);
    }

    #[test]
    fn single_precision() {
        let p = SeriesParams::<f32>::new(0.27)
            .unwrap()
            .with_truncation(1e-6, 1000)
            .unwrap();
        let res = overlap_series(&p, 0.3f32, -0.1).unwrap();
        let reference = overlap_series(&params(0.27), 0.3, -0.1).unwrap();
        assert!((res.loss as f64 - reference.loss).abs() < 1e-5);
    }
}
