//! Closed-form walk-off relations for a tilted etalon in a ring cavity.
//!
//! Everything here is in SI units. Offsets and walk-off are normalized to the
//! waist radius. Positive walk-off `delta` pairs with non-positive offsets
//! `eta` in both the simple-insertion and the realigned case.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{speed_of_light, Scalar};

/// Magnitude of `delta` or `eta` above which the quadratic loss expansion is
/// flagged as doubtful.
pub const VALIDITY_THRESHOLD: f64 = 0.3;

/// Gaussian beam at the etalon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamGeometry<T> {
    wavelength: T,
    waist_radius: T,
}

impl<T: Scalar> BeamGeometry<T> {
    pub fn new(wavelength: T, waist_radius: T) -> Result<Self> {
        if !(wavelength > T::zero() && wavelength.is_finite()) {
            return Err(Error::invalid("wavelength", "must be positive and finite"));
        }
        if !(waist_radius > T::zero() && waist_radius.is_finite()) {
            return Err(Error::invalid(
                "waist_radius",
                "must be positive and finite",
            ));
        }
        Ok(Self {
            wavelength,
            waist_radius,
        })
    }

    pub fn wavelength(&self) -> T {
        self.wavelength
    }

    pub fn waist_radius(&self) -> T {
        self.waist_radius
    }

    /// `pi * w0^2 / lambda`, always derived from the stored wavelength and waist.
    pub fn rayleigh_range(&self) -> T {
        T::PI() * self.waist_radius * self.waist_radius / self.wavelength
    }
}

/// Plane-parallel etalon with identical surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtalonDesign<T> {
    reflectivity: T,
    refractive_index: T,
    thickness: T,
    bulk_amplitude_transmission: T,
    roundtrip_phase: T,
}

impl<T: Scalar> EtalonDesign<T> {
    /// Lossless bulk, resonant round trip.
    pub fn new(reflectivity: T, refractive_index: T, thickness: T) -> Result<Self> {
        check_reflectivity(reflectivity)?;
        check_index(refractive_index)?;
        if !(thickness > T::zero() && thickness.is_finite()) {
            return Err(Error::invalid("thickness", "must be positive and finite"));
        }
        Ok(Self {
            reflectivity,
            refractive_index,
            thickness,
            bulk_amplitude_transmission: T::one(),
            roundtrip_phase: T::zero(),
        })
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

    pub fn reflectivity(&self) -> T {
        self.reflectivity
    }

    pub fn refractive_index(&self) -> T {
        self.refractive_index
    }

    pub fn thickness(&self) -> T {
        self.thickness
    }

    pub fn bulk_amplitude_transmission(&self) -> T {
        self.bulk_amplitude_transmission
    }

    pub fn roundtrip_phase(&self) -> T {
        self.roundtrip_phase
    }

    /// `c / (2 n d)` in Hz.
    pub fn free_spectral_range(&self) -> T {
        free_spectral_range(self.refractive_index, self.thickness)
    }
}

/// How the internal angle enters the walk-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkoffMode {
    /// `(2d/w0) tan(theta') cos(theta)` with Snell's law for `theta'`.
    Exact,
    /// `2 d theta / (n w0)`.
    #[default]
    SmallAngle,
}

/// Geometry of one tilt setting.
///
/// `normalized_offset` and `lateral_offset` hold the simple-insertion offset
/// (no cavity realignment) unless replaced through [`WalkoffState::with_offset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkoffState<T> {
    pub tilt_angle: T,
    pub internal_angle: T,
    pub normalized_walkoff: T,
    pub normalized_offset: T,
    pub lateral_offset: T,
    pub order_spacing: T,
    waist_radius: T,
}

impl<T: Scalar> WalkoffState<T> {
    /// Replaces the normalized offset, keeping `h = eta * w0` consistent.
    pub fn with_offset(mut self, eta: T) -> Self {
        self.normalized_offset = eta;
        self.lateral_offset = eta * self.waist_radius;
        self
    }

    /// Advisory warning when the quadratic expansion is likely inaccurate.
    pub fn validity_warning(&self) -> Option<String> {
        validity_warning(self.normalized_walkoff, self.normalized_offset)
    }
}

pub fn free_spectral_range<T: Scalar>(refractive_index: T, thickness: T) -> T {
    speed_of_light::<T>() / (T::lit(2.0) * refractive_index * thickness)
}

/// Smallest tilt that avoids coupling the etalon reflection back into the
/// cavity mode: the far-field divergence `lambda / (pi w0)`.
pub fn minimum_tilt_angle<T: Scalar>(beam: &BeamGeometry<T>) -> T {
    beam.wavelength / (T::PI() * beam.waist_radius)
}

pub fn normalized_walkoff<T: Scalar>(
    etalon: &EtalonDesign<T>,
    beam: &BeamGeometry<T>,
    tilt: T,
    mode: WalkoffMode,
) -> Result<WalkoffState<T>> {
    if !(tilt.abs() < T::FRAC_PI_2()) {
        return Err(Error::invalid("tilt", "magnitude must be below pi/2"));
    }
    let n = etalon.refractive_index;
    let d = etalon.thickness;
    let w0 = beam.waist_radius;
    let two = T::lit(2.0);

    let internal_angle = (tilt.sin() / n).asin();
    let spacing = match mode {
        WalkoffMode::Exact => two * d * internal_angle.tan() * tilt.cos(),
        WalkoffMode::SmallAngle => two * d * tilt / n,
    };
    let delta = spacing / w0;
    let eta = simple_insertion_offset(n, delta);
    Ok(WalkoffState {
        tilt_angle: tilt,
        internal_angle,
        normalized_walkoff: delta,
        normalized_offset: eta,
        lateral_offset: eta * w0,
        order_spacing: spacing,
        waist_radius: w0,
    })
}

/// Loss of the zeroth transmitted order alone, `2R - R^2`: the fully separated
/// limit.
pub fn max_loss<T: Scalar>(r: T) -> T {
    T::lit(2.0) * r - r * r
}

/// Quadratic loss form valid for `|delta|, |eta| << 1`.
///
/// No range check is applied; see [`validity_warning`].
pub fn generic_loss<T: Scalar>(r: T, delta: T, eta: T) -> T {
    let one = T::one();
    eta * eta
        + T::lit(2.0) * r / (one - r) * eta * delta
        + r * (one + r) / ((one - r) * (one - r)) * delta * delta
}

/// Offset of the cavity mode when the etalon is inserted without realignment.
pub fn simple_insertion_offset<T: Scalar>(n: T, delta: T) -> T {
    -(n - T::one()) / T::lit(2.0) * delta
}

/// `delta^2` prefactor of the simple-insertion loss.
pub fn simple_insertion_coefficient<T: Scalar>(r: T, n: T) -> T {
    let one = T::one();
    let half_step = (n - one) / T::lit(2.0);
    half_step * half_step - r * (n - one) / (one - r) + r * (r + one) / ((one - r) * (one - r))
}

pub fn simple_insertion_loss<T: Scalar>(r: T, n: T, delta: T) -> T {
    simple_insertion_coefficient(r, n) * delta * delta
}

/// Offset minimizing the quadratic loss form at fixed walk-off.
pub fn optimal_offset<T: Scalar>(r: T, delta: T) -> T {
    -r / (T::one() - r) * delta
}

/// `delta^2` prefactor of the realigned loss.
pub fn optimized_coefficient<T: Scalar>(r: T) -> T {
    let one = T::one();
    r / ((one - r) * (one - r))
}

/// Loss after realigning the cavity, half the double-pass value.
pub fn optimized_loss<T: Scalar>(r: T, delta: T) -> T {
    optimized_coefficient(r) * delta * delta
}

/// Reflectivity at which simple insertion is automatically optimally aligned.
pub fn self_alignment_reflectivity<T: Scalar>(n: T) -> T {
    (n - T::one()) / (n + T::one())
}

/// Normal-incidence reflectivity of an uncoated surface; the square of
/// [`self_alignment_reflectivity`].
pub fn fresnel_reflectivity<T: Scalar>(n: T) -> T {
    let amplitude = self_alignment_reflectivity(n);
    amplitude * amplitude
}

/// Extra loss the etalon imposes on the neighbouring longitudinal mode.
pub fn selection_loss<T: Scalar>(r: T, fsr_laser: T, fsr_etalon: T) -> T {
    let phase = T::TAU() * fsr_laser / fsr_etalon;
    optimized_coefficient(r) * phase * phase
}

/// Ratio of selection loss to realigned walk-off loss. Independent of the
/// etalon reflectivity and thickness.
pub fn suppression_ratio<T: Scalar>(n: T, fsr_laser: T, beam: &BeamGeometry<T>) -> T {
    let pi = T::PI();
    let root =
        T::lit(2.0) * pi * pi * n * n * fsr_laser * beam.rayleigh_range() / speed_of_light::<T>();
    root * root
}

/// Warns when either normalized quantity exceeds [`VALIDITY_THRESHOLD`].
pub fn validity_warning<T: Scalar>(delta: T, eta: T) -> Option<String> {
    let limit = T::lit(VALIDITY_THRESHOLD);
    let (d, e) = (delta.to_f64_lossy(), eta.to_f64_lossy());
    match (delta.abs() > limit, eta.abs() > limit) {
        (false, false) => None,
        _ => Some(format!(
            "quadratic loss expansion outside its small-walk-off regime (|delta| = {:.4}, |eta| = {:.4}, threshold {})",
            d.abs(),
            e.abs(),
            VALIDITY_THRESHOLD
        )),
    }
}

pub(crate) fn check_reflectivity<T: Scalar>(r: T) -> Result<()> {
    if r >= T::zero() && r < T::one() {
        Ok(())
    } else {
        Err(Error::invalid("reflectivity", "must lie in [0, 1)"))
    }
}

pub(crate) fn check_index<T: Scalar>(n: T) -> Result<()> {
    if n >= T::one() && n.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "refractive_index",
            "must be finite and >= 1",
        ))
    }
}
