//! Laser output power versus etalon tilt (Rigrod model) and fits of the fixed
//! round-trip loss to measured tuning data.

use std::io::{Read, Write};

use serde::Serialize;

use crate::analytic::{
    minimum_tilt_angle, normalized_walkoff, optimized_loss, simple_insertion_loss, BeamGeometry,
    EtalonDesign, WalkoffMode,
};
use crate::error::{Error, Result};
use crate::minimize::brent_from;
use crate::output;
use crate::scalar::Scalar;

const FIT_PRESCAN_POINTS: usize = 200;
const FIT_MAX_ITERATIONS: usize = 300;
const LM_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaserCavityParams<T> {
    saturation_power: T,
    small_signal_gain: T,
    output_coupler_transmission: T,
    fixed_roundtrip_loss: T,
    fsr_laser: T,
}

impl<T: Scalar> LaserCavityParams<T> {
    /// Powers in W, frequencies in Hz, gain and losses as round-trip fractions.
    pub fn new(
        saturation_power: T,
        small_signal_gain: T,
        output_coupler_transmission: T,
        fixed_roundtrip_loss: T,
        fsr_laser: T,
    ) -> Result<Self> {
        let positive = |v: T, name: &'static str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be positive and finite"))
            }
        };
        positive(saturation_power, "saturation_power")?;
        positive(small_signal_gain, "small_signal_gain")?;
        positive(output_coupler_transmission, "output_coupler_transmission")?;
        positive(fsr_laser, "fsr_laser")?;
        let cavity = Self {
            saturation_power,
            small_signal_gain,
            output_coupler_transmission,
            fixed_roundtrip_loss: T::zero(),
            fsr_laser,
        };
        cavity.with_fixed_loss(fixed_roundtrip_loss)
    }

    pub fn with_fixed_loss(mut self, fixed_roundtrip_loss: T) -> Result<Self> {
        if !(fixed_roundtrip_loss >= T::zero() && fixed_roundtrip_loss.is_finite()) {
            return Err(Error::invalid(
                "fixed_roundtrip_loss",
                "must be non-negative and finite",
            ));
        }
        self.fixed_roundtrip_loss = fixed_roundtrip_loss;
        Ok(self)
    }

    pub fn saturation_power(&self) -> T {
        self.saturation_power
    }

    pub fn small_signal_gain(&self) -> T {
        self.small_signal_gain
    }

    pub fn output_coupler_transmission(&self) -> T {
        self.output_coupler_transmission
    }

    pub fn fixed_roundtrip_loss(&self) -> T {
        self.fixed_roundtrip_loss
    }

    pub fn fsr_laser(&self) -> T {
        self.fsr_laser
    }

    /// Whether the untilted laser is above threshold.
    pub fn lases(&self) -> bool {
        self.output_coupler_transmission + self.fixed_roundtrip_loss < self.small_signal_gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// Cavity not realigned after tilting.
    #[default]
    Simple,
    /// Cavity realigned to the optimal offset.
    Optimized,
}

/// Tilt-dependent loss of one etalon in a given beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkoffLoss<T> {
    pub etalon: EtalonDesign<T>,
    pub beam: BeamGeometry<T>,
    pub model: LossModel,
}

impl<T: Scalar> WalkoffLoss<T> {
    pub fn new(etalon: EtalonDesign<T>, beam: BeamGeometry<T>, model: LossModel) -> Self {
        Self {
            etalon,
            beam,
            model,
        }
    }

    pub fn with_model(self, model: LossModel) -> Self {
        Self { model, ..self }
    }

    /// Quadratic-form loss at tilt `theta` using the small-angle walk-off.
    pub fn loss(&self, theta: T) -> Result<T> {
        let state = normalized_walkoff(&self.etalon, &self.beam, theta, WalkoffMode::SmallAngle)?;
        let r = self.etalon.reflectivity();
        let delta = state.normalized_walkoff;
        Ok(match self.model {
            LossModel::Simple => simple_insertion_loss(r, self.etalon.refractive_index(), delta),
            LossModel::Optimized => optimized_loss(r, delta),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerPrediction<T> {
    pub tilt_angle: T,
    pub walkoff_loss: T,
    /// `L0 + L(theta)`.
    pub total_loss: T,
    /// Watts, clamped at zero.
    pub power: T,
    pub below_threshold: bool,
}

/// `P_sat T_out (G0 / (T_out + L_tot) - 1)` clamped at zero, with the
/// below-threshold flag.
pub fn rigrod_power<T: Scalar>(cavity: &LaserCavityParams<T>, total_loss: T) -> (T, bool) {
    let t = cavity.output_coupler_transmission;
    let denominator = t + total_loss;
    let below = denominator >= cavity.small_signal_gain;
    let raw = cavity.saturation_power * t * (cavity.small_signal_gain / denominator - T::one());
    if below || !(raw > T::zero()) {
        (T::zero(), below)
    } else {
        (raw, false)
    }
}

pub fn output_power<T: Scalar>(
    cavity: &LaserCavityParams<T>,
    model: LossModel,
    etalon: &EtalonDesign<T>,
    beam: &BeamGeometry<T>,
    theta: T,
) -> Result<PowerPrediction<T>> {
    predict(cavity, &WalkoffLoss::new(*etalon, *beam, model), theta)
}

pub fn predict<T: Scalar>(
    cavity: &LaserCavityParams<T>,
    walkoff: &WalkoffLoss<T>,
    theta: T,
) -> Result<PowerPrediction<T>> {
    let walkoff_loss = walkoff.loss(theta)?;
    let total_loss = cavity.fixed_roundtrip_loss + walkoff_loss;
    let (power, below_threshold) = rigrod_power(cavity, total_loss);
    Ok(PowerPrediction {
        tilt_angle: theta,
        walkoff_loss,
        total_loss,
        power,
        below_threshold,
    })
}

/// Screw turns to tilt angle: `turns * rad_per_turn + offset`.
pub fn calibrate_tilt<T: Scalar>(turns: T, rad_per_turn: T, offset: T) -> T {
    turns * rad_per_turn + offset
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltCalibration<T> {
    pub rad_per_turn: T,
    pub offset: T,
}

impl<T: Scalar> TiltCalibration<T> {
    pub fn angle(&self, turns: T) -> T {
        calibrate_tilt(turns, self.rad_per_turn, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuningDataPoint<T> {
    /// Radians.
    pub tilt_angle: T,
    /// Watts.
    pub output_power: T,
    pub power_uncertainty: Option<T>,
}

impl<T: Scalar> TuningDataPoint<T> {
    pub fn new(tilt_angle: T, output_power: T, power_uncertainty: Option<T>) -> Result<Self> {
        if !tilt_angle.is_finite() {
            return Err(Error::invalid("tilt_angle", "must be finite"));
        }
        if !(output_power >= T::zero() && output_power.is_finite()) {
            return Err(Error::invalid(
                "output_power",
                "must be non-negative and finite",
            ));
        }
        if let Some(s) = power_uncertainty {
            if !(s > T::zero() && s.is_finite()) {
                return Err(Error::invalid(
                    "power_uncertainty",
                    "must be positive and finite",
                ));
            }
        }
        Ok(Self {
            tilt_angle,
            output_power,
            power_uncertainty,
        })
    }
}

/// Reads `angle_mrad` or `turns`, `power_W` and optional `sigma_W` columns.
/// Lines starting with `#` are skipped. Turns need a calibration.
pub fn read_tuning_csv<R: Read>(
    reader: R,
    calibration: Option<TiltCalibration<f64>>,
) -> Result<Vec<TuningDataPoint<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let header_error = |reason: &str| Error::Parse {
        line: 1,
        reason: reason.to_string(),
    };

    enum Angle {
        Mrad(usize),
        Turns(usize, TiltCalibration<f64>),
    }
    let angle = match (column("angle_mrad"), column("turns")) {
        (Some(i), None) => Angle::Mrad(i),
        (None, Some(i)) => Angle::Turns(
            i,
            calibration.ok_or_else(|| {
                Error::invalid("calibration", "a `turns` column needs rad_per_turn")
            })?,
        ),
        (Some(_), Some(_)) => {
            return Err(header_error("give either angle_mrad or turns, not both"))
        }
        (None, None) => return Err(header_error("missing angle_mrad or turns column")),
    };
    let power = column("power_W").ok_or_else(|| header_error("missing power_W column"))?;
    let sigma = column("sigma_W");

    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).ok_or_else(|| Error::Parse {
                line,
                reason: format!("missing {name}"),
            })?;
            raw.parse().map_err(|e| Error::Parse {
                line,
                reason: format!("{name} `{raw}`: {e}"),
            })
        };
        let theta = match &angle {
            Angle::Mrad(i) => field(*i, "angle_mrad")? * 1e-3,
            Angle::Turns(i, cal) => cal.angle(field(*i, "turns")?),
        };
        let p = field(power, "power_W")?;
        let s = match sigma {
            Some(i) if record.get(i).is_some_and(|v| !v.is_empty()) => Some(field(i, "sigma_W")?),
            _ => None,
        };
        points.push(TuningDataPoint::new(theta, p, s).map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?);
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("tuning data"));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedLossFit<T> {
    pub fixed_loss: T,
    pub standard_error: T,
    /// Weighted sum of squared residuals at the minimum.
    pub residual_sum: T,
    pub points: usize,
    /// True when every point carried an uncertainty.
    pub weighted: bool,
    pub iterations: usize,
    pub converged: bool,
}

struct Prepared<T> {
    walkoff: Vec<T>,
    power: Vec<T>,
    weight: Vec<T>,
    weighted: bool,
}

fn prepare<T: Scalar>(
    walkoff: &WalkoffLoss<T>,
    data: &[TuningDataPoint<T>],
    min_points: usize,
) -> Result<Prepared<T>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("tuning data"));
    }
    if data.len() < min_points {
        return Err(Error::DegenerateData(format!(
            "need at least {min_points} points, got {}",
            data.len()
        )));
    }
    let first = data[0];
    if data.iter().all(|p| p.tilt_angle == first.tilt_angle)
        && data.iter().any(|p| p.output_power != first.output_power)
    {
        return Err(Error::DegenerateData(
            "all tilt angles identical with inconsistent powers".into(),
        ));
    }
    let weighted = data.iter().all(|p| p.power_uncertainty.is_some());
    Ok(Prepared {
        walkoff: data
            .iter()
            .map(|p| walkoff.loss(p.tilt_angle))
            .collect::<Result<_>>()?,
        power: data.iter().map(|p| p.output_power).collect(),
        weight: data
            .iter()
            .map(|p| match p.power_uncertainty {
                Some(s) if weighted => T::one() / (s * s),
                _ => T::one(),
            })
            .collect(),
        weighted,
    })
}

fn fixed_loss_objective<T: Scalar>(cavity: &LaserCavityParams<T>, prep: &Prepared<T>, l0: T) -> T {
    prep.walkoff
        .iter()
        .zip(&prep.power)
        .zip(&prep.weight)
        .fold(T::zero(), |acc, ((&l, &p), &w)| {
            let r = rigrod_power(cavity, l0 + l).0 - p;
            acc + w * r * r
        })
}

/// Least-squares `L0` with `P_sat`, `G0` and `T_out` held at the values in
/// `cavity` (its own `L0` is ignored).
///
/// Unweighted fits scale the standard error by the residual variance; fits
/// where every point has `sigma` use the inverse Gauss-Newton curvature.
pub fn fit_fixed_loss<T: Scalar>(
    cavity: &LaserCavityParams<T>,
    walkoff: &WalkoffLoss<T>,
    data: &[TuningDataPoint<T>],
) -> Result<FixedLossFit<T>> {
    let prep = prepare(walkoff, data, 2)?;
    let upper = cavity.small_signal_gain - cavity.output_coupler_transmission;
    if !(upper > T::zero()) {
        return Err(Error::invalid(
            "small_signal_gain",
            "must exceed the output coupling",
        ));
    }
    let objective = |l0: T| fixed_loss_objective(cavity, &prep, l0);

    // Open interval (0, G0 - T_out): the pre-scan stays off both ends.
    let cells = T::from_usize(FIT_PRESCAN_POINTS + 1).unwrap();
    let grid: Vec<T> = (1..=FIT_PRESCAN_POINTS)
        .map(|k| upper * T::from_usize(k).unwrap() / cells)
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .map(|(i, &l0)| (i, objective(l0)))
        .fold(
            (0, T::infinity()),
            |acc, cur| if cur.1 < acc.1 { cur } else { acc },
        );
    let lo = if best.0 == 0 {
        upper * T::epsilon()
    } else {
        grid[best.0 - 1]
    };
    let hi = grid
        .get(best.0 + 1)
        .copied()
        .unwrap_or(upper * (T::one() - T::epsilon()));
    let xtol = upper * T::lit(1e-14);
    let min = brent_from(objective, lo, hi, grid[best.0], xtol, FIT_MAX_ITERATIONS);

    let t = cavity.output_coupler_transmission;
    let curvature = prep
        .walkoff
        .iter()
        .zip(&prep.weight)
        .fold(T::zero(), |acc, (&l, &w)| {
            let d = t + min.x + l;
            if d >= cavity.small_signal_gain {
                return acc;
            }
            let jac = cavity.saturation_power * t * cavity.small_signal_gain / (d * d);
            acc + w * jac * jac
        });
    if !(curvature > T::zero()) {
        return Err(Error::DegenerateData(
            "no point above threshold at the fitted loss".into(),
        ));
    }
    let n = data.len();
    let variance = if prep.weighted {
        T::one() / curvature
    } else {
        min.value / T::from_usize(n - 1).unwrap() / curvature
    };
    Ok(FixedLossFit {
        fixed_loss: min.x,
        standard_error: variance.sqrt(),
        residual_sum: min.value,
        points: n,
        weighted: prep.weighted,
        iterations: min.iterations,
        converged: min.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullFit<T> {
    pub fixed_loss: T,
    pub saturation_power: T,
    pub small_signal_gain: T,
    /// Standard errors of (`L0`, `P_sat`, `G0`).
    pub standard_errors: [T; 3],
    pub residual_sum: T,
    pub iterations: usize,
    pub converged: bool,
}

fn solve3<T: Scalar>(mut a: [[T; 3]; 3], mut b: [T; 3]) -> Option<[T; 3]> {
    for col in 0..3 {
        let pivot =
            (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[pivot][col].abs() > T::zero()) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, &p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *x = *x - f * p;
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let tail = (row + 1..3).fold(T::zero(), |s, k| s + a[row][k] * x[k]);
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Levenberg-Marquardt fit of `L0`, `P_sat` and `G0` together, starting from
/// `cavity` and the constrained `L0` fit. `T_out` stays fixed.
pub fn fit_unconstrained<T: Scalar>(
    cavity: &LaserCavityParams<T>,
    walkoff: &WalkoffLoss<T>,
    data: &[TuningDataPoint<T>],
) -> Result<FullFit<T>> {
    let prep = prepare(walkoff, data, 4)?;
    let start = fit_fixed_loss(cavity, walkoff, data)?;
    let t = cavity.output_coupler_transmission;

    let model = |x: &[T; 3], l: T| {
        let d = t + x[0] + l;
        let p = x[1] * t * (x[2] / d - T::one());
        let jac = [
            -x[1] * t * x[2] / (d * d),
            t * (x[2] / d - T::one()),
            x[1] * t / d,
        ];
        (p, jac)
    };
    let normal = |x: &[T; 3]| {
        let mut a = [[T::zero(); 3]; 3];
        let mut g = [T::zero(); 3];
        let mut s = T::zero();
        for ((&l, &p), &w) in prep.walkoff.iter().zip(&prep.power).zip(&prep.weight) {
            let (m, jac) = model(x, l);
            let r = m - p;
            s = s + w * r * r;
            for i in 0..3 {
                g[i] = g[i] + w * jac[i] * r;
                for k in 0..3 {
                    a[i][k] = a[i][k] + w * jac[i] * jac[k];
                }
            }
        }
        (a, g, s)
    };

    let mut x = [
        start.fixed_loss,
        cavity.saturation_power,
        cavity.small_signal_gain,
    ];
    let (mut a, mut g, mut s) = normal(&x);
    let mut lambda = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut damped = a;
        for (i, row) in damped.iter_mut().enumerate() {
            row[i] = row[i] * (T::one() + lambda);
        }
        let Some(step) = solve3(damped, [-g[0], -g[1], -g[2]]) else {
            lambda = lambda * T::lit(10.0);
            continue;
        };
        let trial = [x[0] + step[0], x[1] + step[1], x[2] + step[2]];
        let (ta, tg, ts) = normal(&trial);
        if ts <= s {
            let small =
                (0..3).all(|i| step[i].abs() <= T::lit(1e-12) * (x[i].abs() + T::lit(1e-12)));
            let flat = s - ts <= T::lit(1e-15) * s;
            x = trial;
            a = ta;
            g = tg;
            s = ts;
            lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
            if small || flat {
                converged = true;
                break;
            }
        } else {
            lambda = lambda * T::lit(10.0);
            if lambda > T::lit(1e16) {
                converged = true;
                break;
            }
        }
    }

    let n = data.len();
    let scale = if prep.weighted {
        T::one()
    } else {
        s / T::from_usize(n - 3).unwrap()
    };
    let mut errors = [T::nan(); 3];
    for (i, e) in errors.iter_mut().enumerate() {
        let mut unit = [T::zero(); 3];
        unit[i] = T::one();
        if let Some(col) = solve3(a, unit) {
            *e = (col[i] * scale).sqrt();
        }
    }
    Ok(FullFit {
        fixed_loss: x[0],
        saturation_power: x[1],
        small_signal_gain: x[2],
        standard_errors: errors,
        residual_sum: s,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuningRow<T> {
    pub tilt_angle: T,
    pub power_simple: T,
    pub power_optimized: Option<T>,
    /// `|theta| <= theta_min`: the etalon reflection still couples back.
    pub excluded: bool,
}

impl<T: Scalar> TuningRow<T> {
    /// `P_opt / P_sim - 1`, when both are available and the simple power is
    /// positive.
    pub fn realignment_gain(&self) -> Option<T> {
        let opt = self.power_optimized?;
        (self.power_simple > T::zero()).then(|| opt / self.power_simple - T::one())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningCurve<T> {
    pub minimum_tilt: T,
    pub rows: Vec<TuningRow<T>>,
}

pub fn tuning_curve<T: Scalar>(
    cavity: &LaserCavityParams<T>,
    etalon: &EtalonDesign<T>,
    beam: &BeamGeometry<T>,
    thetas: &[T],
    both_models: bool,
) -> Result<TuningCurve<T>> {
    let simple = WalkoffLoss::new(*etalon, *beam, LossModel::Simple);
    let optimized = simple.with_model(LossModel::Optimized);
    let minimum_tilt = minimum_tilt_angle(beam);
    let rows = thetas
        .iter()
        .map(|&theta| {
            Ok(TuningRow {
                tilt_angle: theta,
                power_simple: predict(cavity, &simple, theta)?.power,
                power_optimized: if both_models {
                    Some(predict(cavity, &optimized, theta)?.power)
                } else {
                    None
                },
                excluded: theta.abs() <= minimum_tilt,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TuningCurve { minimum_tilt, rows })
}

#[derive(Serialize)]
struct TuningCsvRow {
    theta_mrad: f64,
    power_simple_w: f64,
    power_optimized_w: Option<f64>,
    excluded: bool,
}

impl<T: Scalar> TuningCurve<T> {
    fn csv_rows(&self) -> Vec<TuningCsvRow> {
        self.rows
            .iter()
            .map(|r| TuningCsvRow {
                theta_mrad: r.tilt_angle.to_f64_lossy() * 1e3,
                power_simple_w: r.power_simple.to_f64_lossy(),
                power_optimized_w: r.power_optimized.map(Scalar::to_f64_lossy),
                excluded: r.excluded,
            })
            .collect()
    }

    /// Columns `theta_mrad,power_simple_w,power_optimized_w,excluded`.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        timestamp: Option<u64>,
        comments: &[String],
    ) -> Result<()> {
        let mut lines = vec![format!(
            "theta_min_mrad={}",
            self.minimum_tilt.to_f64_lossy() * 1e3
        )];
        lines.extend_from_slice(comments);
        output::write_header(&mut out, "tuning-curve", timestamp, &lines)?;
        output::write_csv_rows(out, &self.csv_rows())
    }

    pub fn to_json(&self, timestamp: Option<u64>) -> Result<String> {
        #[derive(Serialize)]
        struct Doc {
            format_version: u32,
            timestamp: Option<u64>,
            theta_min_mrad: f64,
            rows: Vec<TuningCsvRow>,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            format_version: output::FORMAT_VERSION,
            timestamp,
            theta_min_mrad: self.minimum_tilt.to_f64_lossy() * 1e3,
            rows: self.csv_rows(),
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const L0: f64 = 0.0213;

    fn cavity() -> LaserCavityParams<f64> {
        LaserCavityParams::new(44.0, 0.11, 0.035, L0, 1.0e9).unwrap()
    }

    fn walkoff(model: LossModel) -> WalkoffLoss<f64> {
        WalkoffLoss::new(
            EtalonDesign::new(0.27, 1.447, 4e-3).unwrap(),
            BeamGeometry::new(1342e-9, 370e-6).unwrap(),
            model,
        )
    }

    fn synthetic(noise: Option<u64>) -> Vec<TuningDataPoint<f64>> {
        let w = walkoff(LossModel::Simple);
        let mut rng = ChaCha8Rng::seed_from_u64(noise.unwrap_or(0));
        let normal = Normal::new(0.0, 0.01).unwrap();
        (0..20)
            .map(|k| {
                let theta = -12e-3 + 24e-3 * k as f64 / 19.0;
                let mut p = predict(&cavity(), &w, theta).unwrap().power;
                if noise.is_some() {
                    p *= 1.0 + normal.sample(&mut rng);
                }
                TuningDataPoint::new(theta, p, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn untilted_power() {
        let p = predict(&cavity(), &walkoff(LossModel::Simple), 0.0).unwrap();
        assert!((p.power - 1.468_875).abs() < 1e-5, "{}", p.power);
        assert!(!p.below_threshold);
    }

    #[test]
    fn threshold_clamps_to_zero() {
        let c = cavity().with_fixed_loss(0.11 - 0.035).unwrap();
        assert!(!c.lases());
        let (p, below) = rigrod_power(&c, c.fixed_roundtrip_loss());
        assert_eq!(p, 0.0);
        assert!(below);
        let (p, below) = rigrod_power(&c, 0.5);
        assert_eq!(p, 0.0);
        assert!(below);
    }

    #[test]
    fn two_mrad_simple_loss() {
        let l = walkoff(LossModel::Simple).loss(2e-3).unwrap();
        assert!((l - 5.1e-4).abs() < 0.1 * 5.1e-4, "{l}");
    }

    #[test]
    fn power_decreases_with_loss() {
        let c = cavity();
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let (p, _) = rigrod_power(&c, L0 + k as f64 * 2e-4);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn tuning_curve_shape() {
        let etalon = walkoff(LossModel::Simple).etalon;
        let beam = walkoff(LossModel::Simple).beam;
        let thetas: Vec<f64> = (-30..=30).map(|k| k as f64 * 5e-4).collect();
        let curve = tuning_curve(&cavity(), &etalon, &beam, &thetas, true).unwrap();
        for (row, mirror) in curve.rows.iter().zip(curve.rows.iter().rev()) {
            assert!(row.power_optimized.unwrap() >= row.power_simple);
            assert!((row.power_simple - mirror.power_simple).abs() < 1e-15);
            assert_eq!(row.excluded, row.tilt_angle.abs() <= curve.minimum_tilt);
        }
        let center = &curve.rows[30];
        assert_eq!(center.power_simple, center.power_optimized.unwrap());
        assert!(curve.rows.iter().any(|r| r.excluded) && curve.rows.iter().any(|r| !r.excluded));
        let single = tuning_curve(&cavity(), &etalon, &beam, &thetas, false).unwrap();
        assert!(single.rows.iter().all(|r| r.power_optimized.is_none()));
    }

    #[test]
    fn calibration() {
        assert!((calibrate_tilt(1.0f64, 9.7e-3, 0.0) - 9.7e-3).abs() < 1e-18);
        assert_eq!(calibrate_tilt(0.0, 9.7e-3, 0.0), 0.0);
        assert!((calibrate_tilt(0.5f64, 9.7e-3, 0.0) - 4.85e-3).abs() < 1e-18);
        assert!((calibrate_tilt(-1.0f64, 9.7e-3, 2e-3) + 7.7e-3).abs() < 1e-17);
    }

    #[test]
    fn exact_recovery() {
        let fit = fit_fixed_loss(&cavity(), &walkoff(LossModel::Simple), &synthetic(None)).unwrap();
        assert!(fit.converged);
        assert!((fit.fixed_loss - L0).abs() < 1e-6, "{}", fit.fixed_loss);
        assert!(fit.residual_sum < 1e-20);
    }

    #[test]
    fn recovery_ignores_initial_fixed_loss() {
        let start = cavity().with_fixed_loss(0.05).unwrap();
        let fit = fit_fixed_loss(&start, &walkoff(LossModel::Simple), &synthetic(None)).unwrap();
        assert!((fit.fixed_loss - L0).abs() < 1e-6);
    }

    #[test]
    fn objective_is_unimodal_on_synthetic_data() {
        let w = walkoff(LossModel::Simple);
        for seed in [None, Some(1), Some(2)] {
            let data = synthetic(seed);
            let prep = prepare(&w, &data, 2).unwrap();
            let values: Vec<f64> = (1..2000)
                .map(|k| fixed_loss_objective(&cavity(), &prep, 0.075 * k as f64 / 2000.0))
                .collect();
            let argmin = values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(values[..=argmin].windows(2).all(|v| v[1] <= v[0]));
            assert!(values[argmin..].windows(2).all(|v| v[1] >= v[0]));
        }
    }

    #[test]
    fn noisy_fits_cover_truth() {
        let w = walkoff(LossModel::Simple);
        let covered = (0..100u64)
            .filter(|&seed| {
                let fit = fit_fixed_loss(&cavity(), &w, &synthetic(Some(seed + 1000))).unwrap();
                (fit.fixed_loss - L0).abs() <= 3.0 * fit.standard_error
            })
            .count();
        assert!(covered >= 95, "{covered}");
    }

    #[test]
    fn weighted_fit() {
        let data: Vec<_> = synthetic(Some(7))
            .into_iter()
            .map(|p| {
                TuningDataPoint::new(p.tilt_angle, p.output_power, Some(0.01 * p.output_power))
                    .unwrap()
            })
            .collect();
        let fit = fit_fixed_loss(&cavity(), &walkoff(LossModel::Simple), &data).unwrap();
        assert!(fit.weighted);
        assert!((fit.fixed_loss - L0).abs() < 5.0 * fit.standard_error);
        assert!(fit.standard_error > 1e-6 && fit.standard_error < 1e-3);
    }

    #[test]
    fn fit_errors() {
        let w = walkoff(LossModel::Simple);
        assert!(matches!(
            fit_fixed_loss(&cavity(), &w, &[]),
            Err(Error::EmptyInput(_))
        ));
        let one = [TuningDataPoint::new(0.0, 1.0, None).unwrap()];
        assert!(matches!(
            fit_fixed_loss(&cavity(), &w, &one),
            Err(Error::DegenerateData(_))
        ));
        let same = [
            TuningDataPoint::new(1e-3, 1.0, None).unwrap(),
            TuningDataPoint::new(1e-3, 1.2, None).unwrap(),
        ];
        assert!(matches!(
            fit_fixed_loss(&cavity(), &w, &same),
            Err(Error::DegenerateData(_))
        ));
        assert!(TuningDataPoint::new(0.0, -1.0, None).is_err());
    }

    #[test]
    fn unconstrained_fit_recovers_all_parameters() {
        let start = LaserCavityParams::new(40.0, 0.12, 0.035, 0.0, 1e9).unwrap();
        let fit = fit_unconstrained(&start, &walkoff(LossModel::Simple), &synthetic(None)).unwrap();
        assert!(fit.converged);
        assert!((fit.fixed_loss - L0).abs() < 1e-5, "{fit:?}");
        assert!((fit.saturation_power - 44.0).abs() < 1e-2, "{fit:?}");
        assert!((fit.small_signal_gain - 0.11).abs() < 1e-5, "{fit:?}");

        let noisy =
            fit_unconstrained(&cavity(), &walkoff(LossModel::Simple), &synthetic(Some(3))).unwrap();
        let constrained =
            fit_fixed_loss(&cavity(), &walkoff(LossModel::Simple), &synthetic(Some(3))).unwrap();
        assert!(noisy.standard_errors[0] > constrained.standard_error);
    }

    #[test]
    fn csv_ingestion() {
        let text = "# bench run\nangle_mrad,power_W,sigma_W\n2.0,1.46,0.01\n-4.5, 1.40,\n";
        let pts = read_tuning_csv(text.as_bytes(), None).unwrap();
        assert_eq!(pts.len(), 2);
        assert!((pts[0].tilt_angle - 2e-3).abs() < 1e-18);
        assert_eq!(pts[0].power_uncertainty, Some(0.01));
        assert_eq!(pts[1].power_uncertainty, None);

        let cal = TiltCalibration {
            rad_per_turn: 9.7e-3,
            offset: 2e-3,
        };
        let pts = read_tuning_csv("turns,power_W\n1,1.3\n".as_bytes(), Some(cal)).unwrap();
        assert!((pts[0].tilt_angle - 11.7e-3).abs() < 1e-15);
        assert!(read_tuning_csv("turns,power_W\n1,1.3\n".as_bytes(), None).is_err());
        assert!(read_tuning_csv("theta,power_W\n1,1.3\n".as_bytes(), None).is_err());
        match read_tuning_csv("angle_mrad,power_W\n1,1.3\n2,abc\n".as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_tuning_csv("angle_mrad,power_W\n".as_bytes(), None).is_err());
    }

    #[test]
    fn tuning_csv_output() {
        let w = walkoff(LossModel::Simple);
        let curve = tuning_curve(&cavity(), &w.etalon, &w.beam, &[0.0, 5e-3], true).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf, None, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# theta_min_mrad=1.154"));
        assert!(text.contains("theta_mrad,power_simple_w,power_optimized_w,excluded\n0.0,"));
    }
}
