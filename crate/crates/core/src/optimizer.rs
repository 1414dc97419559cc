//! Realignment: the lateral offset that minimizes the series loss, and sweeps
//! of that optimum over the normalized walk-off.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::simple_insertion_offset;
use crate::error::{Error, Result};
use crate::minimize::brent_from;
use crate::output::{self, FORMAT_VERSION};
use crate::scalar::Scalar;
use crate::series::{overlap_series, SeriesParams};

const MAX_LOWER_MARGIN: f64 = 1e3;

/// Search settings for [`minimize_over_eta_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaSearch {
    /// Final bracket half-width around the minimizer.
    pub eta_tolerance: f64,
    /// Points of the uniform coarse scan that picks the basin.
    pub prescan_points: usize,
    pub max_iterations: usize,
    /// Lower bracket end is `-(lower_margin + delta)`.
    pub lower_margin: f64,
    pub upper_bound: f64,
}

impl Default for EtaSearch {
    fn default() -> Self {
        Self {
            eta_tolerance: 1e-7,
            prescan_points: 101,
            max_iterations: 200,
            lower_margin: 1.5,
            upper_bound: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizationResult<T> {
    pub eta_opt: T,
    pub loss_opt: T,
    pub iterations: usize,
    pub bracket_used: (T, T),
    pub converged: bool,
}

pub fn minimize_over_eta<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
) -> Result<OptimizationResult<T>> {
    minimize_over_eta_with(params, delta, &EtaSearch::default())
}

/// Global minimizer of `eta -> L_series(delta, eta)` over
/// `[-(lower_margin + delta), upper_bound]`, with the lower margin doubled
/// while the scan minimum sits on the lower edge.
///
/// A coarse scan selects the basin (ties go to the point nearest `eta = 0`),
/// then Brent's method refines inside the neighbouring scan cells. A series
/// evaluation that hits its term cap contributes its partial sum and clears
/// `converged`.
pub fn minimize_over_eta_with<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    search: &EtaSearch,
) -> Result<OptimizationResult<T>> {
    if !(delta >= T::zero() && delta.is_finite()) {
        return Err(Error::invalid("delta", "must be finite and non-negative"));
    }
    if search.prescan_points < 3 {
        return Err(Error::invalid("prescan_points", "need at least 3"));
    }
    let hi = T::lit(search.upper_bound);

    let mut series_ok = true;
    let mut loss = |eta: T| match overlap_series(params, delta, eta) {
        Ok(r) => r.loss,
        Err(Error::NotConverged { best, .. }) => {
            series_ok = false;
            T::lit(best)
        }
        Err(_) => {
            series_ok = false;
            T::infinity()
        }
    };

    let cells = search.prescan_points - 1;
    let mut margin = T::lit(search.lower_margin);
    let (lo, step, best_k, best_value) = loop {
        let lo = -(margin + delta);
        let step = (hi - lo) / T::from_usize(cells).unwrap();
        let node = |k: usize| {
            if k == cells {
                hi
            } else {
                lo + step * T::from_usize(k).unwrap()
            }
        };
        let mut best_k = 0;
        let mut best_value = T::infinity();
        for k in 0..=cells {
            let eta = node(k);
            let value = loss(eta);
            let better =
                value < best_value || (value == best_value && eta.abs() < node(best_k).abs());
            if better {
                best_k = k;
                best_value = value;
            }
        }
        // Only very high reflectivities push the optimum past the default
        // bracket; widen until the scan minimum is interior.
        if best_k > 0 || margin > T::lit(MAX_LOWER_MARGIN) {
            break (lo, step, best_k, best_value);
        }
        margin = margin * T::lit(2.0);
    };
    let node = |k: usize| {
        if k == cells {
            hi
        } else {
            lo + step * T::from_usize(k).unwrap()
        }
    };

    let sub_lo = node(best_k.saturating_sub(1));
    let sub_hi = node((best_k + 1).min(cells));
    let refined = brent_from(
        &mut loss,
        sub_lo,
        sub_hi,
        node(best_k),
        T::lit(search.eta_tolerance),
        search.max_iterations,
    );

    let (eta_opt, loss_opt) = if refined.value <= best_value {
        (refined.x, refined.value)
    } else {
        (node(best_k), best_value)
    };
    Ok(OptimizationResult {
        eta_opt,
        loss_opt,
        iterations: refined.iterations,
        bracket_used: (lo, hi),
        converged: refined.converged && series_ok,
    })
}

/// `count` log-spaced points from `first` to `last` inclusive.
pub fn log_grid<T: Scalar>(first: T, last: T, count: usize) -> Result<Vec<T>> {
    if !(first > T::zero() && last > first) {
        return Err(Error::invalid("delta grid", "need 0 < first < last"));
    }
    if count < 2 {
        return Err(Error::invalid("delta grid", "need at least 2 points"));
    }
    let (a, b) = (first.ln(), last.ln());
    let span = T::from_usize(count - 1).unwrap();
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                first
            } else if i == count - 1 {
                last
            } else {
                (a + (b - a) * T::from_usize(i).unwrap() / span).exp()
            }
        })
        .collect())
}

/// 200 log-spaced walk-off values over `[1e-3, 10]`.
pub fn default_delta_grid<T: Scalar>() -> Vec<T> {
    log_grid(T::lit(1e-3), T::lit(10.0), 200).expect("static grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow<T> {
    pub delta: T,
    pub eta_opt: T,
    pub loss_opt: T,
    pub converged: bool,
    /// Simple-insertion offset for the refractive index in the metadata.
    pub eta_sim: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub format_version: u32,
    pub reflectivity: f64,
    pub truncation_tolerance: f64,
    pub max_terms: usize,
    pub search: EtaSearch,
    pub refractive_index: Option<f64>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable<T> {
    pub reflectivity: T,
    pub rows: Vec<SweepRow<T>>,
    pub metadata: SweepMetadata,
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("delta grid"));
    }
    if !grid.iter().all(|d| *d > T::zero() && d.is_finite()) {
        return Err(Error::invalid(
            "delta grid",
            "values must be positive and finite",
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "delta grid",
            "values must be strictly increasing",
        ));
    }
    Ok(())
}

fn sweep_row<T: Scalar>(
    params: &SeriesParams<T>,
    delta: T,
    search: &EtaSearch,
    index: Option<T>,
) -> SweepRow<T> {
    // delta was validated, so minimization cannot fail on input
    let r = minimize_over_eta_with(params, delta, search).expect("validated delta");
    SweepRow {
        delta,
        eta_opt: r.eta_opt,
        loss_opt: r.loss_opt,
        converged: r.converged,
        eta_sim: index.map(|n| simple_insertion_offset(n, delta)),
    }
}

fn metadata<T: Scalar>(
    params: &SeriesParams<T>,
    search: &EtaSearch,
    index: Option<T>,
) -> SweepMetadata {
    SweepMetadata {
        format_version: FORMAT_VERSION,
        reflectivity: params.reflectivity().to_f64_lossy(),
        truncation_tolerance: params.truncation_tolerance().to_f64_lossy(),
        max_terms: params.max_terms(),
        search: *search,
        refractive_index: index.map(|n| n.to_f64_lossy()),
        timestamp: None,
    }
}

/// One [`minimize_over_eta`] per grid point, evaluated in order.
pub fn sweep_delta<T: Scalar>(params: &SeriesParams<T>, grid: &[T]) -> Result<SweepTable<T>> {
    sweep_delta_with(params, grid, &EtaSearch::default(), None)
}

/// Sweep with explicit search settings and, optionally, an `eta_sim` column
/// for refractive index `index`.
pub fn sweep_delta_with<T: Scalar>(
    params: &SeriesParams<T>,
    grid: &[T],
    search: &EtaSearch,
    index: Option<T>,
) -> Result<SweepTable<T>> {
    check_grid(grid)?;
    let rows = grid
        .iter()
        .map(|&d| sweep_row(params, d, search, index))
        .collect();
    Ok(SweepTable {
        reflectivity: params.reflectivity(),
        rows,
        metadata: metadata(params, search, index),
    })
}

/// Same rows as [`sweep_delta_with`], computed on the rayon pool.
pub fn sweep_delta_parallel<T: Scalar>(
    params: &SeriesParams<T>,
    grid: &[T],
    search: &EtaSearch,
    index: Option<T>,
) -> Result<SweepTable<T>> {
    check_grid(grid)?;
    let rows = grid
        .par_iter()
        .map(|&d| sweep_row(params, d, search, index))
        .collect();
    Ok(SweepTable {
        reflectivity: params.reflectivity(),
        rows,
        metadata: metadata(params, search, index),
    })
}

#[derive(Serialize)]
struct CsvRow {
    delta: f64,
    eta_opt: f64,
    loss_opt: f64,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_sim: Option<f64>,
}

#[derive(Serialize)]
struct JsonTable<'a> {
    metadata: &'a SweepMetadata,
    rows: Vec<CsvRow>,
}

impl<T: Scalar> SweepTable<T> {
    pub fn with_timestamp(mut self, timestamp: Option<u64>) -> Self {
        self.metadata.timestamp = timestamp;
        self
    }

    fn plain_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| CsvRow {
                delta: r.delta.to_f64_lossy(),
                eta_opt: r.eta_opt.to_f64_lossy(),
                loss_opt: r.loss_opt.to_f64_lossy(),
                converged: r.converged,
                eta_sim: r.eta_sim.map(|v| v.to_f64_lossy()),
            })
            .collect()
    }

    /// Columns `delta,eta_opt,loss_opt,converged[,eta_sim]` after `#` comment
    /// lines carrying the metadata.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = &self.metadata;
        let mut comments = vec![
            format!("reflectivity={}", m.reflectivity),
            format!("truncation_tolerance={}", m.truncation_tolerance),
            format!("max_terms={}", m.max_terms),
            format!("eta_tolerance={}", m.search.eta_tolerance),
            format!("prescan_points={}", m.search.prescan_points),
        ];
        if let Some(n) = m.refractive_index {
            comments.push(format!("refractive_index={n}"));
        }
        output::write_header(&mut out, "sweep", m.timestamp, &comments)?;
        output::write_csv_rows(out, &self.plain_rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&JsonTable {
            metadata: &self.metadata,
            rows: self.plain_rows(),
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{max_loss, optimal_offset, optimized_loss};
    use crate::series::overlap_series;

    fn params(r: f64) -> SeriesParams<f64> {
        SeriesParams::new(r).unwrap()
    }

    #[test]
    fn small_walkoff_agrees_with_closed_form() {
        let res = minimize_over_eta(&params(0.27), 0.05).unwrap();
        assert!(res.converged);
        assert!((res.eta_opt - optimal_offset(0.27, 0.05)).abs() < 1e-3);
        assert!((res.eta_opt + 0.01849).abs() < 1e-3);
        let limit = optimized_loss(0.27, 0.05);
        assert!((res.loss_opt - limit).abs() < 0.02 * limit);
        assert!(res.bracket_used.0 <= res.eta_opt && res.eta_opt <= res.bracket_used.1);
    }

    #[test]
    fn vanishing_reflectivity() {
        for d in [0.01, 0.3, 1.0] {
            let res = minimize_over_eta(&params(1e-6), d).unwrap();
            assert!(res.eta_opt.abs() < 1e-5, "{d}: {}", res.eta_opt);
            assert!(res.loss_opt < 1e-5);
        }
    }

    #[test]
    fn separated_orders() {
        let res = minimize_over_eta(&params(0.27), 5.0).unwrap();
        assert!((res.loss_opt - max_loss(0.27)).abs() < 1e-3);
        assert!(res.eta_opt.abs() < 0.1);
    }

    #[test]
    fn rejects_negative_walkoff() {
        assert!(minimize_over_eta(&params(0.27), -0.1).is_err());
    }

    #[test]
    fn optimum_is_a_local_minimum() {
        for &(r, d) in &[
            (0.05, 0.2),
            (0.5, 0.8),
            (0.9, 1.5),
            (0.9, 0.05),
            (0.99, 0.3),
        ] {
            let p = params(r);
            let res = minimize_over_eta(&p, d).unwrap();
            let at = |e: f64| overlap_series(&p, d, e).unwrap().loss;
            assert!(at(res.eta_opt + 1e-4) >= res.loss_opt - 1e-10);
            assert!(at(res.eta_opt - 1e-4) >= res.loss_opt - 1e-10);
            assert!(res.bracket_used.0 < res.eta_opt);
        }
    }

    #[test]
    fn realignment_never_hurts() {
        for n in [1.0, 1.0003, 1.447, 2.4, 3.5] {
            for d in [0.01, 0.2, 1.0, 3.0] {
                let p = params(0.27);
                let res = minimize_over_eta(&p, d).unwrap();
                let sim = overlap_series(&p, d, simple_insertion_offset(n, d))
                    .unwrap()
                    .loss;
                assert!(res.loss_opt <= sim + 1e-12, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn sweep_shape() {
        let grid = log_grid(1e-3, 10.0, 60).unwrap();
        let table = sweep_delta(&params(0.27), &grid).unwrap();
        assert_eq!(table.rows.len(), 60);
        let mut prev = 0.0;
        let mut peak: f64 = 0.0;
        for row in &table.rows {
            assert!(row.converged);
            assert!(row.loss_opt >= prev - 1e-12);
            assert!(row.loss_opt <= max_loss(0.27) * (1.0 + 1e-3));
            prev = row.loss_opt;
            peak = peak.max(row.eta_opt.abs());
            if row.delta <= 0.03 {
                let ratio = row.loss_opt / (row.delta * row.delta) / (0.27 / 0.73f64.powi(2));
                assert!((ratio - 1.0).abs() < 0.05);
            }
        }
        assert!(table.rows[0].eta_opt.abs() < 1e-3);
        assert!(peak > 0.05 && peak < 1.2, "{peak}");
    }

    #[test]
    fn parallel_sweep_is_bit_identical() {
        let grid = log_grid(1e-2, 5.0, 24).unwrap();
        let search = EtaSearch::default();
        let a = sweep_delta_with(&params(0.5), &grid, &search, Some(1.0003)).unwrap();
        let b = sweep_delta_parallel(&params(0.5), &grid, &search, Some(1.0003)).unwrap();
        assert_eq!(a, b);
        let c = sweep_delta_with(&params(0.5), &grid, &search, Some(1.0003)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn grid_validation() {
        assert!(sweep_delta(&params(0.2), &[]).is_err());
        assert!(sweep_delta(&params(0.2), &[0.1, 0.1]).is_err());
        assert!(sweep_delta(&params(0.2), &[0.0, 0.1]).is_err());
        assert!(log_grid(0.0, 1.0, 10).is_err());
        let g = default_delta_grid::<f64>();
        assert_eq!(g.len(), 200);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[199], 10.0);
    }

    #[test]
    fn csv_and_json_output() {
        let table = sweep_delta_with(
            &params(0.27),
            &[0.01, 0.1],
            &EtaSearch::default(),
            Some(1.447),
        )
        .unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# etalon-walkoff sweep format="));
        assert!(text.contains("\ndelta,eta_opt,loss_opt,converged,eta_sim\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);

        let json: serde_json::Value = serde_json::from_str(&table.to_json().unwrap()).unwrap();
        assert_eq!(json["metadata"]["reflectivity"], 0.27);
        assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    }
}
