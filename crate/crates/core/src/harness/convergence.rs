use crate::propagator::TimeGrid;

use super::config::{RunConfig, Solver};
use super::ensemble::{ensemble_series, reference_series};
use super::HarnessError;

/// Errors this close to zero, relative to the oracle, are rounding noise and
/// never count as a measured bias.
const NOISE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub estimate: f64,
    pub abs_error: f64,
    pub mc_halfwidth: f64,
    /// `mc_halfwidth < abs_error / 3`
    pub bias_dominated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub observable: String,
    pub t_final: f64,
    pub oracle: f64,
    pub points: Vec<ConvergencePoint>,
    /// Least-squares fit of `ln |error| = intercept + slope ln dt` over the
    /// bias-dominated points; `None` with fewer than two of them.
    pub fit: Option<(f64, f64)>,
}

impl ConvergenceReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|(s, _)| s)
    }

    pub fn intercept(&self) -> Option<f64> {
        self.fit.map(|(_, c)| c)
    }

    pub fn n_bias_dominated(&self) -> usize {
        self.points.iter().filter(|p| p.bias_dominated).count()
    }
}

pub fn is_bias_dominated(abs_error: f64, halfwidth: f64, oracle: f64) -> bool {
    abs_error > NOISE_FLOOR * oracle.abs().max(1.0) && halfwidth < abs_error / 3.0
}

/// Ordinary least squares of `ln y` on `ln x`; returns `(slope, intercept)`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Builds the report and fits the slope; everything except the fit is
/// returned even when too few points are usable.
pub fn convergence_report(
    observable: String,
    t_final: f64,
    oracle: f64,
    measured: &[(f64, f64, f64)],
) -> ConvergenceReport {
    let points: Vec<ConvergencePoint> = measured
        .iter()
        .map(|&(dt, estimate, halfwidth)| {
            let abs_error = (estimate - oracle).abs();
            ConvergencePoint {
                dt,
                estimate,
                abs_error,
                mc_halfwidth: halfwidth,
                bias_dominated: is_bias_dominated(abs_error, halfwidth, oracle),
            }
        })
        .collect();
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.bias_dominated)
        .map(|p| (p.dt, p.abs_error))
        .collect();
    ConvergenceReport {
        observable,
        t_final,
        oracle,
        fit: loglog_fit(&usable),
        points,
    }
}

/// Measures the first observable of `cfg` at `t_final` for every step in
/// `dts` and compares with the density-matrix oracle.
///
/// The report is returned alongside `InsufficientPrecision` so callers can
/// still write it out; the error signals that no slope could be fitted.
pub fn run_convergence(
    cfg: &RunConfig,
    dts: &[f64],
) -> Result<ConvergenceReport, (HarnessError, Option<ConvergenceReport>)> {
    let report = measure(cfg, dts).map_err(|e| (e, None))?;
    if report.fit.is_none() {
        let msg = format!(
            "{} of {} step sizes are bias-dominated (half-width < error/3); at least 2 are needed, raise the sample count",
            report.n_bias_dominated(),
            report.points.len()
        );
        return Err((HarnessError::InsufficientPrecision(msg), Some(report)));
    }
    Ok(report)
}

fn measure(cfg: &RunConfig, dts: &[f64]) -> Result<ConvergenceReport, HarnessError> {
    if dts.len() < 3 {
        return Err(HarnessError::Config(format!(
            "a convergence study needs at least 3 step sizes, got {}",
            dts.len()
        )));
    }
    cfg.validate()?;
    let grids = dts
        .iter()
        .map(|&dt| cfg.grid_for(dt))
        .collect::<Result<Vec<_>, _>>()?;
    let mut setup = cfg.build_model()?;
    setup.names.truncate(1);
    setup.operators.truncate(1);

    let oracle_grid = TimeGrid {
        dt: cfg.t_final,
        steps_per_macro: 1,
        n_macro: 1,
    };
    let oracle_series = reference_series(&setup, oracle_grid, cfg.dt_ref)?;
    let oracle = oracle_series.values[1][0];

    let mut measured = Vec::with_capacity(dts.len());
    for (&dt, grid) in dts.iter().zip(grids) {
        let (estimate, halfwidth) = match cfg.solver {
            Solver::Stochastic(scheme) => {
                let s = ensemble_series(&setup, scheme, grid, cfg.seed, cfg.samples)?;
                let last = s.times.len() - 1;
                (s.mean[last][0], s.halfwidth[last][0])
            }
            Solver::Reference => {
                // The oracle measured against itself.
                let r = reference_series(&setup, oracle_grid, cfg.dt_ref)?;
                (r.values[1][0], 0.0)
            }
        };
        measured.push((dt, estimate, halfwidth));
    }
    Ok(convergence_report(setup.names[0].clone(), cfg.t_final, oracle, &measured))
}
