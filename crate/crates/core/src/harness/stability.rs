use crate::propagator::PropagationError;

use super::config::{RunConfig, Solver};
use super::ensemble::ensemble_series;
use super::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub dt: f64,
    pub diverged: bool,
    /// Time and trajectory of the first reported failure.
    pub time: Option<f64>,
    pub trajectory: Option<u64>,
}

/// Runs the configured ensemble once per step size and records whether any
/// trajectory left the norm band. Divergence is a result here, not an error.
pub fn run_stability_probe(cfg: &RunConfig, dts: &[f64]) -> Result<Vec<StabilityRow>, HarnessError> {
    cfg.validate()?;
    let Solver::Stochastic(scheme) = cfg.solver else {
        return Err(HarnessError::Config("the stability probe needs a stochastic solver".into()));
    };
    if dts.is_empty() {
        return Err(HarnessError::Config("no step sizes given".into()));
    }
    let grids = dts
        .iter()
        .map(|&dt| cfg.grid_for(dt))
        .collect::<Result<Vec<_>, _>>()?;
    let setup = cfg.build_model()?;
    let mut rows = Vec::with_capacity(dts.len());
    for (&dt, grid) in dts.iter().zip(grids) {
        let row = match ensemble_series(&setup, scheme, grid, cfg.seed, cfg.samples) {
            Ok(_) => StabilityRow {
                dt,
                diverged: false,
                time: None,
                trajectory: None,
            },
            Err(HarnessError::Diverged(f)) => StabilityRow {
                dt,
                diverged: true,
                time: match f.source {
                    PropagationError::Diverged { time, .. } => Some(time),
                    _ => None,
                },
                trajectory: Some(f.trajectory),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}
