use rayon::prelude::*;

use crate::propagator::{run_batch, Scheme, TimeGrid, TrajectoryFailure};
use crate::reference::{propagate_reference, DensityMatrix, ReferenceSeries};

use super::config::{ModelSetup, RunConfig, Solver};
use super::stats::{EnsembleSeries, MomentTable};
use super::HarnessError;

/// Trajectories per work unit. Fixed so that the merge order, and therefore
/// every bit of the result, does not depend on the number of workers.
pub const CHUNK: u64 = 256;

/// Runs `samples` trajectories, numbered `0..samples`, and reduces them to
/// per-time moments. Trajectory `k` always draws from stream `k` of `seed`.
pub fn ensemble_series(
    setup: &ModelSetup,
    scheme: Scheme,
    grid: TimeGrid,
    seed: u64,
    samples: u64,
) -> Result<EnsembleSeries, HarnessError> {
    let n_times = grid.n_macro + 1;
    let n_obs = setup.operators.len();
    let n_chunks = samples.div_ceil(CHUNK);
    let tables: Vec<Result<MomentTable, TrajectoryFailure>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(samples);
            let mut table = MomentTable::new(n_times, n_obs);
            run_batch(
                &setup.system,
                scheme,
                grid,
                &setup.initial,
                seed,
                range,
                &setup.operators,
                |_, k, values| table.push(k, values),
            )?;
            Ok(table)
        })
        .collect();
    let mut total = MomentTable::new(n_times, n_obs);
    for table in tables {
        total.merge(&table?);
    }
    Ok(EnsembleSeries::from_table(grid.macro_times(), setup.names.clone(), &total))
}

/// Validates `cfg`, builds its model and runs the stochastic ensemble.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleSeries, HarnessError> {
    let grid = cfg.validate()?;
    let Solver::Stochastic(scheme) = cfg.solver else {
        return Err(HarnessError::Config(
            "the ensemble command needs a stochastic solver; use `reference` for the density-matrix oracle".into(),
        ));
    };
    let setup = cfg.build_model()?;
    ensemble_series(&setup, scheme, grid, cfg.seed, cfg.samples)
}

/// Density-matrix oracle on the macro grid of a configuration.
#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub observables: Vec<String>,
    pub series: ReferenceSeries,
}

pub fn reference_series(
    setup: &ModelSetup,
    grid: TimeGrid,
    dt_ref: f64,
) -> Result<ReferenceSeries, HarnessError> {
    let rho0 = DensityMatrix::pure(&setup.initial);
    Ok(propagate_reference(
        &setup.system,
        &rho0,
        grid.tau(),
        grid.n_macro,
        dt_ref,
        &setup.operators,
    )?)
}

/// Runs the RK4 oracle with step `cfg.dt_ref` on the grid given by `cfg`.
pub fn run_reference(cfg: &RunConfig) -> Result<ReferenceRun, HarnessError> {
    let grid = cfg.validate()?;
    let setup = cfg.build_model()?;
    Ok(ReferenceRun {
        observables: setup.names.clone(),
        series: reference_series(&setup, grid, cfg.dt_ref)?,
    })
}
