//! Monte-Carlo sweep over drops and grid points.

use coordbf::scenario::derive_drop_seed;
use coordbf::{
    distortion_ignoring, drop_users, maxmin_optimal, tdma_rate, BeamformingError, DropConfig,
    ImpairmentModel, RateMeasure, Scenario64, SolverOptions, StrategyResult64,
};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{kappa2_label, ExperimentConfig, GridPoint, Scheme};
use crate::records::{ExperimentRecord, Summary, STATUS_METRIC};

/// Share of failed scheme runs above which a sweep is reported as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Metrics emitted per successful scheme run, in output order.
pub const METRICS: [&str; 3] = ["min_rate", "sum_rate", "power_used"];

/// Codes stored in the value of status rows.
pub mod status {
    pub const INFEASIBLE: f64 = 1.0;
    pub const SOLVER: f64 = 2.0;
    pub const OTHER: f64 = 3.0;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot build thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: Summary,
}

impl RunOutput {
    /// True when more than [`MAX_FAILURE_FRACTION`] of the scheme runs failed.
    pub fn too_many_failures(&self) -> bool {
        self.summary.failure_fraction() > MAX_FAILURE_FRACTION
    }
}

fn status_code(e: &BeamformingError) -> f64 {
    let e = match e {
        BeamformingError::Bisection { source, .. } => source.as_ref(),
        other => other,
    };
    match e {
        BeamformingError::Infeasible | BeamformingError::MinimumQosInfeasible => status::INFEASIBLE,
        BeamformingError::Solver { .. } | BeamformingError::Conic(_) => status::SOLVER,
        _ => status::OTHER,
    }
}

/// Transmit power of a strategy, time-averaged over the slots for TDMA.
fn power_used(r: &StrategyResult64, n_users: usize) -> f64 {
    if let Some(w) = &r.w {
        return w.iter().map(|m| m.fro_norm_sqr()).sum();
    }
    let slots = r.slots.as_deref().unwrap_or(&[]);
    slots
        .iter()
        .flatten()
        .map(|m| m.fro_norm_sqr())
        .sum::<f64>()
        / n_users as f64
}

/// Runs one scheme on one scenario.
pub fn run_scheme(
    scheme: Scheme,
    scenario: &Scenario64,
    model: &ImpairmentModel<f64>,
    cfg: &ExperimentConfig,
) -> Result<StrategyResult64, BeamformingError> {
    let opts = SolverOptions {
        tolerance: cfg.tolerance,
        cut_tolerance: cfg.cut_tolerance,
        ..SolverOptions::default()
    };
    let tol = cfg.bisection_tol;
    match scheme {
        Scheme::MaxminOptimal => maxmin_optimal(scenario, model, &RateMeasure, tol, &opts),
        Scheme::DistortionIgnoring => distortion_ignoring(
            scenario,
            model,
            &RateMeasure,
            tol,
            &opts,
            cfg.rescale_distortion_ignoring,
        ),
        Scheme::Tdma => tdma_rate(scenario, model, &RateMeasure, tol, &opts),
    }
}

/// Scenario of drop `drop` at the output power of `point`.
pub fn drop_scenario(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    drop: u64,
) -> Result<Scenario64, String> {
    let dc = DropConfig {
        power_dbm: point.power_dbm,
        delta: cfg.delta,
        ..DropConfig::default()
    };
    drop_users(
        &dc,
        cfg.n_cells,
        cfg.users_per_cell,
        cfg.n_tx,
        derive_drop_seed(cfg.seed, drop),
    )
    .map_err(|e| e.to_string())
}

fn run_task(cfg: &ExperimentConfig, point: &GridPoint, drop: u64) -> Vec<ExperimentRecord> {
    let seed = derive_drop_seed(cfg.seed, drop);
    let row = |scheme: Scheme, metric: &str, value: f64| ExperimentRecord {
        experiment: cfg.experiment.as_str().into(),
        drop,
        seed,
        power_dbm: point.power_dbm,
        kappa1: point.kappa1,
        kappa2: kappa2_label(point.kappa2),
        kappa3: point.kappa3,
        delta: cfg.delta,
        scheme: scheme.as_str().into(),
        metric: metric.into(),
        value,
    };
    let schemes = cfg.ordered_schemes();
    let setup = drop_scenario(cfg, point, drop).and_then(|s| {
        ImpairmentModel::from_kappas(point.kappa1, point.kappa2, point.kappa3)
            .map(|m| (s, m))
            .map_err(|e| e.to_string())
    });
    let Ok((scenario, model)) = setup else {
        return schemes
            .iter()
            .map(|&s| row(s, STATUS_METRIC, status::OTHER))
            .collect();
    };
    let mut out = Vec::with_capacity(schemes.len() * METRICS.len());
    for scheme in schemes {
        match run_scheme(scheme, &scenario, &model, cfg) {
            Ok(r) => {
                let values = [r.min_rate, r.sum_rate, power_used(&r, scenario.n_users())];
                if values.iter().all(|v| v.is_finite()) {
                    for (metric, v) in METRICS.iter().zip(values) {
                        out.push(row(scheme, metric, v));
                    }
                } else {
                    out.push(row(scheme, STATUS_METRIC, status::OTHER));
                }
            }
            Err(e) => out.push(row(scheme, STATUS_METRIC, status_code(&e))),
        }
    }
    out
}

/// Runs every (grid point, drop) pair on up to `jobs` threads. Rows come out
/// sorted by grid point, drop and scheme whatever the execution order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutput, RunError> {
    let grid = cfg.grid();
    let tasks: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| (0..cfg.drops).map(move |d| (g, d)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    // `collect` on an indexed parallel iterator keeps task order.
    let chunks: Vec<Vec<ExperimentRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(g, d)| run_task(cfg, &grid[g], d))
            .collect()
    });
    let records: Vec<ExperimentRecord> = chunks.into_iter().flatten().collect();
    let attempts = tasks.len() * cfg.schemes.len();
    let summary = Summary::from_records(
        cfg.experiment.as_str(),
        cfg.drops,
        cfg.seed,
        attempts,
        &records,
    );
    Ok(RunOutput { records, summary })
}
