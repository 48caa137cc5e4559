//! Reference strategies: impairment-aware max-min, distortion-ignoring
//! beamforming and equal-share TDMA.

use crate::beamforming::{
    solve_fpo, BeamformingError, FpoResult, PerformanceMeasure, SolverOptions,
};
use crate::impairments::{tx_distortion_cov, ImpairmentModel};
use crate::linalg::CMatrix;
use crate::metrics::{evaluate, power_usage};
use crate::scalar::{cast, from_usize, Real};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyLabel {
    MaxminOptimal,
    DistortionIgnoring,
    Tdma,
}

impl StrategyLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyLabel::MaxminOptimal => "maxmin_optimal",
            StrategyLabel::DistortionIgnoring => "distortion_ignoring",
            StrategyLabel::Tdma => "tdma",
        }
    }
}

impl std::fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Realized performance of a strategy under the true impairment model.
#[derive(Clone, Debug)]
pub struct StrategyResult<T: Real> {
    pub label: StrategyLabel,
    /// Beamformers; `None` for TDMA.
    pub w: Option<Vec<CMatrix<T>>>,
    /// Per-slot single-user beamformers for TDMA, `slots[i][j]` is `N_t x 1`.
    pub slots: Option<Vec<Vec<CMatrix<T>>>>,
    /// `rates[i][j]`; for TDMA already weighted by the time share.
    pub rates: Vec<Vec<T>>,
    pub sum_rate: T,
    pub min_rate: T,
    /// Bisection optimum of the underlying fairness problem(s).
    pub f_star: T,
}

fn equal_profile<T: Real>(scenario: &Scenario<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let (n, k) = (scenario.n_cells(), scenario.users_per_cell());
    let share = T::one() / from_usize::<T>(n * k);
    (vec![vec![T::zero(); k]; n], vec![vec![share; k]; n])
}

fn from_fpo<T: Real>(
    label: StrategyLabel,
    scenario: &Scenario<T>,
    true_model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    w: Vec<CMatrix<T>>,
    f_star: T,
) -> StrategyResult<T> {
    let rep = evaluate(scenario, &w, true_model, measure);
    StrategyResult {
        label,
        w: Some(w),
        slots: None,
        rates: rep.rate,
        sum_rate: rep.sum_rate,
        min_rate: rep.min_rate,
        f_star,
    }
}

/// Max-min beamforming (`a = 0`, `alpha = 1/(NK)`) optimized for the true model.
pub fn maxmin_optimal<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    bisection_tol: T,
    opts: &SolverOptions<T>,
) -> Result<StrategyResult<T>, BeamformingError> {
    let (a, alpha) = equal_profile(scenario);
    let FpoResult {
        f_star, solution, ..
    } = solve_fpo(scenario, model, measure, &a, &alpha, bisection_tol, opts)?;
    Ok(from_fpo(
        StrategyLabel::MaxminOptimal,
        scenario,
        model,
        measure,
        solution.w,
        f_star,
    ))
}

/// Max-min beamforming designed for ideal hardware with `delta = 0`, then
/// evaluated under `true_model`. With `rescale`, each cell's beamformers are
/// shrunk by the largest factor in `(0, 1]` that satisfies the true power
/// constraints; otherwise they are used unchanged.
pub fn distortion_ignoring<T: Real>(
    scenario: &Scenario<T>,
    true_model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    bisection_tol: T,
    opts: &SolverOptions<T>,
    rescale: bool,
) -> Result<StrategyResult<T>, BeamformingError> {
    let (a, alpha) = equal_profile(scenario);
    let design = scenario
        .clone()
        .with_delta(T::zero())
        .map_err(|e| BeamformingError::InvalidInput(e.to_string()))?;
    let res = solve_fpo(
        &design,
        &ImpairmentModel::ideal(),
        measure,
        &a,
        &alpha,
        bisection_tol,
        opts,
    )?;
    let mut w = res.solution.w;
    if rescale {
        for (i, wi) in w.iter_mut().enumerate() {
            let f = feasible_scaling(scenario, true_model, i, wi);
            *wi = wi.scaled(f);
        }
    }
    Ok(from_fpo(
        StrategyLabel::DistortionIgnoring,
        scenario,
        true_model,
        measure,
        w,
        res.f_star,
    ))
}

/// Largest `c in [0, 1]` with `c W` inside cell `i`'s true power constraints.
fn feasible_scaling<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    i: usize,
    w: &CMatrix<T>,
) -> T {
    let ok = |c: T| {
        let ws = w.scaled(c);
        let cd = tx_distortion_cov(&ws, model);
        scenario
            .power_constraints(i)
            .iter()
            .all(|pc| power_usage(&ws, &cd, &pc.q_matrix, scenario.delta()) <= pc.limit)
    };
    if ok(T::one()) {
        return T::one();
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..60 {
        let mid = (lo + hi) * cast(0.5);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Equal time-sharing over all `NK` users; in each slot only the serving base
/// station transmits, to that user alone, with a beamformer optimized under
/// the full impairment model.
pub fn tdma_rate<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    bisection_tol: T,
    opts: &SolverOptions<T>,
) -> Result<StrategyResult<T>, BeamformingError> {
    let share = T::one() / from_usize::<T>(scenario.n_users());
    let mut rates = Vec::with_capacity(scenario.n_cells());
    let mut slots = Vec::with_capacity(scenario.n_cells());
    let mut f_sum = T::zero();
    for i in 0..scenario.n_cells() {
        let mut row = Vec::with_capacity(scenario.users_per_cell());
        let mut slot_row = Vec::with_capacity(scenario.users_per_cell());
        for j in 0..scenario.users_per_cell() {
            let single = scenario.isolated_user(i, j);
            let r = maxmin_optimal(&single, model, measure, bisection_tol, opts)?;
            row.push(r.sum_rate * share);
            f_sum += r.f_star * share;
            slot_row.push(r.w.expect("max-min result has beamformers").remove(0));
        }
        rates.push(row);
        slots.push(slot_row);
    }
    let flat = rates.iter().flatten();
    Ok(StrategyResult {
        label: StrategyLabel::Tdma,
        w: None,
        slots: Some(slots),
        sum_rate: flat.clone().copied().sum(),
        min_rate: flat.fold(T::infinity(), |m, &r| m.min(r)),
        rates,
        f_star: f_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::RateMeasure;
    use crate::impairments::Kappa2;
    use crate::scenario::{make_manual_scenario, mw_to_dbm, per_array_constraints};
    use num_complex::Complex;

    fn scalar(q: f64) -> Scenario<f64> {
        let pcs = per_array_constraints(mw_to_dbm(q), 1, 1);
        make_manual_scenario(
            vec![vec![vec![vec![Complex::new(1.0, 0.0)]]]],
            1.0,
            pcs,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn scalar_strategies_match_closed_form() {
        let s = scalar(100.0);
        let m = ImpairmentModel::from_kappas(10.0, Kappa2::Infinite, 0.0).unwrap();
        let opts = SolverOptions::default();
        let expect = (1.0f64 + 100.0 / (0.01 * 100.0 + 1.0)).log2();
        let ign = distortion_ignoring(&s, &m, &RateMeasure, 1e-6, &opts, false).unwrap();
        let opt = maxmin_optimal(&s, &m, &RateMeasure, 1e-6, &opts).unwrap();
        let tdma = tdma_rate(&s, &m, &RateMeasure, 1e-6, &opts).unwrap();
        for r in [&ign, &opt, &tdma] {
            assert!(
                (r.min_rate - expect).abs() < 1e-4,
                "{}: {}",
                r.label,
                r.min_rate
            );
        }
        assert_eq!(opt.sum_rate, tdma.sum_rate);
    }

    #[test]
    fn rescaling_fits_true_constraints() {
        let s = scalar(100.0).with_delta(1.0).unwrap();
        let m = ImpairmentModel::from_kappas(15.0, Kappa2::Infinite, 0.0).unwrap();
        let opts = SolverOptions::default();
        let r = distortion_ignoring(&s, &m, &RateMeasure, 1e-4, &opts, true).unwrap();
        let w = &r.w.as_ref().unwrap()[0];
        let p = w.fro_norm_sqr();
        assert!(p * (1.0 + 0.0225) <= 100.0 + 1e-9);
        assert!(p * (1.0 + 0.0225) >= 100.0 - 1e-6);
    }
}
