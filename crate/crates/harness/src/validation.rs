//! Acceptance checks. Each returns a pass flag and a one-line detail.

use std::time::Instant;

use coordbf::beamforming::{check_solution, ConstraintCheck};
use coordbf::conic::{check_infeasibility_certificate, solve_conic, SolveStatus};
use coordbf::metrics::rate_slope_per_log2_power;
use coordbf::scenario::derive_drop_seed;
use coordbf::{
    distortion_ignoring, drop_users, finite_snr_mux_gain, make_manual_scenario, maxmin_optimal,
    power_saturation_probe, solve_fpo, solve_qos, tdma_rate, DropConfig, ImpairmentModel, Kappa2,
    RateMeasure, Scenario64, SolverOptions,
};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::oracles::{
    dense_scan, infeasible_fixtures, scalar_cases, socp_suite, two_cell_cases, ScalarInstance,
};
use crate::records::write_csv;
use crate::runner::run_experiment;

/// Knobs of a validation run.
#[derive(Clone, Debug)]
pub struct Profile {
    pub seed: u64,
    /// Drops for the Monte-Carlo criteria; 50 when `None`.
    pub mc_drops: Option<u64>,
    pub jobs: usize,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            seed: 2024,
            mc_drops: None,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl Profile {
    fn drops(&self) -> u64 {
        self.mc_drops.unwrap_or(50)
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .expect("thread pool")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<4} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

/// Solutions gathered by the scalar criteria for the tightness check.
#[derive(Default)]
struct Shared {
    /// Each check with whether the model needed the outer approximation.
    checks: Vec<(ConstraintCheck<f64>, bool)>,
}

fn needs_cuts(m: &ImpairmentModel<f64>) -> bool {
    !(m.eta_is_linear() && m.nu_is_linear())
}

const DESK_POWER_DBM: f64 = 18.2;

fn desk_drop(seed: u64, drop: u64, power_dbm: f64) -> Scenario64 {
    let dc = DropConfig {
        power_dbm,
        ..DropConfig::default()
    };
    drop_users(&dc, 2, 2, 4, derive_drop_seed(seed, drop)).expect("desk drop")
}

fn linear(k1: f64, k3: f64) -> ImpairmentModel<f64> {
    ImpairmentModel::from_kappas(k1, Kappa2::Infinite, k3).expect("kappas")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

type Outcome = (bool, String);

fn c1_scalar_closed_form(p: &Profile, sh: &mut Shared) -> Outcome {
    let opts = SolverOptions::default();
    let (mut worst_beta, mut worst_f) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for case in scalar_cases(p.seed, 100) {
        let inst = case.instance;
        let (s, m) = (inst.scenario(), inst.model());
        let (target, oracle_beta) = (case.target, case.beta);
        match solve_qos(&s, &m, &[vec![target]], &opts) {
            Ok(sol) => {
                worst_beta = worst_beta.max(rel(sol.beta, oracle_beta));
                sh.checks
                    .push((check_solution(&s, &m, &sol), needs_cuts(&m)));
            }
            Err(_) => errors += 1,
        }
        match solve_fpo(
            &s,
            &m,
            &RateMeasure,
            &[vec![0.0]],
            &[vec![1.0]],
            1e-7,
            &opts,
        ) {
            Ok(res) => {
                worst_f = worst_f.max(rel(res.f_star, case.max_rate));
                sh.checks
                    .push((check_solution(&s, &m, &res.solution), needs_cuts(&m)));
            }
            Err(_) => errors += 1,
        }
    }
    (
        errors == 0 && worst_beta <= 1e-4 && worst_f <= 1e-4,
        format!(
            "100 instances, max rel err beta {worst_beta:.2e}, f* {worst_f:.2e}, {errors} solver errors (limit 1e-4)"
        ),
    )
}

fn c2_grid_search(p: &Profile, sh: &mut Shared) -> Outcome {
    let opts = SolverOptions::default();
    let cases = two_cell_cases(p.seed, 20);
    let alpha = vec![vec![0.5]; 2];
    let a = vec![vec![0.0]; 2];
    let solved: Vec<_> = p.pool().install(|| {
        cases
            .par_iter()
            .map(|case| {
                let (s, m) = (case.instance.scenario(), case.instance.model());
                let grid = case.maxmin_rate;
                let res = solve_fpo(&s, &m, &RateMeasure, &a, &alpha, 1e-7, &opts);
                (
                    grid,
                    res.map(|r| {
                        (
                            r.f_star * 0.5,
                            (check_solution(&s, &m, &r.solution), needs_cuts(&m)),
                        )
                    }),
                )
            })
            .collect()
    });
    let mut worst = 0.0f64;
    let mut errors = 0;
    for (grid, res) in solved {
        match res {
            Ok((rate, chk)) => {
                worst = worst.max(rel(rate, grid));
                sh.checks.push(chk);
            }
            Err(_) => errors += 1,
        }
    }
    (
        errors == 0 && worst <= 1e-3,
        format!("20 instances, max rel gap to 2000x2000 grid {worst:.2e}, {errors} solver errors (limit 1e-3)"),
    )
}

fn c3_tightness(p: &Profile, sh: &mut Shared) -> Outcome {
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xC3);
    let mut errors = 0;
    let jobs: Vec<(Scenario64, ImpairmentModel<f64>, Vec<Vec<f64>>)> = (0..20)
        .map(|d| {
            let s = desk_drop(p.seed ^ 0xC3, d, DESK_POWER_DBM);
            let k1 = rng.random_range(0.0..15.0);
            let k3 = rng.random_range(0.0..15.0);
            let k2 = if d % 2 == 1 {
                Kappa2::Finite(rng.random_range(2.0..6.0))
            } else {
                Kappa2::Infinite
            };
            let m = ImpairmentModel::from_kappas(k1, k2, k3).expect("kappas");
            let targets = (0..2)
                .map(|_| (0..2).map(|_| rng.random_range(0.5..4.0)).collect())
                .collect();
            (s, m, targets)
        })
        .collect();
    let checks: Vec<_> = p.pool().install(|| {
        jobs.par_iter()
            .map(|(s, m, t)| {
                solve_qos(s, m, t, &opts).map(|sol| (check_solution(s, m, &sol), needs_cuts(m)))
            })
            .collect()
    });
    let mut all = std::mem::take(&mut sh.checks);
    for c in checks {
        match c {
            Ok(c) => all.push(c),
            Err(_) => errors += 1,
        }
    }
    let max = |f: fn(&ConstraintCheck<f64>) -> f64, cuts: Option<bool>| {
        all.iter()
            .filter(|(_, n)| cuts.is_none_or(|c| c == *n))
            .map(|(c, _)| f(c))
            .fold(0.0f64, f64::max)
    };
    let violation =
        |c: &ConstraintCheck<f64>| c.beta_gap.max(c.power_violation).max(c.sinr_violation);
    let (conic, outer) = (max(violation, Some(false)), max(violation, Some(true)));
    let imag = max(|c| c.max_imag, None);
    let min_re = all
        .iter()
        .map(|(c, _)| c.min_real)
        .fold(f64::INFINITY, f64::min);
    let slack = max(|c| c.eta_slack.max(c.nu_slack), None);
    // With t and r recomputed from w, the reformulation is tight when beta
    // and every constraint survive at the solver's optimum. Linear models
    // are one conic program, so the interior-point tolerance applies;
    // nonlinear ones are only enforced up to the cut tolerance.
    let conic_limit = 100.0 * opts.tolerance;
    let outer_limit = 100.0 * opts.cut_tolerance;
    let n_outer = all.iter().filter(|(_, n)| *n).count();
    (
        errors == 0
            && conic <= conic_limit
            && outer <= outer_limit
            && imag <= 1e-8
            && min_re >= 0.0,
        format!(
            "{} solves ({n_outer} with cuts) with t, r recomputed from w: max relative beta gap / power / SINR violation {conic:.1e} (limit {conic_limit:.0e}), with cuts {outer:.1e} (limit {outer_limit:.0e}); |Im| {imag:.1e} (limit 1e-8); raw solver slack {slack:.1e}; {errors} errors",
            all.len()
        ),
    )
}

fn c4_bisection(p: &Profile, _: &mut Shared) -> Outcome {
    let opts = SolverOptions::default();
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xC4);
    let (mut halving_ok, mut worst) = (true, 0.0f64);
    let mut errors = 0;
    for _ in 0..20 {
        let inst = ScalarInstance::random(&mut rng);
        let res = match solve_fpo(
            &inst.scenario(),
            &inst.model(),
            &RateMeasure,
            &[vec![0.0]],
            &[vec![1.0]],
            tol,
            &opts,
        ) {
            Ok(r) => r,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        for (k, step) in res.trace.iter().enumerate() {
            halving_ok &= step.width == res.f_upper / 2f64.powi(k as i32);
        }
        halving_ok &= res.interval.1 - res.interval.0 <= tol;
        let scan = dense_scan(res.f_upper, tol / 8.0, |f| inst.rate_reachable(f));
        worst = worst.max((res.f_star - scan).abs());
    }
    (
        errors == 0 && halving_ok && worst <= 2.0 * tol,
        format!(
            "20 scalar instances: widths halve exactly: {halving_ok}; max |f* - scan| {worst:.2e} (limit {:.0e}); {errors} errors",
            2.0 * tol
        ),
    )
}

/// Max-min and distortion-ignoring min rates on `drops` desk drops.
fn compare_schemes(
    p: &Profile,
    seed: u64,
    drops: u64,
    model: &ImpairmentModel<f64>,
    bisection_tol: f64,
) -> Vec<Option<(f64, f64)>> {
    let opts = SolverOptions::default();
    p.pool().install(|| {
        (0..drops)
            .into_par_iter()
            .map(|d| {
                let s = desk_drop(seed, d, DESK_POWER_DBM);
                let opt = maxmin_optimal(&s, model, &RateMeasure, bisection_tol, &opts).ok()?;
                let di = distortion_ignoring(&s, model, &RateMeasure, bisection_tol, &opts, true)
                    .ok()?;
                Some((opt.min_rate, di.min_rate))
            })
            .collect()
    })
}

fn c5_coincidence(p: &Profile, _: &mut Shared) -> Outcome {
    let tol = 1e-4;
    // alpha = 1/(NK) turns the bisection tolerance into tol / 4 in rate
    let rate_tol = tol / 4.0;
    let res = compare_schemes(p, p.seed ^ 0xC5, 20, &linear(0.0, 0.0), tol);
    let errors = res.iter().filter(|r| r.is_none()).count();
    let worst = res
        .iter()
        .flatten()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    (
        errors == 0 && worst <= 2.0 * rate_tol,
        format!(
            "20 drops: max |optimal - ignoring| min rate {worst:.2e} (limit {:.0e}); {errors} errors",
            2.0 * rate_tol
        ),
    )
}

fn c6_dominance(p: &Profile, _: &mut Shared) -> Outcome {
    let tol = 1e-3;
    let rate_tol = tol / 4.0;
    let drops = p.drops();
    let mut ok = true;
    let mut parts = Vec::new();
    for kappa in [2.0, 4.0, 8.0] {
        let res = compare_schemes(p, p.seed ^ 0xC6, drops, &linear(kappa, kappa), tol);
        let errors = res.iter().filter(|r| r.is_none()).count();
        let pairs: Vec<(f64, f64)> = res.into_iter().flatten().collect();
        let worst = pairs
            .iter()
            .map(|(o, d)| d - o)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mo, md) = (
            mean(&pairs.iter().map(|x| x.0).collect::<Vec<_>>()),
            mean(&pairs.iter().map(|x| x.1).collect::<Vec<_>>()),
        );
        ok &= errors == 0 && worst <= rate_tol;
        if kappa == 8.0 {
            ok &= mo > md;
        }
        parts.push(format!(
            "kappa {kappa}: mean {mo:.4} vs {md:.4}, worst deficit {worst:.1e}, {errors} errors"
        ));
    }
    (
        ok,
        format!("{drops} drops; {} (limit {rate_tol:.1e})", parts.join("; ")),
    )
}

/// Mean max-min sum rate per power point over `drops` desk drops.
fn mean_sum_rates(
    p: &Profile,
    seed: u64,
    drops: u64,
    model: &ImpairmentModel<f64>,
    powers: &[f64],
) -> Result<Vec<f64>, String> {
    let opts = SolverOptions::default();
    let tasks: Vec<(usize, u64)> = (0..powers.len())
        .flat_map(|k| (0..drops).map(move |d| (k, d)))
        .collect();
    let rates: Vec<Option<f64>> = p.pool().install(|| {
        tasks
            .par_iter()
            .map(|&(k, d)| {
                let s = desk_drop(seed, d, powers[k]);
                maxmin_optimal(&s, model, &RateMeasure, 1e-3, &opts)
                    .ok()
                    .map(|r| r.sum_rate)
            })
            .collect()
    });
    let failed = rates.iter().filter(|r| r.is_none()).count();
    if failed > 0 {
        return Err(format!("{failed} failed solves"));
    }
    Ok(rates
        .chunks(drops as usize)
        .map(|c| mean(&c.iter().flatten().copied().collect::<Vec<_>>()))
        .collect())
}

fn c7_saturation(p: &Profile, _: &mut Shared) -> Outcome {
    let drops = p.drops();
    let seed = p.seed ^ 0xC7;
    let impaired = match mean_sum_rates(p, seed, drops, &linear(4.0, 4.0), &[60.0, 80.0]) {
        Ok(r) => r,
        Err(e) => return (false, format!("impaired sweep: {e}")),
    };
    let change = (impaired[1] - impaired[0]).abs() / impaired[0];
    let powers = [40.0, 50.0, 60.0, 70.0, 80.0];
    let ideal = match mean_sum_rates(p, seed, drops, &ImpairmentModel::ideal(), &powers) {
        Ok(r) => r,
        Err(e) => return (false, format!("ideal sweep: {e}")),
    };
    let slope = rate_slope_per_log2_power(&powers, &ideal).unwrap_or(f64::NAN);
    let expect = 4.0;
    (
        change < 0.02 && (slope - expect).abs() <= 0.15 * expect,
        format!(
            "{drops} drops: impaired sum rate {:.4} at 60 dBm, {:.4} at 80 dBm (change {:.2}%, limit 2%); ideal slope {slope:.3} per log2 power over 40-80 dBm (expect 4 +- 15%)",
            impaired[0],
            impaired[1],
            100.0 * change
        ),
    )
}

fn c8_bounded_power(p: &Profile, _: &mut Shared) -> Outcome {
    // operating cap 10 log10(kappa2^2) = 8.2 dBm, 10 dB below the constraint
    let k2 = 10f64.powf(0.41);
    let model = ImpairmentModel::from_kappas(4.0, Kappa2::Finite(k2), 4.0).expect("kappas");
    let grid = [DESK_POWER_DBM, 28.2, 38.2];
    let opts = SolverOptions {
        cut_tolerance: 1e-8,
        ..SolverOptions::default()
    };
    let reports: Vec<_> = p.pool().install(|| {
        (0..10u64)
            .into_par_iter()
            .map(|d| {
                let s = desk_drop(p.seed ^ 0xC8, d, DESK_POWER_DBM);
                power_saturation_probe(&s, &model, &RateMeasure, &grid, 1e-5, &opts)
            })
            .collect()
    });
    let mut passed = 0;
    let mut errors = 0;
    let mut worst_top = 0.0f64;
    for r in &reports {
        match r {
            Ok(r) => {
                passed += r.passed as usize;
                let n = r.used_power.len();
                worst_top = worst_top.max(r.used_power[n - 1] / r.cap[n - 1]);
            }
            Err(_) => errors += 1,
        }
    }
    (
        passed == 10,
        format!(
            "{passed}/10 drops plateau below the cap over {{18.2, 28.2, 38.2}} dBm (largest used/cap at the top {worst_top:.3}); {errors} errors; cap {:.1} dBm",
            10.0 * (k2 * k2).log10()
        ),
    )
}

fn c9_mux_gain(p: &Profile, _: &mut Shared) -> Outcome {
    let opts = SolverOptions::default();
    let drops = p.drops();
    let seed = p.seed ^ 0xC9;
    let gain = |model: &ImpairmentModel<f64>| -> Result<f64, String> {
        let pairs: Vec<Option<(f64, f64)>> = p.pool().install(|| {
            (0..drops)
                .into_par_iter()
                .map(|d| {
                    let s = desk_drop(seed, d, DESK_POWER_DBM);
                    let c = maxmin_optimal(&s, model, &RateMeasure, 1e-3, &opts).ok()?;
                    let t = tdma_rate(&s, model, &RateMeasure, 1e-3, &opts).ok()?;
                    Some((c.sum_rate, t.sum_rate))
                })
                .collect()
        });
        let ok: Vec<(f64, f64)> = pairs.iter().flatten().copied().collect();
        if ok.len() != pairs.len() {
            return Err(format!("{} failed drops", pairs.len() - ok.len()));
        }
        let c = mean(&ok.iter().map(|x| x.0).collect::<Vec<_>>());
        let t = mean(&ok.iter().map(|x| x.1).collect::<Vec<_>>());
        finite_snr_mux_gain(c, t).map_err(|e| e.to_string())
    };
    let (ideal, impaired) = match (gain(&ImpairmentModel::ideal()), gain(&linear(4.0, 4.0))) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return (false, format!("ideal {a:?}, impaired {b:?}")),
    };
    // one cell, one user: coordination and TDMA are the same transmission
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut single_ok = true;
    for _ in 0..5 {
        let h: Vec<Complex<f64>> = (0..2)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let s = make_manual_scenario(
            vec![vec![vec![h]]],
            rng.random_range(0.01..1.0),
            coordbf::scenario::per_array_constraints(rng.random_range(0.0..20.0), 1, 2),
            1.0,
        )
        .expect("single-user scenario");
        let m = linear(rng.random_range(0.0..15.0), rng.random_range(0.0..15.0));
        let c = maxmin_optimal(&s, &m, &RateMeasure, 1e-3, &opts);
        let t = tdma_rate(&s, &m, &RateMeasure, 1e-3, &opts);
        single_ok &= match (c, t) {
            (Ok(c), Ok(t)) => finite_snr_mux_gain(c.sum_rate, t.sum_rate) == Ok(1.0),
            _ => false,
        };
    }
    (
        impaired >= ideal && single_ok,
        format!(
            "{drops} drops at {DESK_POWER_DBM} dBm: M impaired {impaired:.4} vs ideal {ideal:.4}; N=K=1 gives exactly 1: {single_ok}"
        ),
    )
}

fn c10_conic(p: &Profile, _: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xC10);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for f in socp_suite(&mut rng) {
        match solve_conic(&f.program, 1e-9) {
            Ok(out) if out.status == SolveStatus::Optimal => {
                let e = (out.objective - f.optimum).abs() / f.optimum.abs().max(1.0);
                worst = worst.max(e);
                if e > 1e-4 {
                    bad.push(f.name);
                }
            }
            _ => bad.push(f.name),
        }
    }
    let mut certified = 0;
    let fixtures = infeasible_fixtures();
    for (name, prog) in &fixtures {
        let ok = solve_conic(prog, 1e-9).is_ok_and(|out| {
            out.status == SolveStatus::PrimalInfeasible
                && out
                    .certificate
                    .as_ref()
                    .and_then(|z| check_infeasibility_certificate(prog, z, 1e-6))
                    .is_some()
        });
        if ok {
            certified += 1;
        } else {
            bad.push(name.clone());
        }
    }
    (
        bad.is_empty(),
        format!(
            "20 fixtures, max rel err {worst:.1e} (limit 1e-4); {certified}/{} infeasible fixtures certified{}",
            fixtures.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", bad.join(", "))
            }
        ),
    )
}

fn c11_determinism(p: &Profile, _: &mut Shared) -> Outcome {
    let mut cfg = ExperimentConfig::preset(Experiment::FigJointSweep);
    cfg.drops = 2;
    cfg.seed = p.seed;
    cfg.kappa1 = vec![0.0, 6.0];
    cfg.kappa2 = vec![Kappa2::Infinite, Kappa2::Finite(3.0)];
    let csv = |jobs: usize| -> Option<Vec<u8>> {
        let out = run_experiment(&cfg, jobs).ok()?;
        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf).ok()?;
        Some(buf)
    };
    let (a, b, c) = (csv(1), csv(1), csv(p.jobs.max(2)));
    let same = a.is_some() && a == b && a == c;
    (
        same,
        format!(
            "fig_joint_sweep, 2 drops x 4 grid points: identical CSV across reruns and job counts: {same} ({} bytes)",
            a.map_or(0, |v| v.len())
        ),
    )
}

type CheckFn = fn(&Profile, &mut Shared) -> Outcome;

const CRITERIA: [(&str, &str, CheckFn); 11] = [
    ("C1", "scalar closed-form oracle", c1_scalar_closed_form),
    ("C2", "grid-search oracle", c2_grid_search),
    ("C3", "reformulation tightness", c3_tightness),
    ("C4", "bisection", c4_bisection),
    ("C5", "coincidence without distortion", c5_coincidence),
    ("C6", "dominance over distortion-ignoring", c6_dominance),
    ("C7", "rate saturation", c7_saturation),
    ("C8", "bounded power", c8_bounded_power),
    ("C9", "finite-SNR multiplexing gain", c9_mux_gain),
    ("C10", "conic backend", c10_conic),
    ("C11", "determinism", c11_determinism),
];

/// Runtime limits, seconds.
fn runtime_limit(id: &str) -> Option<f64> {
    match id {
        "C1" => Some(30.0),
        "C2" => Some(300.0),
        _ => None,
    }
}

/// Runs every criterion in order, calling `on_report` as each finishes.
pub fn run_all(
    profile: &Profile,
    mut on_report: impl FnMut(&CriterionReport),
) -> Vec<CriterionReport> {
    let mut shared = Shared::default();
    let mut out = Vec::new();
    for (id, title, check) in CRITERIA {
        let start = Instant::now();
        let (mut passed, mut detail) = check(profile, &mut shared);
        let seconds = start.elapsed().as_secs_f64();
        if let Some(limit) = runtime_limit(id) {
            if seconds > limit {
                passed = false;
                detail.push_str(&format!("; runtime {seconds:.1} s over {limit} s"));
            }
        }
        let r = CriterionReport {
            id: id.into(),
            title: title.into(),
            passed,
            detail,
            seconds,
        };
        on_report(&r);
        out.push(r);
    }
    out
}
