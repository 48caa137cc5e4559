//! QoS power minimization, fairness-profile bisection and diagnostics of the
//! optimal beamforming structure.
//!
//! Programs are assembled in normalized units: beamformers are divided by
//! `sqrt(q_ref)` (the largest power limit) and received amplitudes by
//! `rx_scale = max(sqrt(q_ref) max_{i,j} ||h_{i,i,j}||, sigma)`. Both distortion
//! functions are rescaled accordingly, so cut tolerances apply in these units.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use thiserror::Error;

use crate::conic::{
    embed_quadratic, outer_approx_solve, solve_conic, AffineExpr, ComplexVarVec, ConicError,
    ConicProgram, Constraint, ConstraintId, ScalarConvexConstraint, SolveOutcome, SolveStats,
    SolveStatus, Var,
};
use crate::impairments::{
    received_magnitude, tx_distortion_cov, DistortionFn, ImpairmentModel, ScaledDistortion,
};
use crate::linalg::{hermitian_min_eigenvalue, inner, norm_sqr, solve_complex, CMatrix};
use crate::metrics::{all_sinrs, power_usage};
use crate::scalar::{cast, default_solver_tolerance, from_usize, Real};
use crate::scenario::{dbm_to_mw, Scenario};

/// Strictly increasing per-user performance measure with `g(0) = 0`.
pub trait PerformanceMeasure<T: Real>: Send + Sync + fmt::Debug {
    fn g(&self, sinr: T) -> T;
    fn g_inverse(&self, value: T) -> T;
    fn label(&self) -> &str;
}

/// `log2(1 + SINR)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RateMeasure;

impl<T: Real> PerformanceMeasure<T> for RateMeasure {
    fn g(&self, sinr: T) -> T {
        sinr.ln_1p() / T::LN_2()
    }

    fn g_inverse(&self, value: T) -> T {
        (value * T::LN_2()).exp_m1()
    }

    fn label(&self) -> &str {
        "rate"
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeamformingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("targets unreachable at any power")]
    Infeasible,
    #[error("minimum QoS levels infeasible")]
    MinimumQosInfeasible,
    #[error("solver returned {status} (primal residual {primal_residual:e}, dual residual {dual_residual:e})")]
    Solver {
        status: SolveStatus,
        primal_residual: f64,
        dual_residual: f64,
    },
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("bisection aborted after {} steps: {source}", trace.len())]
    Bisection {
        source: Box<BeamformingError>,
        trace: Vec<BisectionStep<f64>>,
    },
}

/// Numerical settings shared by the optimizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions<T> {
    /// Interior-point tolerance, `(0, 1e-2]`.
    pub tolerance: T,
    /// Outer-approximation tolerance on `phi(u) - t`, normalized units.
    pub cut_tolerance: T,
    pub max_rounds: usize,
    /// Relative SINR shortfall accepted when verifying an inaccurate solve.
    pub verify_slack: T,
    /// Upper limit imposed on `beta`. Targets needing more are reported as
    /// unreachable, which also turns asymptotically feasible target sets into
    /// certifiably infeasible ones.
    pub beta_max: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: default_solver_tolerance(),
            cut_tolerance: cast(crate::conic::DEFAULT_CUT_TOLERANCE),
            max_rounds: crate::conic::DEFAULT_MAX_ROUNDS,
            verify_slack: cast(1e-4),
            beta_max: cast(1e6),
        }
    }
}

/// Solver-side quantities kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveDiagnostics<T> {
    pub stats: SolveStats,
    pub outer_rounds: usize,
    pub max_cut_violation: T,
    /// `beta` as returned by the solver, before re-evaluation.
    pub solver_beta: T,
    /// Solver values of `t` and `r` before projection, normalized units.
    pub raw_t: Vec<Vec<T>>,
    pub raw_r: Vec<Vec<T>>,
    /// `eta` and `nu` at the solver point, normalized units.
    pub eta_at_solution: Vec<Vec<T>>,
    pub nu_at_solution: Vec<Vec<T>>,
    pub w_scale: T,
    pub rx_scale: T,
}

/// Optimal point of the QoS problem.
#[derive(Clone, Debug)]
pub struct BeamformingSolution<T: Real> {
    /// `w[i]` is `N_t x K`; column `j` is `w_{i,j}`.
    pub w: Vec<CMatrix<T>>,
    /// Power scaling actually needed by `w`: the largest ratio
    /// `(tr(W^H Q W) + delta tr(Q C)) / q` over all constraints.
    pub beta: T,
    /// `t[m][n] = eta(||row_n W_m||)`, sqrt(mW).
    pub t: Vec<Vec<T>>,
    /// `r[i][j] = nu(received magnitude)`, sqrt(mW).
    pub r: Vec<Vec<T>>,
    pub status: SolveStatus,
    pub sinr: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
    /// Multipliers of `tr(W^H Q W) + delta tr(Q C) - beta q <= 0`.
    pub power_duals: Vec<Vec<T>>,
    /// Multipliers of `interference + distortion + noise - |h^H w|^2 / s <= 0`.
    pub sinr_duals: Vec<Vec<T>>,
    pub diagnostics: SolveDiagnostics<T>,
}

impl<T: Real> BeamformingSolution<T> {
    /// `p_{i,j} = ||w_{i,j}||^2`.
    pub fn power(&self, i: usize, j: usize) -> T {
        norm_sqr(&self.w[i].column(j))
    }

    pub fn total_power(&self) -> T {
        self.w.iter().map(|w| w.fro_norm_sqr()).sum()
    }

    /// `v_{i,j} = w_{i,j} / ||w_{i,j}||`, `None` for a zero beamformer.
    pub fn direction(&self, i: usize, j: usize) -> Option<Vec<Complex<T>>> {
        let w = self.w[i].column(j);
        let n = norm_sqr(&w).sqrt();
        (n > T::zero()).then(|| w.iter().map(|z| z / n).collect())
    }
}

/// Single-user power cap `P_i = sum_k q_{i,k} / lambda_min(sum_k Q_{i,k})`.
pub fn single_user_power_cap<T: Real>(scenario: &Scenario<T>, cell: usize) -> T {
    let pcs = scenario.power_constraints(cell);
    let n = scenario.n_tx();
    let mut sum = CMatrix::zeros(n, n);
    let mut q = T::zero();
    for pc in pcs {
        sum = sum.add(&pc.q_matrix);
        q += pc.limit;
    }
    q / hermitian_min_eigenvalue(&sum)
}

/// What the QoS program minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
enum QosObjective<T> {
    /// The common scaling `beta`.
    Beta,
    /// Sum over constraints of `usage / q`, each kept within `cap * q`.
    TotalUsage { cap: T },
}

struct Layout<T: Real> {
    beta: Var,
    /// Variable scaling the right-hand side of each power constraint.
    power_rhs: Vec<Vec<Var>>,
    w: Vec<Vec<ComplexVarVec>>,
    t: Vec<Vec<Var>>,
    r: Vec<Vec<Var>>,
    power_ids: Vec<Vec<ConstraintId>>,
    sinr_ids: Vec<Vec<Option<ConstraintId>>>,
    eta: Arc<dyn DistortionFn<T>>,
    nu: Arc<dyn DistortionFn<T>>,
    /// `u[m][n]` and `v[i][j]` when the matching function is nonlinear.
    u: Option<Vec<Vec<Var>>>,
    v: Option<Vec<Vec<Var>>>,
}

fn validate_targets<T: Real>(
    scenario: &Scenario<T>,
    targets: &[Vec<T>],
) -> Result<(), BeamformingError> {
    if targets.len() != scenario.n_cells()
        || targets.iter().any(|r| r.len() != scenario.users_per_cell())
    {
        return Err(BeamformingError::InvalidInput(format!(
            "targets must be {}x{}",
            scenario.n_cells(),
            scenario.users_per_cell()
        )));
    }
    if targets.iter().flatten().any(|s| !(*s >= T::zero())) {
        return Err(BeamformingError::InvalidInput(
            "SINR targets must be >= 0".into(),
        ));
    }
    Ok(())
}

fn build_qos_program<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    targets: &[Vec<T>],
    objective: QosObjective<T>,
) -> Result<(ConicProgram<T>, Layout<T>, Vec<ScalarConvexConstraint<T>>), BeamformingError> {
    let (n_cells, k_users, nt) = (
        scenario.n_cells(),
        scenario.users_per_cell(),
        scenario.n_tx(),
    );
    let q_ref = scenario.max_limit();
    let w_scale = q_ref.sqrt();
    let rx_scale = rx_scale(scenario);
    let h_scale = w_scale / rx_scale;
    let hn = |m: usize, i: usize, j: usize| -> Vec<Complex<T>> {
        scenario
            .channel(m, i, j)
            .iter()
            .map(|z| z * h_scale)
            .collect()
    };
    let eta: Arc<dyn DistortionFn<T>> = Arc::new(ScaledDistortion {
        inner: model.eta.clone(),
        in_scale: w_scale,
        out_scale: w_scale,
    });
    let nu: Arc<dyn DistortionFn<T>> = Arc::new(ScaledDistortion {
        inner: model.nu.clone(),
        in_scale: rx_scale,
        out_scale: rx_scale,
    });

    let mut p = ConicProgram::new();
    let beta = p.add_scalar("beta");
    let w: Vec<Vec<ComplexVarVec>> = (0..n_cells)
        .map(|i| {
            (0..k_users)
                .map(|j| ComplexVarVec {
                    re: p.add_block(format!("w[{i},{j}].re"), nt),
                    im: p.add_block(format!("w[{i},{j}].im"), nt),
                })
                .collect()
        })
        .collect();
    let t: Vec<Vec<Var>> = (0..n_cells)
        .map(|m| p.add_block(format!("t[{m}]"), nt).vars().collect())
        .collect();
    let r: Vec<Vec<Var>> = (0..n_cells)
        .map(|i| p.add_block(format!("r[{i}]"), k_users).vars().collect())
        .collect();
    let u: Option<Vec<Vec<Var>>> = eta.linear_slope().is_none().then(|| {
        (0..n_cells)
            .map(|m| p.add_block(format!("u[{m}]"), nt).vars().collect())
            .collect()
    });
    let v: Option<Vec<Vec<Var>>> = nu.linear_slope().is_none().then(|| {
        (0..n_cells)
            .map(|i| p.add_block(format!("v[{i}]"), k_users).vars().collect())
            .collect()
    });
    for m in 0..n_cells {
        for n in 0..nt {
            p.add(
                format!("t[{m},{n}]>=0"),
                Constraint::NonNeg(AffineExpr::var(t[m][n])),
            );
        }
        for j in 0..k_users {
            p.add(
                format!("r[{m},{j}]>=0"),
                Constraint::NonNeg(AffineExpr::var(r[m][j])),
            );
        }
    }

    // Power constraints.
    let delta = scenario.delta();
    let mut power_ids = Vec::with_capacity(n_cells);
    let mut power_rhs = Vec::with_capacity(n_cells);
    let mut usage_sum = AffineExpr::zero();
    for i in 0..n_cells {
        let mut ids = Vec::new();
        let mut rhs_vars = Vec::new();
        for (k, pc) in scenario.power_constraints(i).iter().enumerate() {
            let extra: Vec<(Var, T)> = (0..nt)
                .map(|n| (t[i][n], delta * pc.q_matrix.get(n, n).re))
                .collect();
            let b = match objective {
                QosObjective::Beta => beta,
                QosObjective::TotalUsage { .. } => {
                    let b = p.add_scalar(format!("b[{i},{k}]"));
                    p.add(
                        format!("b[{i},{k}]<=beta"),
                        Constraint::NonNeg(AffineExpr::var(beta).plus(b, -T::one())),
                    );
                    usage_sum = usage_sum.plus(b, T::one());
                    b
                }
            };
            let rhs = AffineExpr::term(b, pc.limit / q_ref);
            let c = embed_quadratic(&w[i], &pc.q_matrix, &extra, rhs)?;
            ids.push(p.add(format!("power[{i},{k}]"), c));
            rhs_vars.push(b);
        }
        power_ids.push(ids);
        power_rhs.push(rhs_vars);
    }
    match objective {
        QosObjective::Beta => p.minimize(AffineExpr::var(beta)),
        QosObjective::TotalUsage { cap } => {
            p.add(
                "beta<=cap",
                Constraint::NonNeg(AffineExpr::term(beta, -T::one()).plus_const(cap)),
            );
            p.minimize(usage_sum);
        }
    }

    // SINR cones.
    let noise = scenario.noise_power().sqrt() / rx_scale;
    let mut sinr_ids = vec![vec![None; k_users]; n_cells];
    for i in 0..n_cells {
        for j in 0..k_users {
            let s = targets[i][j];
            if s == T::zero() {
                continue;
            }
            let h_own = hn(i, i, j);
            let [sig_re, sig_im] = w[i][j].inner_rows(&h_own);
            p.add(format!("phase[{i},{j}]"), Constraint::Equal(sig_im));
            let mut rows = Vec::new();
            for m in 0..n_cells {
                let h = hn(m, i, j);
                for l in 0..k_users {
                    if m == i && l == j {
                        continue;
                    }
                    rows.extend(w[m][l].inner_rows(&h));
                }
            }
            for m in 0..n_cells {
                let h = hn(m, i, j);
                for n in 0..nt {
                    let g = h[n].norm();
                    if g > T::zero() {
                        rows.push(AffineExpr::term(t[m][n], g));
                    }
                }
            }
            rows.push(AffineExpr::var(r[i][j]));
            rows.push(AffineExpr::constant(noise));
            let bound = sig_re.scaled(T::one() / s.sqrt());
            sinr_ids[i][j] = Some(p.add(format!("sinr[{i},{j}]"), Constraint::Soc { bound, rows }));
        }
    }

    // Transmit distortion.
    let mut scalar = Vec::new();
    for m in 0..n_cells {
        let cap_mag = (single_user_power_cap(scenario, m) / q_ref).sqrt();
        for n in 0..nt {
            let row_rows: Vec<AffineExpr<T>> = (0..k_users)
                .flat_map(|l| {
                    [
                        AffineExpr::var(w[m][l].re.at(n)),
                        AffineExpr::var(w[m][l].im.at(n)),
                    ]
                })
                .collect();
            match (eta.linear_slope(), &u) {
                (Some(a), _) if a == T::zero() => {
                    p.add(
                        format!("eta[{m},{n}]"),
                        Constraint::Equal(AffineExpr::var(t[m][n])),
                    );
                }
                (Some(a), _) => {
                    let rows = row_rows.into_iter().map(|e| e.scaled(a)).collect();
                    p.add(
                        format!("eta[{m},{n}]"),
                        Constraint::Soc {
                            bound: AffineExpr::var(t[m][n]),
                            rows,
                        },
                    );
                }
                (None, Some(u)) => {
                    p.add(
                        format!("u[{m},{n}]"),
                        Constraint::Soc {
                            bound: AffineExpr::var(u[m][n]),
                            rows: row_rows,
                        },
                    );
                    scalar.push(ScalarConvexConstraint {
                        label: format!("eta[{m},{n}]"),
                        phi: eta.clone(),
                        arg: u[m][n],
                        bound: t[m][n],
                        initial_points: vec![cap_mag],
                    });
                }
                (None, None) => unreachable!(),
            }
        }
    }

    // Receive distortion.
    for i in 0..n_cells {
        for j in 0..k_users {
            let mut rows = Vec::new();
            let mut cap = T::zero();
            for m in 0..n_cells {
                let h = hn(m, i, j);
                cap += norm_sqr(&h) * single_user_power_cap(scenario, m) / q_ref;
                for l in 0..k_users {
                    rows.extend(w[m][l].inner_rows(&h));
                }
            }
            match (nu.linear_slope(), &v) {
                (Some(a), _) if a == T::zero() => {
                    p.add(
                        format!("nu[{i},{j}]"),
                        Constraint::Equal(AffineExpr::var(r[i][j])),
                    );
                }
                (Some(a), _) => {
                    let rows = rows.into_iter().map(|e| e.scaled(a)).collect();
                    p.add(
                        format!("nu[{i},{j}]"),
                        Constraint::Soc {
                            bound: AffineExpr::var(r[i][j]),
                            rows,
                        },
                    );
                }
                (None, Some(v)) => {
                    p.add(
                        format!("v[{i},{j}]"),
                        Constraint::Soc {
                            bound: AffineExpr::var(v[i][j]),
                            rows,
                        },
                    );
                    scalar.push(ScalarConvexConstraint {
                        label: format!("nu[{i},{j}]"),
                        phi: nu.clone(),
                        arg: v[i][j],
                        bound: r[i][j],
                        initial_points: vec![cap.sqrt()],
                    });
                }
                (None, None) => unreachable!(),
            }
        }
    }

    let layout = Layout {
        beta,
        power_rhs,
        w,
        t,
        r,
        power_ids,
        sinr_ids,
        eta,
        nu,
        u,
        v,
    };
    Ok((p, layout, scalar))
}

fn rx_scale<T: Real>(scenario: &Scenario<T>) -> T {
    let mut h_max = T::zero();
    for i in 0..scenario.n_cells() {
        for j in 0..scenario.users_per_cell() {
            h_max = h_max.max(norm_sqr(scenario.channel(i, i, j)).sqrt());
        }
    }
    (h_max * scenario.max_limit().sqrt()).max(scenario.noise_power().sqrt())
}

/// Minimizes the common power scaling `beta` subject to `SINR_{i,j} >= s_{i,j}`.
///
/// Users with a zero target impose no SINR constraint. `beta` is not clamped;
/// `beta > 1` means the targets need more power than the limits allow.
pub fn solve_qos<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    targets: &[Vec<T>],
    opts: &SolverOptions<T>,
) -> Result<BeamformingSolution<T>, BeamformingError> {
    let first = solve_qos_with(scenario, model, targets, opts, QosObjective::Beta)?;
    let c = first.beta;
    let lo: T = cast(1e-2);
    if !(c > T::zero() && c.is_finite()) || (c >= lo && c <= T::one() / lo) {
        return Ok(first);
    }
    // Far from beta = 1 the program is badly scaled: the powers involved are
    // tiny (or huge) next to the limits used as units. Re-solve with limits
    // scaled by the first estimate; beta scales inversely with the limits.
    let Ok(mut sol) = solve_qos_with(
        &scenario.with_scaled_limits(c),
        model,
        targets,
        opts,
        QosObjective::Beta,
    ) else {
        return Ok(first);
    };
    sol.beta *= c;
    sol.diagnostics.solver_beta *= c;
    for d in sol
        .power_duals
        .iter_mut()
        .chain(sol.sinr_duals.iter_mut())
        .flatten()
    {
        *d *= c;
    }
    Ok(sol)
}

/// Meets `SINR_{i,j} >= s_{i,j}` with every power constraint within its limit
/// while minimizing the sum of `usage / q` over all constraints.
///
/// Unlike [`solve_qos`], whose optimum leaves the power of cells that do not
/// set `beta` undetermined, this pins down how much power each cell uses.
pub fn solve_min_usage<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    targets: &[Vec<T>],
    opts: &SolverOptions<T>,
) -> Result<BeamformingSolution<T>, BeamformingError> {
    solve_qos_with(
        scenario,
        model,
        targets,
        opts,
        QosObjective::TotalUsage { cap: T::one() },
    )
}

fn solve_qos_with<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    targets: &[Vec<T>],
    opts: &SolverOptions<T>,
    objective: QosObjective<T>,
) -> Result<BeamformingSolution<T>, BeamformingError> {
    validate_targets(scenario, targets)?;
    if targets.iter().flatten().any(|s| s.is_infinite()) {
        return Err(BeamformingError::Infeasible);
    }
    if !(opts.beta_max > T::zero()) {
        return Err(BeamformingError::InvalidInput(
            "beta_max must be positive".into(),
        ));
    }
    let (mut prog, layout, scalar) = build_qos_program(scenario, model, targets, objective)?;
    prog.add(
        "beta<=beta_max",
        Constraint::NonNeg(AffineExpr::term(layout.beta, -T::one()).plus_const(opts.beta_max)),
    );
    let (out, rounds, max_cut) = if scalar.is_empty() {
        (solve_conic(&prog, opts.tolerance)?, 1, T::zero())
    } else {
        let (o, rep) = outer_approx_solve(
            &prog,
            &scalar,
            opts.cut_tolerance,
            opts.max_rounds,
            opts.tolerance,
        )?;
        (o, rep.rounds, rep.max_violation)
    };
    match out.status {
        SolveStatus::PrimalInfeasible => return Err(BeamformingError::Infeasible),
        SolveStatus::DualInfeasible => {
            return Err(BeamformingError::Solver {
                status: out.status,
                primal_residual: out.stats.primal_residual,
                dual_residual: out.stats.dual_residual,
            })
        }
        _ => {}
    }
    let sol = extract_solution(
        scenario, model, targets, &prog, &layout, &out, rounds, max_cut,
    );
    if sol.status != SolveStatus::Optimal {
        let ok = sol
            .sinr
            .iter()
            .flatten()
            .zip(targets.iter().flatten())
            .all(|(&got, &s)| got >= s * (T::one() - opts.verify_slack));
        if !ok || !sol.beta.is_finite() {
            return Err(BeamformingError::Solver {
                status: out.status,
                primal_residual: out.stats.primal_residual,
                dual_residual: out.stats.dual_residual,
            });
        }
    }
    Ok(sol)
}

#[allow(clippy::too_many_arguments)]
fn extract_solution<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    targets: &[Vec<T>],
    _prog: &ConicProgram<T>,
    layout: &Layout<T>,
    out: &SolveOutcome<T>,
    rounds: usize,
    max_cut: T,
) -> BeamformingSolution<T> {
    let (n_cells, k_users, nt) = (
        scenario.n_cells(),
        scenario.users_per_cell(),
        scenario.n_tx(),
    );
    let q_ref = scenario.max_limit();
    let w_scale = q_ref.sqrt();
    let rx_scale = rx_scale(scenario);

    let mut ws = Vec::with_capacity(n_cells);
    for i in 0..n_cells {
        let mut w = CMatrix::zeros(nt, k_users);
        for j in 0..k_users {
            let b = &layout.w[i][j];
            let col: Vec<Complex<T>> = (0..nt)
                .map(|n| Complex::new(out.value(b.re.at(n)), out.value(b.im.at(n))) * w_scale)
                .collect();
            let z = inner(scenario.channel(i, i, j), &col);
            let col = if z.norm() > T::zero() {
                let rot = z.conj() / z.norm();
                col.iter().map(|c| c * rot).collect()
            } else {
                col
            };
            w.set_column(j, &col);
        }
        ws.push(w);
    }

    let raw_t: Vec<Vec<T>> = layout
        .t
        .iter()
        .map(|row| row.iter().map(|&v| out.value(v)).collect())
        .collect();
    let raw_r: Vec<Vec<T>> = layout
        .r
        .iter()
        .map(|row| row.iter().map(|&v| out.value(v)).collect())
        .collect();
    // eta and nu at the solver point (normalized), for tightness diagnostics.
    let eta_at: Vec<Vec<T>> = ws
        .iter()
        .map(|w| {
            (0..nt)
                .map(|n| layout.eta.value(w.row_norm(n) / w_scale))
                .collect()
        })
        .collect();
    let nu_at: Vec<Vec<T>> = (0..n_cells)
        .map(|i| {
            (0..k_users)
                .map(|j| {
                    layout
                        .nu
                        .value(received_magnitude(scenario, &ws, i, j) / rx_scale)
                })
                .collect()
        })
        .collect();
    let _ = (&layout.u, &layout.v);

    let t: Vec<Vec<T>> = ws
        .iter()
        .map(|w| (0..nt).map(|n| model.eta.value(w.row_norm(n))).collect())
        .collect();
    let r: Vec<Vec<T>> = (0..n_cells)
        .map(|i| {
            (0..k_users)
                .map(|j| model.nu.value(received_magnitude(scenario, &ws, i, j)))
                .collect()
        })
        .collect();

    let mut beta = T::zero();
    for (i, w) in ws.iter().enumerate() {
        let c = tx_distortion_cov(w, model);
        for pc in scenario.power_constraints(i) {
            beta = beta.max(power_usage(w, &c, &pc.q_matrix, scenario.delta()) / pc.limit);
        }
    }

    let power_duals = layout
        .power_ids
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            ids.iter()
                .zip(scenario.power_constraints(i))
                .zip(&layout.power_rhs[i])
                .map(|((id, pc), &b)| {
                    let z0 = out.duals[id.0][0];
                    let vw = out.value(b) * pc.limit / q_ref * cast(0.5) + T::one();
                    (z0 / vw).max(T::zero()) / q_ref
                })
                .collect()
        })
        .collect();
    let sinr_duals = layout
        .sinr_ids
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            ids.iter()
                .enumerate()
                .map(|(j, id)| match id {
                    Some(id) => {
                        let z0 = out.duals[id.0][0];
                        let h = scenario.channel(i, i, j);
                        let y = inner(h, &ws[i].column(j)).norm() / rx_scale / targets[i][j].sqrt();
                        if y > T::zero() {
                            (z0 / (cast::<T>(2.0) * y)).max(T::zero()) / (rx_scale * rx_scale)
                        } else {
                            T::zero()
                        }
                    }
                    None => T::zero(),
                })
                .collect()
        })
        .collect();

    let sinr = all_sinrs(scenario, &ws, model);
    BeamformingSolution {
        w: ws,
        beta,
        t,
        r,
        status: out.status,
        sinr,
        targets: targets.to_vec(),
        power_duals,
        sinr_duals,
        diagnostics: SolveDiagnostics {
            stats: out.stats.clone(),
            outer_rounds: rounds,
            max_cut_violation: max_cut,
            solver_beta: out.value(layout.beta),
            raw_t,
            raw_r,
            eta_at_solution: eta_at,
            nu_at_solution: nu_at,
            w_scale,
            rx_scale,
        },
    }
}

/// Residuals of the convex reformulation at a returned solution.
///
/// The returned `t` and `r` are recomputed from `w`, so the reformulation is
/// tight exactly when doing so keeps every constraint at the solver's `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintCheck<T> {
    /// `|beta - beta_solver| / beta_solver`: how much the true power scaling
    /// of `w` differs from the optimum the solver reported. Only meaningful
    /// for `beta`-minimizing solves.
    pub beta_gap: T,
    /// Largest `(usage - beta_solver q) / (beta_solver q)` over power
    /// constraints, with usage evaluated at the true distortion.
    pub power_violation: T,
    /// Largest `(s - SINR) / s` over users with a positive target.
    pub sinr_violation: T,
    /// Largest `|t_solver - eta(.)|` at the solver point, normalized units.
    /// Only rows that bind need this to vanish, so it is informational.
    pub eta_slack: T,
    pub nu_slack: T,
    /// Largest `|Im(h_{i,i,j}^H w_{i,j})|`.
    pub max_imag: T,
    /// Smallest `Re(h_{i,i,j}^H w_{i,j})`.
    pub min_real: T,
}

/// Evaluates every constraint of the reformulation at `solution`.
pub fn check_solution<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    solution: &BeamformingSolution<T>,
) -> ConstraintCheck<T> {
    let d = &solution.diagnostics;
    let gap = |a: &[Vec<T>], b: &[Vec<T>]| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
    };
    let mut power_violation = T::neg_infinity();
    for (i, w) in solution.w.iter().enumerate() {
        let c = tx_distortion_cov(w, model);
        for pc in scenario.power_constraints(i) {
            let budget = d.solver_beta * pc.limit;
            let used = power_usage(w, &c, &pc.q_matrix, scenario.delta());
            let v = if budget > T::zero() {
                (used - budget) / budget
            } else {
                used
            };
            power_violation = power_violation.max(v);
        }
    }
    let mut sinr_violation = T::neg_infinity();
    let mut max_imag = T::zero();
    let mut min_real = T::infinity();
    for i in 0..scenario.n_cells() {
        for j in 0..scenario.users_per_cell() {
            let s = solution.targets[i][j];
            if s > T::zero() {
                sinr_violation = sinr_violation.max((s - solution.sinr[i][j]) / s);
            }
            let z = inner(scenario.channel(i, i, j), &solution.w[i].column(j));
            max_imag = max_imag.max(z.im.abs());
            min_real = min_real.min(z.re);
        }
    }
    let sb = d.solver_beta;
    let beta_gap = if sb > T::zero() {
        (solution.beta - sb).abs() / sb
    } else {
        solution.beta
    };
    ConstraintCheck {
        beta_gap,
        eta_slack: gap(&d.raw_t, &d.eta_at_solution),
        nu_slack: gap(&d.raw_r, &d.nu_at_solution),
        power_violation,
        sinr_violation,
        max_imag,
        min_real,
    }
}

/// One candidate of the fairness-profile bisection.
#[derive(Clone, Debug, PartialEq)]
pub struct BisectionStep<T> {
    pub iteration: usize,
    pub lower: T,
    pub upper: T,
    /// `f_upper / 2^iteration`, the interval width before this step.
    pub width: T,
    pub candidate: T,
    pub feasible: bool,
    pub beta: Option<T>,
    pub status: Option<SolveStatus>,
}

impl<T: Real> BisectionStep<T> {
    fn to_f64(&self) -> BisectionStep<f64> {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        BisectionStep {
            iteration: self.iteration,
            lower: f(self.lower),
            upper: f(self.upper),
            width: f(self.width),
            candidate: f(self.candidate),
            feasible: self.feasible,
            beta: self.beta.map(f),
            status: self.status,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FpoResult<T: Real> {
    /// Lower end of the final interval: the best verified-feasible value.
    pub f_star: T,
    pub interval: (T, T),
    pub f_upper: T,
    pub solution: BeamformingSolution<T>,
    pub trace: Vec<BisectionStep<T>>,
}

fn validate_profile<T: Real>(
    scenario: &Scenario<T>,
    a: &[Vec<T>],
    alpha: &[Vec<T>],
) -> Result<(), BeamformingError> {
    let shape_ok = |x: &[Vec<T>]| {
        x.len() == scenario.n_cells() && x.iter().all(|r| r.len() == scenario.users_per_cell())
    };
    if !shape_ok(a) || !shape_ok(alpha) {
        return Err(BeamformingError::InvalidInput(
            "a and alpha must be N x K".into(),
        ));
    }
    if a.iter()
        .chain(alpha)
        .flatten()
        .any(|v| !(*v >= T::zero() && v.is_finite()))
    {
        return Err(BeamformingError::InvalidInput(
            "a and alpha must be finite and >= 0".into(),
        ));
    }
    let total: T = alpha.iter().flatten().copied().sum();
    if (total - T::one()).abs() > cast(1e-6) {
        return Err(BeamformingError::InvalidInput(format!(
            "alpha must sum to 1, got {}",
            total.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

/// Upper bound on the fairness-profile optimum obtained by ignoring all
/// interference and impairments.
pub fn fpo_upper_bound<T: Real>(
    scenario: &Scenario<T>,
    measure: &dyn PerformanceMeasure<T>,
    a: &[Vec<T>],
    alpha: &[Vec<T>],
) -> T {
    let mut best = T::infinity();
    for i in 0..scenario.n_cells() {
        let cap = single_user_power_cap(scenario, i);
        for j in 0..scenario.users_per_cell() {
            if alpha[i][j] <= T::zero() {
                continue;
            }
            let snr = norm_sqr(scenario.channel(i, i, j)) * cap / scenario.noise_power();
            best = best.min((measure.g(snr) - a[i][j]) / alpha[i][j]);
        }
    }
    best.max(T::zero())
}

/// SINR targets `g^{-1}(a + alpha f)`.
pub fn fpo_targets<T: Real>(
    measure: &dyn PerformanceMeasure<T>,
    a: &[Vec<T>],
    alpha: &[Vec<T>],
    f: T,
) -> Vec<Vec<T>> {
    a.iter()
        .zip(alpha)
        .map(|(ar, alr)| {
            ar.iter()
                .zip(alr)
                .map(|(&x, &y)| measure.g_inverse(x + y * f))
                .collect()
        })
        .collect()
}

/// Fairness-profile optimization by bisection over `[0, f_upper]`, each
/// candidate decided by a QoS solve with `beta <= 1`.
pub fn solve_fpo<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    a: &[Vec<T>],
    alpha: &[Vec<T>],
    bisection_tol: T,
    opts: &SolverOptions<T>,
) -> Result<FpoResult<T>, BeamformingError> {
    validate_profile(scenario, a, alpha)?;
    if !(bisection_tol > T::zero()) {
        return Err(BeamformingError::InvalidInput(
            "bisection tolerance must be positive".into(),
        ));
    }
    let f_upper = fpo_upper_bound(scenario, measure, a, alpha);
    let beta_cap = T::one() + opts.tolerance;
    let mut trace: Vec<BisectionStep<T>> = Vec::new();

    let abort = |e: BeamformingError, trace: &[BisectionStep<T>]| BeamformingError::Bisection {
        source: Box::new(e),
        trace: trace.iter().map(BisectionStep::to_f64).collect(),
    };
    // Some(solution) when feasible with beta <= 1, None when not.
    let attempt = |f: T| -> Result<Option<BeamformingSolution<T>>, BeamformingError> {
        let targets = fpo_targets(measure, a, alpha, f);
        match solve_qos(scenario, model, &targets, opts) {
            Ok(sol) if sol.beta <= beta_cap => Ok(Some(sol)),
            Ok(_) | Err(BeamformingError::Infeasible) => Ok(None),
            Err(BeamformingError::Solver { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut best = match attempt(T::zero()) {
        Ok(Some(sol)) => sol,
        Ok(None) => return Err(BeamformingError::MinimumQosInfeasible),
        Err(e) => return Err(abort(e, &trace)),
    };
    let mut lo = T::zero();
    let mut width = f_upper;
    let mut iteration = 0;
    while width > bisection_tol {
        let candidate = lo + width * cast(0.5);
        let step_width = width;
        let outcome = attempt(candidate).map_err(|e| abort(e, &trace))?;
        let feasible = outcome.is_some();
        let (beta, status) = outcome
            .as_ref()
            .map_or((None, None), |s| (Some(s.beta), Some(s.status)));
        trace.push(BisectionStep {
            iteration,
            lower: lo,
            upper: lo + width,
            width: step_width,
            candidate,
            feasible,
            beta,
            status,
        });
        width = width * cast(0.5);
        if let Some(sol) = outcome {
            lo = candidate;
            best = sol;
        }
        iteration += 1;
    }
    Ok(FpoResult {
        f_star: lo,
        interval: (lo, lo + width),
        f_upper,
        solution: best,
        trace,
    })
}

/// Fitted structure parameters of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStructureFit<T> {
    /// One per power constraint of the cell.
    pub lambda: Vec<T>,
    /// `mu[m][l]`, one per user of the system.
    pub mu: Vec<Vec<T>>,
    /// One per antenna.
    pub tau: Vec<T>,
    /// Angle between `v_{i,j}` and the structured direction, radians;
    /// `None` for zero beamformers.
    pub angles: Vec<Option<T>>,
    /// Angles obtained from the dual-based initialization alone.
    pub initial_angles: Vec<Option<T>>,
    pub ridge_used: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureFitReport<T> {
    pub cells: Vec<CellStructureFit<T>>,
    pub max_angle: T,
}

/// Angle between two complex directions, insensitive to a common phase.
pub fn direction_angle<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> T {
    let na = norm_sqr(a).sqrt();
    let nb = norm_sqr(b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let ua: Vec<Complex<T>> = a.iter().map(|z| z / na).collect();
    let ub: Vec<Complex<T>> = b.iter().map(|z| z / nb).collect();
    let c = inner(&ua, &ub);
    let perp: T = ub
        .iter()
        .zip(&ua)
        .map(|(y, x)| (y - x * c).norm_sqr())
        .sum::<T>()
        .sqrt();
    perp.atan2(c.norm())
}

struct FitProblem<'a, T: Real> {
    scenario: &'a Scenario<T>,
    solution: &'a BeamformingSolution<T>,
    cell: usize,
}

impl<T: Real> FitProblem<'_, T> {
    fn n_lambda(&self) -> usize {
        self.scenario.power_constraints(self.cell).len()
    }

    fn n_mu(&self) -> usize {
        self.scenario.n_users()
    }

    fn matrix(&self, p: &[T], ridge: T) -> CMatrix<T> {
        let s = self.scenario;
        let nt = s.n_tx();
        let nl = self.n_lambda();
        let nm = self.n_mu();
        let mut a = CMatrix::zeros(nt, nt);
        for (k, pc) in s.power_constraints(self.cell).iter().enumerate() {
            a = a.add(&pc.q_matrix.scaled(p[k]));
        }
        for m in 0..s.n_cells() {
            for l in 0..s.users_per_cell() {
                let mu = p[nl + s.user_index(m, l)];
                if mu == T::zero() {
                    continue;
                }
                let h = s.channel(self.cell, m, l);
                for r in 0..nt {
                    for c in 0..nt {
                        a.set(r, c, a.get(r, c) + h[r] * h[c].conj() * mu);
                    }
                }
            }
        }
        for n in 0..nt {
            let d = a.get(n, n) + Complex::new(p[nl + nm + n] + ridge, T::zero());
            a.set(n, n, d);
        }
        a
    }

    /// Per-user angles; `None` when the matrix is singular.
    fn angles(&self, p: &[T], ridge: T) -> Option<Vec<Option<T>>> {
        let a = self.matrix(p, ridge);
        let mut out = Vec::with_capacity(self.scenario.users_per_cell());
        for j in 0..self.scenario.users_per_cell() {
            match self.solution.direction(self.cell, j) {
                None => out.push(None),
                Some(v) => {
                    let x = solve_complex(&a, self.scenario.channel(self.cell, self.cell, j))?;
                    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                        return None;
                    }
                    out.push(Some(direction_angle(&v, &x)));
                }
            }
        }
        Some(out)
    }

    fn objective(&self, p: &[T], ridge: T) -> T {
        match self.angles(p, ridge) {
            Some(a) => a.into_iter().flatten().fold(T::zero(), |m, x| m.max(x)),
            None => T::infinity(),
        }
    }
}

/// Fits the regularized channel-inversion structure to every beamforming
/// direction by projected coordinate descent, starting from the solver duals.
/// Parameters are reported scaled to unit max-norm.
pub fn structure_fit<T: Real>(
    solution: &BeamformingSolution<T>,
    scenario: &Scenario<T>,
) -> StructureFitReport<T> {
    let mut cells = Vec::with_capacity(scenario.n_cells());
    let mut max_angle = T::zero();
    for cell in 0..scenario.n_cells() {
        let fp = FitProblem {
            scenario,
            solution,
            cell,
        };
        let (nl, nm, nt) = (fp.n_lambda(), fp.n_mu(), scenario.n_tx());
        let mut p: Vec<T> = Vec::with_capacity(nl + nm + nt);
        p.extend(solution.power_duals[cell].iter().copied());
        p.extend(solution.sinr_duals.iter().flatten().copied());
        p.extend(std::iter::repeat_n(T::zero(), nt));
        normalize_max(&mut p, nl);

        let scale = p.iter().fold(T::zero(), |m, v| m.max(*v));
        let mut ridge = T::zero();
        let mut ridge_used = false;
        if fp.angles(&p, ridge).is_none() {
            ridge = cast::<T>(1e-12) * scale.max(T::one());
            ridge_used = true;
        }
        let initial_angles = fp.angles(&p, ridge).unwrap_or_default();
        let mut best = fp.objective(&p, ridge);

        let mut step: T = cast(4.0);
        let tiny: T = cast(1e-3);
        for _sweep in 0..400 {
            if best <= cast(1e-12) {
                break;
            }
            let mut improved = false;
            for c in 0..p.len() {
                let cur = p[c];
                let top = p.iter().fold(T::zero(), |m, v| m.max(*v));
                let mut cands = vec![cur * step, cur / step, T::zero()];
                if cur == T::zero() {
                    cands.push(top * tiny);
                    cands.push(top * tiny * tiny);
                }
                for cand in cands {
                    if cand == cur {
                        continue;
                    }
                    p[c] = cand;
                    let val = fp.objective(&p, ridge);
                    if val < best {
                        best = val;
                        improved = true;
                    } else {
                        p[c] = cur;
                    }
                    if p[c] != cur {
                        break;
                    }
                }
            }
            if !improved {
                step = step.sqrt();
                if step < cast(1.0 + 1e-9) {
                    break;
                }
            }
        }
        normalize_max(&mut p, nl);
        let angles = fp.angles(&p, ridge).unwrap_or_default();
        for a in angles.iter().flatten() {
            max_angle = max_angle.max(*a);
        }
        cells.push(CellStructureFit {
            lambda: p[..nl].to_vec(),
            mu: (0..scenario.n_cells())
                .map(|m| {
                    (0..scenario.users_per_cell())
                        .map(|l| p[nl + scenario.user_index(m, l)])
                        .collect()
                })
                .collect(),
            tau: p[nl + nm..].to_vec(),
            angles,
            initial_angles,
            ridge_used,
        });
    }
    StructureFitReport { cells, max_angle }
}

/// Scales `p` to unit max-norm; an all-zero vector gets unit `lambda`s.
fn normalize_max<T: Real>(p: &mut [T], n_lambda: usize) {
    let top = p.iter().fold(T::zero(), |m, v| m.max(*v));
    if top > T::zero() && top.is_finite() {
        for v in p.iter_mut() {
            *v /= top;
        }
    } else {
        for (k, v) in p.iter_mut().enumerate() {
            *v = if k < n_lambda { T::one() } else { T::zero() };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaturationReport<T> {
    pub power_grid_dbm: Vec<f64>,
    /// `sum_{i,j} ||w_{i,j}||^2` per grid point, mW.
    pub used_power: Vec<T>,
    /// `sum_i P_i` per grid point, mW.
    pub cap: Vec<T>,
    pub f_star: Vec<T>,
    /// First grid index from which used power stays within 1% of its final value.
    pub plateau_start: Option<usize>,
    pub below_cap_at_top: bool,
    pub passed: bool,
}

/// Re-solves the max-min problem while scaling every power limit so that the
/// largest equals each grid value, and checks that used power levels off below
/// the constraint cap. Used power is that of [`solve_min_usage`] at the
/// max-min targets.
pub fn power_saturation_probe<T: Real>(
    scenario: &Scenario<T>,
    model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
    power_grid_dbm: &[f64],
    bisection_tol: T,
    opts: &SolverOptions<T>,
) -> Result<SaturationReport<T>, BeamformingError> {
    if power_grid_dbm.len() < 2 {
        return Err(BeamformingError::InvalidInput(
            "power grid needs at least two points".into(),
        ));
    }
    let nk = scenario.n_users();
    let a = vec![vec![T::zero(); scenario.users_per_cell()]; scenario.n_cells()];
    let alpha =
        vec![vec![T::one() / from_usize::<T>(nk); scenario.users_per_cell()]; scenario.n_cells()];
    let base = scenario.max_limit();
    let mut used = Vec::new();
    let mut caps = Vec::new();
    let mut fs = Vec::new();
    let first = cast::<T>(dbm_to_mw(power_grid_dbm[0]));
    for &dbm in power_grid_dbm {
        let limit = cast::<T>(dbm_to_mw(dbm));
        let s = scenario.with_scaled_limits(limit / base);
        // The cut tolerance is relative to sqrt(limit); hold it fixed in sqrt(mW)
        // so every grid point is solved to the same absolute accuracy.
        let opts = &SolverOptions {
            cut_tolerance: opts.cut_tolerance * (first / limit).sqrt(),
            ..*opts
        };
        let res = solve_fpo(&s, model, measure, &a, &alpha, bisection_tol, opts)?;
        // The max-min point fixes the rates but not the power of cells with
        // slack; measure the least power that still reaches them.
        let targets = fpo_targets(measure, &a, &alpha, res.f_star);
        let sol = solve_min_usage(&s, model, &targets, opts).unwrap_or(res.solution);
        used.push(sol.total_power());
        caps.push(
            (0..s.n_cells())
                .map(|i| single_user_power_cap(&s, i))
                .sum::<T>(),
        );
        fs.push(res.f_star);
    }
    let n = used.len();
    let last = used[n - 1];
    let within = |x: T| (x - last).abs() <= cast::<T>(0.01) * last;
    let mut start = n - 1;
    while start > 0 && within(used[start - 1]) {
        start -= 1;
    }
    let plateau_start = (start + 1 < n).then_some(start);
    let monotone = (0..start).all(|k| used[k + 1] >= used[k] * cast(1.0 - 1e-3));
    let below = last < caps[n - 1] * cast(0.99);
    Ok(SaturationReport {
        power_grid_dbm: power_grid_dbm.to_vec(),
        used_power: used,
        cap: caps,
        f_star: fs,
        plateau_start,
        below_cap_at_top: below,
        passed: plateau_start.is_some() && monotone && below,
    })
}
