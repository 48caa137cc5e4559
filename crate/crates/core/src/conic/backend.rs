use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::scalar::{cast, Real};

use super::program::{AffineExpr, ConicProgram, Constraint, Var, VarBlock};
use super::ConicError;

/// Final status of a conic solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    /// Unbounded below.
    DualInfeasible,
    /// Terminated with reduced accuracy; `x` holds the best iterate.
    Inaccurate,
    IterationLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::DualInfeasible => "dual_infeasible",
            SolveStatus::Inaccurate => "inaccurate",
            SolveStatus::IterationLimit => "iteration_limit",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `|primal objective - dual objective|`.
    pub gap: f64,
    /// Set when the backend only met its reduced tolerances.
    pub reduced_accuracy: bool,
    pub backend_status: String,
}

/// Result of [`solve_conic`].
#[derive(Clone, Debug)]
pub struct SolveOutcome<T> {
    pub status: SolveStatus,
    /// One value per scalar variable.
    pub x: Vec<T>,
    /// Dual values per constraint, in the standard-form cone of that
    /// constraint (see [`standard_form`]).
    pub duals: Vec<Vec<T>>,
    pub objective: T,
    pub stats: SolveStats,
    /// Dual improving ray `z` when primal infeasible.
    pub certificate: Option<Vec<T>>,
}

impl<T: Real> SolveOutcome<T> {
    #[inline]
    pub fn value(&self, v: Var) -> T {
        self.x[v.0]
    }

    pub fn block_values(&self, b: &VarBlock) -> &[T] {
        &self.x[b.offset..b.offset + b.len]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Standard-form rows of a constraint: the affine expressions `s(x)` that must
/// lie in the returned cone kind. Rotated cones become
/// `(v + w, v - w, sqrt(2) rows) in SOC`.
pub fn standard_form<T: Real>(c: &Constraint<T>) -> (ConeKind, Vec<AffineExpr<T>>) {
    match c {
        Constraint::Equal(e) => (ConeKind::Zero, vec![e.clone()]),
        Constraint::NonNeg(e) => (ConeKind::NonNeg, vec![e.clone()]),
        Constraint::Soc { bound, rows } if rows.is_empty() => {
            (ConeKind::NonNeg, vec![bound.clone()])
        }
        Constraint::Soc { bound, rows } => {
            let mut out = Vec::with_capacity(rows.len() + 1);
            out.push(bound.clone());
            out.extend(rows.iter().cloned());
            (ConeKind::Soc, out)
        }
        Constraint::RotatedSoc { v, w, rows } => {
            let sqrt2 = cast::<T>(2.0).sqrt();
            let mut out = Vec::with_capacity(rows.len() + 2);
            out.push(v.clone().add(w));
            out.push(v.clone().add(&w.clone().scaled(-T::one())));
            out.extend(rows.iter().map(|r| r.clone().scaled(sqrt2)));
            (ConeKind::Soc, out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    NonNeg,
    Soc,
}

/// Solves `program` with a primal-dual interior-point method.
///
/// `tolerance` sets the feasibility and relative/absolute gap tolerances and
/// must lie in `(0, 1e-2]`. The iteration always runs in `f64`: in single
/// precision the backend stalls well short of `sqrt(eps)` on badly scaled
/// programs, so narrower types are widened on the way in and rounded on the
/// way out.
pub fn solve_conic<T: Real>(
    program: &ConicProgram<T>,
    tolerance: T,
) -> Result<SolveOutcome<T>, ConicError> {
    if !(tolerance > T::zero() && tolerance <= cast(1e-2)) {
        return Err(ConicError::InvalidTolerance(
            tolerance.to_f64().unwrap_or(f64::NAN),
        ));
    }
    program.validate()?;
    let n = program.n_vars();
    let to64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let back = |v: &f64| T::from_f64(*v).unwrap_or_else(T::nan);

    let mut rows_i = Vec::new();
    let mut cols_j = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut dims = Vec::with_capacity(program.constraints().len());
    for (_, c) in program.constraints() {
        let (kind, exprs) = standard_form(c);
        let row0 = b.len();
        for (r, e) in exprs.iter().enumerate() {
            for &(v, coef) in &e.terms {
                rows_i.push(row0 + r);
                cols_j.push(v.0);
                vals.push(-to64(coef));
            }
            b.push(to64(e.constant));
        }
        dims.push(exprs.len());
        let d = exprs.len();
        match (kind, cones.last_mut()) {
            (ConeKind::Zero, Some(SupportedConeT::ZeroConeT(k))) => *k += d,
            (ConeKind::NonNeg, Some(SupportedConeT::NonnegativeConeT(k))) => *k += d,
            (ConeKind::Zero, _) => cones.push(SupportedConeT::ZeroConeT(d)),
            (ConeKind::NonNeg, _) => cones.push(SupportedConeT::NonnegativeConeT(d)),
            (ConeKind::Soc, _) => cones.push(SupportedConeT::SecondOrderConeT(d)),
        }
    }
    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows_i, cols_j, vals);
    let p = CscMatrix::zeros((n, n));
    let q: Vec<f64> = program
        .objective()
        .dense_coefficients(n)
        .into_iter()
        .map(to64)
        .collect();

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(to64(tolerance))
        .tol_gap_rel(to64(tolerance))
        .tol_feas(to64(tolerance))
        .tol_infeas_abs(to64(tolerance))
        .tol_infeas_rel(to64(tolerance))
        .build()
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let (status, reduced) = match sol.status {
        SolverStatus::Solved => (SolveStatus::Optimal, false),
        SolverStatus::AlmostSolved => (SolveStatus::Inaccurate, true),
        SolverStatus::PrimalInfeasible => (SolveStatus::PrimalInfeasible, false),
        SolverStatus::AlmostPrimalInfeasible => (SolveStatus::PrimalInfeasible, true),
        SolverStatus::DualInfeasible => (SolveStatus::DualInfeasible, false),
        SolverStatus::AlmostDualInfeasible => (SolveStatus::DualInfeasible, true),
        SolverStatus::MaxIterations | SolverStatus::MaxTime => (SolveStatus::IterationLimit, false),
        _ => (SolveStatus::Inaccurate, true),
    };

    let mut duals = Vec::with_capacity(dims.len());
    let mut off = 0;
    for d in dims {
        duals.push(sol.z[off..off + d].iter().map(back).collect());
        off += d;
    }
    let constant = program.objective().constant;
    Ok(SolveOutcome {
        status,
        x: sol.x.iter().map(back).collect(),
        duals,
        objective: back(&sol.obj_val) + constant,
        stats: SolveStats {
            iterations: sol.iterations,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            gap: (sol.obj_val - sol.obj_val_dual).abs(),
            reduced_accuracy: reduced,
            backend_status: format!("{:?}", sol.status),
        },
        certificate: (status == SolveStatus::PrimalInfeasible)
            .then(|| sol.z.iter().map(back).collect()),
    })
}

/// Checks a primal-infeasibility certificate: `z` in the dual cone,
/// `sum_k z_k a_k = 0` and `sum_k z_k c_k < 0` over the standard-form rows
/// `s_k(x) = a_k^T x + c_k`. Returns the normalized margin `-b^T z / ||z||`
/// when valid.
pub fn check_infeasibility_certificate<T: Real>(
    program: &ConicProgram<T>,
    z: &[T],
    tol: T,
) -> Option<T> {
    let n = program.n_vars();
    let mut at_z = vec![T::zero(); n];
    let mut bz = T::zero();
    let mut off = 0;
    let znorm = z.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if znorm == T::zero() {
        return None;
    }
    for (_, c) in program.constraints() {
        let (kind, exprs) = standard_form(c);
        let zc = &z[off..off + exprs.len()];
        off += exprs.len();
        let in_dual = match kind {
            ConeKind::Zero => true,
            ConeKind::NonNeg => zc.iter().all(|&v| v >= -tol * znorm),
            ConeKind::Soc => {
                let tail = zc[1..].iter().map(|v| *v * *v).sum::<T>().sqrt();
                zc[0] >= tail - tol * znorm
            }
        };
        if !in_dual {
            return None;
        }
        for (e, &zk) in exprs.iter().zip(zc) {
            for &(v, coef) in &e.terms {
                at_z[v.0] += zk * coef;
            }
            bz += zk * e.constant;
        }
    }
    let resid = at_z.iter().fold(T::zero(), |m, v| m.max(v.abs())) / znorm;
    let margin = -bz / znorm;
    (resid <= tol && margin > tol).then_some(margin)
}
