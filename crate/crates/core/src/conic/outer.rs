use std::sync::Arc;

use crate::impairments::DistortionFn;
use crate::scalar::Real;

use super::backend::{solve_conic, SolveOutcome, SolveStatus};
use super::program::{AffineExpr, ConicProgram, Constraint, Var};
use super::ConicError;

pub const DEFAULT_CUT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ROUNDS: usize = 50;

/// `phi(arg) <= bound` for an increasing convex `phi`.
#[derive(Clone, Debug)]
pub struct ScalarConvexConstraint<T: Real> {
    pub label: String,
    pub phi: Arc<dyn DistortionFn<T>>,
    pub arg: Var,
    pub bound: Var,
    /// Cut points added up front in addition to `u = 0`.
    pub initial_points: Vec<T>,
}

impl<T: Real> ScalarConvexConstraint<T> {
    /// Supporting hyperplane at `u0`: `bound - phi'(u0) arg - (phi(u0) - phi'(u0) u0) >= 0`.
    pub fn cut(&self, u0: T) -> Constraint<T> {
        let d = self.phi.derivative(u0);
        let offset = self.phi.value(u0) - d * u0;
        Constraint::NonNeg(
            AffineExpr::var(self.bound)
                .plus(self.arg, -d)
                .plus_const(-offset),
        )
    }

    fn cut_is_finite(&self, u0: T) -> bool {
        u0.is_finite() && self.phi.value(u0).is_finite() && self.phi.derivative(u0).is_finite()
    }

    /// `phi(u) - t` at `x`, clamped below at zero.
    pub fn violation(&self, x: &[T]) -> T {
        let u = x[self.arg.0].max(T::zero());
        (self.phi.value(u) - x[self.bound.0]).max(T::zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterApproxReport<T> {
    pub rounds: usize,
    /// Largest `phi(u) - t` at the returned point.
    pub max_violation: T,
    /// Relaxation optimum after each round.
    pub objective_history: Vec<T>,
    /// Cut points per scalar constraint, in insertion order.
    pub cut_points: Vec<Vec<T>>,
    pub converged: bool,
}

/// Solves `program` with each scalar constraint replaced by accumulated
/// tangent cuts, adding a cut at the current point whenever the violation
/// exceeds `cut_tolerance`.
///
/// Infeasibility of a relaxation is reported as-is: it implies infeasibility
/// of the original problem. Exhausting `max_rounds` downgrades an optimal
/// status to [`SolveStatus::Inaccurate`].
pub fn outer_approx_solve<T: Real>(
    program: &ConicProgram<T>,
    constraints: &[ScalarConvexConstraint<T>],
    cut_tolerance: T,
    max_rounds: usize,
    solver_tolerance: T,
) -> Result<(SolveOutcome<T>, OuterApproxReport<T>), ConicError> {
    if !(cut_tolerance > T::zero()) || max_rounds == 0 {
        return Err(ConicError::InvalidProgram(
            "cut tolerance must be positive and max_rounds at least 1".into(),
        ));
    }
    let mut prog = program.clone();
    let mut cut_points: Vec<Vec<T>> = Vec::with_capacity(constraints.len());
    for sc in constraints {
        let mut pts = vec![T::zero()];
        pts.extend(sc.initial_points.iter().copied().filter(|&u| u > T::zero()));
        for &u in &pts {
            prog.add(format!("{}.cut", sc.label), sc.cut(u));
        }
        cut_points.push(pts);
    }

    let mut history = Vec::new();
    let mut round = 0;
    loop {
        round += 1;
        let mut out = solve_conic(&prog, solver_tolerance)?;
        history.push(out.objective);
        let usable = matches!(out.status, SolveStatus::Optimal | SolveStatus::Inaccurate);
        let max_violation = if usable {
            constraints
                .iter()
                .fold(T::zero(), |m, sc| m.max(sc.violation(&out.x)))
        } else {
            T::zero()
        };
        let done = !usable || max_violation <= cut_tolerance;
        if done || round >= max_rounds {
            if !done && out.status == SolveStatus::Optimal {
                out.status = SolveStatus::Inaccurate;
            }
            let report = OuterApproxReport {
                rounds: round,
                max_violation,
                objective_history: history,
                cut_points,
                converged: done,
            };
            return Ok((out, report));
        }
        let mut added = false;
        for (sc, pts) in constraints.iter().zip(cut_points.iter_mut()) {
            if sc.violation(&out.x) > cut_tolerance {
                let u = out.x[sc.arg.0].max(T::zero());
                if !sc.cut_is_finite(u) {
                    continue;
                }
                prog.add(format!("{}.cut", sc.label), sc.cut(u));
                pts.push(u);
                added = true;
            }
        }
        if !added {
            // Only unusable cut points remain: report the current iterate.
            out.status = SolveStatus::Inaccurate;
            let report = OuterApproxReport {
                rounds: round,
                max_violation,
                objective_history: history,
                cut_points,
                converged: false,
            };
            return Ok((out, report));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impairments::LinearDistortion;

    #[derive(Debug)]
    struct Poly {
        /// `sum c_k u^k`
        coefs: Vec<f64>,
    }

    impl DistortionFn<f64> for Poly {
        fn value(&self, x: f64) -> f64 {
            self.coefs
                .iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32))
                .sum()
        }

        fn derivative(&self, x: f64) -> f64 {
            self.coefs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c * x.powi(k as i32 - 1))
                .sum()
        }
    }

    const TOL: f64 = 1e-9;

    fn min_t_with_u(
        lower: f64,
        fix: bool,
        phi: Arc<dyn DistortionFn<f64>>,
    ) -> (ConicProgram<f64>, Vec<ScalarConvexConstraint<f64>>) {
        let mut p = ConicProgram::new();
        let u = p.add_scalar("u");
        let t = p.add_scalar("t");
        p.minimize(AffineExpr::var(t));
        if fix {
            p.add(
                "fix",
                Constraint::Equal(AffineExpr::var(u).plus_const(-lower)),
            );
        } else {
            p.add(
                "lo",
                Constraint::NonNeg(AffineExpr::var(u).plus_const(-lower)),
            );
        }
        let sc = ScalarConvexConstraint {
            label: "phi".into(),
            phi,
            arg: u,
            bound: t,
            initial_points: vec![],
        };
        (p, vec![sc])
    }

    #[test]
    fn quintic_at_fixed_argument() {
        let (p, sc) = min_t_with_u(
            1.0,
            true,
            Arc::new(Poly {
                coefs: vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            }),
        );
        let (out, rep) = outer_approx_solve(&p, &sc, 1e-6, 50, TOL).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(rep.converged);
        assert!((out.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn linear_terminates_in_one_round() {
        let (p, sc) = min_t_with_u(3.0, false, Arc::new(LinearDistortion { slope: 0.5 }));
        let (out, rep) = outer_approx_solve(&p, &sc, 1e-6, 50, TOL).unwrap();
        assert_eq!(rep.rounds, 1);
        assert!((out.x[1] - 1.5).abs() < 1e-7);

        let mut direct = p.clone();
        direct.add(
            "lin",
            Constraint::NonNeg(AffineExpr::var(Var(1)).plus(Var(0), -0.5)),
        );
        let d = solve_conic(&direct, TOL).unwrap();
        assert!((d.objective - out.objective).abs() < 1e-8);
    }

    #[test]
    fn square_with_lower_bound() {
        let (p, sc) = min_t_with_u(
            2.0,
            false,
            Arc::new(Poly {
                coefs: vec![0.0, 0.0, 1.0],
            }),
        );
        let (out, rep) = outer_approx_solve(&p, &sc, 1e-6, 50, TOL).unwrap();
        assert!(rep.converged);
        assert!(rep.max_violation <= 1e-6);
        assert!((out.x[1] - 4.0).abs() <= 1e-6 + 1e-7);
        // tighter cut tolerance lands closer
        let (tight, _) = outer_approx_solve(&p, &sc, 1e-9, 80, TOL).unwrap();
        assert!((tight.x[1] - 4.0).abs() <= (out.x[1] - 4.0).abs() + 1e-8);
    }

    #[test]
    fn cuts_are_valid_and_relaxation_monotone() {
        let phi: Arc<dyn DistortionFn<f64>> = Arc::new(Poly {
            coefs: vec![0.0, 0.3, 0.0, 0.0, 0.0, 0.2],
        });
        let (p, sc) = min_t_with_u(1.7, false, phi.clone());
        let (_, rep) = outer_approx_solve(&p, &sc, 1e-7, 50, TOL).unwrap();
        assert!(rep.rounds > 1);
        for w in rep.objective_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-7);
        }
        let true_opt = phi.value(1.7);
        assert!(rep.objective_history.iter().all(|&o| o <= true_opt + 1e-7));
        for &u0 in &rep.cut_points[0] {
            let cut = sc[0].cut(u0);
            for k in 0..200 {
                let u = k as f64 * 0.02;
                for slack in [0.0, 0.5] {
                    let x = [u, phi.value(u) + slack];
                    assert!(cut.violation(&x) <= 1e-12, "cut at {u0} cuts off u={u}");
                }
            }
        }
    }

    #[test]
    fn infeasible_relaxation_is_reported() {
        let mut p = ConicProgram::<f64>::new();
        let u = p.add_scalar("u");
        let t = p.add_scalar("t");
        p.minimize(AffineExpr::var(t));
        p.add(
            "lo",
            Constraint::NonNeg(AffineExpr::var(u).plus_const(-2.0)),
        );
        p.add(
            "cap",
            Constraint::NonNeg(AffineExpr::term(t, -1.0).plus_const(1.0)),
        );
        let sc = vec![ScalarConvexConstraint {
            label: "sq".into(),
            phi: Arc::new(Poly {
                coefs: vec![0.0, 1.0, 1.0],
            }),
            arg: u,
            bound: t,
            initial_points: vec![],
        }];
        let (out, _) = outer_approx_solve(&p, &sc, 1e-6, 50, TOL).unwrap();
        assert_eq!(out.status, SolveStatus::PrimalInfeasible);
    }
}
