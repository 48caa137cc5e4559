//! Reference values computed without the conic solver: closed forms for the
//! scalar link, a power-grid brute force for two single-antenna cells, a
//! dense scan for the bisection, and hand-solved cone programs.

use coordbf::conic::{AffineExpr, ConicProgram, Constraint};
use coordbf::scenario::{mw_to_dbm, per_array_constraints};
use coordbf::{make_manual_scenario, ImpairmentModel, Kappa2, Scenario64};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// One user, one antenna, one cell, linear distortion on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalarInstance {
    pub h_re: f64,
    pub h_im: f64,
    pub noise: f64,
    pub q: f64,
    pub kappa1: f64,
    pub kappa3: f64,
    pub delta: f64,
}

impl ScalarInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let amp = log_uniform(rng, 0.1, 10.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        ScalarInstance {
            h_re: amp * phase.cos(),
            h_im: amp * phase.sin(),
            noise: log_uniform(rng, 1e-3, 1.0),
            q: log_uniform(rng, 0.1, 100.0),
            kappa1: rng.random_range(0.0..15.0),
            kappa3: rng.random_range(0.0..15.0),
            delta: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        }
    }

    fn gain(&self) -> f64 {
        self.h_re * self.h_re + self.h_im * self.h_im
    }

    fn e1(&self) -> f64 {
        (self.kappa1 / 100.0).powi(2)
    }

    /// Distortion-to-signal ratio seen at the receiver.
    fn e_total(&self) -> f64 {
        self.e1() + (self.kappa3 / 100.0).powi(2)
    }

    /// SINR at transmit power `p`: `g p / (g p (e1 + e3) + sigma^2)`.
    pub fn sinr(&self, p: f64) -> f64 {
        let gp = self.gain() * p;
        gp / (gp * self.e_total() + self.noise)
    }

    /// Power-constraint usage `p + delta c^2` at transmit power `p`.
    pub fn usage(&self, p: f64) -> f64 {
        p * (1.0 + self.delta * self.e1())
    }

    pub fn p_max(&self) -> f64 {
        self.q / (1.0 + self.delta * self.e1())
    }

    /// Least `beta` meeting SINR target `s`, `None` above the distortion ceiling.
    pub fn beta_for_target(&self, s: f64) -> Option<f64> {
        let room = 1.0 - s * self.e_total();
        (room > 0.0).then(|| self.usage(s * self.noise / (self.gain() * room)) / self.q)
    }

    /// Largest rate `log2(1 + SINR)` within the power constraint.
    pub fn max_rate(&self) -> f64 {
        (1.0 + self.sinr(self.p_max())).log2()
    }

    /// Whether rate `f` is reachable within the constraint.
    pub fn rate_reachable(&self, f: f64) -> bool {
        let s = f.exp2() - 1.0;
        self.beta_for_target(s).is_some_and(|b| b <= 1.0)
    }

    pub fn scenario(&self) -> Scenario64 {
        make_manual_scenario(
            vec![vec![vec![vec![Complex::new(self.h_re, self.h_im)]]]],
            self.noise,
            per_array_constraints(mw_to_dbm(self.q), 1, 1),
            self.delta,
        )
        .expect("scalar instance is well formed")
    }

    pub fn model(&self) -> ImpairmentModel<f64> {
        ImpairmentModel::from_kappas(self.kappa1, Kappa2::Infinite, self.kappa3)
            .expect("kappas are in range")
    }
}

/// Largest `f` on a grid of step `step` over `[0, upper]` that `reachable`
/// accepts (0 when none is).
pub fn dense_scan(upper: f64, step: f64, reachable: impl Fn(f64) -> bool) -> f64 {
    let n = (upper / step).ceil() as usize;
    (0..=n)
        .map(|k| (k as f64 * step).min(upper))
        .filter(|&f| reachable(f))
        .fold(0.0, f64::max)
}

/// Two cells, one single-antenna user each, real channel gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoCellInstance {
    /// `gain[m][i]`: power gain from base station `m` to the user of cell `i`.
    pub gain: [[f64; 2]; 2],
    pub noise: f64,
    pub q: f64,
    pub kappa1: f64,
    /// `None` for an infinite `kappa2`.
    pub kappa2: Option<f64>,
    pub kappa3: f64,
    pub delta: f64,
}

impl TwoCellInstance {
    pub fn random(rng: &mut ChaCha8Rng, impaired: bool) -> Self {
        let mut gain = [[0.0; 2]; 2];
        for (m, row) in gain.iter_mut().enumerate() {
            for (i, g) in row.iter_mut().enumerate() {
                *g = if m == i {
                    log_uniform(rng, 0.5, 5.0)
                } else {
                    log_uniform(rng, 0.05, 1.0)
                };
            }
        }
        let q = log_uniform(rng, 1.0, 20.0);
        let (kappa1, kappa2, kappa3) = if impaired {
            (
                rng.random_range(0.0..15.0),
                rng.random_bool(0.5)
                    .then(|| q.sqrt() * rng.random_range(0.5..2.0)),
                rng.random_range(0.0..15.0),
            )
        } else {
            (0.0, None, 0.0)
        };
        TwoCellInstance {
            gain,
            noise: log_uniform(rng, 0.01, 0.5),
            q,
            kappa1,
            kappa2,
            kappa3,
            delta: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        }
    }

    /// Transmit distortion power `eta(sqrt(p))^2` of one antenna.
    pub fn tx_distortion(&self, p: f64) -> f64 {
        let x = p.sqrt();
        let bend = self.kappa2.map_or(1.0, |k2| 1.0 + (x / k2).powi(4));
        (self.kappa1 / 100.0 * x * bend).powi(2)
    }

    pub fn usage(&self, p: f64) -> f64 {
        p + self.delta * self.tx_distortion(p)
    }

    /// Largest transmit power within the constraint (usage is increasing).
    pub fn p_max(&self) -> f64 {
        let (mut lo, mut hi) = (0.0, self.q);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.usage(mid) <= self.q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn sinr_with(&self, i: usize, p: [f64; 2], c: [f64; 2]) -> f64 {
        let j = 1 - i;
        let g = |m: usize| self.gain[m][i];
        let received = g(0) * p[0] + g(1) * p[1];
        let rx = (self.kappa3 / 100.0).powi(2) * received;
        g(i) * p[i] / (g(j) * p[j] + g(0) * c[0] + g(1) * c[1] + rx + self.noise)
    }

    pub fn sinr(&self, i: usize, p: [f64; 2]) -> f64 {
        let c = [self.tx_distortion(p[0]), self.tx_distortion(p[1])];
        self.sinr_with(i, p, c)
    }

    /// Max-min rate over an `n x n` grid of transmit powers in `[0, p_max]^2`.
    pub fn brute_force_maxmin_rate(&self, n: usize) -> f64 {
        let pm = self.p_max();
        let ps: Vec<f64> = (0..n).map(|k| pm * k as f64 / (n - 1) as f64).collect();
        let cs: Vec<f64> = ps.iter().map(|&p| self.tx_distortion(p)).collect();
        let mut best = 0.0f64;
        for (&p0, &c0) in ps.iter().zip(&cs) {
            for (&p1, &c1) in ps.iter().zip(&cs) {
                let s0 = self.sinr_with(0, [p0, p1], [c0, c1]);
                let s1 = self.sinr_with(1, [p0, p1], [c0, c1]);
                best = best.max(s0.min(s1));
            }
        }
        (1.0 + best).log2()
    }

    pub fn scenario(&self) -> Scenario64 {
        let h = |m: usize, i: usize| vec![vec![Complex::new(self.gain[m][i].sqrt(), 0.0)]];
        make_manual_scenario(
            vec![vec![h(0, 0), h(0, 1)], vec![h(1, 0), h(1, 1)]],
            self.noise,
            per_array_constraints(mw_to_dbm(self.q), 2, 1),
            self.delta,
        )
        .expect("two-cell instance is well formed")
    }

    pub fn model(&self) -> ImpairmentModel<f64> {
        let k2 = self.kappa2.map_or(Kappa2::Infinite, Kappa2::Finite);
        ImpairmentModel::from_kappas(self.kappa1, k2, self.kappa3).expect("kappas are in range")
    }
}

/// Scalar QoS case: a target needing `beta` in `[0.01, 10]`, with the exact
/// `beta` and the largest reachable rate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScalarCase {
    pub instance: ScalarInstance,
    pub target: f64,
    pub beta: f64,
    pub max_rate: f64,
}

pub fn scalar_cases(seed: u64, n: usize) -> Vec<ScalarCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1);
    (0..n)
        .map(|_| {
            let instance = ScalarInstance::random(&mut rng);
            let beta0 = log_uniform(&mut rng, 0.01, 10.0);
            let target = instance.sinr(beta0 * instance.p_max());
            ScalarCase {
                instance,
                target,
                beta: instance.beta_for_target(target).expect("below the ceiling"),
                max_rate: instance.max_rate(),
            }
        })
        .collect()
}

/// Two-cell case with its 2000 x 2000 grid max-min rate; odd cases are impaired.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TwoCellCase {
    pub instance: TwoCellInstance,
    pub maxmin_rate: f64,
}

pub fn two_cell_cases(seed: u64, n: usize) -> Vec<TwoCellCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC2);
    (0..n)
        .map(|k| TwoCellInstance::random(&mut rng, k % 2 == 1))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|instance| TwoCellCase {
            instance,
            maxmin_rate: instance.brute_force_maxmin_rate(2000),
        })
        .collect()
}

/// A cone program with a known optimal value.
#[derive(Clone, Debug)]
pub struct SocpFixture {
    pub name: String,
    pub program: ConicProgram<f64>,
    pub optimum: f64,
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projection of `c` onto the ball of radius `rho`: minimize `t` with
/// `||x - c|| <= t`, `||x|| <= rho`. Optimum `max(||c|| - rho, 0)`.
fn ball_projection(rng: &mut ChaCha8Rng, k: usize) -> SocpFixture {
    let n = 2 + k % 4;
    let c = random_vec(rng, n, 3.0);
    let rho = rng.random_range(0.2..2.0) * norm(&c);
    let mut p = ConicProgram::new();
    let x = p.add_block("x", n);
    let t = p.add_scalar("t");
    p.minimize(AffineExpr::var(t));
    p.add(
        "dist",
        Constraint::Soc {
            bound: AffineExpr::var(t),
            rows: (0..n)
                .map(|i| AffineExpr::var(x.at(i)).plus_const(-c[i]))
                .collect(),
        },
    );
    p.add(
        "ball",
        Constraint::Soc {
            bound: AffineExpr::constant(rho),
            rows: (0..n).map(|i| AffineExpr::var(x.at(i))).collect(),
        },
    );
    SocpFixture {
        name: format!("ball_projection_{k}"),
        program: p,
        optimum: (norm(&c) - rho).max(0.0),
    }
}

/// Minimize `a^T x` over `||x - x0|| <= rho`. Optimum `a^T x0 - rho ||a||`.
fn linear_over_ball(rng: &mut ChaCha8Rng, k: usize) -> SocpFixture {
    let n = 2 + k % 5;
    let a = random_vec(rng, n, 2.0);
    let x0 = random_vec(rng, n, 5.0);
    let rho = rng.random_range(0.1..3.0);
    let mut p = ConicProgram::new();
    let x = p.add_block("x", n);
    let obj = (0..n).fold(AffineExpr::zero(), |e, i| e.plus(x.at(i), a[i]));
    p.minimize(obj);
    p.add(
        "ball",
        Constraint::Soc {
            bound: AffineExpr::constant(rho),
            rows: (0..n)
                .map(|i| AffineExpr::var(x.at(i)).plus_const(-x0[i]))
                .collect(),
        },
    );
    let ax0: f64 = a.iter().zip(&x0).map(|(u, v)| u * v).sum();
    SocpFixture {
        name: format!("linear_over_ball_{k}"),
        program: p,
        optimum: ax0 - rho * norm(&a),
    }
}

/// Box LP `min c^T x, l <= x <= u` (optimum picks the cheaper end per
/// coordinate) or simplex LP `min c^T x, x >= 0, sum x = 1` (optimum `min c`).
fn linear_program(rng: &mut ChaCha8Rng, k: usize) -> SocpFixture {
    let n = 3 + k % 3;
    let c = random_vec(rng, n, 4.0);
    let mut p = ConicProgram::new();
    let x = p.add_block("x", n);
    p.minimize((0..n).fold(AffineExpr::zero(), |e, i| e.plus(x.at(i), c[i])));
    let optimum = if k % 2 == 0 {
        let mut opt = 0.0;
        for i in 0..n {
            let lo = rng.random_range(-3.0..0.0);
            let hi = lo + rng.random_range(0.5..4.0);
            p.add(
                format!("lo{i}"),
                Constraint::NonNeg(AffineExpr::var(x.at(i)).plus_const(-lo)),
            );
            p.add(
                format!("hi{i}"),
                Constraint::NonNeg(AffineExpr::term(x.at(i), -1.0).plus_const(hi)),
            );
            opt += c[i] * if c[i] >= 0.0 { lo } else { hi };
        }
        opt
    } else {
        for i in 0..n {
            p.add(
                format!("pos{i}"),
                Constraint::NonNeg(AffineExpr::var(x.at(i))),
            );
        }
        let sum = (0..n).fold(AffineExpr::constant(-1.0), |e, i| e.plus(x.at(i), 1.0));
        p.add("simplex", Constraint::Equal(sum));
        c.iter().copied().fold(f64::INFINITY, f64::min)
    };
    SocpFixture {
        name: format!("linear_program_{k}"),
        program: p,
        optimum,
    }
}

/// Least squared norm on a hyperplane through a rotated cone:
/// minimize `s` with `||x||^2 <= 2 s (1/2)`, `a^T x = b`. Optimum `b^2 / ||a||^2`.
fn least_norm(rng: &mut ChaCha8Rng, k: usize) -> SocpFixture {
    let n = 2 + k % 4;
    let a = random_vec(rng, n, 2.0);
    let b = rng.random_range(-4.0..4.0);
    let mut p = ConicProgram::new();
    let x = p.add_block("x", n);
    let s = p.add_scalar("s");
    p.minimize(AffineExpr::var(s));
    p.add(
        "epigraph",
        Constraint::RotatedSoc {
            v: AffineExpr::var(s),
            w: AffineExpr::constant(0.5),
            rows: (0..n).map(|i| AffineExpr::var(x.at(i))).collect(),
        },
    );
    let ax = (0..n).fold(AffineExpr::constant(-b), |e, i| e.plus(x.at(i), a[i]));
    p.add("plane", Constraint::Equal(ax));
    SocpFixture {
        name: format!("least_norm_{k}"),
        program: p,
        optimum: b * b / norm(&a).powi(2),
    }
}

/// Twenty feasible fixtures, five of each family.
pub fn socp_suite(rng: &mut ChaCha8Rng) -> Vec<SocpFixture> {
    let mut out = Vec::with_capacity(20);
    for k in 0..5 {
        out.push(ball_projection(rng, k));
        out.push(linear_over_ball(rng, k));
        out.push(linear_program(rng, k));
        out.push(least_norm(rng, k));
    }
    out
}

/// Programs with empty feasible sets.
pub fn infeasible_fixtures() -> Vec<(String, ConicProgram<f64>)> {
    let mut out = Vec::new();

    // unit ball against a far half-space
    let mut p = ConicProgram::new();
    let x = p.add_block("x", 3);
    p.minimize(AffineExpr::var(x.at(0)));
    p.add(
        "ball",
        Constraint::Soc {
            bound: AffineExpr::constant(1.0),
            rows: (0..3).map(|i| AffineExpr::var(x.at(i))).collect(),
        },
    );
    p.add(
        "far",
        Constraint::NonNeg(AffineExpr::var(x.at(0)).plus(x.at(1), 1.0).plus_const(-2.0)),
    );
    out.push(("ball_vs_halfspace".to_string(), p));

    // empty box
    let mut p = ConicProgram::new();
    let y = p.add_block("y", 2);
    p.minimize(AffineExpr::var(y.at(0)).plus(y.at(1), 1.0));
    p.add(
        "lo",
        Constraint::NonNeg(AffineExpr::var(y.at(0)).plus_const(-1.0)),
    );
    p.add("hi", Constraint::NonNeg(AffineExpr::term(y.at(0), -1.0)));
    out.push(("empty_box".to_string(), p));

    // squared norm bounded by a negative number
    let mut p = ConicProgram::new();
    let z = p.add_block("z", 2);
    let s = p.add_scalar("s");
    p.minimize(AffineExpr::var(s));
    p.add(
        "epigraph",
        Constraint::RotatedSoc {
            v: AffineExpr::var(s),
            w: AffineExpr::constant(0.5),
            rows: (0..2).map(|i| AffineExpr::var(z.at(i))).collect(),
        },
    );
    p.add(
        "negative",
        Constraint::NonNeg(AffineExpr::term(s, -1.0).plus_const(-1.0)),
    );
    out.push(("negative_square".to_string(), p));

    // a second-order cone slice disjoint from a plane
    let mut p = ConicProgram::new();
    let v = p.add_block("v", 3);
    p.minimize(AffineExpr::var(v.at(0)));
    p.add(
        "cone",
        Constraint::Soc {
            bound: AffineExpr::var(v.at(0)),
            rows: vec![AffineExpr::var(v.at(1)), AffineExpr::var(v.at(2))],
        },
    );
    p.add(
        "cap",
        Constraint::NonNeg(AffineExpr::term(v.at(0), -1.0).plus_const(1.0)),
    );
    p.add(
        "plane",
        Constraint::Equal(AffineExpr::var(v.at(1)).plus_const(-3.0)),
    );
    out.push(("cone_vs_plane".to_string(), p));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_closed_forms_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let inst = ScalarInstance::random(&mut rng);
            let s = inst.sinr(inst.p_max());
            let beta = inst.beta_for_target(s).unwrap();
            assert!((beta - 1.0).abs() < 1e-9, "{beta}");
            assert!(inst.rate_reachable(inst.max_rate() * (1.0 - 1e-9)));
            assert!(!inst.rate_reachable(inst.max_rate() * (1.0 + 1e-9)));
            let ceiling = 1.0 / inst.e_total();
            assert!(inst.beta_for_target(ceiling * 1.01).is_none());
        }
    }

    #[test]
    fn dense_scan_finds_threshold() {
        let f = dense_scan(10.0, 0.01, |f| f <= 3.14159);
        assert!((f - 3.14).abs() < 1e-9);
        assert_eq!(dense_scan(1.0, 0.1, |_| false), 0.0);
    }

    #[test]
    fn brute_force_hits_symmetric_optimum() {
        // symmetric ideal links: both at full power, equal SINR p g / (p c + n)
        let inst = TwoCellInstance {
            gain: [[2.0, 0.5], [0.5, 2.0]],
            noise: 0.1,
            q: 4.0,
            kappa1: 0.0,
            kappa2: None,
            kappa3: 0.0,
            delta: 1.0,
        };
        let exact = (1.0f64 + 2.0 * 4.0 / (0.5 * 4.0 + 0.1)).log2();
        assert!((inst.brute_force_maxmin_rate(200) - exact).abs() < 1e-12);
    }

    #[test]
    fn fixtures_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let suite = socp_suite(&mut rng);
        assert_eq!(suite.len(), 20);
        for f in &suite {
            f.program.validate().unwrap();
            assert!(f.optimum.is_finite(), "{}", f.name);
        }
        for (_, p) in infeasible_fixtures() {
            p.validate().unwrap();
        }
    }
}
