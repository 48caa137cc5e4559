use std::sync::Arc;

use coordbf::conic::{ScalarConvexConstraint, Var};
use coordbf::impairments::{tx_distortion_cov, DistortionFn, PolynomialEta};
use coordbf::metrics::{power_usage, sinr_breakdown};
use coordbf::scenario::{per_antenna_constraints, per_array_constraints};
use coordbf::*;
use num_complex::Complex;
use proptest::prelude::*;

fn cplx() -> impl Strategy<Value = Complex<f64>> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| Complex::new(a, b))
}

fn cvec(n: usize) -> impl Strategy<Value = Vec<Complex<f64>>> {
    prop::collection::vec(cplx(), n)
}

/// Random `N x K x N_t` instance plus one beamforming matrix per cell.
fn instance() -> impl Strategy<Value = (Scenario64, Vec<CMatrix64>)> {
    (1..3usize, 1..3usize, 1..4usize, 0.01..2.0f64).prop_flat_map(|(n, k, nt, noise)| {
        let chans = prop::collection::vec(
            prop::collection::vec(prop::collection::vec(cvec(nt), k), n),
            n,
        );
        let ws = prop::collection::vec(prop::collection::vec(cvec(nt), k), n);
        (chans, ws).prop_map(move |(h, w)| {
            let s =
                make_manual_scenario(h, noise, per_array_constraints(20.0, n, nt), 1.0).unwrap();
            let ws = w
                .iter()
                .map(|cols| CMatrix::from_columns(nt, cols).unwrap())
                .collect();
            (s, ws)
        })
    })
}

fn model() -> impl Strategy<Value = ImpairmentModel64> {
    (0.0..15.0f64, prop::option::of(0.5..5.0f64), 0.0..15.0f64).prop_map(|(k1, k2, k3)| {
        let k2 = k2.map_or(Kappa2::Infinite, Kappa2::Finite);
        ImpairmentModel::from_kappas(k1, k2, k3).unwrap()
    })
}

/// Textbook SINR without any hardware distortion, written independently of
/// the library's evaluation path.
fn classical_sinr(s: &Scenario64, ws: &[CMatrix64], i: usize, j: usize) -> f64 {
    let dot = |h: &[Complex<f64>], w: &[Complex<f64>]| -> Complex<f64> {
        h.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
    };
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (m, w) in ws.iter().enumerate() {
        let h = s.channel(m, i, j);
        for l in 0..w.cols() {
            let p = dot(h, &w.column(l)).norm_sqr();
            if m == i && l == j {
                signal = p;
            } else {
                interference += p;
            }
        }
    }
    signal / (interference + s.noise_power())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sinr_ignores_column_phase((s, ws) in instance(), m in model(), phase in 0.0..std::f64::consts::TAU) {
        let rot = Complex::from_polar(1.0, phase);
        for c in 0..ws.len() {
            for col in 0..s.users_per_cell() {
                let mut turned = ws.clone();
                let v: Vec<_> = turned[c].column(col).iter().map(|z| z * rot).collect();
                turned[c].set_column(col, &v);
                for i in 0..s.n_cells() {
                    for j in 0..s.users_per_cell() {
                        let a = sinr(&s, &ws, &m, i, j);
                        let b = sinr(&s, &turned, &m, i, j);
                        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300), "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn ideal_sinr_is_classical((s, ws) in instance()) {
        let m = ImpairmentModel::ideal();
        for i in 0..s.n_cells() {
            for j in 0..s.users_per_cell() {
                let a = sinr(&s, &ws, &m, i, j);
                let b = classical_sinr(&s, &ws, i, j);
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn breakdown_sums_to_denominator((s, ws) in instance(), m in model()) {
        for i in 0..s.n_cells() {
            for j in 0..s.users_per_cell() {
                let b = sinr_breakdown(&s, &ws, &m, i, j);
                let parts = b.intra_cell + b.inter_cell + b.tx_distortion + b.rx_variance;
                prop_assert!((parts - b.denominator()).abs() <= 1e-12 * parts);
                prop_assert!(b.rx_variance >= s.noise_power());
                prop_assert!(b.sinr() >= 0.0);
                prop_assert_eq!(b.sinr(), sinr(&s, &ws, &m, i, j));
            }
        }
    }

    #[test]
    fn per_antenna_usage_adds_up_to_frobenius(cols in prop::collection::vec(cvec(4), 1..4), q in 0.1..50.0f64) {
        let w = CMatrix::from_columns(4, &cols).unwrap();
        let pcs = per_antenna_constraints(q, 1, 4);
        let total: f64 = pcs[0].iter().map(|pc| power_usage(&w, &[0.0; 4], &pc.q_matrix, 0.0)).sum();
        let array = power_usage(&w, &[0.0; 4], &per_array_constraints::<f64>(20.0, 1, 4)[0][0].q_matrix, 0.0);
        prop_assert!((total - w.fro_norm_sqr()).abs() <= 1e-12 * (1.0 + total));
        prop_assert!((total - array).abs() <= 1e-12 * (1.0 + total));
    }

    #[test]
    fn distortion_power_is_counted_with_delta(cols in prop::collection::vec(cvec(3), 1..3), m in model(), delta in 0.0..1.0f64) {
        let w = CMatrix::from_columns(3, &cols).unwrap();
        let c = tx_distortion_cov(&w, &m);
        let q = CMatrix::identity(3);
        let expect = w.fro_norm_sqr() + delta * c.iter().sum::<f64>();
        prop_assert!((power_usage(&w, &c, &q, delta) - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn tangent_cuts_never_remove_feasible_points(
        k1 in 0.0..15.0f64,
        k2 in 0.3..5.0f64,
        at in 0.0..10.0f64,
        u in 0.0..20.0f64,
        slack in 0.0..3.0f64,
    ) {
        let phi: Arc<dyn DistortionFn<f64>> = Arc::new(PolynomialEta { kappa1: k1, kappa2: Kappa2::Finite(k2) });
        let sc = ScalarConvexConstraint {
            label: "eta".into(),
            phi: phi.clone(),
            arg: Var(0),
            bound: Var(1),
            initial_points: vec![],
        };
        let x = [u, phi.value(u) + slack];
        let cut = sc.cut(at);
        prop_assert!(cut.violation(&x) <= 1e-9 * (1.0 + x[1]), "cut at {at} removes u = {u}");
    }
}
