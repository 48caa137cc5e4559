use std::f64::consts::FRAC_PI_4;

use coordbf::scenario::{derive_drop_seed, drop_users, DropConfig};
use coordbf::Scenario64;
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided Kolmogorov-Smirnov statistic of `xs` against `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (k, &x)| {
        let f = cdf(x);
        d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n)
    })
}

/// Asymptotic critical value at significance 0.01.
fn ks_critical_001(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Entries of `h / sqrt(g)` across many drops, split into real and imaginary parts.
fn whitened_entries(drops: u64) -> (Vec<f64>, Vec<f64>) {
    let cfg = DropConfig::default();
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for d in 0..drops {
        let s: Scenario64 = drop_users(&cfg, 2, 4, 8, derive_drop_seed(2024, d)).unwrap();
        let geo = s.geometry().unwrap();
        let (n, k) = (s.n_cells(), s.users_per_cell());
        for m in 0..n {
            for i in 0..n {
                for j in 0..k {
                    let amp = geo.link_gain[(m * n + i) * k + j].sqrt();
                    for z in s.channel(m, i, j) {
                        re.push(z.re / amp);
                        im.push(z.im / amp);
                    }
                }
            }
        }
    }
    (re, im)
}

#[test]
fn small_scale_fading_is_unit_complex_gaussian() {
    let (re, im) = whitened_entries(100);
    assert!(re.len() >= 10_000);
    let half = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    for (name, xs) in [("re", re), ("im", im)] {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "{name} mean {mean}");
        assert!((var - 0.5).abs() < 0.03, "{name} variance {var}");
        let d = ks_statistic(xs, |x| half.cdf(x));
        assert!(d < ks_critical_001(n), "{name}: KS {d} over {n} samples");
    }
}

#[test]
fn ks_statistic_rejects_wrong_variance() {
    let (re, _) = whitened_entries(100);
    let wrong = Normal::new(0.0, 1.0).unwrap();
    let n = re.len();
    assert!(ks_statistic(re, |x| wrong.cdf(x)) > ks_critical_001(n));
}

#[test]
fn shadowing_spread_matches_configuration() {
    // Large-scale gain in dB minus its deterministic part is the shadowing draw.
    let cfg = DropConfig::default();
    let mut shadow = Vec::new();
    for d in 0..400 {
        let s: Scenario64 = drop_users(&cfg, 2, 2, 1, derive_drop_seed(5, d)).unwrap();
        let geo = s.geometry().unwrap();
        let (n, k) = (2, 2);
        for m in 0..n {
            for i in 0..n {
                for j in 0..k {
                    let idx = (m * n + i) * k + j;
                    let (bx, by) = geo.bs_positions[m];
                    let (ux, uy) = geo.user_positions[i][j];
                    let d_km = ((ux - bx).powi(2) + (uy - by).powi(2)).sqrt() / 1000.0;
                    let det = cfg.tx_gain_db(geo.link_angle[idx]) + cfg.rx_gain_db
                        - cfg.path_loss_db(d_km)
                        - cfg.penetration_loss_db;
                    shadow.push(det - 10.0 * geo.link_gain[idx].log10());
                }
            }
        }
    }
    let n = shadow.len();
    let std = Normal::new(0.0, cfg.shadowing_std_db).unwrap();
    let d = ks_statistic(shadow, |x| std.cdf(x));
    assert!(d < ks_critical_001(n), "KS {d} over {n}");
}

#[test]
fn drops_respect_geometry() {
    let cfg = DropConfig::default();
    let side = cfg.square_diagonal_m / std::f64::consts::SQRT_2;
    for d in 0..200 {
        let s: Scenario64 = drop_users(&cfg, 2, 3, 2, derive_drop_seed(9, d)).unwrap();
        let geo = s.geometry().unwrap();
        for (i, users) in geo.user_positions.iter().enumerate() {
            let (bx, by) = geo.bs_positions[i];
            for &(x, y) in users {
                assert!((0.0..=side).contains(&x) && (0.0..=side).contains(&y));
                let dist = ((x - bx).powi(2) + (y - by).powi(2)).sqrt();
                assert!(dist >= cfg.min_bs_distance_m - 1e-9);
                // the half nearest the serving corner
                let own = if i == 0 {
                    x + y <= side + 1e-9
                } else {
                    x + y >= side - 1e-9
                };
                assert!(own, "user at ({x}, {y}) outside cell {i}");
            }
        }
        assert!(geo.link_angle.iter().all(|t| t.abs() <= FRAC_PI_4 + 1e-12));
    }
}

#[test]
fn drops_are_reproducible_and_seed_sensitive() {
    let cfg = DropConfig::default();
    let a: Scenario64 = drop_users(&cfg, 2, 2, 4, 77).unwrap();
    let b: Scenario64 = drop_users(&cfg, 2, 2, 4, 77).unwrap();
    let c: Scenario64 = drop_users(&cfg, 2, 2, 4, 78).unwrap();
    for m in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let (ha, hb, hc) = (a.channel(m, i, j), b.channel(m, i, j), c.channel(m, i, j));
                assert!(ha
                    .iter()
                    .zip(hb)
                    .all(|(x, y)| x.re.to_bits() == y.re.to_bits()
                        && x.im.to_bits() == y.im.to_bits()));
                assert_ne!(ha, hc);
            }
        }
    }
    assert_eq!(a.geometry(), b.geometry());
}
