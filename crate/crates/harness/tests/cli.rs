use std::path::Path;
use std::process::{Command, Output};

use coordbf_harness::records::{read_csv, Summary, CSV_HEADER};
use tempfile::TempDir;

const SMALL: &str = r#"
experiment = "fig_tx_sweep"
drops = 2
seed = 11

[scenario]
users_per_cell = 1
n_tx = 2

[impairments]
kappa1 = [0.0, 5.0]
kappa2 = ["inf", 3.0]
kappa3 = [2.0]
"#;

fn coordbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordbf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_small(dir: &Path, tag: &str, extra: &[&str]) -> (Output, String) {
    let cfg = write(dir, "small.toml", SMALL);
    let out = dir.join(format!("{tag}.csv"));
    let out = out.to_str().unwrap().to_string();
    let mut args = vec!["run", "--config", &cfg, "--out", &out];
    args.extend_from_slice(extra);
    let o = coordbf(&args);
    (o, out)
}

#[test]
fn run_writes_header_and_inf_label() {
    let dir = TempDir::new().unwrap();
    let (o, csv) = run_small(dir.path(), "a", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert!(text.lines().any(|l| l.split(',').nth(5) == Some("inf")));
    assert!(text.lines().any(|l| l.split(',').nth(5) == Some("3")));
}

#[test]
fn every_scheme_run_yields_metrics_or_one_status_row() {
    let dir = TempDir::new().unwrap();
    let (o, csv) = run_small(dir.path(), "a", &[]);
    assert!(o.status.success());
    let rows = read_csv(std::fs::File::open(csv).unwrap()).unwrap();
    // 4 grid points x 2 drops x 2 schemes
    let mut runs = std::collections::BTreeMap::new();
    for r in &rows {
        let key = (
            r.drop,
            r.kappa1.to_bits(),
            r.kappa2.clone(),
            r.scheme.clone(),
        );
        runs.entry(key)
            .or_insert_with(Vec::new)
            .push(r.metric.clone());
    }
    assert_eq!(runs.len(), 16);
    for metrics in runs.values() {
        let ok = metrics == &["min_rate", "sum_rate", "power_used"] || metrics == &["status"];
        assert!(ok, "{metrics:?}");
    }
}

#[test]
fn reruns_and_job_counts_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let (a, pa) = run_small(dir.path(), "a", &["--jobs", "1"]);
    let (b, pb) = run_small(dir.path(), "b", &["--jobs", "1"]);
    let (c, pc) = run_small(dir.path(), "c", &["--jobs", "3"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    let read = |p: &str| std::fs::read(p).unwrap();
    assert_eq!(read(&pa), read(&pb));
    assert_eq!(read(&pa), read(&pc));
}

#[test]
fn adding_drops_keeps_earlier_drops() {
    let dir = TempDir::new().unwrap();
    let (a, pa) = run_small(dir.path(), "a", &["--drops", "1"]);
    let (b, pb) = run_small(dir.path(), "b", &["--drops", "2"]);
    assert!(a.status.success() && b.status.success());
    let one = read_csv(std::fs::File::open(pa).unwrap()).unwrap();
    let two = read_csv(std::fs::File::open(pb).unwrap()).unwrap();
    let first: Vec<_> = two.into_iter().filter(|r| r.drop == 0).collect();
    assert_eq!(one, first);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let (a, pa) = run_small(dir.path(), "a", &["--seed", "12"]);
    assert!(a.status.success());
    let rows = read_csv(std::fs::File::open(pa).unwrap()).unwrap();
    let (_, pb) = run_small(dir.path(), "b", &[]);
    let base = read_csv(std::fs::File::open(pb).unwrap()).unwrap();
    assert_ne!(rows[0].seed, base[0].seed);
}

#[test]
fn summary_means_match_rows() {
    let dir = TempDir::new().unwrap();
    let summary = dir.path().join("s.json");
    let s = summary.to_str().unwrap().to_string();
    let (o, csv) = run_small(dir.path(), "a", &["--summary", &s]);
    assert!(o.status.success());
    let rows = read_csv(std::fs::File::open(csv).unwrap()).unwrap();
    let sum: Summary = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(sum.attempts, 16);
    assert_eq!(sum.failures, rows.iter().filter(|r| r.is_status()).count());
    assert!(!sum.cells.is_empty());
    for c in &sum.cells {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| {
                r.kappa1 == c.kappa1
                    && r.kappa2 == c.kappa2
                    && r.kappa3 == c.kappa3
                    && r.power_dbm == c.power_dbm
                    && r.scheme == c.scheme
                    && r.metric == c.metric
            })
            .map(|r| r.value)
            .collect();
        assert_eq!(xs.len(), c.n);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - c.mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("unknown_key.toml", "experiment = \"custom\"\nbogus = 1\n"),
        ("bad_kappa.toml", "[impairments]\nkappa1 = [-1.0]\n"),
        ("not_toml.toml", "experiment = [\n"),
        ("zero_drops.toml", "drops = 0\n"),
    ];
    for (name, text) in cases {
        let cfg = write(dir.path(), name, text);
        let o = coordbf(&["run", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{name}");
    }
    let o = coordbf(&["run", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_prints_json_lines() {
    let o = coordbf(&["oracle", "--drops", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["kind"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "scalar").count(), 100);
    assert_eq!(kinds.iter().filter(|k| *k == "two_cell_grid").count(), 2);
    assert!(kinds.iter().any(|k| k == "socp_infeasible"));
}
