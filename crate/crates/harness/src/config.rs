//! Experiment configuration: presets plus TOML overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use coordbf::Kappa2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Fixed receiver distortion, varying transmitter distortion.
    FigTxSweep,
    /// No amplifier nonlinearity, varying receiver distortion.
    FigRxSweep,
    /// `kappa1 = kappa3` swept together for several `kappa2`.
    FigJointSweep,
    /// Sum rate against output power.
    FigPowerSweep,
    /// Finite-SNR multiplexing gain against output power.
    FigMuxGain,
    Custom,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::FigTxSweep => "fig_tx_sweep",
            Experiment::FigRxSweep => "fig_rx_sweep",
            Experiment::FigJointSweep => "fig_joint_sweep",
            Experiment::FigPowerSweep => "fig_power_sweep",
            Experiment::FigMuxGain => "fig_mux_gain",
            Experiment::Custom => "custom",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MaxminOptimal,
    DistortionIgnoring,
    Tdma,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::MaxminOptimal => "maxmin_optimal",
            Scheme::DistortionIgnoring => "distortion_ignoring",
            Scheme::Tdma => "tdma",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `kappa2` as written in TOML: a number or `"inf"`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
enum Kappa2Value {
    Number(f64),
    Text(String),
}

impl Kappa2Value {
    fn parse(&self) -> Result<Kappa2<f64>, ConfigError> {
        match self {
            Kappa2Value::Number(v) if v.is_infinite() && *v > 0.0 => Ok(Kappa2::Infinite),
            Kappa2Value::Number(v) if *v > 0.0 && v.is_finite() => Ok(Kappa2::Finite(*v)),
            Kappa2Value::Number(v) => Err(ConfigError::Invalid(format!(
                "kappa2 must be positive, got {v}"
            ))),
            Kappa2Value::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" => Ok(Kappa2::Infinite),
                other => other
                    .parse::<f64>()
                    .map_err(|_| ConfigError::Invalid(format!("bad kappa2 value {t:?}")))
                    .and_then(|v| Kappa2Value::Number(v).parse()),
            },
        }
    }
}

/// `"inf"` for the infinite value, otherwise the shortest round-trip decimal.
pub fn kappa2_label(k: Kappa2<f64>) -> String {
    match k {
        Kappa2::Infinite => "inf".into(),
        Kappa2::Finite(v) => format!("{v}"),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n_cells: Option<usize>,
    users_per_cell: Option<usize>,
    n_tx: Option<usize>,
    power_dbm: Option<Vec<f64>>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImpairments {
    kappa1: Option<Vec<f64>>,
    kappa2: Option<Vec<Kappa2Value>>,
    kappa3: Option<Vec<f64>>,
    tie_kappa3_to_kappa1: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    bisection_tol: Option<f64>,
    tolerance: Option<f64>,
    cut_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<PathBuf>,
    summary: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Experiment>,
    drops: Option<u64>,
    seed: Option<u64>,
    /// Switch the preset to `N_t = 8`, `K = 4`.
    full_scale: Option<bool>,
    schemes: Option<Vec<Scheme>>,
    rescale_distortion_ignoring: Option<bool>,
    #[serde(default)]
    scenario: RawScenario,
    #[serde(default)]
    impairments: RawImpairments,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub drops: u64,
    pub seed: u64,
    pub n_cells: usize,
    pub users_per_cell: usize,
    pub n_tx: usize,
    pub power_dbm: Vec<f64>,
    pub delta: f64,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<Kappa2<f64>>,
    /// Ignored when `tie_kappa3_to_kappa1` is set.
    pub kappa3: Vec<f64>,
    pub tie_kappa3_to_kappa1: bool,
    pub schemes: Vec<Scheme>,
    /// Shrink distortion-ignoring beamformers into the true power constraints.
    pub rescale_distortion_ignoring: bool,
    pub bisection_tol: f64,
    pub tolerance: f64,
    pub cut_tolerance: f64,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// One point of the swept parameter grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub power_dbm: f64,
    pub kappa1: f64,
    pub kappa2: Kappa2<f64>,
    pub kappa3: f64,
}

const HIGH_POWER_GRID: [f64; 9] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults of an experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            drops: 50,
            seed: 1,
            n_cells: 2,
            users_per_cell: 2,
            n_tx: 4,
            power_dbm: vec![18.2],
            delta: 1.0,
            kappa1: vec![0.0],
            kappa2: vec![Kappa2::Infinite],
            kappa3: vec![0.0],
            tie_kappa3_to_kappa1: false,
            schemes: vec![Scheme::MaxminOptimal, Scheme::DistortionIgnoring],
            rescale_distortion_ignoring: true,
            bisection_tol: 1e-3,
            tolerance: 1e-8,
            cut_tolerance: 1e-6,
            csv_path: None,
            summary_path: None,
        };
        match experiment {
            Experiment::FigTxSweep => {
                c.kappa1 = steps(0.0, 15.0, 2.5);
                c.kappa2 = vec![Kappa2::Infinite, Kappa2::Finite(4.0), Kappa2::Finite(2.0)];
                c.kappa3 = vec![2.0];
            }
            Experiment::FigRxSweep => {
                c.kappa1 = vec![0.0, 5.0, 10.0];
                c.kappa3 = steps(0.0, 15.0, 2.5);
            }
            Experiment::FigJointSweep => {
                c.kappa1 = steps(0.0, 15.0, 2.5);
                c.kappa2 = vec![Kappa2::Infinite, Kappa2::Finite(4.0), Kappa2::Finite(2.0)];
                c.tie_kappa3_to_kappa1 = true;
            }
            Experiment::FigPowerSweep => {
                c.power_dbm = HIGH_POWER_GRID.to_vec();
                c.kappa1 = vec![0.0, 2.0, 4.0, 6.0, 8.0];
                c.tie_kappa3_to_kappa1 = true;
            }
            Experiment::FigMuxGain => {
                c.power_dbm = HIGH_POWER_GRID.to_vec();
                c.kappa1 = vec![0.0, 2.0, 4.0, 6.0, 8.0];
                c.tie_kappa3_to_kappa1 = true;
                c.schemes = vec![Scheme::MaxminOptimal, Scheme::Tdma];
            }
            Experiment::Custom => {
                c.schemes = vec![Scheme::MaxminOptimal];
            }
        }
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut c = Self::preset(raw.experiment.unwrap_or(Experiment::Custom));
        if raw.full_scale == Some(true) {
            c.users_per_cell = 4;
            c.n_tx = 8;
        }
        let set = |dst: &mut _, src: Option<_>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut c.drops, raw.drops);
        set(&mut c.seed, raw.seed);
        c.schemes = raw.schemes.unwrap_or(c.schemes);
        c.rescale_distortion_ignoring = raw
            .rescale_distortion_ignoring
            .unwrap_or(c.rescale_distortion_ignoring);
        let s = raw.scenario;
        c.n_cells = s.n_cells.unwrap_or(c.n_cells);
        c.users_per_cell = s.users_per_cell.unwrap_or(c.users_per_cell);
        c.n_tx = s.n_tx.unwrap_or(c.n_tx);
        c.power_dbm = s.power_dbm.unwrap_or(c.power_dbm);
        c.delta = s.delta.unwrap_or(c.delta);
        let imp = raw.impairments;
        c.kappa1 = imp.kappa1.unwrap_or(c.kappa1);
        if let Some(k2) = imp.kappa2 {
            c.kappa2 = k2
                .iter()
                .map(Kappa2Value::parse)
                .collect::<Result<_, _>>()?;
        }
        c.kappa3 = imp.kappa3.unwrap_or(c.kappa3);
        c.tie_kappa3_to_kappa1 = imp.tie_kappa3_to_kappa1.unwrap_or(c.tie_kappa3_to_kappa1);
        c.bisection_tol = raw.solver.bisection_tol.unwrap_or(c.bisection_tol);
        c.tolerance = raw.solver.tolerance.unwrap_or(c.tolerance);
        c.cut_tolerance = raw.solver.cut_tolerance.unwrap_or(c.cut_tolerance);
        c.csv_path = raw.output.csv;
        c.summary_path = raw.output.summary;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.drops < 1 {
            return bad("drops must be >= 1".into());
        }
        if self.n_cells != 2 {
            return bad(format!(
                "the drop layout has 2 cells, got n_cells = {}",
                self.n_cells
            ));
        }
        if self.users_per_cell < 1 || self.n_tx < 1 {
            return bad("users_per_cell and n_tx must be >= 1".into());
        }
        if self.power_dbm.is_empty() || self.kappa1.is_empty() || self.kappa2.is_empty() {
            return bad("power and kappa grids must be non-empty".into());
        }
        if !self.tie_kappa3_to_kappa1 && self.kappa3.is_empty() {
            return bad("kappa3 grid must be non-empty".into());
        }
        if self.power_dbm.iter().any(|p| !p.is_finite()) {
            return bad("power_dbm values must be finite".into());
        }
        if self
            .kappa1
            .iter()
            .chain(&self.kappa3)
            .any(|k| !(k.is_finite() && *k >= 0.0))
        {
            return bad("kappa1 and kappa3 must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !(self.bisection_tol > 0.0 && self.bisection_tol.is_finite()) {
            return bad("bisection_tol must be positive".into());
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-2) {
            return bad("solver tolerance must lie in (0, 1e-2]".into());
        }
        if !(self.cut_tolerance > 0.0 && self.cut_tolerance.is_finite()) {
            return bad("cut_tolerance must be positive".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        let mut sorted = self.schemes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.schemes.len() {
            return bad("duplicate scheme".into());
        }
        Ok(())
    }

    /// Grid points in canonical order: power, then `kappa2`, `kappa1`, `kappa3`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &power_dbm in &self.power_dbm {
            for &kappa2 in &self.kappa2 {
                for &kappa1 in &self.kappa1 {
                    let k3s = if self.tie_kappa3_to_kappa1 {
                        vec![kappa1]
                    } else {
                        self.kappa3.clone()
                    };
                    for kappa3 in k3s {
                        out.push(GridPoint {
                            power_dbm,
                            kappa1,
                            kappa2,
                            kappa3,
                        });
                    }
                }
            }
        }
        out
    }

    /// Schemes in canonical output order.
    pub fn ordered_schemes(&self) -> Vec<Scheme> {
        let mut s = self.schemes.clone();
        s.sort();
        s
    }
}
