//! System instances: channels, noise, power-constraint sets and drop geometry.

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::linalg::{hermitian_min_eigenvalue, CMatrix};
use crate::scalar::{cast, eig_tolerance, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q[{cell}][{index}] is not Hermitian")]
    NotHermitian { cell: usize, index: usize },
    #[error("Q[{cell}][{index}] is not positive semi-definite (min eigenvalue {min_eig:e})")]
    NotPsd {
        cell: usize,
        index: usize,
        min_eig: f64,
    },
    #[error("cell {cell}: sum_k Q not positive definite (min eigenvalue {min_eig:e})")]
    SumNotPositiveDefinite { cell: usize, min_eig: f64 },
    #[error("cell {cell}: power limit q[{index}] must be positive and finite")]
    InvalidLimit { cell: usize, index: usize },
    #[error("noise power must be positive and finite")]
    InvalidNoise,
    #[error("delta must lie in [0, 1]")]
    InvalidDelta,
    #[error("invalid drop configuration: {0}")]
    InvalidConfig(String),
    #[error("user placement failed after {0} attempts")]
    PlacementFailed(usize),
}

/// One weighted power constraint `tr(W^H Q W) + delta tr(Q C) <= q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerConstraint<T> {
    pub q_matrix: CMatrix<T>,
    /// Limit in mW.
    pub limit: T,
}

/// Geometry and large-scale gains of a random drop, kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct DropGeometry {
    pub bs_positions: Vec<(f64, f64)>,
    /// `user_positions[i][j]`, metres.
    pub user_positions: Vec<Vec<(f64, f64)>>,
    /// Linear large-scale gain of link `(m, i, j)`, flat index `(m * N + i) * K + j`.
    pub link_gain: Vec<f64>,
    /// Angle off boresight of link `(m, i, j)`, radians.
    pub link_angle: Vec<f64>,
    pub seed: u64,
}

/// Immutable multicell downlink instance.
#[derive(Clone, Debug)]
pub struct Scenario<T> {
    n_cells: usize,
    users_per_cell: usize,
    n_tx: usize,
    channels: Vec<Complex<T>>,
    noise_power: T,
    power_constraints: Vec<Vec<PowerConstraint<T>>>,
    delta: T,
    geometry: Option<Arc<DropGeometry>>,
}

/// Channel vectors indexed `[m][i][j]` (transmitter, cell, user).
pub type ChannelSet<T> = Vec<Vec<Vec<Vec<Complex<T>>>>>;

/// Builds and validates a scenario from explicit data.
pub fn make_manual_scenario<T: Real>(
    channels: ChannelSet<T>,
    noise_power: T,
    power_constraints: Vec<Vec<PowerConstraint<T>>>,
    delta: T,
) -> Result<Scenario<T>, ScenarioError> {
    let n = channels.len();
    if n == 0 {
        return Err(ScenarioError::Dimension("no transmitters".into()));
    }
    let k = channels[0].first().map_or(0, Vec::len);
    let nt = channels[0]
        .first()
        .and_then(|c| c.first())
        .map_or(0, Vec::len);
    if k == 0 || nt == 0 {
        return Err(ScenarioError::Dimension("need K >= 1 and N_t >= 1".into()));
    }
    let mut flat = Vec::with_capacity(n * n * k * nt);
    for (m, per_tx) in channels.iter().enumerate() {
        if per_tx.len() != n {
            return Err(ScenarioError::Dimension(format!(
                "transmitter {m}: expected {n} cells, got {}",
                per_tx.len()
            )));
        }
        for (i, per_cell) in per_tx.iter().enumerate() {
            if per_cell.len() != k {
                return Err(ScenarioError::Dimension(format!(
                    "h[{m}][{i}]: expected {k} users, got {}",
                    per_cell.len()
                )));
            }
            for (j, h) in per_cell.iter().enumerate() {
                if h.len() != nt {
                    return Err(ScenarioError::Dimension(format!(
                        "h[{m}][{i}][{j}]: expected length {nt}, got {}",
                        h.len()
                    )));
                }
                flat.extend_from_slice(h);
            }
        }
    }
    let scenario = Scenario {
        n_cells: n,
        users_per_cell: k,
        n_tx: nt,
        channels: flat,
        noise_power,
        power_constraints: Vec::new(),
        delta,
        geometry: None,
    };
    scenario.with_power_constraints(power_constraints)
}

fn validate_constraints<T: Real>(
    pcs: &[Vec<PowerConstraint<T>>],
    n: usize,
    nt: usize,
) -> Result<(), ScenarioError> {
    if pcs.len() != n {
        return Err(ScenarioError::Dimension(format!(
            "expected constraints for {n} cells, got {}",
            pcs.len()
        )));
    }
    for (cell, list) in pcs.iter().enumerate() {
        if list.is_empty() {
            return Err(ScenarioError::Dimension(format!(
                "cell {cell} has no power constraint"
            )));
        }
        let mut sum = CMatrix::zeros(nt, nt);
        for (index, pc) in list.iter().enumerate() {
            let q = &pc.q_matrix;
            if q.rows() != nt || q.cols() != nt {
                return Err(ScenarioError::Dimension(format!(
                    "Q[{cell}][{index}] is {}x{}, expected {nt}x{nt}",
                    q.rows(),
                    q.cols()
                )));
            }
            let tol = eig_tolerance(q.max_abs());
            if !q.is_hermitian(tol) {
                return Err(ScenarioError::NotHermitian { cell, index });
            }
            let min_eig = hermitian_min_eigenvalue(q);
            if min_eig < -tol {
                return Err(ScenarioError::NotPsd {
                    cell,
                    index,
                    min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
                });
            }
            if !(pc.limit > T::zero() && pc.limit.is_finite()) {
                return Err(ScenarioError::InvalidLimit { cell, index });
            }
            sum = sum.add(q);
        }
        let min_eig = hermitian_min_eigenvalue(&sum);
        if min_eig <= eig_tolerance(sum.max_abs()) {
            return Err(ScenarioError::SumNotPositiveDefinite {
                cell,
                min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

impl<T: Real> Scenario<T> {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_users(&self) -> usize {
        self.n_cells * self.users_per_cell
    }

    /// Flat user index of user `j` in cell `i`.
    #[inline]
    pub fn user_index(&self, i: usize, j: usize) -> usize {
        i * self.users_per_cell + j
    }

    /// Channel `h_{m,i,j}` from transmitter `m` to user `j` of cell `i`.
    #[inline]
    pub fn channel(&self, m: usize, i: usize, j: usize) -> &[Complex<T>] {
        let start = ((m * self.n_cells + i) * self.users_per_cell + j) * self.n_tx;
        &self.channels[start..start + self.n_tx]
    }

    pub fn noise_power(&self) -> T {
        self.noise_power
    }

    pub fn power_constraints(&self, cell: usize) -> &[PowerConstraint<T>] {
        &self.power_constraints[cell]
    }

    pub fn all_power_constraints(&self) -> &[Vec<PowerConstraint<T>>] {
        &self.power_constraints
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn geometry(&self) -> Option<&DropGeometry> {
        self.geometry.as_deref()
    }

    /// Largest power limit over all cells and constraints.
    pub fn max_limit(&self) -> T {
        self.power_constraints
            .iter()
            .flatten()
            .fold(T::zero(), |m, pc| m.max(pc.limit))
    }

    /// Replaces the power constraints, re-validating the invariants.
    pub fn with_power_constraints(
        mut self,
        pcs: Vec<Vec<PowerConstraint<T>>>,
    ) -> Result<Self, ScenarioError> {
        if !(self.noise_power > T::zero() && self.noise_power.is_finite()) {
            return Err(ScenarioError::InvalidNoise);
        }
        if !(self.delta >= T::zero() && self.delta <= T::one()) {
            return Err(ScenarioError::InvalidDelta);
        }
        validate_constraints(&pcs, self.n_cells, self.n_tx)?;
        self.power_constraints = pcs;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: T) -> Result<Self, ScenarioError> {
        if !(delta >= T::zero() && delta <= T::one()) {
            return Err(ScenarioError::InvalidDelta);
        }
        self.delta = delta;
        Ok(self)
    }

    /// Multiplies every power limit by `factor > 0`.
    pub fn with_scaled_limits(&self, factor: T) -> Self {
        let mut out = self.clone();
        for pc in out.power_constraints.iter_mut().flatten() {
            pc.limit = pc.limit * factor;
        }
        out
    }

    /// Single-user instance in which only base station `i` transmits, to user `j`
    /// of its own cell. Keeps the noise, delta and cell-`i` power constraints.
    pub fn isolated_user(&self, i: usize, j: usize) -> Self {
        Scenario {
            n_cells: 1,
            users_per_cell: 1,
            n_tx: self.n_tx,
            channels: self.channel(i, i, j).to_vec(),
            noise_power: self.noise_power,
            power_constraints: vec![self.power_constraints[i].clone()],
            delta: self.delta,
            geometry: None,
        }
    }
}

/// `10^(dBm / 10)` mW.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// One per-array constraint per cell: `Q = I`, `q = 10^(dBm/10)`.
pub fn per_array_constraints<T: Real>(
    power_dbm: f64,
    n_cells: usize,
    n_tx: usize,
) -> Vec<Vec<PowerConstraint<T>>> {
    let q = cast(dbm_to_mw(power_dbm));
    (0..n_cells)
        .map(|_| {
            vec![PowerConstraint {
                q_matrix: CMatrix::identity(n_tx),
                limit: q,
            }]
        })
        .collect()
}

/// `N_t` per-antenna constraints per cell: `Q_k` selects antenna `k`, `q_k = power_mw`.
pub fn per_antenna_constraints<T: Real>(
    power_mw: T,
    n_cells: usize,
    n_tx: usize,
) -> Vec<Vec<PowerConstraint<T>>> {
    (0..n_cells)
        .map(|_| {
            (0..n_tx)
                .map(|k| {
                    let mut d = vec![T::zero(); n_tx];
                    d[k] = T::one();
                    PowerConstraint {
                        q_matrix: CMatrix::diag(&d),
                        limit: power_mw,
                    }
                })
                .collect()
        })
        .collect()
}

/// Large-scale parameters of the two-cell drop.
#[derive(Clone, Debug, PartialEq)]
pub struct DropConfig {
    pub square_diagonal_m: f64,
    pub min_bs_distance_m: f64,
    pub shadowing_std_db: f64,
    pub penetration_loss_db: f64,
    pub path_loss_intercept_db: f64,
    pub path_loss_slope_db: f64,
    pub tx_gain_max_db: f64,
    pub tx_gain_curvature_db: f64,
    pub rx_gain_db: f64,
    pub noise_dbm: f64,
    /// Per-array power per subcarrier.
    pub power_dbm: f64,
    pub delta: f64,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            square_diagonal_m: 500.0,
            min_bs_distance_m: 35.0,
            shadowing_std_db: 8.0,
            penetration_loss_db: 20.0,
            path_loss_intercept_db: 128.1,
            path_loss_slope_db: 37.6,
            tx_gain_max_db: 14.0,
            tx_gain_curvature_db: 8.0,
            rx_gain_db: 0.0,
            noise_dbm: -127.0,
            power_dbm: 18.2,
            delta: 1.0,
        }
    }
}

impl DropConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("square_diagonal_m", self.square_diagonal_m),
            ("min_bs_distance_m", self.min_bs_distance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.min_bs_distance_m >= self.square_diagonal_m {
            return Err(ScenarioError::InvalidConfig(
                "min_bs_distance_m must be below the square diagonal".into(),
            ));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(ScenarioError::InvalidConfig(
                "negative shadowing std".into(),
            ));
        }
        let finite = [
            self.penetration_loss_db,
            self.path_loss_intercept_db,
            self.path_loss_slope_db,
            self.tx_gain_max_db,
            self.tx_gain_curvature_db,
            self.rx_gain_db,
            self.noise_dbm,
            self.power_dbm,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(ScenarioError::InvalidConfig("non-finite parameter".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(ScenarioError::InvalidDelta);
        }
        Ok(())
    }

    /// Path loss in dB at distance `d_km`.
    pub fn path_loss_db(&self, d_km: f64) -> f64 {
        self.path_loss_intercept_db + self.path_loss_slope_db * d_km.log10()
    }

    /// Transmit antenna gain in dB at `theta` radians off boresight, clamped to `|theta| <= pi/4`.
    pub fn tx_gain_db(&self, theta: f64) -> f64 {
        let th = theta.clamp(-FRAC_PI_4, FRAC_PI_4);
        self.tx_gain_max_db - self.tx_gain_curvature_db * th * th
    }
}

/// Mixes a base seed with a drop index (SplitMix64 finalizer).
pub fn derive_drop_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Random two-cell drop: base stations in opposite corners of a square, each
/// cell's users uniform in the half nearest its base station.
pub fn drop_users<T: Real>(
    config: &DropConfig,
    n_cells: usize,
    users_per_cell: usize,
    n_tx: usize,
    seed: u64,
) -> Result<Scenario<T>, ScenarioError> {
    config.validate()?;
    if n_cells != 2 {
        return Err(ScenarioError::InvalidConfig(format!(
            "the corner layout has exactly 2 cells, got {n_cells}"
        )));
    }
    if users_per_cell == 0 || n_tx == 0 {
        return Err(ScenarioError::Dimension("need K >= 1 and N_t >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.square_diagonal_m / std::f64::consts::SQRT_2;
    let bs = [(0.0, 0.0), (side, side)];
    let boresight = [(1.0, 1.0), (-1.0, -1.0)];

    let mut users = Vec::with_capacity(n_cells);
    for cell in 0..n_cells {
        let mut cell_users = Vec::with_capacity(users_per_cell);
        for _ in 0..users_per_cell {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let (mut x, mut y): (f64, f64) =
                    (rng.random::<f64>() * side, rng.random::<f64>() * side);
                // Fold the square onto the triangle nearest the origin corner.
                if x + y > side {
                    x = side - x;
                    y = side - y;
                }
                let p = if cell == 0 {
                    (x, y)
                } else {
                    (side - x, side - y)
                };
                let d = ((p.0 - bs[cell].0).powi(2) + (p.1 - bs[cell].1).powi(2)).sqrt();
                if d >= config.min_bs_distance_m {
                    placed = Some(p);
                    break;
                }
            }
            cell_users.push(placed.ok_or(ScenarioError::PlacementFailed(MAX_PLACEMENT_ATTEMPTS))?);
        }
        users.push(cell_users);
    }

    let shadow = Normal::new(0.0, config.shadowing_std_db)
        .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let n_links = n_cells * n_cells * users_per_cell;
    let mut link_gain = Vec::with_capacity(n_links);
    let mut link_angle = Vec::with_capacity(n_links);
    for m in 0..n_cells {
        for cell_users in &users {
            for &p in cell_users {
                let dx = p.0 - bs[m].0;
                let dy = p.1 - bs[m].1;
                let d_km = (dx * dx + dy * dy).sqrt() / 1000.0;
                let (bx, by) = boresight[m];
                let theta = (bx * dy - by * dx).atan2(bx * dx + by * dy);
                let s: f64 = shadow.sample(&mut rng);
                let gain_db = config.tx_gain_db(theta) + config.rx_gain_db
                    - config.path_loss_db(d_km)
                    - config.penetration_loss_db
                    - s;
                link_gain.push(10f64.powf(gain_db / 10.0));
                link_angle.push(theta);
            }
        }
    }

    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut channels = Vec::with_capacity(n_links * n_tx);
    for &g in &link_gain {
        let amp = g.sqrt();
        for _ in 0..n_tx {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            channels.push(Complex::new(
                cast::<T>(amp * re * half),
                cast::<T>(amp * im * half),
            ));
        }
    }

    let scenario = Scenario {
        n_cells,
        users_per_cell,
        n_tx,
        channels,
        noise_power: cast(dbm_to_mw(config.noise_dbm)),
        power_constraints: Vec::new(),
        delta: cast(config.delta),
        geometry: Some(Arc::new(DropGeometry {
            bs_positions: bs.to_vec(),
            user_positions: users,
            link_gain,
            link_angle,
            seed,
        })),
    };
    scenario.with_power_constraints(per_array_constraints(config.power_dbm, n_cells, n_tx))
}
