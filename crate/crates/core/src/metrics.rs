//! Evaluation of beamformers under the true impairment model.

use thiserror::Error;

use crate::beamforming::PerformanceMeasure;
use crate::impairments::{evm_percent, rx_distortion_var, tx_distortion_cov, ImpairmentModel};
use crate::linalg::{inner, CMatrix};
use crate::scalar::{cast, Real};
use crate::scenario::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("TDMA rate must be positive, got {0}")]
    ZeroTdmaRate(f64),
    #[error("need at least two distinct power levels for a slope")]
    DegenerateGrid,
}

/// Terms of the SINR of one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinrBreakdown<T> {
    /// `|h_{i,i,j}^H w_{i,j}|^2`
    pub signal: T,
    /// Same-cell interference `sum_{l != j} |h_{i,i,j}^H w_{i,l}|^2`.
    pub intra_cell: T,
    /// Other-cell interference `sum_{m != i} ||h_{m,i,j}^H W_m||^2`.
    pub inter_cell: T,
    /// `sum_m h^H C_m h`.
    pub tx_distortion: T,
    /// `sigma_{i,j}^2`, noise plus receiver distortion.
    pub rx_variance: T,
}

impl<T: Real> SinrBreakdown<T> {
    pub fn denominator(&self) -> T {
        self.intra_cell + self.inter_cell + self.tx_distortion + self.rx_variance
    }

    pub fn sinr(&self) -> T {
        self.signal / self.denominator()
    }
}

pub fn sinr_breakdown<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    model: &ImpairmentModel<T>,
    i: usize,
    j: usize,
) -> SinrBreakdown<T> {
    let mut out = SinrBreakdown {
        signal: T::zero(),
        intra_cell: T::zero(),
        inter_cell: T::zero(),
        tx_distortion: T::zero(),
        rx_variance: rx_distortion_var(scenario, ws, i, j, model),
    };
    for (m, w) in ws.iter().enumerate() {
        let h = scenario.channel(m, i, j);
        for k in 0..w.cols() {
            let p = inner(h, &w.column(k)).norm_sqr();
            if m != i {
                out.inter_cell += p;
            } else if k == j {
                out.signal = p;
            } else {
                out.intra_cell += p;
            }
        }
        let c = tx_distortion_cov(w, model);
        out.tx_distortion += h
            .iter()
            .zip(&c)
            .map(|(z, c2)| z.norm_sqr() * *c2)
            .sum::<T>();
    }
    out
}

/// SINR of user `j` in cell `i`.
pub fn sinr<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    model: &ImpairmentModel<T>,
    i: usize,
    j: usize,
) -> T {
    sinr_breakdown(scenario, ws, model, i, j).sinr()
}

/// `sinrs[i][j]` for every user.
pub fn all_sinrs<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    model: &ImpairmentModel<T>,
) -> Vec<Vec<T>> {
    (0..scenario.n_cells())
        .map(|i| {
            (0..scenario.users_per_cell())
                .map(|j| sinr(scenario, ws, model, i, j))
                .collect()
        })
        .collect()
}

/// `tr(W^H Q W) + delta tr(Q C)` for diagonal `C = diag(c_diag)`.
pub fn power_usage<T: Real>(w: &CMatrix<T>, c_diag: &[T], q: &CMatrix<T>, delta: T) -> T {
    let dist: T = c_diag
        .iter()
        .enumerate()
        .map(|(n, c2)| q.get(n, n).re * *c2)
        .sum();
    q.trace_form(w) + delta * dist
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport<T> {
    pub sinr: Vec<Vec<T>>,
    pub rate: Vec<Vec<T>>,
    pub min_rate: T,
    pub sum_rate: T,
    /// `power_usage[i][k]` for constraint `k` of cell `i`, mW.
    pub power_usage: Vec<Vec<T>>,
    /// `power_usage <= limit` for every constraint.
    pub power_feasible: bool,
    /// `evm_percent[m][n]`; `None` for silent antennas.
    pub evm_percent: Vec<Vec<Option<T>>>,
}

/// SINRs, rates, power usage and EVM of a transmission.
pub fn evaluate<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    model: &ImpairmentModel<T>,
    measure: &dyn PerformanceMeasure<T>,
) -> EvaluationReport<T> {
    let sinr = all_sinrs(scenario, ws, model);
    let rate: Vec<Vec<T>> = sinr
        .iter()
        .map(|row| row.iter().map(|&s| measure.g(s)).collect())
        .collect();
    let flat = rate.iter().flatten();
    let min_rate = flat.clone().fold(T::infinity(), |m, &r| m.min(r));
    let sum_rate = flat.copied().sum();
    let mut power_feasible = true;
    let mut usage = Vec::with_capacity(ws.len());
    let mut evm = Vec::with_capacity(ws.len());
    for (i, w) in ws.iter().enumerate() {
        let c = tx_distortion_cov(w, model);
        let row: Vec<T> = scenario
            .power_constraints(i)
            .iter()
            .map(|pc| {
                let u = power_usage(w, &c, &pc.q_matrix, scenario.delta());
                power_feasible &= u <= pc.limit * (T::one() + cast(1e-9));
                u
            })
            .collect();
        usage.push(row);
        evm.push(
            (0..w.rows())
                .map(|n| {
                    let x = w.row_norm(n);
                    (x > T::zero()).then(|| {
                        let r = model.eta.value(x) / x;
                        evm_percent(r * r)
                    })
                })
                .collect(),
        );
    }
    EvaluationReport {
        sinr,
        rate,
        min_rate,
        sum_rate,
        power_usage: usage,
        power_feasible,
        evm_percent: evm,
    }
}

/// Average coordinated sum rate over average TDMA rate.
pub fn finite_snr_mux_gain<T: Real>(
    coordinated_avg_sum_rate: T,
    tdma_avg_rate: T,
) -> Result<T, MetricsError> {
    if !(tdma_avg_rate > T::zero()) {
        return Err(MetricsError::ZeroTdmaRate(
            tdma_avg_rate.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(coordinated_avg_sum_rate / tdma_avg_rate)
}

/// Least-squares slope of `rate` against `log2(power)`, with power in dBm.
pub fn rate_slope_per_log2_power(power_dbm: &[f64], rate: &[f64]) -> Result<f64, MetricsError> {
    assert_eq!(power_dbm.len(), rate.len());
    let x: Vec<f64> = power_dbm
        .iter()
        .map(|p| p / 10.0 * std::f64::consts::LOG2_10)
        .collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = rate.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if x.len() < 2 || sxx <= 0.0 {
        return Err(MetricsError::DegenerateGrid);
    }
    let sxy: f64 = x.iter().zip(rate).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}
