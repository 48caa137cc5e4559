//! Transmitter and receiver distortion models.
//!
//! A distortion function maps a signal magnitude in sqrt(mW) to the magnitude
//! of the additive Gaussian distortion it causes. Only variances are ever
//! needed: rates follow analytically from the SINR, so nothing is sampled.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{inner, CMatrix};
use crate::scalar::{cast, Real};
use crate::scenario::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpairmentError {
    #[error("signal magnitude must be non-negative, got {0}")]
    NegativeMagnitude(f64),
    #[error("EVM undefined at zero transmit magnitude on antenna {0}")]
    ZeroMagnitude(usize),
    #[error("invalid impairment parameter: {0}")]
    InvalidParameter(String),
    #[error("distortion function violates its contract: {0}")]
    Contract(String),
}

/// Monotone increasing convex scalar function with derivative.
pub trait DistortionFn<T: Real>: Send + Sync + fmt::Debug {
    fn value(&self, x: T) -> T;
    fn derivative(&self, x: T) -> T;
    /// `Some(c)` when the function is exactly `c * x`.
    fn linear_slope(&self) -> Option<T> {
        None
    }
}

/// `kappa_2`, where infinity is an exact value rather than a large float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kappa2<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Kappa2<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Kappa2::Infinite)
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Kappa2::Finite(v) => v.to_f64().unwrap_or(f64::NAN),
            Kappa2::Infinite => f64::INFINITY,
        }
    }
}

impl<T: Real> fmt::Display for Kappa2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa2::Finite(v) => write!(f, "{v}"),
            Kappa2::Infinite => f.write_str("inf"),
        }
    }
}

impl<T: Real> FromStr for Kappa2<T> {
    type Err = ImpairmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Kappa2::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| ImpairmentError::InvalidParameter(format!("kappa2 '{s}'")))?;
        if v.is_infinite() && v > 0.0 {
            Ok(Kappa2::Infinite)
        } else if v > 0.0 {
            Ok(Kappa2::Finite(cast(v)))
        } else {
            Err(ImpairmentError::InvalidParameter(format!(
                "kappa2 must be > 0, got {v}"
            )))
        }
    }
}

/// Transmitter distortion `(kappa1/100) x (1 + (x/kappa2)^4)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialEta<T> {
    pub kappa1: T,
    pub kappa2: Kappa2<T>,
}

impl<T: Real> DistortionFn<T> for PolynomialEta<T> {
    fn value(&self, x: T) -> T {
        let a = self.kappa1 / cast(100.0);
        match self.kappa2 {
            Kappa2::Infinite => a * x,
            Kappa2::Finite(k2) => {
                let r = x / k2;
                a * x * (T::one() + r * r * r * r)
            }
        }
    }

    fn derivative(&self, x: T) -> T {
        let a = self.kappa1 / cast(100.0);
        match self.kappa2 {
            Kappa2::Infinite => a,
            Kappa2::Finite(k2) => {
                let r = x / k2;
                a * (T::one() + cast::<T>(5.0) * r * r * r * r)
            }
        }
    }

    fn linear_slope(&self) -> Option<T> {
        self.kappa2.is_infinite().then(|| self.kappa1 / cast(100.0))
    }
}

/// `c * x`; with `c = kappa3 / 100` this is the constant-EVM receiver model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDistortion<T> {
    pub slope: T,
}

impl<T: Real> LinearDistortion<T> {
    pub fn from_evm_percent(kappa: T) -> Self {
        Self {
            slope: kappa / cast(100.0),
        }
    }
}

impl<T: Real> DistortionFn<T> for LinearDistortion<T> {
    fn value(&self, x: T) -> T {
        self.slope * x
    }

    fn derivative(&self, _x: T) -> T {
        self.slope
    }

    fn linear_slope(&self) -> Option<T> {
        Some(self.slope)
    }
}

/// `phi(x) = inner(in_scale * x) / out_scale`: a distortion function expressed
/// in rescaled units.
#[derive(Clone, Debug)]
pub struct ScaledDistortion<T: Real> {
    pub inner: Arc<dyn DistortionFn<T>>,
    pub in_scale: T,
    pub out_scale: T,
}

impl<T: Real> DistortionFn<T> for ScaledDistortion<T> {
    fn value(&self, x: T) -> T {
        self.inner.value(self.in_scale * x) / self.out_scale
    }

    fn derivative(&self, x: T) -> T {
        self.inner.derivative(self.in_scale * x) * self.in_scale / self.out_scale
    }

    fn linear_slope(&self) -> Option<T> {
        self.inner
            .linear_slope()
            .map(|c| c * self.in_scale / self.out_scale)
    }
}

/// `(kappa1, kappa2, kappa3)` of the built-in polynomial/linear models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaParams<T> {
    pub kappa1: T,
    pub kappa2: Kappa2<T>,
    pub kappa3: T,
}

/// Pair of transmitter (`eta`) and receiver (`nu`) distortion functions.
#[derive(Clone, Debug)]
pub struct ImpairmentModel<T: Real> {
    pub eta: Arc<dyn DistortionFn<T>>,
    pub nu: Arc<dyn DistortionFn<T>>,
    pub params: Option<KappaParams<T>>,
}

impl<T: Real> ImpairmentModel<T> {
    /// Ideal transceivers: `eta = nu = 0`.
    pub fn ideal() -> Self {
        Self::from_kappas(T::zero(), Kappa2::Infinite, T::zero()).expect("valid ideal model")
    }

    /// Built-in models: polynomial `eta(kappa1, kappa2)`, linear `nu(kappa3)`.
    ///
    /// Kappa values are EVM percentages; the usual range is `[0, 15]` but any
    /// finite non-negative value is accepted.
    pub fn from_kappas(kappa1: T, kappa2: Kappa2<T>, kappa3: T) -> Result<Self, ImpairmentError> {
        for (name, v) in [("kappa1", kappa1), ("kappa3", kappa3)] {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(ImpairmentError::InvalidParameter(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if let Kappa2::Finite(k2) = kappa2 {
            if !(k2 > T::zero() && k2.is_finite()) {
                return Err(ImpairmentError::InvalidParameter(
                    "kappa2 must be > 0".into(),
                ));
            }
        }
        Ok(Self {
            eta: Arc::new(PolynomialEta { kappa1, kappa2 }),
            nu: Arc::new(LinearDistortion::from_evm_percent(kappa3)),
            params: Some(KappaParams {
                kappa1,
                kappa2,
                kappa3,
            }),
        })
    }

    /// User-supplied distortion functions. Call [`ImpairmentModel::check_contract`]
    /// to spot-check them.
    pub fn custom(eta: Arc<dyn DistortionFn<T>>, nu: Arc<dyn DistortionFn<T>>) -> Self {
        Self {
            eta,
            nu,
            params: None,
        }
    }

    pub fn eta_is_linear(&self) -> bool {
        self.eta.linear_slope().is_some()
    }

    pub fn nu_is_linear(&self) -> bool {
        self.nu.linear_slope().is_some()
    }

    /// True when both functions are identically zero.
    pub fn is_ideal(&self) -> bool {
        self.eta.linear_slope() == Some(T::zero()) && self.nu.linear_slope() == Some(T::zero())
    }

    /// Samples `eta` and `nu` on `[0, x_max]` for zero at the origin,
    /// monotonicity, midpoint convexity and derivative consistency.
    pub fn check_contract(&self, x_max: T) -> Result<(), ImpairmentError> {
        check_distortion_fn("eta", self.eta.as_ref(), x_max)?;
        check_distortion_fn("nu", self.nu.as_ref(), x_max)
    }
}

/// Sampling-based contract check for one distortion function.
pub fn check_distortion_fn<T: Real>(
    name: &str,
    f: &dyn DistortionFn<T>,
    x_max: T,
) -> Result<(), ImpairmentError> {
    let bad = |what: String| Err(ImpairmentError::Contract(format!("{name}: {what}")));
    if f.value(T::zero()) != T::zero() {
        return bad("value at 0 is not 0".into());
    }
    let n = 64usize;
    let grid: Vec<T> = (0..=n)
        .map(|k| x_max * cast::<T>(k as f64 / n as f64))
        .collect();
    let vals: Vec<T> = grid.iter().map(|&x| f.value(x)).collect();
    let slack = cast::<T>(1e-12);
    for k in 1..grid.len() {
        if vals[k] + slack * (T::one() + vals[k].abs()) < vals[k - 1] {
            return bad(format!("decreasing near x = {}", grid[k]));
        }
    }
    for a in (0..grid.len()).step_by(4) {
        for b in (a..grid.len()).step_by(4) {
            let mid = f.value((grid[a] + grid[b]) / cast(2.0));
            let chord = (vals[a] + vals[b]) / cast(2.0);
            if mid > chord + slack * (T::one() + chord.abs()) {
                return bad(format!("not convex between {} and {}", grid[a], grid[b]));
            }
        }
    }
    for &x in grid.iter().skip(1) {
        let h = cast::<T>(1e-6) * (T::one() + x);
        let fd = (f.value(x + h) - f.value(x - h.min(x))) / (h + h.min(x));
        let d = f.derivative(x);
        if (d - fd).abs() > cast::<T>(1e-6) * (T::one() + d.abs()) {
            return bad(format!(
                "derivative {d} disagrees with finite difference {fd} at {x}"
            ));
        }
    }
    Ok(())
}

fn check_magnitude<T: Real>(x: T) -> Result<(), ImpairmentError> {
    if x < T::zero() {
        Err(ImpairmentError::NegativeMagnitude(
            x.to_f64().unwrap_or(f64::NAN),
        ))
    } else {
        Ok(())
    }
}

/// `(kappa1/100) x (1 + (x/kappa2)^4)`; the quartic term vanishes for `kappa2 = inf`.
pub fn eta_poly<T: Real>(x: T, kappa1: T, kappa2: Kappa2<T>) -> Result<T, ImpairmentError> {
    check_magnitude(x)?;
    Ok(PolynomialEta { kappa1, kappa2 }.value(x))
}

/// `(kappa3/100) x`.
pub fn nu_linear<T: Real>(x: T, kappa3: T) -> Result<T, ImpairmentError> {
    check_magnitude(x)?;
    Ok(LinearDistortion::from_evm_percent(kappa3).value(x))
}

/// Diagonal of the transmit-distortion covariance: `c_n^2 = eta(||row_n W||)^2`.
pub fn tx_distortion_cov<T: Real>(w: &CMatrix<T>, model: &ImpairmentModel<T>) -> Vec<T> {
    (0..w.rows())
        .map(|n| {
            let c = model.eta.value(w.row_norm(n));
            c * c
        })
        .collect()
}

/// EVM (power ratio) of antenna `n`: `(eta(x) / x)^2` with `x = ||row_n W||`.
pub fn evm_tx<T: Real>(
    w: &CMatrix<T>,
    n: usize,
    model: &ImpairmentModel<T>,
) -> Result<T, ImpairmentError> {
    let x = w.row_norm(n);
    if x == T::zero() {
        return Err(ImpairmentError::ZeroMagnitude(n));
    }
    let r = model.eta.value(x) / x;
    Ok(r * r)
}

/// `100 sqrt(EVM)`.
pub fn evm_percent<T: Real>(evm: T) -> T {
    cast::<T>(100.0) * evm.sqrt()
}

/// Aggregate received signal magnitude `sqrt(sum_m ||h_{m,i,j}^H W_m||^2)`.
pub fn received_magnitude<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    i: usize,
    j: usize,
) -> T {
    let mut acc = T::zero();
    for (m, w) in ws.iter().enumerate() {
        let h = scenario.channel(m, i, j);
        for k in 0..w.cols() {
            acc += inner(h, &w.column(k)).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Receiver distortion-plus-noise variance `sigma^2 + nu(received magnitude)^2`.
pub fn rx_distortion_var<T: Real>(
    scenario: &Scenario<T>,
    ws: &[CMatrix<T>],
    i: usize,
    j: usize,
    model: &ImpairmentModel<T>,
) -> T {
    let v = model.nu.value(received_magnitude(scenario, ws, i, j));
    scenario.noise_power() + v * v
}

/// Distortion variances of a complete transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionState<T> {
    /// `tx_cov_diag[m][n] = c_{m,n}^2`, mW.
    pub tx_cov_diag: Vec<Vec<T>>,
    /// `rx_var[i][j] = sigma_{i,j}^2`, mW.
    pub rx_var: Vec<Vec<T>>,
}

impl<T: Real> DistortionState<T> {
    pub fn compute(scenario: &Scenario<T>, ws: &[CMatrix<T>], model: &ImpairmentModel<T>) -> Self {
        Self {
            tx_cov_diag: ws.iter().map(|w| tx_distortion_cov(w, model)).collect(),
            rx_var: (0..scenario.n_cells())
                .map(|i| {
                    (0..scenario.users_per_cell())
                        .map(|j| rx_distortion_var(scenario, ws, i, j, model))
                        .collect()
                })
                .collect(),
        }
    }
}
