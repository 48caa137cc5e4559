//! Coordinated multicell downlink beamforming under transceiver impairments.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod baselines;
pub mod beamforming;
pub mod conic;
pub mod impairments;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod scenario;

pub use baselines::{
    distortion_ignoring, maxmin_optimal, tdma_rate, StrategyLabel, StrategyResult,
};
pub use beamforming::{
    check_solution, fpo_upper_bound, power_saturation_probe, solve_fpo, solve_min_usage, solve_qos,
    structure_fit, BeamformingError, BeamformingSolution, FpoResult, PerformanceMeasure,
    RateMeasure, SolverOptions,
};
pub use impairments::{ImpairmentModel, Kappa2};
pub use linalg::CMatrix;
pub use metrics::{evaluate, finite_snr_mux_gain, sinr, EvaluationReport};
pub use scalar::Real;
pub use scenario::{drop_users, make_manual_scenario, DropConfig, PowerConstraint, Scenario};

pub type Scenario64 = scenario::Scenario<f64>;
pub type ImpairmentModel64 = impairments::ImpairmentModel<f64>;
pub type CMatrix64 = linalg::CMatrix<f64>;
pub type BeamformingSolution64 = beamforming::BeamformingSolution<f64>;
pub type FpoResult64 = beamforming::FpoResult<f64>;
pub type SolverOptions64 = beamforming::SolverOptions<f64>;
pub type StrategyResult64 = baselines::StrategyResult<f64>;
pub type ConicProgram64 = conic::ConicProgram<f64>;
