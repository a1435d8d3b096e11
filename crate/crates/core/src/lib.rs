//! Decentralized SGD with strategic gradient manipulation and a
//! budget-balanced pairwise payment mechanism.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases cover the common case.

pub mod engine;
pub mod error;
pub mod linalg;
pub mod mechanism;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod scalar;
pub mod strategy;
pub mod topology;

pub use engine::{
    dsgd_round, manipulate_parameters_equivalent, max_trajectory_gap, run, run_parameter_manipulation,
    run_with, shift_windows, AgentState, EquivalentManipulation, GradientMode, Initialization,
    ParameterManipulationRun, ParameterTrajectory, RoundObserver, RoundRecord, RunOutput, ScheduleParams,
    Simulation, TrajectoryRecorder,
};
pub use error::{CoreError, Result};
pub use linalg::Matrix;
pub use mechanism::{
    cross_verify, pairwise_payment, second_difference, settle_round, LedgerObserver,
    PaymentCoefficientSchedule, PaymentLedger, RoundSettlement,
};
pub use metrics::{
    convergence_slope, cumulative_gain_curve, evaluate, ic_gap, net_utility, truthfulness_trace,
    DistanceTarget, Evaluation, GainEstimate, RewardFunction, RunMetrics, RunReport,
};
pub use problems::{DeviationCost, ProblemInstance, ProblemKind};
pub use scalar::Scalar;
pub use strategy::{apply_action, best_response_search, Action, BestResponse, BestResponseGrid, NoiseLaw, StrategyPolicy};
pub use topology::{build_from_graph, build_ring, CouplingMatrix, Graph, WeightRule};

pub type CouplingMatrixF64 = CouplingMatrix<f64>;
pub type ProblemInstanceF64 = ProblemInstance<f64>;
pub type ActionF64 = Action<f64>;
pub type StrategyPolicyF64 = StrategyPolicy<f64>;
pub type ScheduleParamsF64 = ScheduleParams<f64>;
pub type SimulationF64 = Simulation<f64>;
pub type PaymentScheduleF64 = PaymentCoefficientSchedule<f64>;
pub type PaymentLedgerF64 = PaymentLedger<f64>;
pub type RunMetricsF64 = RunMetrics<f64>;
pub type CouplingMatrixF32 = CouplingMatrix<f32>;
pub type ProblemInstanceF32 = ProblemInstance<f32>;
pub type SimulationF32 = Simulation<f32>;
