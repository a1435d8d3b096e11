//! Named scenarios, closed-form checks, sweeps and artifact writers built on
//! `dsgd-core`.

pub mod assemble;
pub mod builtin;
pub mod checks;
pub mod config;
pub mod error;
pub mod runner;
pub mod svg;
pub mod sweep;
pub mod validate;

pub use assemble::Assembled;
pub use checks::{
    cesaro_slope, distance_slope, example1_check, example2_check, gain_curve, ic_gap, manipulation_equivalence,
    payment_decay, Example1Report, Example2Report, PaymentDecayReport, SlopeReport,
};
pub use config::{PaymentSpec, PolicyKind, ScenarioConfig};
pub use error::{ExperimentError, Result};
pub use runner::{config_from_manifest, run_scenario, write_run, RunArtifacts};
pub use sweep::{threeway_comparison, utility_sweep, write_sweep, write_threeway, SweepTable, ThreewayReport};
pub use validate::{validate, Violation};
