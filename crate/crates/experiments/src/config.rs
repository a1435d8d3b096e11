//! Scenario files.
//!
//! A scenario is a TOML document. Every table except `topology`, `problem`
//! and `horizon` has defaults:
//!
//! ```toml
//! name = "example1"
//! seed = 42          # master seed; run k of a batch uses seed + k
//! n_seeds = 10
//! horizon = 10000    # T; rounds 0..=T are executed
//! gradient = "stochastic"   # or "exact"
//! batch = 1
//! reward = "linear"         # or "sigmoid_like"
//! distance = "global"       # or "deviated"
//!
//! [topology]
//! kind = "ring"      # ring | path | complete | star | edges
//! n = 5
//! weight = 0.3       # uniform off-diagonal weight; Metropolis when absent
//! # edges = [[0, 1], [1, 2]]
//!
//! [problem]
//! kind = "least_squares"   # least_squares | mean_estimation | quadratic | log_cosh
//! dim = 10
//! seed = 7
//! offset = 1.0
//! scale = 1.0
//! spectrum = [0.5, 1.5]
//! noise_var = 1.0
//!
//! [schedule]
//! lambda0 = 0.1
//! v = 0.55
//! r = 0.51
//! delta = 1e-4
//!
//! [payments]
//! mode = "preset"    # off | constant (c) | preset (c0) | theoretical
//! c0 = 1e-6
//!
//! [init]
//! kind = "gaussian"
//! std = 1.0
//!
//! [[policies]]
//! agents = [0]
//! kind = "fixed"     # truthful | fixed | schedule | best_response
//! a = 3.0
//! b = 0.0
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

fn default_seed() -> u64 {
    42
}
fn default_n_seeds() -> usize {
    10
}
fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_spectrum() -> [f64; 2] {
    [0.5, 1.5]
}
fn default_c0() -> f64 {
    1e-6
}
fn zero_grid() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub horizon: usize,
    #[serde(default)]
    pub gradient: GradientSpec,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub distance: DistanceSpec,
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub payments: PaymentSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSpec {
    #[default]
    Stochastic,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSpec {
    #[default]
    Linear,
    SigmoidLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpec {
    #[default]
    Global,
    Deviated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Path,
    Complete,
    Star,
    Edges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKindSpec {
    LeastSquares,
    MeanEstimation,
    Quadratic,
    LogCosh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKindSpec,
    pub dim: usize,
    /// Seed for instance data (targets, covariances), independent of run seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "unit")]
    pub scale: f64,
    /// Eigenvalue range of the feature covariance or of each Hessian.
    #[serde(default = "default_spectrum")]
    pub spectrum: [f64; 2],
    /// Label noise, sampling variance or gradient noise, by kind.
    #[serde(default = "unit")]
    pub noise_var: f64,
    /// Explicit per-agent targets, means or centres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub lambda0: f64,
    pub v: f64,
    pub r: f64,
    pub delta: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            lambda0: 0.1,
            v: 0.55,
            r: 0.51,
            delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaymentSpec {
    #[default]
    Off,
    Constant {
        c: f64,
    },
    Preset {
        #[serde(default = "default_c0")]
        c0: f64,
    },
    Theoretical {
        #[serde(default)]
        per_agent_degree: bool,
        /// Overrides the reward's own Lipschitz constant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward_lipschitz: Option<f64>,
    },
}

impl PaymentSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Off => "off".into(),
            Self::Constant { c } => format!("constant_{c}"),
            Self::Preset { c0 } => format!("preset_{c0}"),
            Self::Theoretical { .. } => "theoretical".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Gaussian,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub kind: InitKind,
    #[serde(default = "unit")]
    pub std: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: InitKind::Gaussian,
            std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Truthful,
    Fixed {
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        noise: NoiseSpec,
    },
    /// `(a, b)` per round; the last pair repeats.
    Schedule {
        actions: Vec<[f64; 2]>,
        #[serde(default)]
        noise: NoiseSpec,
    },
    BestResponse {
        a_grid: Vec<f64>,
        #[serde(default = "zero_grid")]
        b_grid: Vec<f64>,
        #[serde(default)]
        noise: NoiseSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub agents: Vec<usize>,
    #[serde(flatten)]
    pub policy: PolicyKind,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
    }

    /// Canonical single-line JSON; field order is fixed by the schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Seeds `seed, seed + 1, ...` for a batch of `n_seeds` runs.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    /// Agents with a non-truthful policy, ascending.
    pub fn deviators(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .policies
            .iter()
            .filter(|p| p.policy != PolicyKind::Truthful)
            .flat_map(|p| p.agents.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn policy_of(&self, agent: usize) -> &PolicyKind {
        self.policies
            .iter()
            .rev()
            .find(|p| p.agents.contains(&agent))
            .map(|p| &p.policy)
            .unwrap_or(&PolicyKind::Truthful)
    }

    /// Replaces every policy with `policy` for `agents`.
    pub fn with_policy(mut self, agents: Vec<usize>, policy: PolicyKind) -> Self {
        self.policies = vec![PolicySpec { agents, policy }];
        self
    }

    pub fn all_truthful(mut self) -> Self {
        self.policies.clear();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
horizon = 10
[topology]
kind = "ring"
n = 4
[problem]
kind = "mean_estimation"
dim = 2
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.n_seeds, 10);
        assert_eq!(c.schedule, ScheduleSpec::default());
        assert_eq!(c.payments, PaymentSpec::Off);
        assert!(c.deviators().is_empty());
        assert_eq!(c.seeds()[3], 45);
    }

    #[test]
    fn json_round_trip() {
        let mut c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        c.policies.push(PolicySpec {
            agents: vec![1, 2],
            policy: PolicyKind::BestResponse {
                a_grid: vec![1.0, 2.0],
                b_grid: vec![0.0],
                noise: NoiseSpec::Gaussian,
            },
        });
        c.payments = PaymentSpec::Theoretical {
            per_agent_degree: true,
            reward_lipschitz: None,
        };
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(c.deviators(), vec![1, 2]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MINIMAL}\n[schedule]\nlambda0 = 0.1\nv = 0.55\nr = 0.51\ndelta = 1e-4\ngamma = 2\n");
        assert!(ScenarioConfig::from_toml(&bad).is_err());
    }
}
