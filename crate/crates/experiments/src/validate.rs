//! Constraint checks over a scenario, reported in a fixed order.

use std::fmt;

use dsgd_core::{Graph, PaymentCoefficientSchedule, ScheduleParams};
use serde::Serialize;

use crate::assemble::{build_coupling, build_graph, build_problem};
use crate::config::{
    DistanceSpec, PaymentSpec, PolicyKind, ProblemKindSpec, RewardSpec, ScenarioConfig, TopologyKind,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.constraint, self.message)
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn push(&mut self, constraint: &'static str, message: impl Into<String>) {
        self.0.push(Violation {
            constraint,
            message: message.into(),
        });
    }
}

/// Every violated constraint, empty when the scenario is runnable.
pub fn validate(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Report(Vec::new());
    if cfg.n_seeds == 0 {
        out.push("run.seeds", "n_seeds must be at least 1");
    }
    if cfg.batch == 0 {
        out.push("problem.batch", "batch size must be at least 1");
    }
    let graph = check_topology(cfg, &mut out);
    let rho = graph.as_ref().and_then(|g| check_coupling(cfg, g, &mut out));
    let smoothness = check_problem(cfg, &mut out);
    check_schedule(cfg, &mut out);
    check_payments(cfg, graph.as_ref(), rho, smoothness, &mut out);
    check_reward(cfg, &mut out);
    check_policies(cfg, &mut out);
    check_distance(cfg, &mut out);
    if !(cfg.init.std >= 0.0 && cfg.init.std.is_finite()) {
        out.push("init.std", format!("initial spread {} must be finite and >= 0", cfg.init.std));
    }
    out.0
}

fn check_topology(cfg: &ScenarioConfig, out: &mut Report) -> Option<Graph> {
    let t = &cfg.topology;
    match (t.kind, &t.edges) {
        (TopologyKind::Edges, None) => {
            out.push("topology.edges", "kind = \"edges\" needs an edge list");
            return None;
        }
        (TopologyKind::Edges, Some(_)) | (_, None) => {}
        (_, Some(_)) => out.push("topology.edges", "edge list is only read for kind = \"edges\""),
    }
    if t.kind == TopologyKind::Ring && t.n < 3 {
        out.push("topology.size", format!("a ring needs at least 3 agents, got {}", t.n));
        return None;
    }
    if t.n == 0 {
        out.push("topology.size", "at least one agent is required");
        return None;
    }
    match build_graph(t) {
        Ok(g) if !g.is_connected() => {
            out.push("topology.connected", "communication graph is disconnected");
            None
        }
        Ok(g) => Some(g),
        Err(e) => {
            out.push("topology.edges", e.to_string());
            None
        }
    }
}

fn check_coupling(cfg: &ScenarioConfig, g: &Graph, out: &mut Report) -> Option<f64> {
    if let Some(w) = cfg.topology.weight {
        if !(w > 0.0) || !w.is_finite() {
            out.push("coupling.weight_positive", format!("off-diagonal weight {w} must be positive"));
            return None;
        }
        let diag = 1.0 - g.max_degree() as f64 * w;
        if diag <= 0.0 {
            out.push(
                "coupling.diagonal_positive",
                format!("diagonal weight nonpositive: 1 - {} * {w} = {diag}", g.max_degree()),
            );
            return None;
        }
    }
    match build_coupling(&cfg.topology) {
        Ok(c) => {
            if !c.weights().is_symmetric() {
                out.push("coupling.symmetric", "mixing matrix is not symmetric");
            }
            Some(c.rho())
        }
        Err(e) => {
            out.push("coupling.spectral_gap", e.to_string());
            None
        }
    }
}

fn check_problem(cfg: &ScenarioConfig, out: &mut Report) -> Option<f64> {
    let p = &cfg.problem;
    let before = out.0.len();
    if p.dim == 0 {
        out.push("problem.dim", "dimension must be at least 1");
    }
    let [lo, hi] = p.spectrum;
    let uses_spectrum = matches!(p.kind, ProblemKindSpec::LeastSquares | ProblemKindSpec::Quadratic);
    if uses_spectrum && !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        out.push("problem.spectrum", format!("spectrum [{lo}, {hi}] must satisfy 0 < lo <= hi"));
    }
    if !(p.noise_var >= 0.0 && p.noise_var.is_finite()) {
        out.push("problem.noise_var", format!("noise variance {} must be finite and >= 0", p.noise_var));
    }
    if !(p.scale >= 0.0 && p.scale.is_finite()) || !p.offset.is_finite() {
        out.push("problem.scale", "offset and scale must be finite, scale >= 0");
    }
    if let Some(points) = &p.points {
        if points.len() != cfg.topology.n || points.iter().any(|x| x.len() != p.dim) {
            out.push(
                "problem.points",
                format!("expected {} points of dimension {}", cfg.topology.n, p.dim),
            );
        }
    }
    if out.0.len() > before || cfg.topology.n == 0 {
        return None;
    }
    match build_problem(p, cfg.topology.n, cfg.batch.max(1)) {
        Ok(inst) => Some(inst.smoothness()),
        Err(e) => {
            out.push("problem.instance", e.to_string());
            None
        }
    }
}

fn check_schedule(cfg: &ScenarioConfig, out: &mut Report) {
    let s = &cfg.schedule;
    if !(s.lambda0 > 0.0) || !s.lambda0.is_finite() {
        out.push("schedule.lambda0", format!("lambda0 = {} must be positive", s.lambda0));
    }
    if !(s.v > 0.5 && s.v <= 1.0) {
        out.push(
            "schedule.stepsize_decay",
            format!("v = {} must lie in (1/2, 1] for summable squared steps", s.v),
        );
    }
    if !(s.r > 0.0) || !s.r.is_finite() {
        out.push("schedule.r", format!("r = {} must be positive", s.r));
    }
    if !(s.delta > 0.0) || !s.delta.is_finite() {
        out.push("schedule.delta", format!("delta = {} must be positive", s.delta));
    }
    if matches!(cfg.payments, PaymentSpec::Theoretical { .. }) {
        if !(s.v > 0.5 && s.v < 2.0 / 3.0) {
            out.push("schedule.payment_v", format!("v ∉ (1/2, 2/3): v = {}", s.v));
        }
        if !(s.r > 1.0 - s.v && s.r < s.v) {
            out.push("schedule.payment_r", format!("r ∉ (1 - v, v): r = {}, v = {}", s.r, s.v));
        }
    }
}

fn check_payments(
    cfg: &ScenarioConfig,
    graph: Option<&Graph>,
    rho: Option<f64>,
    smoothness: Option<f64>,
    out: &mut Report,
) {
    match cfg.payments {
        PaymentSpec::Off => {}
        PaymentSpec::Constant { c } => {
            if !(c >= 0.0 && c.is_finite()) {
                out.push("payments.coefficient", format!("C = {c} must be finite and >= 0"));
            }
        }
        PaymentSpec::Preset { c0 } => {
            if !(c0 >= 0.0 && c0.is_finite()) {
                out.push("payments.coefficient", format!("c0 = {c0} must be finite and >= 0"));
            }
        }
        PaymentSpec::Theoretical {
            reward_lipschitz,
            per_agent_degree,
        } => {
            if let Some(l) = reward_lipschitz {
                if !(l >= 0.0 && l.is_finite()) {
                    out.push("reward.lipschitz", format!("reward Lipschitz constant {l} must be finite and >= 0"));
                }
            }
            let s = &cfg.schedule;
            let (Some(g), Some(rho), Some(h)) = (graph, rho, smoothness) else {
                return;
            };
            let Ok(params) = ScheduleParams::new(s.lambda0, s.v, s.r, s.delta, cfg.horizon) else {
                return;
            };
            let sched = PaymentCoefficientSchedule::Theoretical {
                reward_lipschitz: reward_lipschitz.unwrap_or(1.0),
                smoothness: h,
                rho,
                min_degree: g.min_degree(),
                params,
                per_agent_degree,
            };
            if params.payment_window_violations().is_empty() {
                for v in sched.violations() {
                    out.push("payments.theoretical", v);
                }
            }
        }
    }
}

fn check_reward(cfg: &ScenarioConfig, out: &mut Report) {
    if cfg.reward == RewardSpec::SigmoidLike {
        let positive_costs = cfg.problem.kind == ProblemKindSpec::LeastSquares && cfg.problem.noise_var > 0.0;
        if !positive_costs {
            out.push(
                "reward.domain",
                "sigmoid-like reward needs f > 0; only least squares with label noise guarantees it",
            );
        }
    }
}

fn check_policies(cfg: &ScenarioConfig, out: &mut Report) {
    let n = cfg.topology.n;
    let mut seen = vec![false; n];
    for p in &cfg.policies {
        if p.agents.is_empty() {
            out.push("policies.agents", "policy block lists no agents");
        }
        for &a in &p.agents {
            if a >= n {
                out.push("policies.agent_range", format!("agent {a} out of range for {n} agents"));
            } else if seen[a] {
                out.push("policies.duplicate_agent", format!("agent {a} has more than one policy"));
            } else {
                seen[a] = true;
            }
        }
        let check_pair = |a: f64, b: f64, out: &mut Report| {
            if !(a >= 1.0 && a.is_finite()) || !b.is_finite() {
                out.push("policies.action", format!("action (a = {a}, b = {b}) needs a >= 1 and finite b"));
            }
        };
        match &p.policy {
            PolicyKind::Truthful => {}
            PolicyKind::Fixed { a, b, .. } => check_pair(*a, *b, out),
            PolicyKind::Schedule { actions, .. } => {
                if actions.is_empty() {
                    out.push("policies.grid", "action schedule is empty");
                }
                actions.iter().for_each(|&[a, b]| check_pair(a, b, out));
            }
            PolicyKind::BestResponse { a_grid, b_grid, .. } => {
                if a_grid.is_empty() || b_grid.is_empty() {
                    out.push("policies.grid", "best-response grids must be nonempty");
                }
                for &a in a_grid {
                    check_pair(a, 0.0, out);
                }
                for &b in b_grid {
                    check_pair(1.0, b, out);
                }
            }
        }
    }
}

fn check_distance(cfg: &ScenarioConfig, out: &mut Report) {
    if cfg.distance != DistanceSpec::Deviated {
        return;
    }
    let devs = cfg.deviators();
    let fixed = devs.len() == 1 && matches!(cfg.policy_of(devs[0]), PolicyKind::Fixed { .. });
    let closed_form = matches!(
        cfg.problem.kind,
        ProblemKindSpec::LeastSquares | ProblemKindSpec::MeanEstimation
    );
    if !fixed || !closed_form {
        out.push(
            "distance.deviated",
            "deviated target needs one fixed-action deviator on least squares or mean estimation",
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn names(v: &[Violation]) -> Vec<&'static str> {
        v.iter().map(|x| x.constraint).collect()
    }

    #[test]
    fn builtins_are_valid() {
        for name in builtin::names() {
            let cfg = builtin::load(name).unwrap();
            assert_eq!(validate(&cfg), vec![], "{name}");
        }
    }

    #[test]
    fn default_schedule_is_valid_under_theoretical_payments() {
        let mut cfg = builtin::load("example1").unwrap();
        cfg.payments = PaymentSpec::Theoretical {
            per_agent_degree: false,
            reward_lipschitz: None,
        };
        assert!(validate(&cfg).is_empty());
    }

    #[test]
    fn payment_window_enforced_for_theoretical_mode() {
        let mut cfg = builtin::load("example1").unwrap();
        cfg.schedule.v = 0.7;
        assert!(validate(&cfg).is_empty());
        cfg.payments = PaymentSpec::Theoretical {
            per_agent_degree: false,
            reward_lipschitz: None,
        };
        let v = validate(&cfg);
        assert_eq!(names(&v), vec!["schedule.payment_v"]);
        assert!(v[0].message.contains("v ∉ (1/2, 2/3)"));
    }

    #[test]
    fn heavy_ring_weight_rejected() {
        let mut cfg = builtin::load("example1").unwrap();
        cfg.topology.weight = Some(0.5);
        let v = validate(&cfg);
        assert_eq!(names(&v), vec!["coupling.diagonal_positive"]);
        assert!(v[0].message.contains("diagonal weight nonpositive"));
    }

    #[test]
    fn policy_and_topology_errors_are_ordered() {
        let mut cfg = builtin::load("example1").unwrap();
        cfg.topology.kind = TopologyKind::Edges;
        cfg.topology.edges = Some(vec![[0, 1], [2, 3]]);
        cfg.topology.weight = None;
        cfg.policies[0].agents = vec![9];
        cfg.reward = RewardSpec::SigmoidLike;
        cfg.problem.noise_var = 0.0;
        let v = validate(&cfg);
        assert_eq!(v, validate(&cfg));
        assert_eq!(
            names(&v),
            vec!["topology.connected", "reward.domain", "policies.agent_range"]
        );
    }
}
