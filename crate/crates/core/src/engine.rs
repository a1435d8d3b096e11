//! Round-synchronous decentralized SGD with strategic gradient manipulation.
//!
//! Each round `t` every agent draws `g_i(theta_{i,t})`, maps it through its
//! current action to `m_{i,t}`, and updates
//!
//! ```text
//! theta_{i,t+1} = sum_j w_ij theta_{j,t} - lambda_t m_{i,t}
//! ```
//!
//! All `m` are computed from `theta_t` before any `theta_{t+1}` is written.
//! Observers see the complete window `(theta_{t-1}, theta_t, theta_{t+1})`
//! of every agent before windows shift.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::problems::{GradientSample, ProblemInstance};
use crate::rng::{self, Purpose, StreamRng};
use crate::scalar::Scalar;
use crate::strategy::{apply_action, Action, StrategyPolicy};
use crate::topology::CouplingMatrix;

/// Parameters norm above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Step size `lambda_t = lambda0 (t+1)^-v`, truthfulness envelope
/// `kappa_t = (t+1)^-r`, tolerance `delta` and horizon `T` (rounds `0..=T`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams<S> {
    pub lambda0: S,
    pub v: S,
    pub r: S,
    pub delta: S,
    pub horizon: usize,
}

impl<S: Scalar> ScheduleParams<S> {
    pub fn new(lambda0: S, v: S, r: S, delta: S, horizon: usize) -> Result<Self> {
        let p = Self {
            lambda0,
            v,
            r,
            delta,
            horizon,
        };
        if !(lambda0 > S::zero()) || !lambda0.is_finite() {
            return Err(CoreError::InvalidSchedule(format!("lambda0 = {lambda0} must be positive")));
        }
        if !(delta > S::zero()) || !delta.is_finite() {
            return Err(CoreError::InvalidSchedule(format!("delta = {delta} must be positive")));
        }
        if !v.is_finite() || !r.is_finite() {
            return Err(CoreError::InvalidSchedule("v and r must be finite".into()));
        }
        Ok(p)
    }

    /// Violations of the window `v in (1/2, 2/3)`, `r in (1 - v, v)` required
    /// by the theoretical payment coefficients. Empty when satisfied.
    pub fn payment_window_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let half = S::lit(0.5);
        let two_thirds = S::lit(2.0) / S::lit(3.0);
        if !(self.v > half && self.v < two_thirds) {
            out.push(format!("v = {} not in (1/2, 2/3)", self.v));
        }
        if !(self.r > S::one() - self.v && self.r < self.v) {
            out.push(format!("r = {} not in (1 - v, v) = ({}, {})", self.r, S::one() - self.v, self.v));
        }
        out
    }

    pub fn stepsize(&self, t: usize) -> S {
        stepsize(self, t)
    }

    pub fn kappa(&self, t: usize) -> S {
        S::from_count(t + 1).powf(-self.r)
    }
}

pub fn stepsize<S: Scalar>(p: &ScheduleParams<S>, t: usize) -> S {
    p.lambda0 * S::from_count(t + 1).powf(-p.v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// `g_i = grad f_i` exactly.
    Exact,
    #[default]
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initialization<S> {
    /// I.i.d. `N(0, std^2)` coordinates from each agent's init stream.
    Gaussian { std: S },
    Zeros,
    Explicit(Vec<Vec<S>>),
}

impl<S: Scalar> Default for Initialization<S> {
    fn default() -> Self {
        Self::Gaussian { std: S::one() }
    }
}

/// Per-agent three-term window plus private random streams.
#[derive(Debug, Clone)]
pub struct AgentState<S> {
    pub prev: Vec<S>,
    pub curr: Vec<S>,
    pub next: Vec<S>,
    grad_rng: StreamRng,
    action_rng: StreamRng,
}

impl<S: Scalar> AgentState<S> {
    /// `theta_{-1} = 0`, `theta_0 = init`.
    pub fn new(init: Vec<S>, master_seed: u64, agent: usize) -> Self {
        Self {
            prev: vec![S::zero(); init.len()],
            next: init.clone(),
            curr: init,
            grad_rng: rng::stream(master_seed, agent, Purpose::Gradient),
            action_rng: rng::stream(master_seed, agent, Purpose::ActionNoise),
        }
    }

    /// `(theta_{t-1}, theta_t, theta_{t+1})`
    pub fn window(&self) -> (&[S], &[S], &[S]) {
        (&self.prev, &self.curr, &self.next)
    }

    fn shift(&mut self) {
        std::mem::swap(&mut self.prev, &mut self.curr);
        std::mem::swap(&mut self.curr, &mut self.next);
        self.next.copy_from_slice(&self.curr);
    }
}

/// Everything produced by one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<S> {
    pub t: usize,
    pub stepsize: S,
    /// `theta_{i,t+1}` for every agent.
    pub theta_next: Vec<Vec<S>>,
    /// `g_{i,t}`
    pub gradients: Vec<Vec<S>>,
    /// `m_{i,t}`
    pub manipulated: Vec<Vec<S>>,
    pub actions: Vec<Action<S>>,
}

/// Consumer of the round stream (payment ledger, metrics, recorders).
pub trait RoundObserver<S> {
    /// Called after round `t` with every agent's window complete.
    fn on_round(&mut self, record: &RoundRecord<S>, states: &[AgentState<S>]) -> Result<()>;
}

/// Keeps every [`RoundRecord`].
#[derive(Debug, Default)]
pub struct TrajectoryRecorder<S> {
    pub records: Vec<RoundRecord<S>>,
}

impl<S: Scalar> RoundObserver<S> for TrajectoryRecorder<S> {
    fn on_round(&mut self, record: &RoundRecord<S>, _states: &[AgentState<S>]) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// A fully specified run: topology, problem, policies, schedule, and seed.
#[derive(Debug, Clone)]
pub struct Simulation<S> {
    pub coupling: Arc<CouplingMatrix<S>>,
    pub problem: Arc<ProblemInstance<S>>,
    pub policies: Vec<StrategyPolicy<S>>,
    pub schedule: ScheduleParams<S>,
    pub gradient_mode: GradientMode,
    pub init: Initialization<S>,
    pub seed: u64,
    /// Replaces agent `i`'s manipulated gradient at round `t` with
    /// `replay[i][t]` when present.
    replay: Vec<Option<Arc<Vec<Vec<S>>>>>,
}

impl<S: Scalar> Simulation<S> {
    pub fn new(
        coupling: Arc<CouplingMatrix<S>>,
        problem: Arc<ProblemInstance<S>>,
        schedule: ScheduleParams<S>,
    ) -> Result<Self> {
        let n = coupling.n_agents();
        if problem.n_agents() != n {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                found: problem.n_agents(),
            });
        }
        Ok(Self {
            coupling,
            problem,
            policies: vec![StrategyPolicy::Truthful; n],
            schedule,
            gradient_mode: GradientMode::default(),
            init: Initialization::default(),
            seed: 0,
            replay: vec![None; n],
        })
    }

    pub fn n_agents(&self) -> usize {
        self.coupling.n_agents()
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_gradient_mode(mut self, mode: GradientMode) -> Self {
        self.gradient_mode = mode;
        self
    }

    pub fn with_init(mut self, init: Initialization<S>) -> Self {
        self.init = init;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.schedule.horizon = horizon;
        self
    }

    pub fn with_policy(mut self, agent: usize, policy: StrategyPolicy<S>) -> Self {
        self.policies[agent] = policy;
        self
    }

    /// Initial `theta_{i,0}` for every agent.
    pub fn initial_parameters(&self) -> Result<Vec<Vec<S>>> {
        let n = self.n_agents();
        let dim = self.problem.dim();
        match &self.init {
            Initialization::Zeros => Ok(vec![vec![S::zero(); dim]; n]),
            Initialization::Gaussian { std } => Ok((0..n)
                .map(|i| {
                    let mut r = rng::stream(self.seed, i, Purpose::Init);
                    (0..dim).map(|_| *std * S::standard_normal(&mut r)).collect()
                })
                .collect()),
            Initialization::Explicit(v) => {
                if v.len() != n {
                    return Err(CoreError::DimensionMismatch {
                        expected: n,
                        found: v.len(),
                    });
                }
                for x in v {
                    if x.len() != dim {
                        return Err(CoreError::DimensionMismatch {
                            expected: dim,
                            found: x.len(),
                        });
                    }
                }
                Ok(v.clone())
            }
        }
    }

    pub fn initial_states(&self) -> Result<Vec<AgentState<S>>> {
        Ok(self
            .initial_parameters()?
            .into_iter()
            .enumerate()
            .map(|(i, x)| AgentState::new(x, self.seed, i))
            .collect())
    }

    fn validate(&self) -> Result<()> {
        for (i, p) in self.policies.iter().enumerate() {
            if matches!(p, StrategyPolicy::BestResponse(_)) {
                return Err(CoreError::UnresolvedPolicy { agent: i });
            }
        }
        Ok(())
    }

    fn draw_gradient(&self, agent: usize, theta: &[S], rng: &mut StreamRng) -> Result<GradientSample<S>> {
        match self.gradient_mode {
            GradientMode::Exact => Ok(GradientSample {
                value: self.problem.exact_gradient(agent, theta)?,
                is_stochastic: false,
            }),
            GradientMode::Stochastic => self.problem.stochastic_gradient(agent, theta, rng),
        }
    }
}

fn check_divergence<S: Scalar>(t: usize, agent: usize, x: &[S]) -> Result<()> {
    let norm = linalg::norm(x);
    if !norm.is_finite() || norm > S::lit(DIVERGENCE_LIMIT) {
        return Err(CoreError::Diverged {
            t,
            agent,
            norm: norm.to_f64_lossy(),
        });
    }
    Ok(())
}

/// `sum_j w_ij x_j` over `j` in `N_i + {i}`.
fn mix<'a, S: Scalar>(w: &CouplingMatrix<S>, agent: usize, xs: impl Fn(usize) -> &'a [S]) -> Vec<S> {
    let mut out = linalg::scale(w.weight(agent, agent), xs(agent));
    for &j in w.graph().neighbors(agent) {
        linalg::axpy(w.weight(agent, j), xs(j), &mut out);
    }
    out
}

/// One round at iteration `t`: fills every agent's `next` and returns the
/// record. Windows are left complete; [`shift_windows`] advances them.
pub fn dsgd_round<S: Scalar>(
    sim: &Simulation<S>,
    states: &mut [AgentState<S>],
    t: usize,
) -> Result<RoundRecord<S>> {
    let n = sim.n_agents();
    if states.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            found: states.len(),
        });
    }
    let lambda = sim.schedule.stepsize(t);
    let mut gradients = Vec::with_capacity(n);
    let mut manipulated = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for (i, st) in states.iter_mut().enumerate() {
        let g = sim.draw_gradient(i, &st.curr, &mut st.grad_rng)?.value;
        let action = sim.policies[i]
            .action_at(t)
            .ok_or(CoreError::UnresolvedPolicy { agent: i })?;
        let m = match sim.replay[i].as_ref().and_then(|r| r.get(t)) {
            Some(m) => m.clone(),
            None => apply_action(&action, &g, &mut st.action_rng),
        };
        gradients.push(g);
        manipulated.push(m);
        actions.push(action);
    }
    let w = &sim.coupling;
    let current: &[AgentState<S>] = states;
    let mut theta_next = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = mix(w, i, |j| current[j].curr.as_slice());
        linalg::axpy(-lambda, &manipulated[i], &mut x);
        check_divergence(t, i, &x)?;
        theta_next.push(x);
    }
    for (st, x) in states.iter_mut().zip(&theta_next) {
        st.next.copy_from_slice(x);
    }
    Ok(RoundRecord {
        t,
        stepsize: lambda,
        theta_next,
        gradients,
        manipulated,
        actions,
    })
}

/// `theta_{t-1} <- theta_t`, `theta_t <- theta_{t+1}` for every agent.
pub fn shift_windows<S: Scalar>(states: &mut [AgentState<S>]) {
    states.iter_mut().for_each(AgentState::shift);
}

/// Runs rounds `0..=T`, streaming each record to `observers`, and returns the
/// final states (whose `curr` is `theta_{T+1}`).
pub fn run_with<S: Scalar>(
    sim: &Simulation<S>,
    observers: &mut [&mut dyn RoundObserver<S>],
) -> Result<Vec<AgentState<S>>> {
    sim.validate()?;
    let mut states = sim.initial_states()?;
    for t in 0..=sim.horizon() {
        let record = dsgd_round(sim, &mut states, t)?;
        debug_assert!(states
            .iter()
            .zip(&record.theta_next)
            .all(|(s, x)| s.next == *x));
        for obs in observers.iter_mut() {
            obs.on_round(&record, &states)?;
        }
        shift_windows(&mut states);
    }
    Ok(states)
}

#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub trajectory: Vec<RoundRecord<S>>,
    pub final_states: Vec<AgentState<S>>,
}

/// Runs and keeps the full trajectory.
pub fn run<S: Scalar>(sim: &Simulation<S>) -> Result<RunOutput<S>> {
    let mut rec = TrajectoryRecorder::default();
    let final_states = run_with(sim, &mut [&mut rec])?;
    Ok(RunOutput {
        trajectory: rec.records,
        final_states,
    })
}

/// Parameter sequences `[t][agent][coord]` for `t = 0..=T+1`.
pub type ParameterTrajectory<S> = Vec<Vec<Vec<S>>>;

/// Outcome of a run in which one agent shares `alpha_hat(theta)` instead of
/// its true parameter.
#[derive(Debug, Clone)]
pub struct ParameterManipulationRun<S> {
    pub deviator: usize,
    /// True parameters of every agent.
    pub true_params: ParameterTrajectory<S>,
    /// What neighbours receive: true parameters except the deviator's shared copy.
    pub shared_params: ParameterTrajectory<S>,
}

/// Runs the protocol with `deviator` broadcasting `alpha_hat(t, theta_{i,t})`.
/// Neighbours mix the shared value; the deviator mixes its own true value.
pub fn run_parameter_manipulation<S: Scalar>(
    sim: &Simulation<S>,
    deviator: usize,
    alpha_hat: &dyn Fn(usize, &[S]) -> Vec<S>,
) -> Result<ParameterManipulationRun<S>> {
    sim.validate()?;
    let n = sim.n_agents();
    if deviator >= n {
        return Err(CoreError::InvalidConfig(format!("deviator {deviator} out of range")));
    }
    let mut states = sim.initial_states()?;
    let shared_of = |t: usize, states: &[AgentState<S>]| -> Vec<Vec<S>> {
        states
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if j == deviator {
                    alpha_hat(t, &s.curr)
                } else {
                    s.curr.clone()
                }
            })
            .collect()
    };
    let mut true_params = vec![states.iter().map(|s| s.curr.clone()).collect::<Vec<_>>()];
    let mut shared_params = vec![shared_of(0, &states)];
    let w = &sim.coupling;
    for t in 0..=sim.horizon() {
        let lambda = sim.schedule.stepsize(t);
        let shared = shared_params.last().expect("seeded").clone();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let st = &mut states[i];
            let g = sim.draw_gradient(i, &st.curr, &mut st.grad_rng)?.value;
            let action = sim.policies[i]
                .action_at(t)
                .ok_or(CoreError::UnresolvedPolicy { agent: i })?;
            let m = apply_action(&action, &g, &mut st.action_rng);
            let own = states[i].curr.clone();
            let mut x = mix(w, i, |j| if j == i { own.as_slice() } else { shared[j].as_slice() });
            linalg::axpy(-lambda, &m, &mut x);
            check_divergence(t, i, &x)?;
            next.push(x);
        }
        for (st, x) in states.iter_mut().zip(&next) {
            st.next.copy_from_slice(x);
        }
        shift_windows(&mut states);
        true_params.push(next);
        shared_params.push(shared_of(t + 1, &states));
    }
    Ok(ParameterManipulationRun {
        deviator,
        true_params,
        shared_params,
    })
}

/// Gradient manipulation that reproduces a parameter-manipulation run.
#[derive(Debug, Clone)]
pub struct EquivalentManipulation<S> {
    /// `m_{i,t}` the deviator must use at each round.
    pub manipulated: Vec<Vec<S>>,
    /// `m_{i,t} - g_i(theta)` at the replayed iterate: the induced alteration.
    pub alteration: Vec<Vec<S>>,
    /// Replayed parameters `[t][agent][coord]`, `t = 0..=T+1`.
    pub replay: ParameterTrajectory<S>,
}

/// Builds the gradient manipulation under which the deviator's *true*
/// trajectory equals the trajectory it shared in `pm`, replays the protocol
/// with it, and returns the replay.
///
/// The deviator's replayed iterate is its shared value, so
/// `m_{i,t} = (sum_j w_ij theta~_{j,t} - theta~_{i,t+1}) / lambda_t`, where
/// `theta~` is the shared trajectory. Every other agent mixes exactly the same
/// values as in `pm` and draws from the same gradient stream, so the whole
/// network's observable trajectory is reproduced.
pub fn manipulate_parameters_equivalent<S: Scalar>(
    sim: &Simulation<S>,
    pm: &ParameterManipulationRun<S>,
) -> Result<EquivalentManipulation<S>> {
    let i = pm.deviator;
    let w = &sim.coupling;
    let horizon = sim.horizon();
    if pm.shared_params.len() != horizon + 2 {
        return Err(CoreError::DimensionMismatch {
            expected: horizon + 2,
            found: pm.shared_params.len(),
        });
    }
    let mut manipulated = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let lambda = sim.schedule.stepsize(t);
        let shared = &pm.shared_params[t];
        let mut m = mix(w, i, |j| shared[j].as_slice());
        linalg::axpy(-S::one(), &pm.shared_params[t + 1][i], &mut m);
        m.iter_mut().for_each(|v| *v /= lambda);
        manipulated.push(m);
    }
    let mut init = pm.true_params[0].clone();
    init[i] = pm.shared_params[0][i].clone();
    let mut replay_sim = sim.clone().with_init(Initialization::Explicit(init));
    replay_sim.replay[i] = Some(Arc::new(manipulated.clone()));
    let out = run(&replay_sim)?;
    let mut replay = vec![replay_sim.initial_parameters()?];
    let mut alteration = Vec::with_capacity(horizon + 1);
    for rec in &out.trajectory {
        alteration.push(linalg::sub(&rec.manipulated[i], &rec.gradients[i]));
        replay.push(rec.theta_next.clone());
    }
    Ok(EquivalentManipulation {
        manipulated,
        alteration,
        replay,
    })
}

/// Largest per-coordinate gap between two parameter trajectories.
pub fn max_trajectory_gap<S: Scalar>(a: &ParameterTrajectory<S>, b: &ParameterTrajectory<S>) -> S {
    a.iter()
        .zip(b)
        .flat_map(|(xa, xb)| xa.iter().zip(xb))
        .flat_map(|(va, vb)| va.iter().zip(vb))
        .map(|(&p, &q)| (p - q).abs())
        .fold(S::zero(), S::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::topology::{build_from_graph, build_ring, singleton, Graph, WeightRule};
    use approx::assert_relative_eq;

    fn params(horizon: usize) -> ScheduleParams<f64> {
        ScheduleParams::new(0.1, 0.55, 0.51, 1e-4, horizon).unwrap()
    }

    #[test]
    fn stepsize_examples() {
        let p = params(0);
        assert_eq!(stepsize(&p, 0), 0.1);
        let q = ScheduleParams::new(1.0, 0.5, 0.4, 1.0, 0).unwrap();
        assert_relative_eq!(stepsize(&q, 3), 0.5, epsilon = 1e-15);
        // frozen from a 40-digit evaluation of 0.1 * 100^-0.55
        assert_relative_eq!(stepsize(&p, 99), 0.007_943_282_347_242_815, epsilon = 1e-15);
    }

    #[test]
    fn payment_window() {
        assert!(params(1).payment_window_violations().is_empty());
        let bad = ScheduleParams::new(0.1, 0.7, 0.51, 1e-4, 1).unwrap();
        assert_eq!(bad.payment_window_violations().len(), 1);
        let both = ScheduleParams::new(0.1, 0.7, 0.2, 1e-4, 1).unwrap();
        assert_eq!(both.payment_window_violations().len(), 2);
        assert!(ScheduleParams::new(0.0, 0.55, 0.51, 1e-4, 1).is_err());
        assert!(ScheduleParams::new(0.1, 0.55, 0.51, 0.0, 1).is_err());
    }

    fn mean_problem(means: Vec<Vec<f64>>) -> Arc<ProblemInstance<f64>> {
        Arc::new(ProblemInstance::mean_estimation(means, 0.0).unwrap())
    }

    #[test]
    fn consensus_fixed_point() {
        let w = Arc::new(build_ring(4, 0.25).unwrap());
        let prob = mean_problem(vec![vec![2.0]; 4]);
        let sim = Simulation::new(w, prob, params(0))
            .unwrap()
            .with_gradient_mode(GradientMode::Exact)
            .with_init(Initialization::Explicit(vec![vec![2.0]; 4]));
        let out = run(&sim).unwrap();
        assert!(out.trajectory[0].theta_next.iter().all(|x| x == &vec![2.0]));
    }

    #[test]
    fn single_agent_is_gradient_descent() {
        let prob = Arc::new(
            ProblemInstance::quadratic(vec![Matrix::identity(2).scaled(2.0)], vec![vec![1.0, -1.0]], 0.0)
                .unwrap(),
        );
        let sim = Simulation::new(Arc::new(singleton()), prob.clone(), params(0))
            .unwrap()
            .with_gradient_mode(GradientMode::Exact)
            .with_init(Initialization::Explicit(vec![vec![3.0, 0.5]]));
        let rec = &run(&sim).unwrap().trajectory[0];
        let g = prob.exact_gradient(0, &[3.0, 0.5]).unwrap();
        assert_eq!(rec.theta_next[0], vec![3.0 - 0.1 * g[0], 0.5 - 0.1 * g[1]]);
    }

    #[test]
    fn two_agent_one_step_averaging() {
        let w = Arc::new(build_from_graph(Graph::complete(2).unwrap(), WeightRule::Metropolis).unwrap());
        let prob = mean_problem(vec![vec![0.0], vec![2.0]]);
        let sim = Simulation::new(w, prob, params(0))
            .unwrap()
            .with_gradient_mode(GradientMode::Exact)
            .with_init(Initialization::Explicit(vec![vec![0.0], vec![2.0]]));
        let mut states = sim.initial_states().unwrap();
        // zero the gradient by sitting at each agent's own optimum, so only mixing acts
        let rec = dsgd_round(&sim, &mut states, 0).unwrap();
        assert_eq!(rec.gradients, vec![vec![0.0], vec![0.0]]);
        assert_eq!(rec.theta_next, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn horizon_zero_runs_one_round_and_is_deterministic() {
        let w = Arc::new(build_ring(5, 0.3).unwrap());
        let means = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let prob = Arc::new(ProblemInstance::mean_estimation(means, 1.0).unwrap());
        let sim = Simulation::new(w, prob, params(0)).unwrap().with_seed(9);
        assert_eq!(run(&sim).unwrap().trajectory.len(), 1);
        let long = sim.clone().with_horizon(200);
        let a = run(&long).unwrap().trajectory;
        let b = run(&long).unwrap().trajectory;
        assert_eq!(a, b);
    }

    #[test]
    fn windows_shift_once_per_round() {
        let w = Arc::new(build_ring(3, 0.3).unwrap());
        let prob = mean_problem(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let sim = Simulation::new(w, prob, params(3)).unwrap().with_seed(2);
        struct Check {
            last: Option<Vec<Vec<f64>>>,
            last_prev: Option<Vec<Vec<f64>>>,
        }
        impl RoundObserver<f64> for Check {
            fn on_round(&mut self, rec: &RoundRecord<f64>, states: &[AgentState<f64>]) -> Result<()> {
                let curr: Vec<_> = states.iter().map(|s| s.curr.clone()).collect();
                let prev: Vec<_> = states.iter().map(|s| s.prev.clone()).collect();
                if rec.t == 0 {
                    assert!(prev.iter().all(|p| p.iter().all(|&v| v == 0.0)));
                } else {
                    assert_eq!(Some(&curr), self.last.as_ref());
                    assert_eq!(Some(&prev), self.last_prev.as_ref());
                }
                for (s, x) in states.iter().zip(&rec.theta_next) {
                    assert_eq!(&s.next, x);
                }
                self.last_prev = Some(curr);
                self.last = Some(rec.theta_next.clone());
                Ok(())
            }
        }
        let mut c = Check {
            last: None,
            last_prev: None,
        };
        run_with(&sim, &mut [&mut c]).unwrap();
    }

    #[test]
    fn divergence_is_reported() {
        let w = Arc::new(build_ring(3, 0.3).unwrap());
        let prob = mean_problem(vec![vec![0.0]; 3]);
        let sched = ScheduleParams::new(50.0, 0.55, 0.51, 1e-4, 500).unwrap();
        let sim = Simulation::new(w, prob, sched)
            .unwrap()
            .with_gradient_mode(GradientMode::Exact);
        assert!(matches!(run(&sim), Err(CoreError::Diverged { .. })));
    }

    #[test]
    fn unresolved_best_response_rejected() {
        use crate::strategy::{BestResponseGrid, NoiseLaw};
        let w = Arc::new(build_ring(3, 0.3).unwrap());
        let prob = mean_problem(vec![vec![0.0]; 3]);
        let grid = BestResponseGrid::new(vec![1.0], vec![0.0], NoiseLaw::Laplace).unwrap();
        let sim = Simulation::new(w, prob, params(2))
            .unwrap()
            .with_policy(1, StrategyPolicy::BestResponse(grid));
        assert_eq!(run(&sim).unwrap_err(), CoreError::UnresolvedPolicy { agent: 1 });
    }

    #[test]
    fn identity_parameter_manipulation_is_identity() {
        let w = Arc::new(build_ring(3, 0.3).unwrap());
        let prob = mean_problem(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]);
        let sim = Simulation::new(w, prob, params(20)).unwrap().with_seed(4);
        let pm = run_parameter_manipulation(&sim, 0, &|_, x| x.to_vec()).unwrap();
        assert_eq!(pm.true_params, pm.shared_params);
        let plain = run(&sim).unwrap();
        for (t, rec) in plain.trajectory.iter().enumerate() {
            assert_eq!(rec.theta_next, pm.true_params[t + 1]);
        }
        let eq = manipulate_parameters_equivalent(&sim, &pm).unwrap();
        assert!(max_trajectory_gap(&eq.replay, &pm.shared_params) < 1e-12);
        assert!(eq.alteration.iter().flatten().all(|v| v.abs() < 1e-9));
    }
}
