//! Rewards, net utilities, per-round diagnostics and incentive gaps.

use std::io::{self, Write};
use std::sync::Arc;

use crate::engine::{run_with, AgentState, RoundObserver, RoundRecord, Simulation};
use crate::error::{CoreError, Result};
use crate::linalg::{self, exact_sum};
use crate::mechanism::{LedgerObserver, PaymentCoefficientSchedule, PaymentLedger};
use crate::problems::ProblemInstance;
use crate::scalar::Scalar;
use crate::strategy::StrategyPolicy;

/// Terminal reward `R(f)` applied to an agent's final local cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardFunction {
    /// `R(f) = -f`
    #[default]
    Linear,
    /// `R(f) = (1 + exp(-1/f))^-1`, defined for `f > 0`. Note this is
    /// increasing in `f`.
    SigmoidLike,
}

impl RewardFunction {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::SigmoidLike => "sigmoid_like",
        }
    }

    pub fn eval<S: Scalar>(self, f: S) -> Result<S> {
        if !f.is_finite() {
            return Err(CoreError::InvalidReward(format!("cost {f} is not finite")));
        }
        match self {
            Self::Linear => Ok(-f),
            Self::SigmoidLike => {
                if !(f > S::zero()) {
                    return Err(CoreError::InvalidReward(format!(
                        "sigmoid-like reward needs f > 0, got {f}"
                    )));
                }
                Ok(S::one() / (S::one() + (-f.recip()).exp()))
            }
        }
    }

    /// Lipschitz constant of `R` in `f` on its domain.
    pub fn lipschitz<S: Scalar>(self) -> S {
        match self {
            Self::Linear => S::one(),
            Self::SigmoidLike => {
                // |dR/df| = u^2 s(u) (1 - s(u)) with u = 1/f; maximised on a fine grid
                let peak = (1..=20_000)
                    .map(|k| {
                        let u = k as f64 * 5e-4;
                        let s = 1.0 / (1.0 + (-u).exp());
                        u * u * s * (1.0 - s)
                    })
                    .fold(0.0, f64::max);
                S::lit(peak)
            }
        }
    }
}

/// `R(f_final) - sum_t P_t`, the payment sum taken exactly.
pub fn net_utility<S: Scalar>(reward: RewardFunction, f_final: S, payments: &[S]) -> Result<S> {
    Ok(reward.eval(f_final)? - exact_sum(payments.iter().copied()))
}

/// Least-squares slope of `ln(value)` against `ln(t + 1)` over points with
/// `t` in `[t_lo, t_hi]`.
pub fn convergence_slope<S: Scalar>(series: &[(usize, S)], window: (usize, usize)) -> Result<S> {
    let (lo, hi) = window;
    if lo > hi || (hi + 1) < 10 * (lo + 1) {
        return Err(CoreError::InvalidSeries(format!(
            "window [{lo}, {hi}] must span a factor of at least 10 in t + 1"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in series.iter().filter(|(t, _)| (lo..=hi).contains(t)) {
        if !(v > S::zero()) || !v.is_finite() {
            return Err(CoreError::InvalidSeries(format!("value {v} at t = {t} is not positive")));
        }
        xs.push(S::from_count(t + 1).ln());
        ys.push(v.ln());
    }
    if xs.len() < 2 {
        return Err(CoreError::InvalidSeries("fewer than two points in window".into()));
    }
    let n = S::from_count(xs.len());
    let mx = xs.iter().copied().sum::<S>() / n;
    let my = ys.iter().copied().sum::<S>() / n;
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(sxy / sxx)
}

/// Mean and standard error of the mean.
pub fn mean_stderr<S: Scalar>(xs: &[S]) -> (S, S) {
    if xs.is_empty() {
        return (S::nan(), S::nan());
    }
    let n = S::from_count(xs.len());
    let mean = xs.iter().copied().sum::<S>() / n;
    if xs.len() == 1 {
        return (mean, S::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / (n - S::one());
    (mean, (var / n).sqrt())
}

/// Reference point for distance measurements.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DistanceTarget<S> {
    #[default]
    GlobalOptimum,
    Point(Vec<S>),
}

/// Per-agent measurements at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRow<S> {
    /// `|theta_{i,t} - target|^2`
    pub dist_sq: S,
    /// `F(theta_{i,t}) - F(theta*)`
    pub objective_gap: S,
    /// `f_i(theta_{i,t})`
    pub local_cost: S,
    /// `|m_{i,t} - g_{i,t}|`
    pub manipulation: S,
    /// `P_{i,t}`; zero when no ledger is attached.
    pub payment: S,
}

/// Measurements of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics<S> {
    pub t: usize,
    /// `sum_i |theta_{i,t} - mean_t|^2`
    pub consensus_error: S,
    pub agents: Vec<AgentRow<S>>,
}

/// Terminal quantities of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSummary<S> {
    /// `f_i(theta_{i,T+1})`
    pub final_cost: S,
    pub final_dist_sq: S,
    pub reward: S,
    /// `sum_t P_{i,t}`
    pub payments: S,
    pub net_utility: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics<S> {
    pub rounds: Vec<RoundMetrics<S>>,
    pub summary: Vec<AgentSummary<S>>,
    pub final_params: Vec<Vec<S>>,
}

impl<S: Scalar> RunMetrics<S> {
    pub fn n_agents(&self) -> usize {
        self.summary.len()
    }

    /// `(t, mean_i dist_sq)` for every round.
    pub fn mean_dist_series(&self) -> Vec<(usize, S)> {
        self.mean_series(|a| a.dist_sq)
    }

    /// `(t, mean_i objective_gap)` for every round.
    pub fn mean_gap_series(&self) -> Vec<(usize, S)> {
        self.mean_series(|a| a.objective_gap)
    }

    fn mean_series(&self, field: impl Fn(&AgentRow<S>) -> S) -> Vec<(usize, S)> {
        self.rounds
            .iter()
            .map(|r| {
                let n = S::from_count(r.agents.len());
                (r.t, r.agents.iter().map(&field).sum::<S>() / n)
            })
            .collect()
    }

    /// `P_{i,t}` for every round.
    pub fn payment_series(&self, agent: usize) -> Vec<S> {
        self.rounds.iter().map(|r| r.agents[agent].payment).collect()
    }

    /// `|m_{i,t} - g_{i,t}|` for every round.
    pub fn truthfulness_trace(&self, agent: usize) -> Vec<S> {
        self.rounds.iter().map(|r| r.agents[agent].manipulation).collect()
    }

    /// `sum_i sum_t P_{i,t}` over the recorded per-round totals, taken exactly.
    /// Each total is rounded once, so this is within a few ulps of zero.
    pub fn payment_imbalance(&self) -> S {
        exact_sum(
            self.rounds
                .iter()
                .flat_map(|r| r.agents.iter().map(|a| a.payment)),
        )
    }

    /// CSV, header `t,agent,dist_sq,objective_gap,local_cost,consensus_error,payment,manipulation`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "t,agent,dist_sq,objective_gap,local_cost,consensus_error,payment,manipulation"
        )?;
        for r in &self.rounds {
            for (i, a) in r.agents.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.t, i, a.dist_sq, a.objective_gap, a.local_cost, r.consensus_error, a.payment, a.manipulation
                )?;
            }
        }
        Ok(())
    }

    /// CSV, header `agent,final_cost,final_dist_sq,reward,payments,net_utility`.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "agent,final_cost,final_dist_sq,reward,payments,net_utility")?;
        for (i, s) in self.summary.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i, s.final_cost, s.final_dist_sq, s.reward, s.payments, s.net_utility
            )?;
        }
        Ok(())
    }
}

/// Records per-round measurements; payments are attached afterwards.
#[derive(Debug)]
pub struct MetricsObserver<S> {
    problem: Arc<ProblemInstance<S>>,
    target: Vec<S>,
    pub rounds: Vec<RoundMetrics<S>>,
}

impl<S: Scalar> MetricsObserver<S> {
    pub fn new(problem: Arc<ProblemInstance<S>>, target: &DistanceTarget<S>) -> Self {
        let target = match target {
            DistanceTarget::GlobalOptimum => problem.global_optimum().to_vec(),
            DistanceTarget::Point(p) => p.clone(),
        };
        Self {
            problem,
            target,
            rounds: Vec::new(),
        }
    }
}

fn consensus_error<S: Scalar>(thetas: &[&[S]]) -> S {
    let owned: Vec<Vec<S>> = thetas.iter().map(|x| x.to_vec()).collect();
    let mean = linalg::mean_vec(&owned);
    thetas.iter().map(|x| linalg::dist_sq(x, &mean)).sum()
}

impl<S: Scalar> RoundObserver<S> for MetricsObserver<S> {
    fn on_round(&mut self, record: &RoundRecord<S>, states: &[AgentState<S>]) -> Result<()> {
        let thetas: Vec<&[S]> = states.iter().map(|s| s.curr.as_slice()).collect();
        let agents = states
            .iter()
            .enumerate()
            .map(|(i, s)| AgentRow {
                dist_sq: linalg::dist_sq(&s.curr, &self.target),
                objective_gap: self.problem.optimality_gap(&s.curr),
                local_cost: self.problem.local_cost(i, &s.curr),
                manipulation: linalg::norm(&linalg::sub(&record.manipulated[i], &record.gradients[i])),
                payment: S::zero(),
            })
            .collect();
        self.rounds.push(RoundMetrics {
            t: record.t,
            consensus_error: consensus_error(&thetas),
            agents,
        });
        Ok(())
    }
}

/// How a run is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<S> {
    pub payments: PaymentCoefficientSchedule<S>,
    pub reward: RewardFunction,
    pub target: DistanceTarget<S>,
}

impl<S: Scalar> Evaluation<S> {
    pub fn new(payments: PaymentCoefficientSchedule<S>, reward: RewardFunction) -> Self {
        Self {
            payments,
            reward,
            target: DistanceTarget::GlobalOptimum,
        }
    }

    pub fn with_target(mut self, target: DistanceTarget<S>) -> Self {
        self.target = target;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunReport<S> {
    pub metrics: RunMetrics<S>,
    pub ledger: PaymentLedger<S>,
}

/// Runs `sim` with a payment ledger and metrics attached.
pub fn evaluate<S: Scalar>(sim: &Simulation<S>, eval: &Evaluation<S>) -> Result<RunReport<S>> {
    let payments = eval.payments.validated()?;
    let mut ledger_obs = LedgerObserver::new(sim.coupling.graph().clone(), payments);
    let mut metrics_obs = MetricsObserver::new(sim.problem.clone(), &eval.target);
    let final_states = run_with(sim, &mut [&mut ledger_obs, &mut metrics_obs])?;
    let ledger = ledger_obs.ledger;
    let mut rounds = metrics_obs.rounds;
    for (r, settled) in rounds.iter_mut().zip(ledger.rounds()) {
        for (a, &p) in r.agents.iter_mut().zip(&settled.totals) {
            a.payment = p;
        }
    }
    let problem = &sim.problem;
    let summary = final_states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let final_cost = problem.local_cost(i, &s.curr);
            let reward = eval.reward.eval(final_cost)?;
            let payments = ledger.cumulative(i);
            Ok(AgentSummary {
                final_cost,
                final_dist_sq: linalg::dist_sq(&s.curr, &metrics_obs.target),
                reward,
                payments,
                net_utility: reward - payments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_params = final_states.into_iter().map(|s| s.curr).collect();
    Ok(RunReport {
        metrics: RunMetrics {
            rounds,
            summary,
            final_params,
        },
        ledger,
    })
}

/// Mean deviation gain with its per-seed values.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate<S> {
    pub mean: S,
    pub stderr: S,
    pub per_seed: Vec<S>,
}

impl<S: Scalar> GainEstimate<S> {
    pub fn from_samples(per_seed: Vec<S>) -> Self {
        let (mean, stderr) = mean_stderr(&per_seed);
        Self {
            mean,
            stderr,
            per_seed,
        }
    }
}

/// `U_i(deviation) - U_i(truthful)` at one seed; both runs share the seed.
pub fn paired_gain<S: Scalar>(
    sim: &Simulation<S>,
    deviator: usize,
    deviation: &StrategyPolicy<S>,
    eval: &Evaluation<S>,
    seed: u64,
) -> Result<S> {
    if deviator >= sim.n_agents() {
        return Err(CoreError::InvalidConfig(format!("deviator {deviator} out of range")));
    }
    let base = sim.clone().with_seed(seed);
    let honest = base.clone().with_policy(deviator, StrategyPolicy::Truthful);
    let deviating = base.with_policy(deviator, deviation.clone());
    let u_dev = evaluate(&deviating, eval)?.metrics.summary[deviator].net_utility;
    let u_honest = evaluate(&honest, eval)?.metrics.summary[deviator].net_utility;
    Ok(u_dev - u_honest)
}

/// Paired-seed estimate of the deviator's expected gain from `deviation`
/// against truthful play, everyone else as configured in `sim`.
pub fn ic_gap<S: Scalar>(
    sim: &Simulation<S>,
    deviator: usize,
    deviation: &StrategyPolicy<S>,
    eval: &Evaluation<S>,
    seeds: &[u64],
) -> Result<GainEstimate<S>> {
    if seeds.is_empty() {
        return Err(CoreError::Empty("seeds"));
    }
    let per_seed = seeds
        .iter()
        .map(|&s| paired_gain(sim, deviator, deviation, eval, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainEstimate::from_samples(per_seed))
}

/// [`ic_gap`] at each horizon. `eval_at(T)` supplies the scoring for horizon
/// `T`, since horizon-dependent payment schedules change with it. Dynamics
/// under a fixed seed share their prefix across horizons.
pub fn cumulative_gain_curve<S: Scalar>(
    sim: &Simulation<S>,
    deviator: usize,
    deviation: &StrategyPolicy<S>,
    eval_at: &dyn Fn(usize) -> Evaluation<S>,
    horizons: &[usize],
    seeds: &[u64],
) -> Result<Vec<(usize, GainEstimate<S>)>> {
    if horizons.is_empty() {
        return Err(CoreError::Empty("horizons"));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::InvalidConfig("horizons must be strictly increasing".into()));
    }
    horizons
        .iter()
        .map(|&h| {
            let s = sim.clone().with_horizon(h);
            Ok((h, ic_gap(&s, deviator, deviation, &eval_at(h), seeds)?))
        })
        .collect()
}

/// `|m_{i,t} - g_{i,t}|` per round from a recorded trajectory.
pub fn truthfulness_trace<S: Scalar>(trajectory: &[RoundRecord<S>], deviator: usize) -> Vec<S> {
    trajectory
        .iter()
        .map(|r| linalg::norm(&linalg::sub(&r.manipulated[deviator], &r.gradients[deviator])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, GradientMode, ScheduleParams};
    use crate::strategy::{Action, NoiseLaw};
    use crate::topology::build_ring;
    use approx::assert_relative_eq;

    #[test]
    fn net_utility_examples() {
        assert_eq!(net_utility(RewardFunction::Linear, 2.0, &[]).unwrap(), -2.0);
        assert_eq!(net_utility(RewardFunction::Linear, 2.0, &[1.0, -0.5]).unwrap(), -2.5);
        let r = RewardFunction::SigmoidLike;
        assert_relative_eq!(r.eval(1.0f64).unwrap(), 0.7310585786300049, max_relative = 1e-15);
        assert!(r.eval(1e-3f64).unwrap() > 0.999);
        assert_relative_eq!(r.eval(1e9f64).unwrap(), 0.5, epsilon = 1e-8);
        assert!(r.eval(0.0f64).is_err());
        assert!(r.eval(-1.0f64).is_err());
    }

    #[test]
    fn sigmoid_lipschitz_bound() {
        let l: f64 = RewardFunction::SigmoidLike.lipschitz();
        // numerical derivative never exceeds the bound
        let r = RewardFunction::SigmoidLike;
        for k in 1..400 {
            let f = k as f64 * 0.01;
            let d = (r.eval(f + 1e-6).unwrap() - r.eval(f).unwrap()) / 1e-6;
            assert!(d.abs() <= l + 1e-5, "f={f} d={d} l={l}");
        }
        assert!(l > 0.4 && l < 0.5);
    }

    #[test]
    fn slope_of_power_law() {
        let series: Vec<(usize, f64)> = (0..20_000).map(|t| (t, 3.0 * ((t + 1) as f64).powf(-0.55))).collect();
        let s = convergence_slope(&series, (100, 10_000)).unwrap();
        assert!((s + 0.55).abs() < 1e-9);
        let flat: Vec<(usize, f64)> = (0..100).map(|t| (t, 4.0)).collect();
        assert!(convergence_slope(&flat, (1, 50)).unwrap().abs() < 1e-12);
        assert!(convergence_slope(&flat, (10, 50)).is_err());
        let bad = vec![(1usize, 1.0f64), (50, 0.0)];
        assert!(convergence_slope(&bad, (1, 50)).is_err());
    }

    fn small_sim(n: usize) -> Simulation<f64> {
        let w = Arc::new(build_ring(n, 0.25).unwrap());
        let means = (0..n).map(|i| vec![i as f64, 1.0 - i as f64]).collect();
        let p = Arc::new(ProblemInstance::mean_estimation(means, 1.0).unwrap());
        let sched = ScheduleParams::new(0.1, 0.55, 0.51, 1e-2, 60).unwrap();
        Simulation::new(w, p, sched).unwrap().with_seed(3)
    }

    #[test]
    fn truthful_gap_is_exactly_zero() {
        let sim = small_sim(4);
        let eval = Evaluation::new(
            PaymentCoefficientSchedule::Preset {
                c0: 1e-6,
                params: sim.schedule,
            },
            RewardFunction::Linear,
        );
        let g = ic_gap(&sim, 1, &StrategyPolicy::Truthful, &eval, &[1, 2, 3]).unwrap();
        assert!(g.per_seed.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn utilities_and_budget_are_consistent() {
        let sim = small_sim(5).with_policy(
            2,
            StrategyPolicy::Fixed(Action::new(2.0, 0.5, NoiseLaw::Laplace).unwrap()),
        );
        let eval = Evaluation::new(PaymentCoefficientSchedule::Constant(3.0), RewardFunction::Linear);
        let rep = evaluate(&sim, &eval).unwrap();
        assert_eq!(rep.metrics.rounds.len(), 61);
        let scale = rep.metrics.rounds.iter().flat_map(|r| r.agents.iter().map(|a| a.payment.abs())).fold(0.0, f64::max);
        assert!(rep.metrics.payment_imbalance().abs() <= 8.0 * f64::EPSILON * scale);
        for (i, s) in rep.metrics.summary.iter().enumerate() {
            assert_eq!(s.net_utility, -s.final_cost - s.payments);
            let direct = net_utility(RewardFunction::Linear, s.final_cost, &rep.ledger.agent_series(i)).unwrap();
            assert_relative_eq!(direct, s.net_utility, max_relative = 1e-12, epsilon = 1e-12);
        }
        let (anti, budget) = rep.ledger.balance_violations();
        assert_eq!((anti, budget), (0.0, 0.0));
    }

    #[test]
    fn traces_match_action() {
        let sim = small_sim(3)
            .with_gradient_mode(GradientMode::Exact)
            .with_policy(0, StrategyPolicy::Fixed(Action::new(2.0, 0.0, NoiseLaw::Laplace).unwrap()));
        let out = run(&sim).unwrap();
        let trace = truthfulness_trace(&out.trajectory, 0);
        for (r, m) in out.trajectory.iter().zip(&trace) {
            assert_relative_eq!(*m, linalg::norm(&r.gradients[0]), max_relative = 1e-14);
        }
        assert!(truthfulness_trace(&out.trajectory, 1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gain_curve_rejects_unsorted_horizons() {
        let sim = small_sim(3);
        let eval_at = |_h: usize| Evaluation::new(PaymentCoefficientSchedule::off(), RewardFunction::Linear);
        let dev = StrategyPolicy::Truthful;
        assert!(cumulative_gain_curve(&sim, 0, &dev, &eval_at, &[10, 5], &[1]).is_err());
        let one = cumulative_gain_curve(&sim, 0, &dev, &eval_at, &[10], &[1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].1.mean, 0.0);
    }
}
