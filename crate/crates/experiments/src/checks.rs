//! Closed-form and rate checks against simulation.

use dsgd_core::linalg;
use dsgd_core::metrics::{paired_gain, GainEstimate};
use dsgd_core::{
    convergence_slope, evaluate, manipulate_parameters_equivalent, max_trajectory_gap, run_parameter_manipulation,
    run_with, AgentState, Evaluation, ProblemKind, RoundObserver, RoundRecord, Simulation, StrategyPolicy,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::Assembled;
use crate::config::{GradientSpec, NoiseSpec, PaymentSpec, PolicyKind, ScenarioConfig};
use crate::error::{ExperimentError, Result};

/// Observer built from a closure.
pub struct FnObserver<F>(pub F);

impl<F> RoundObserver<f64> for FnObserver<F>
where
    F: FnMut(&RoundRecord<f64>, &[AgentState<f64>]),
{
    fn on_round(&mut self, record: &RoundRecord<f64>, states: &[AgentState<f64>]) -> dsgd_core::Result<()> {
        (self.0)(record, states);
        Ok(())
    }
}

/// `theta_{i,T}` of every agent.
pub fn params_at_horizon(sim: &Simulation<f64>) -> Result<Vec<Vec<f64>>> {
    let horizon = sim.horizon();
    let mut out = Vec::new();
    let mut obs = FnObserver(|r: &RoundRecord<f64>, st: &[AgentState<f64>]| {
        if r.t == horizon {
            out = st.iter().map(|s| s.curr.clone()).collect();
        }
    });
    run_with(sim, &mut [&mut obs])?;
    Ok(out)
}

/// `f(t, states)` for every round, one value per `t`.
pub fn per_round_series(
    sim: &Simulation<f64>,
    f: impl Fn(&[AgentState<f64>]) -> f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sim.horizon() + 1);
    let mut obs = FnObserver(|_: &RoundRecord<f64>, st: &[AgentState<f64>]| out.push(f(st)));
    run_with(sim, &mut [&mut obs])?;
    Ok(out)
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / n)
        .collect()
}

fn require_kind(asm: &Assembled, kind: ProblemKind, op: &'static str) -> Result<()> {
    if asm.problem.kind() != kind {
        return Err(dsgd_core::CoreError::UnsupportedKind {
            op,
            kind: asm.problem.kind().name(),
        }
        .into());
    }
    Ok(())
}

fn with_scaler(base: &ScenarioConfig, deviator: usize, a: f64) -> ScenarioConfig {
    base.clone().with_policy(
        vec![deviator],
        PolicyKind::Fixed {
            a,
            b: 0.0,
            noise: NoiseSpec::Laplace,
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Example1Report {
    pub n_agents: usize,
    pub dim: usize,
    pub deviator: usize,
    pub a: f64,
    pub horizon: usize,
    pub seeds: usize,
    /// `|theta'*|`
    pub target_norm: f64,
    /// `max_i |theta_{i,T} - theta'*| / |theta'*|` over agents and seeds.
    pub max_rel_error: f64,
    /// `f_i(mean_i theta_{i,T})`, averaged over seeds.
    pub deviator_cost: f64,
    /// `f_i(theta'*)`
    pub deviator_cost_closed_form: f64,
    /// `f_i(theta*)`
    pub deviator_cost_truthful: f64,
    /// `F(mean theta_T) - F(theta*)`, averaged over seeds.
    pub global_increase: f64,
    pub global_increase_closed_form: f64,
}

impl Example1Report {
    pub fn increase_rel_error(&self) -> f64 {
        (self.global_increase - self.global_increase_closed_form).abs() / self.global_increase_closed_form.abs()
    }
}

/// Least-squares scenario with `deviator` scaling its gradient by `a`.
pub fn example1_check(
    base: &ScenarioConfig,
    deviator: usize,
    a: f64,
    gradient: GradientSpec,
    seeds: &[u64],
) -> Result<Example1Report> {
    let mut cfg = with_scaler(base, deviator, a);
    cfg.gradient = gradient;
    let asm = Assembled::new(cfg)?;
    require_kind(&asm, ProblemKind::LeastSquares, "example1_check")?;
    let p = &asm.problem;
    let target = p.deviated_optimum(deviator, a)?;
    let target_norm = linalg::norm(&target);
    let finals: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| params_at_horizon(&asm.sim.clone().with_seed(s)))
        .collect::<Result<_>>()?;
    let mut max_rel_error = 0.0f64;
    let (mut cost, mut increase) = (0.0, 0.0);
    for thetas in &finals {
        for th in thetas {
            max_rel_error = max_rel_error.max(linalg::dist_sq(th, &target).sqrt() / target_norm);
        }
        let bar = linalg::mean_vec(thetas);
        cost += p.local_cost(deviator, &bar);
        increase += p.optimality_gap(&bar);
    }
    let k = seeds.len() as f64;
    let delta = p.deviation_cost_delta(deviator, a)?;
    Ok(Example1Report {
        n_agents: asm.n_agents(),
        dim: p.dim(),
        deviator,
        a,
        horizon: asm.config.horizon,
        seeds: seeds.len(),
        target_norm,
        max_rel_error,
        deviator_cost: cost / k,
        deviator_cost_closed_form: p.local_cost(deviator, &target),
        deviator_cost_truthful: p.local_cost(deviator, p.global_optimum()),
        global_increase: increase / k,
        global_increase_closed_form: delta.global_loss,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Example2Report {
    pub n_agents: usize,
    pub dim: usize,
    pub deviator: usize,
    pub a: f64,
    pub horizon: usize,
    pub seeds: usize,
    /// `f_i(mean theta_T)` with everyone truthful, averaged over seeds.
    pub truthful_mse: f64,
    /// `|mu - mu_i|^2`
    pub truthful_mse_limit: f64,
    /// deviator's MSE under deviation over its truthful MSE.
    pub mse_ratio: f64,
    /// `(N / (a + N - 1))^2`
    pub mse_ratio_limit: f64,
    /// `F(mean theta_T) - F(theta*)` under deviation, averaged over seeds.
    pub global_increase: f64,
    /// `((a - 1) / (a + N - 1))^2 |mu - mu_i|^2`
    pub global_increase_limit: f64,
}

/// Mean estimation run truthfully and with `deviator` scaling by `a`.
pub fn example2_check(base: &ScenarioConfig, deviator: usize, a: f64, seeds: &[u64]) -> Result<Example2Report> {
    let truthful = Assembled::new(base.clone().all_truthful())?;
    let deviating = Assembled::new(with_scaler(base, deviator, a))?;
    require_kind(&truthful, ProblemKind::MeanEstimation, "example2_check")?;
    let p = &truthful.problem;
    let runs: Vec<(f64, f64, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let t_bar = linalg::mean_vec(&params_at_horizon(&truthful.sim.clone().with_seed(s))?);
            let d_bar = linalg::mean_vec(&params_at_horizon(&deviating.sim.clone().with_seed(s))?);
            Ok((p.local_cost(deviator, &t_bar), p.local_cost(deviator, &d_bar), p.optimality_gap(&d_bar)))
        })
        .collect::<Result<_>>()?;
    let k = seeds.len() as f64;
    let truthful_mse = runs.iter().map(|r| r.0).sum::<f64>() / k;
    let deviated_mse = runs.iter().map(|r| r.1).sum::<f64>() / k;
    let increase = runs.iter().map(|r| r.2).sum::<f64>() / k;
    let n = truthful.n_agents() as f64;
    let base_gap = p.local_cost(deviator, p.global_optimum());
    Ok(Example2Report {
        n_agents: truthful.n_agents(),
        dim: p.dim(),
        deviator,
        a,
        horizon: base.horizon,
        seeds: seeds.len(),
        truthful_mse,
        truthful_mse_limit: base_gap,
        mse_ratio: deviated_mse / truthful_mse,
        mse_ratio_limit: (n / (a + n - 1.0)).powi(2),
        global_increase: increase,
        global_increase_limit: ((a - 1.0) / (a + n - 1.0)).powi(2) * base_gap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub window: (usize, usize),
    pub slope: f64,
    /// Fitted points `(t, value)`, thinned for reporting.
    pub samples: Vec<(usize, f64)>,
}

fn thin(series: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut next = 1usize;
    for &(t, v) in series {
        if t + 1 >= next {
            out.push((t, v));
            next = ((next as f64) * 1.25).ceil() as usize + 1;
        }
    }
    out
}

/// Log-log slope of `mean_i |theta_{i,t} - theta*|^2` averaged over seeds.
pub fn distance_slope(cfg: &ScenarioConfig, seeds: &[u64], window: (usize, usize)) -> Result<SlopeReport> {
    let asm = Assembled::new(cfg.clone())?;
    let target = asm.problem.global_optimum().to_vec();
    let rows: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            per_round_series(&asm.sim.clone().with_seed(s), |st| {
                st.iter().map(|a| linalg::dist_sq(&a.curr, &target)).sum::<f64>() / st.len() as f64
            })
        })
        .collect::<Result<_>>()?;
    let series: Vec<(usize, f64)> = mean_columns(&rows).into_iter().enumerate().collect();
    Ok(SlopeReport {
        window,
        slope: convergence_slope(&series, window)?,
        samples: thin(&series),
    })
}

/// Slope of `(1/(T+1)) sum_{t<=T} mean_i [F(theta_{i,t}) - F(theta*)]`
/// across `horizons`, all read off one run per seed.
pub fn cesaro_slope(cfg: &ScenarioConfig, seeds: &[u64], horizons: &[usize]) -> Result<SlopeReport> {
    let mut cfg = cfg.clone();
    let last = *horizons.last().ok_or(dsgd_core::CoreError::Empty("horizons"))?;
    cfg.horizon = last;
    let asm = Assembled::new(cfg)?;
    let p = asm.problem.clone();
    let rows: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            per_round_series(&asm.sim.clone().with_seed(s), |st| {
                st.iter().map(|a| p.optimality_gap(&a.curr)).sum::<f64>() / st.len() as f64
            })
        })
        .collect::<Result<_>>()?;
    let gaps = mean_columns(&rows);
    let mut points = Vec::with_capacity(horizons.len());
    let mut acc = 0.0;
    let mut k = 0;
    for &h in horizons {
        while k <= h {
            acc += gaps[k];
            k += 1;
        }
        points.push((h, acc / (h + 1) as f64));
    }
    Ok(SlopeReport {
        window: (horizons[0], last),
        slope: convergence_slope(&points, (horizons[0], last))?,
        samples: points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PaymentDecayReport {
    pub early_window: (usize, usize),
    pub late_window: (usize, usize),
    pub early_mean_abs: f64,
    pub late_mean_abs: f64,
}

impl PaymentDecayReport {
    pub fn ratio(&self) -> f64 {
        self.late_mean_abs / self.early_mean_abs
    }
}

/// Mean `|P_{i,t}|` over agents, seeds and two windows of a truthful run.
pub fn payment_decay(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    early: (usize, usize),
    late: (usize, usize),
) -> Result<PaymentDecayReport> {
    let asm = Assembled::new(cfg.clone().all_truthful())?;
    let eval = asm.evaluation()?;
    let window_means: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let rep = evaluate(&asm.sim.clone().with_seed(s), &eval)?;
            let mean_in = |(lo, hi): (usize, usize)| {
                let vals: Vec<f64> = rep
                    .metrics
                    .rounds
                    .iter()
                    .filter(|r| (lo..=hi).contains(&r.t))
                    .flat_map(|r| r.agents.iter().map(|a| a.payment.abs()))
                    .collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            };
            Ok((mean_in(early), mean_in(late)))
        })
        .collect::<Result<_>>()?;
    let k = seeds.len() as f64;
    Ok(PaymentDecayReport {
        early_window: early,
        late_window: late,
        early_mean_abs: window_means.iter().map(|w| w.0).sum::<f64>() / k,
        late_mean_abs: window_means.iter().map(|w| w.1).sum::<f64>() / k,
    })
}

/// Paired-seed deviation gain, seeds evaluated in parallel.
pub fn ic_gap(
    sim: &Simulation<f64>,
    deviator: usize,
    deviation: &StrategyPolicy<f64>,
    eval: &Evaluation<f64>,
    seeds: &[u64],
) -> Result<GainEstimate<f64>> {
    if seeds.is_empty() {
        return Err(dsgd_core::CoreError::Empty("seeds").into());
    }
    let per_seed = seeds
        .par_iter()
        .map(|&s| paired_gain(sim, deviator, deviation, eval, s).map_err(ExperimentError::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainEstimate::from_samples(per_seed))
}

/// [`ic_gap`] at each horizon with the scenario's payment rule rebuilt for it.
pub fn gain_curve(
    cfg: &ScenarioConfig,
    deviator: usize,
    deviation: &StrategyPolicy<f64>,
    payments: &PaymentSpec,
    horizons: &[usize],
    seeds: &[u64],
) -> Result<Vec<(usize, GainEstimate<f64>)>> {
    if horizons.is_empty() {
        return Err(dsgd_core::CoreError::Empty("horizons").into());
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(dsgd_core::CoreError::InvalidConfig("horizons must be strictly increasing".into()).into());
    }
    let asm = Assembled::new(cfg.clone().all_truthful())?;
    horizons
        .iter()
        .map(|&h| {
            let sim = asm.sim.clone().with_horizon(h);
            let eval = asm.evaluation_with(payments, h)?;
            Ok((h, ic_gap(&sim, deviator, deviation, &eval, seeds)?))
        })
        .collect()
}

/// Largest coordinate gap between a parameter-manipulation run and its
/// gradient-manipulation replay.
pub fn manipulation_equivalence(
    cfg: &ScenarioConfig,
    deviator: usize,
    alpha_hat: &dyn Fn(usize, &[f64]) -> Vec<f64>,
) -> Result<f64> {
    let asm = Assembled::new(cfg.clone().all_truthful())?;
    let pm = run_parameter_manipulation(&asm.sim, deviator, alpha_hat)?;
    let eq = manipulate_parameters_equivalent(&asm.sim, &pm)?;
    Ok(max_trajectory_gap(&pm.shared_params, &eq.replay))
}
