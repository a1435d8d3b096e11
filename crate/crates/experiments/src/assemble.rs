//! Turns a validated [`ScenarioConfig`] into simulator objects.

use std::sync::Arc;

use dsgd_core::problems::generate;
use dsgd_core::rng::{self, Purpose};
use dsgd_core::{
    build_from_graph, build_ring, Action, CoreError, CouplingMatrix, DistanceTarget, Evaluation, Graph,
    GradientMode, Initialization, NoiseLaw, PaymentCoefficientSchedule, ProblemInstance, RewardFunction,
    ScheduleParams, Simulation, StrategyPolicy, WeightRule,
};

use crate::config::{
    DistanceSpec, GradientSpec, InitKind, NoiseSpec, PaymentSpec, PolicyKind, ProblemKindSpec, ProblemSpec,
    RewardSpec, ScenarioConfig, TopologyKind, TopologySpec,
};
use crate::error::{ExperimentError, Result};
use crate::validate::validate;

pub fn build_graph(t: &TopologySpec) -> dsgd_core::Result<Graph> {
    match t.kind {
        TopologyKind::Ring => Graph::ring(t.n),
        TopologyKind::Path => Graph::path(t.n),
        TopologyKind::Complete => Graph::complete(t.n),
        TopologyKind::Star => Graph::star(t.n),
        TopologyKind::Edges => Graph::new(
            t.n,
            t.edges.iter().flatten().map(|&[i, j]| (i, j)),
        ),
    }
}

pub fn build_coupling(t: &TopologySpec) -> dsgd_core::Result<CouplingMatrix<f64>> {
    match (t.kind, t.weight) {
        (TopologyKind::Ring, Some(w)) => build_ring(t.n, w),
        (_, Some(w)) => build_from_graph(build_graph(t)?, WeightRule::Uniform(w)),
        (_, None) => build_from_graph(build_graph(t)?, WeightRule::Metropolis),
    }
}

/// Generates the instance from `spec.seed`; the same spec always yields the same data.
pub fn build_problem(spec: &ProblemSpec, n: usize, batch: usize) -> dsgd_core::Result<ProblemInstance<f64>> {
    let mut rng = rng::stream(spec.seed, 0, Purpose::ProblemData);
    let points = match &spec.points {
        Some(p) => p.clone(),
        None => generate::gaussian_points(n, spec.dim, spec.offset, spec.scale, &mut rng),
    };
    let [lo, hi] = spec.spectrum;
    let inst = match spec.kind {
        ProblemKindSpec::LeastSquares => {
            let cov = generate::spd_with_spectrum(spec.dim, lo, hi, &mut rng);
            ProblemInstance::least_squares(points, cov, spec.noise_var)?
        }
        ProblemKindSpec::MeanEstimation => ProblemInstance::mean_estimation(points, spec.noise_var)?,
        ProblemKindSpec::Quadratic => {
            let hessians = (0..n)
                .map(|_| generate::spd_with_spectrum(spec.dim, lo, hi, &mut rng))
                .collect();
            ProblemInstance::quadratic(hessians, points, spec.noise_var)?
        }
        ProblemKindSpec::LogCosh => ProblemInstance::log_cosh(points, spec.noise_var)?,
    };
    inst.with_batch(batch)
}

pub fn noise_law(n: NoiseSpec) -> NoiseLaw {
    match n {
        NoiseSpec::Laplace => NoiseLaw::Laplace,
        NoiseSpec::Gaussian => NoiseLaw::Gaussian,
    }
}

pub fn reward_function(r: RewardSpec) -> RewardFunction {
    match r {
        RewardSpec::Linear => RewardFunction::Linear,
        RewardSpec::SigmoidLike => RewardFunction::SigmoidLike,
    }
}

/// Core policy for a config policy. Best-response entries stay unresolved.
pub fn core_policy(p: &PolicyKind) -> dsgd_core::Result<StrategyPolicy<f64>> {
    Ok(match p {
        PolicyKind::Truthful => StrategyPolicy::Truthful,
        PolicyKind::Fixed { a, b, noise } => StrategyPolicy::Fixed(Action::new(*a, *b, noise_law(*noise))?),
        PolicyKind::Schedule { actions, noise } => StrategyPolicy::Schedule(
            actions
                .iter()
                .map(|&[a, b]| Action::new(a, b, noise_law(*noise)))
                .collect::<dsgd_core::Result<_>>()?,
        ),
        PolicyKind::BestResponse { a_grid, b_grid, noise } => {
            StrategyPolicy::BestResponse(dsgd_core::BestResponseGrid::new(
                a_grid.clone(),
                b_grid.clone(),
                noise_law(*noise),
            )?)
        }
    })
}

/// A scenario with its topology and problem instantiated.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub config: ScenarioConfig,
    pub coupling: Arc<CouplingMatrix<f64>>,
    pub problem: Arc<ProblemInstance<f64>>,
    /// Seeded with `config.seed`; best-response policies are unresolved.
    pub sim: Simulation<f64>,
}

impl Assembled {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let violations = validate(&config);
        if !violations.is_empty() {
            return Err(ExperimentError::Invalid(violations));
        }
        let coupling = Arc::new(build_coupling(&config.topology)?);
        let problem = Arc::new(build_problem(&config.problem, config.topology.n, config.batch)?);
        let mut sim = Simulation::new(coupling.clone(), problem.clone(), schedule_params(&config, config.horizon)?)?
            .with_seed(config.seed)
            .with_gradient_mode(match config.gradient {
                GradientSpec::Stochastic => GradientMode::Stochastic,
                GradientSpec::Exact => GradientMode::Exact,
            })
            .with_init(match config.init.kind {
                InitKind::Gaussian => Initialization::Gaussian { std: config.init.std },
                InitKind::Zeros => Initialization::Zeros,
            });
        for agent in 0..config.topology.n {
            sim = sim.with_policy(agent, core_policy(config.policy_of(agent))?);
        }
        Ok(Self {
            config,
            coupling,
            problem,
            sim,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.config.topology.n
    }

    pub fn reward(&self) -> RewardFunction {
        reward_function(self.config.reward)
    }

    pub fn payment_schedule(&self, spec: &PaymentSpec, horizon: usize) -> Result<PaymentCoefficientSchedule<f64>> {
        let params = schedule_params(&self.config, horizon)?;
        let sched = match *spec {
            PaymentSpec::Off => PaymentCoefficientSchedule::off(),
            PaymentSpec::Constant { c } => PaymentCoefficientSchedule::Constant(c),
            PaymentSpec::Preset { c0 } => PaymentCoefficientSchedule::Preset { c0, params },
            PaymentSpec::Theoretical {
                per_agent_degree,
                reward_lipschitz,
            } => PaymentCoefficientSchedule::Theoretical {
                reward_lipschitz: reward_lipschitz.unwrap_or_else(|| self.reward().lipschitz()),
                smoothness: self.problem.smoothness(),
                rho: self.coupling.rho(),
                min_degree: self.coupling.graph().min_degree(),
                params,
                per_agent_degree,
            },
        };
        Ok(sched.validated()?)
    }

    /// Scoring with `payments` at `horizon`.
    pub fn evaluation_with(&self, payments: &PaymentSpec, horizon: usize) -> Result<Evaluation<f64>> {
        Ok(Evaluation::new(self.payment_schedule(payments, horizon)?, self.reward()).with_target(self.distance_target()?))
    }

    /// Scoring as configured.
    pub fn evaluation(&self) -> Result<Evaluation<f64>> {
        self.evaluation_with(&self.config.payments, self.config.horizon)
    }

    fn distance_target(&self) -> Result<DistanceTarget<f64>> {
        if self.config.distance == DistanceSpec::Global {
            return Ok(DistanceTarget::GlobalOptimum);
        }
        let dev = self.config.deviators()[0];
        match self.config.policy_of(dev) {
            PolicyKind::Fixed { a, .. } => Ok(DistanceTarget::Point(self.problem.deviated_optimum(dev, *a)?)),
            _ => Err(CoreError::InvalidConfig("deviated target needs a fixed deviator".into()).into()),
        }
    }
}

pub fn schedule_params(cfg: &ScenarioConfig, horizon: usize) -> Result<ScheduleParams<f64>> {
    let s = &cfg.schedule;
    Ok(ScheduleParams::new(s.lambda0, s.v, s.r, s.delta, horizon)?)
}
