use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsgd_experiments::assemble::core_policy;
use dsgd_experiments::config::{GradientSpec, NoiseSpec};
use dsgd_experiments::{
    builtin, cesaro_slope, distance_slope, example1_check, example2_check, ic_gap, run_scenario,
    threeway_comparison, utility_sweep, validate, write_run, write_sweep, write_threeway, Assembled,
    ExperimentError, PaymentSpec, PolicyKind, ScenarioConfig,
};
use serde_json::{json, Value};

/// Decentralized SGD with strategic agents and budget-balanced payments.
#[derive(Debug, Parser)]
#[command(name = "dsgd", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DSGD_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Scenario {
    /// Built-in scenario name or path to a TOML file.
    #[arg(long, short)]
    scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the horizon T.
    #[arg(long)]
    horizon: Option<usize>,
    /// Overrides the number of seeds averaged over.
    #[arg(long)]
    seeds: Option<usize>,
}

impl Scenario {
    fn load(&self) -> Result<ScenarioConfig, ExperimentError> {
        let mut cfg = builtin::resolve(&self.scenario)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(n) = self.seeds {
            cfg.n_seeds = n;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct Output {
    /// Output directory (default: out/<scenario name>).
    #[arg(long, env = "DSGD_OUT_DIR")]
    out: Option<PathBuf>,
}

impl Output {
    fn dir(&self, cfg: &ScenarioConfig, suffix: &str) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(format!("{}{suffix}", cfg.name)))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SlopeKind {
    /// Mean squared distance to the optimum over a window.
    Distance,
    /// Cesaro-averaged objective gap across horizons.
    Cesaro,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List built-in scenarios.
    List,
    /// Check a scenario against every configuration constraint.
    Validate {
        #[command(flatten)]
        scenario: Scenario,
    },
    /// Run a scenario and write metrics, ledger, plots and a manifest.
    Run {
        #[command(flatten)]
        scenario: Scenario,
        #[command(flatten)]
        output: Output,
    },
    /// Group-A utility over an action grid, or the three-way gap comparison.
    Sweep {
        #[command(flatten)]
        scenario: Scenario,
        #[command(flatten)]
        output: Output,
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3")]
        a_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        b_grid: Vec<f64>,
        /// Payment rules: off, preset[:c0], constant:C, theoretical, theoretical-per-agent.
        #[arg(long, value_delimiter = ',', value_parser = parse_payment, default_value = "off,preset,theoretical")]
        payments: Vec<PaymentSpec>,
        /// Compare truthful, paid and unpaid best responses instead.
        #[arg(long)]
        threeway: bool,
    },
    /// Least-squares deviation against its closed forms.
    CheckExample1 {
        #[arg(long, short, default_value = "example1")]
        scenario: String,
        #[arg(long, default_value_t = 3.0)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        deviator: usize,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Use stochastic gradients instead of exact ones.
        #[arg(long)]
        stochastic: bool,
    },
    /// Mean-estimation deviation against its closed forms.
    CheckExample2 {
        #[arg(long, short, default_value = "example2")]
        scenario: String,
        #[arg(long, default_value_t = 3.0)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        deviator: usize,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Log-log convergence slope.
    Slopes {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, value_enum, default_value = "distance")]
        kind: SlopeKind,
        /// Fit window for `distance`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1000usize, 100000])]
        window: Vec<usize>,
        /// Horizons for `cesaro`.
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 10000, 100000])]
        horizons: Vec<usize>,
    },
    /// Paired-seed gain from a fixed deviation, all others truthful.
    IcGap {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        deviator: usize,
        #[arg(long, default_value_t = 3.0)]
        a: f64,
        #[arg(long, default_value_t = 0.0)]
        b: f64,
        /// Payment rule; defaults to the scenario's.
        #[arg(long, value_parser = parse_payment)]
        payments: Option<PaymentSpec>,
    },
}

fn parse_payment(s: &str) -> Result<PaymentSpec, String> {
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    let num = |a: Option<&str>| -> Result<Option<f64>, String> {
        a.map(|x| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"))).transpose()
    };
    match head {
        "off" => Ok(PaymentSpec::Off),
        "preset" => Ok(PaymentSpec::Preset {
            c0: num(arg)?.unwrap_or(1e-6),
        }),
        "constant" => Ok(PaymentSpec::Constant {
            c: num(arg)?.ok_or("constant needs a value, e.g. constant:1000")?,
        }),
        "theoretical" => Ok(PaymentSpec::Theoretical {
            per_agent_degree: false,
            reward_lipschitz: num(arg)?,
        }),
        "theoretical-per-agent" => Ok(PaymentSpec::Theoretical {
            per_agent_degree: true,
            reward_lipschitz: num(arg)?,
        }),
        _ => Err(format!("unknown payment rule `{s}`")),
    }
}

fn paths(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn execute(command: Command) -> Result<Value, ExperimentError> {
    match command {
        Command::List => Ok(json!(builtin::names().collect::<Vec<_>>())),
        Command::Validate { scenario } => {
            let cfg = scenario.load()?;
            let violations = validate(&cfg);
            if violations.is_empty() {
                Ok(json!({ "scenario": cfg.name, "valid": true, "violations": [] }))
            } else {
                Err(ExperimentError::Invalid(violations))
            }
        }
        Command::Run { scenario, output } => {
            let cfg = scenario.load()?;
            let art = run_scenario(&cfg)?;
            let files = write_run(&output.dir(&cfg, ""), &art)?;
            let agents: Vec<Value> = art
                .report
                .metrics
                .summary
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    json!({
                        "agent": i,
                        "final_cost": s.final_cost,
                        "final_dist_sq": s.final_dist_sq,
                        "reward": s.reward,
                        "payments": s.payments,
                        "net_utility": s.net_utility,
                    })
                })
                .collect();
            let responses: Vec<Value> = art
                .responses
                .iter()
                .map(|r| json!({ "agent": r.agent, "a": r.action.a(), "b": r.action.b(), "mean_utility": r.mean_utility }))
                .collect();
            Ok(json!({
                "scenario": cfg.name,
                "seed": cfg.seed,
                "horizon": cfg.horizon,
                "agents": agents,
                "best_responses": responses,
                "files": paths(&files),
            }))
        }
        Command::Sweep {
            scenario,
            output,
            a_grid,
            b_grid,
            payments,
            threeway,
        } => {
            let cfg = scenario.load()?;
            let seeds = cfg.seeds();
            if threeway {
                let report = threeway_comparison(&cfg, &seeds)?;
                let files = write_threeway(&output.dir(&cfg, "_threeway"), &cfg, &report)?;
                let (truthful, paid, unpaid) = report.terminal();
                let actions = |rs: &[dsgd_experiments::runner::ResolvedResponse]| -> Vec<Value> {
                    rs.iter()
                        .map(|r| json!({ "agent": r.agent, "a": r.action.a(), "b": r.action.b() }))
                        .collect()
                };
                return Ok(json!({
                    "scenario": cfg.name,
                    "terminal_gap": { "truthful": truthful, "with_payments": paid, "without_payments": unpaid },
                    "best_responses": {
                        "with_payments": actions(&report.with_payments),
                        "without_payments": actions(&report.without_payments),
                    },
                    "files": paths(&files),
                }));
            }
            let table = utility_sweep(&cfg, &a_grid, &b_grid, &payments, &seeds)?;
            let files = write_sweep(&output.dir(&cfg, "_sweep"), &cfg, &table)?;
            let argmax: Vec<Value> = payments
                .iter()
                .flat_map(|p| {
                    let table = &table;
                    b_grid
                        .iter()
                        .map(move |&b| json!({ "payments": p.label(), "b": b, "best_a": table.argmax_a(&p.label(), b) }))
                })
                .collect();
            Ok(json!({
                "scenario": cfg.name,
                "group_a": table.group_a,
                "argmax": argmax,
                "files": paths(&files),
            }))
        }
        Command::CheckExample1 {
            scenario,
            a,
            deviator,
            seeds,
            stochastic,
        } => {
            let mut cfg = builtin::resolve(&scenario)?;
            cfg.n_seeds = seeds;
            let gradient = if stochastic {
                GradientSpec::Stochastic
            } else {
                GradientSpec::Exact
            };
            let r = example1_check(&cfg, deviator, a, gradient, &cfg.seeds())?;
            let mut v = serde_json::to_value(&r).expect("report serializes");
            v["increase_rel_error"] = json!(r.increase_rel_error());
            Ok(v)
        }
        Command::CheckExample2 {
            scenario,
            a,
            deviator,
            seeds,
        } => {
            let mut cfg = builtin::resolve(&scenario)?;
            cfg.n_seeds = seeds;
            let r = example2_check(&cfg, deviator, a, &cfg.seeds())?;
            Ok(serde_json::to_value(&r).expect("report serializes"))
        }
        Command::Slopes {
            scenario,
            kind,
            window,
            horizons,
        } => {
            let cfg = scenario.load()?;
            let r = match kind {
                SlopeKind::Distance => distance_slope(&cfg, &cfg.seeds(), (window[0], window[1]))?,
                SlopeKind::Cesaro => cesaro_slope(&cfg, &cfg.seeds(), &horizons)?,
            };
            Ok(json!({ "scenario": cfg.name, "kind": format!("{kind:?}").to_lowercase(), "window": r.window, "slope": r.slope }))
        }
        Command::IcGap {
            scenario,
            deviator,
            a,
            b,
            payments,
        } => {
            let cfg = scenario.load()?;
            let payments = payments.unwrap_or(cfg.payments);
            let asm = Assembled::new(cfg.clone().all_truthful())?;
            let deviation = core_policy(&PolicyKind::Fixed {
                a,
                b,
                noise: NoiseSpec::Laplace,
            })?;
            let eval = asm.evaluation_with(&payments, cfg.horizon)?;
            let g = ic_gap(&asm.sim, deviator, &deviation, &eval, &cfg.seeds())?;
            Ok(json!({
                "scenario": cfg.name,
                "payments": payments.label(),
                "deviator": deviator,
                "a": a,
                "b": b,
                "mean_gain": g.mean,
                "stderr": g.stderr,
                "per_seed": g.per_seed,
            }))
        }
    }
}

fn report_error(e: &ExperimentError) -> ExitCode {
    let violations = match e {
        ExperimentError::Invalid(v) => serde_json::to_value(v).expect("violations serialize"),
        _ => json!([]),
    };
    let body = json!({ "error": e.kind(), "message": e.to_string(), "violations": violations });
    eprintln!("{body}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": "invalid_config", "message": e.to_string(), "violations": [] }));
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e),
    }
}
