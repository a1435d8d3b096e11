//! Single runs: best-response resolution, execution and artifact writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dsgd_core::{
    best_response_search, evaluate, Action, Evaluation, RunReport, Simulation, StrategyPolicy,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::assemble::Assembled;
use crate::config::ScenarioConfig;
use crate::error::{ExperimentError, Result};
use crate::svg::Chart;

/// Net utility of `agent` in one scored run.
pub fn agent_utility(sim: &Simulation<f64>, eval: &Evaluation<f64>, agent: usize) -> Result<f64> {
    Ok(evaluate(sim, eval)?.metrics.summary[agent].net_utility)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedResponse {
    pub agent: usize,
    pub action: Action<f64>,
    pub mean_utility: f64,
    /// Mean utility of every grid point, in grid order.
    pub table: Vec<(Action<f64>, f64)>,
}

/// Replaces every best-response policy in `sim` with the grid action that
/// maximises that agent's mean net utility over `seeds`, all other agents
/// truthful. Grid points and seeds are evaluated in parallel.
pub fn resolve_best_responses(
    sim: &Simulation<f64>,
    eval: &Evaluation<f64>,
    seeds: &[u64],
) -> Result<(Simulation<f64>, Vec<ResolvedResponse>)> {
    let mut resolved = sim.clone();
    let mut out = Vec::new();
    for (agent, policy) in sim.policies.iter().enumerate() {
        let StrategyPolicy::BestResponse(grid) = policy else {
            continue;
        };
        let mut alone = sim.clone();
        for j in 0..sim.n_agents() {
            alone = alone.with_policy(j, StrategyPolicy::Truthful);
        }
        let actions = grid.actions()?;
        let cells: Vec<(usize, u64)> = (0..actions.len())
            .flat_map(|k| seeds.iter().map(move |&s| (k, s)))
            .collect();
        let utilities: Vec<f64> = cells
            .par_iter()
            .map(|&(k, seed)| {
                let run = alone
                    .clone()
                    .with_seed(seed)
                    .with_policy(agent, StrategyPolicy::Fixed(actions[k]));
                agent_utility(&run, eval, agent)
            })
            .collect::<Result<_>>()?;
        let lookup: BTreeMap<(usize, u64), f64> = cells.into_iter().zip(utilities).collect();
        let best = best_response_search::<f64, ExperimentError, _>(grid, seeds, |act, seed| {
            let k = actions.iter().position(|a| a == act).expect("grid action");
            Ok(lookup[&(k, seed)])
        })?;
        resolved = resolved.with_policy(agent, StrategyPolicy::Fixed(best.action));
        out.push(ResolvedResponse {
            agent,
            action: best.action,
            mean_utility: best.mean_utility,
            table: best.table,
        });
    }
    Ok((resolved, out))
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub report: RunReport<f64>,
    pub responses: Vec<ResolvedResponse>,
}

/// Runs `cfg` once with its own seed, resolving best responses over the
/// seed batch derived from it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let asm = Assembled::new(cfg.clone())?;
    let eval = asm.evaluation()?;
    let (sim, responses) = resolve_best_responses(&asm.sim, &eval, &cfg.seeds())?;
    let report = evaluate(&sim.with_seed(cfg.seed), &eval)?;
    Ok(RunArtifacts {
        config: cfg.clone(),
        report,
        responses,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

/// Flat `key=value` manifest; `config_json` alone reproduces the run.
pub fn manifest(cfg: &ScenarioConfig, outputs: &[&str], extra: &[(String, String)]) -> String {
    let json = cfg.to_json();
    let mut lines = vec![
        format!("name={}", cfg.name),
        format!("seed={}", cfg.seed),
        format!("horizon={}", cfg.horizon),
        format!("dsgd_version={}", env!("CARGO_PKG_VERSION")),
        format!("config_sha256={}", sha256_hex(json.as_bytes())),
        format!("config_json={json}"),
        format!("outputs={}", outputs.join(",")),
    ];
    lines.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    lines.join("\n") + "\n"
}

pub fn parse_manifest(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// The configuration recorded in a manifest, checked against its hash.
pub fn config_from_manifest(text: &str) -> Result<ScenarioConfig> {
    let kv = parse_manifest(text);
    let json = kv
        .get("config_json")
        .ok_or_else(|| ExperimentError::Parse("manifest has no config_json".into()))?;
    if kv.get("config_sha256").map(String::as_str) != Some(&sha256_hex(json.as_bytes())) {
        return Err(ExperimentError::Parse("manifest config hash mismatch".into()));
    }
    ScenarioConfig::from_json(json)
}

/// Writes `metrics.csv`, `ledger.csv`, `summary.csv`, `plots/*.svg` and
/// `manifest.txt` under `dir`; returns the paths written.
pub fn write_run(dir: &Path, art: &RunArtifacts) -> Result<Vec<PathBuf>> {
    let metrics = &art.report.metrics;
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("metrics.csv", csv_bytes(|b| metrics.write_csv(b))),
        ("ledger.csv", csv_bytes(|b| art.report.ledger.write_csv(b))),
        ("summary.csv", csv_bytes(|b| metrics.write_summary_csv(b))),
        ("plots/distance.svg", distance_chart(art).into_bytes()),
        ("plots/payments.svg", payment_chart(art).into_bytes()),
    ];
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    let extra: Vec<(String, String)> = art
        .responses
        .iter()
        .map(|r| (format!("best_response.{}", r.agent), format!("a={},b={}", r.action.a(), r.action.b())))
        .collect();
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        written.push(p);
    }
    let p = dir.join("manifest.txt");
    write_file(&p, manifest(&art.config, &names, &extra).as_bytes())?;
    written.push(p);
    Ok(written)
}

fn distance_chart(art: &RunArtifacts) -> String {
    let m = &art.report.metrics;
    let mut chart = Chart::new(&format!("{}: distance to target", art.config.name), "t + 1", "squared distance")
        .log_x()
        .log_y();
    for i in 0..m.n_agents() {
        let pts = m.rounds.iter().map(|r| ((r.t + 1) as f64, r.agents[i].dist_sq)).collect();
        chart = chart.line(&format!("agent {i}"), pts);
    }
    chart.render()
}

fn payment_chart(art: &RunArtifacts) -> String {
    let m = &art.report.metrics;
    let mut chart = Chart::new(&format!("{}: cumulative payments", art.config.name), "t", "sum of P_i,s for s <= t");
    for i in 0..m.n_agents() {
        let mut acc = 0.0;
        let pts = m
            .rounds
            .iter()
            .map(|r| {
                acc += r.agents[i].payment;
                (r.t as f64, acc)
            })
            .collect();
        chart = chart.line(&format!("agent {i}"), pts);
    }
    chart.render()
}
