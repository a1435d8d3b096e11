//! Utility sweeps over actions and payment rules, and the three-way
//! trajectory comparison.

use std::io::Write;
use std::path::{Path, PathBuf};

use dsgd_core::linalg;
use dsgd_core::metrics::mean_stderr;
use dsgd_core::{evaluate, Action, NoiseLaw, StrategyPolicy};
use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::Assembled;
use crate::checks::per_round_series;
use crate::config::{PaymentSpec, ScenarioConfig};
use crate::error::Result;
use crate::runner::{csv_bytes, manifest, resolve_best_responses, write_file, ResolvedResponse};
use crate::svg::Chart;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub payment: String,
    pub a: f64,
    pub b: f64,
    /// Mean over seeds of the group-A average net utility.
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub group_a: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// The `a` with the highest mean utility for this payment rule and `b`;
    /// ties go to the smaller `a`.
    pub fn argmax_a(&self, payment: &str, b: f64) -> Option<f64> {
        let mut best: Option<&SweepCell> = None;
        for c in self.cells.iter().filter(|c| c.payment == payment && c.b == b) {
            if best.is_none_or(|x| c.mean > x.mean || (c.mean == x.mean && c.a < x.a)) {
                best = Some(c);
            }
        }
        best.map(|c| c.a)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "payment,a,b,mean_utility,stderr")?;
        for c in &self.cells {
            writeln!(out, "{},{},{},{},{}", c.payment, c.a, c.b, c.mean, c.stderr)?;
        }
        Ok(())
    }

    /// One chart per payment rule: utility against `a`, one line per `b`.
    pub fn charts(&self) -> Vec<(String, String)> {
        let mut payments: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !payments.contains(&c.payment.as_str()) {
                payments.push(&c.payment);
            }
        }
        payments
            .into_iter()
            .map(|p| {
                let mut bs: Vec<f64> = Vec::new();
                for c in self.cells.iter().filter(|c| c.payment == p) {
                    if !bs.contains(&c.b) {
                        bs.push(c.b);
                    }
                }
                let mut chart = Chart::new(&format!("group-A net utility, payments {p}"), "a", "mean net utility");
                for b in bs {
                    let pts = self
                        .cells
                        .iter()
                        .filter(|c| c.payment == p && c.b == b)
                        .map(|c| (c.a, c.mean))
                        .collect();
                    chart = chart.line(&format!("b = {b}"), pts);
                }
                (format!("utility_{p}.svg"), chart.render())
            })
            .collect()
    }
}

/// Mean group-A net utility for every `(payment, a, b)` cell, group A being
/// the scenario's declared deviators, everyone else truthful. Every cell
/// uses the same seeds.
pub fn utility_sweep(
    base: &ScenarioConfig,
    a_grid: &[f64],
    b_grid: &[f64],
    payments: &[PaymentSpec],
    seeds: &[u64],
) -> Result<SweepTable> {
    let group_a = base.deviators();
    if group_a.is_empty() {
        return Err(dsgd_core::CoreError::InvalidConfig("scenario declares no deviators".into()).into());
    }
    if a_grid.is_empty() || b_grid.is_empty() || payments.is_empty() || seeds.is_empty() {
        return Err(dsgd_core::CoreError::Empty("sweep grid").into());
    }
    let asm = Assembled::new(base.clone())?;
    let evals = payments
        .iter()
        .map(|p| asm.evaluation_with(p, base.horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (pi, _) in payments.iter().enumerate() {
        for &a in a_grid {
            for &b in b_grid {
                cells.push((pi, a, b));
            }
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let (pi, a, b) = cells[c];
            let action = Action::new(a, b, NoiseLaw::Laplace)?;
            let mut sim = asm.sim.clone().with_seed(seed);
            for j in 0..asm.n_agents() {
                let policy = if group_a.contains(&j) {
                    StrategyPolicy::Fixed(action)
                } else {
                    StrategyPolicy::Truthful
                };
                sim = sim.with_policy(j, policy);
            }
            let rep = evaluate(&sim, &evals[pi])?;
            Ok(group_a.iter().map(|&i| rep.metrics.summary[i].net_utility).sum::<f64>() / group_a.len() as f64)
        })
        .collect::<Result<_>>()?;
    let cells = cells
        .iter()
        .enumerate()
        .map(|(c, &(pi, a, b))| {
            let (mean, stderr) = mean_stderr(&values[c * seeds.len()..(c + 1) * seeds.len()]);
            SweepCell {
                payment: payments[pi].label(),
                a,
                b,
                mean,
                stderr,
            }
        })
        .collect();
    Ok(SweepTable { group_a, cells })
}

pub fn write_sweep(dir: &Path, cfg: &ScenarioConfig, table: &SweepTable) -> Result<Vec<PathBuf>> {
    let mut files = vec![("sweep.csv".to_string(), csv_bytes(|b| table.write_csv(b)))];
    for (name, svg) in table.charts() {
        files.push((format!("plots/{name}"), svg.into_bytes()));
    }
    write_all(dir, cfg, files, &[])
}

fn write_all(
    dir: &Path,
    cfg: &ScenarioConfig,
    files: Vec<(String, Vec<u8>)>,
    extra: &[(String, String)],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        written.push(p);
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let p = dir.join("manifest.txt");
    write_file(&p, manifest(cfg, &names, extra).as_bytes())?;
    written.push(p);
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct ThreewayReport {
    /// `(t, truthful, manipulation with payments, manipulation without)`:
    /// `F(mean_i theta_{i,t}) - F(theta*)` averaged over seeds.
    pub curves: Vec<(usize, f64, f64, f64)>,
    pub with_payments: Vec<ResolvedResponse>,
    pub without_payments: Vec<ResolvedResponse>,
}

impl ThreewayReport {
    pub fn terminal(&self) -> (f64, f64, f64) {
        let &(_, a, b, c) = self.curves.last().expect("nonempty");
        (a, b, c)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,truthful,with_payments,without_payments")?;
        for &(t, a, b, c) in &self.curves {
            writeln!(out, "{t},{a},{b},{c}")?;
        }
        Ok(())
    }

    pub fn chart(&self) -> String {
        let pick = |f: fn(&(usize, f64, f64, f64)) -> f64| {
            self.curves.iter().map(|c| ((c.0 + 1) as f64, f(c))).collect::<Vec<_>>()
        };
        Chart::new("objective gap of the average iterate", "t + 1", "F(mean theta_t) - F*")
            .log_x()
            .log_y()
            .line("no manipulation", pick(|c| c.1))
            .line("manipulation + payments", pick(|c| c.2))
            .line("manipulation, no payments", pick(|c| c.3))
            .render()
    }
}

/// Gap curves for (i) everyone truthful, (ii) deviators best-responding to
/// the scenario's payment rule, (iii) deviators best-responding with no
/// payments. Fixed-action deviators keep their action in (ii) and (iii).
pub fn threeway_comparison(base: &ScenarioConfig, seeds: &[u64]) -> Result<ThreewayReport> {
    if seeds.is_empty() {
        return Err(dsgd_core::CoreError::Empty("seeds").into());
    }
    let asm = Assembled::new(base.clone())?;
    let truthful = Assembled::new(base.clone().all_truthful())?.sim;
    let (with_pay, with_payments) = resolve_best_responses(&asm.sim, &asm.evaluation()?, seeds)?;
    let (without_pay, without_payments) =
        resolve_best_responses(&asm.sim, &asm.evaluation_with(&PaymentSpec::Off, base.horizon)?, seeds)?;
    let p = asm.problem.clone();
    let gap = |st: &[dsgd_core::AgentState<f64>]| {
        let thetas: Vec<Vec<f64>> = st.iter().map(|s| s.curr.clone()).collect();
        p.optimality_gap(&linalg::mean_vec(&thetas))
    };
    let sims = [truthful, with_pay, without_pay];
    let jobs: Vec<(usize, u64)> = (0..3).flat_map(|k| seeds.iter().map(move |&s| (k, s))).collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(k, s)| per_round_series(&sims[k].clone().with_seed(s), gap))
        .collect::<Result<_>>()?;
    let n = seeds.len();
    let mean = |k: usize, t: usize| rows[k * n..(k + 1) * n].iter().map(|r| r[t]).sum::<f64>() / n as f64;
    let curves = (0..=base.horizon).map(|t| (t, mean(0, t), mean(1, t), mean(2, t))).collect();
    Ok(ThreewayReport {
        curves,
        with_payments,
        without_payments,
    })
}

pub fn write_threeway(dir: &Path, cfg: &ScenarioConfig, report: &ThreewayReport) -> Result<Vec<PathBuf>> {
    let files = vec![
        ("threeway.csv".to_string(), csv_bytes(|b| report.write_csv(b))),
        ("plots/threeway.svg".to_string(), report.chart().into_bytes()),
    ];
    let extra: Vec<(String, String)> = report
        .with_payments
        .iter()
        .map(|r| (format!("with_payments.{}", r.agent), format!("a={},b={}", r.action.a(), r.action.b())))
        .chain(
            report
                .without_payments
                .iter()
                .map(|r| (format!("without_payments.{}", r.agent), format!("a={},b={}", r.action.a(), r.action.b()))),
        )
        .collect();
    write_all(dir, cfg, files, &extra)
}
