//! Pairwise second-difference payments.
//!
//! At round `t` every agent `i` exposes `Delta_i = |theta_{i,t+1} - 2 theta_{i,t} + theta_{i,t-1}|^2`.
//! For each edge `{i, j}` agent `i` pays `P_i^j = C_t (Delta_i - Delta_j)` to
//! `j` (a negative amount means `i` receives), and `P_j^i = -P_i^j`. Each
//! edge amount is computed once and negated for the counterparty, so the
//! ledger is antisymmetric and budget balanced by construction.

use std::io::{self, Write};

use crate::engine::{AgentState, RoundObserver, RoundRecord, ScheduleParams};
use crate::error::{CoreError, Result};
use crate::linalg::exact_sum;
use crate::scalar::Scalar;
use crate::topology::Graph;

/// `|next - 2 curr + prev|^2`
pub fn second_difference<S: Scalar>(next: &[S], curr: &[S], prev: &[S]) -> Result<S> {
    if next.len() != curr.len() || curr.len() != prev.len() {
        return Err(CoreError::DimensionMismatch {
            expected: curr.len(),
            found: if next.len() != curr.len() { next.len() } else { prev.len() },
        });
    }
    let two = S::lit(2.0);
    Ok(next
        .iter()
        .zip(curr)
        .zip(prev)
        .map(|((&a, &b), &c)| {
            let d = a - two * b + c;
            d * d
        })
        .sum())
}

/// `C_t (Delta_i - Delta_j)`: positive means `i` pays `j`.
pub fn pairwise_payment<S: Scalar>(delta_i: S, delta_j: S, c_t: S) -> Result<S> {
    if !(delta_i >= S::zero()) || !(delta_j >= S::zero()) {
        return Err(CoreError::NegativePaymentInput(format!(
            "second differences must be >= 0, got ({delta_i}, {delta_j})"
        )));
    }
    if !(c_t >= S::zero()) {
        return Err(CoreError::NegativePaymentInput(format!("C_t = {c_t} must be >= 0")));
    }
    if c_t == S::zero() {
        return Ok(S::zero());
    }
    Ok(c_t * (delta_i - delta_j))
}

/// Source of the payment coefficient `C_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaymentCoefficientSchedule<S> {
    /// `C_t = 4 L_R sqrt(6 d_{t+1 -> T+1}) / (deg lambda_t kappa_t delta)` with
    /// `d_{a -> b} = exp(20 H^2 lambda0^2 / ((1 - rho)(2v - 1))) (a^{1-2v} - b^{1-2v})`.
    ///
    /// `deg` is `min_degree`, or `min(deg i, deg j)` per edge when
    /// `per_agent_degree` is set.
    Theoretical {
        reward_lipschitz: S,
        smoothness: S,
        rho: S,
        min_degree: usize,
        params: ScheduleParams<S>,
        per_agent_degree: bool,
    },
    /// `C_t = c0 kappa_t^2 / (delta^2 (t+1)^{-2v})`; horizon free.
    Preset { c0: S, params: ScheduleParams<S> },
    Constant(S),
}

impl<S: Scalar> PaymentCoefficientSchedule<S> {
    pub fn off() -> Self {
        Self::Constant(S::zero())
    }

    /// Violations of the schedule's preconditions; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match *self {
            Self::Theoretical {
                reward_lipschitz,
                smoothness,
                rho,
                min_degree,
                params,
                ..
            } => {
                out.extend(params.payment_window_violations());
                if !(reward_lipschitz >= S::zero()) || !reward_lipschitz.is_finite() {
                    out.push(format!("reward Lipschitz constant {reward_lipschitz} must be finite and >= 0"));
                }
                if !(smoothness >= S::zero()) || !smoothness.is_finite() {
                    out.push(format!("smoothness H = {smoothness} must be finite and >= 0"));
                }
                if !(rho >= S::zero() && rho < S::one()) {
                    out.push(format!("rho = {rho} not in [0, 1)"));
                }
                if min_degree == 0 {
                    out.push("minimum degree must be positive".into());
                }
                if out.is_empty() && !self.horizon_prefactor().is_finite() {
                    out.push("exp(20 H^2 lambda0^2 / ((1 - rho)(2v - 1))) overflows".into());
                }
            }
            Self::Preset { c0, .. } => {
                if !(c0 >= S::zero()) || !c0.is_finite() {
                    out.push(format!("preset c0 = {c0} must be finite and >= 0"));
                }
            }
            Self::Constant(c) => {
                if !(c >= S::zero()) || !c.is_finite() {
                    out.push(format!("constant C = {c} must be finite and >= 0"));
                }
            }
        }
        out
    }

    pub fn validated(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(CoreError::InvalidSchedule(v.join("; ")))
        }
    }

    fn horizon_prefactor(&self) -> S {
        match *self {
            Self::Theoretical {
                smoothness,
                rho,
                params,
                ..
            } => {
                let num = S::lit(20.0) * smoothness * smoothness * params.lambda0 * params.lambda0;
                let den = (S::one() - rho) * (S::lit(2.0) * params.v - S::one());
                (num / den).exp()
            }
            _ => S::one(),
        }
    }

    /// `d_{t+1 -> T+1}`; zero at and beyond the horizon.
    pub fn tail_weight(&self, t: usize) -> S {
        match *self {
            Self::Theoretical { params, .. } => {
                let e = S::one() - S::lit(2.0) * params.v;
                let a = S::from_count(t + 1).powf(e);
                let b = S::from_count(params.horizon + 1).powf(e);
                if t >= params.horizon {
                    S::zero()
                } else {
                    (self.horizon_prefactor() * (a - b)).max(S::zero())
                }
            }
            _ => S::zero(),
        }
    }

    /// `C_t` using the schedule's default degree.
    pub fn coefficient(&self, t: usize) -> S {
        match *self {
            Self::Theoretical { min_degree, .. } => self.coefficient_for_degree(t, min_degree),
            Self::Preset { c0, params } => {
                let kappa = params.kappa(t);
                let growth = S::from_count(t + 1).powf(-S::lit(2.0) * params.v);
                c0 * kappa * kappa / (params.delta * params.delta * growth)
            }
            Self::Constant(c) => c,
        }
    }

    fn coefficient_for_degree(&self, t: usize, degree: usize) -> S {
        match *self {
            Self::Theoretical {
                reward_lipschitz,
                params,
                ..
            } => {
                if t >= params.horizon {
                    log::debug!("C_{t} = 0: round {t} is at or beyond the horizon {}", params.horizon);
                    return S::zero();
                }
                let d = self.tail_weight(t);
                let denom = S::from_count(degree) * params.stepsize(t) * params.kappa(t) * params.delta;
                S::lit(4.0) * reward_lipschitz * (S::lit(6.0) * d).sqrt() / denom
            }
            _ => self.coefficient(t),
        }
    }

    /// Coefficient applied to edge `{i, j}` with degrees `deg_i`, `deg_j`.
    pub fn pair_coefficient(&self, t: usize, deg_i: usize, deg_j: usize) -> S {
        match *self {
            Self::Theoretical {
                per_agent_degree: true,
                ..
            } => self.coefficient_for_degree(t, deg_i.min(deg_j)),
            _ => self.coefficient(t),
        }
    }
}

/// One edge's settlement at one round, stored once for the ordered pair `(i, j)`, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTransfer<S> {
    pub i: usize,
    pub j: usize,
    /// `P_i^j`; `P_j^i` is its negation.
    pub amount: S,
    pub coefficient: S,
    pub delta_i: S,
    pub delta_j: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSettlement<S> {
    pub t: usize,
    pub deltas: Vec<S>,
    pub transfers: Vec<EdgeTransfer<S>>,
    /// `P_{i,t} = sum_j P_i^j`, rounded once from the exact sum.
    pub totals: Vec<S>,
}

impl<S: Scalar> RoundSettlement<S> {
    /// Directed entries `(payer, payee, amount)`: two per edge.
    pub fn directed(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        self.transfers
            .iter()
            .flat_map(|e| [(e.i, e.j, e.amount), (e.j, e.i, -e.amount)])
    }

    /// `P_i^j` for any ordered adjacent pair.
    pub fn transfer(&self, i: usize, j: usize) -> Option<S> {
        self.transfers.iter().find_map(|e| {
            if e.i == i && e.j == j {
                Some(e.amount)
            } else if e.i == j && e.j == i {
                Some(-e.amount)
            } else {
                None
            }
        })
    }

    /// `sum_i P_{i,t}` evaluated without rounding over every directed entry.
    pub fn budget_residual(&self) -> S {
        exact_sum(self.directed().map(|(_, _, a)| a))
    }
}

/// `(theta_{t-1}, theta_t, theta_{t+1})`
pub type Window<'a, S> = (&'a [S], &'a [S], &'a [S]);

/// Settles every edge of `graph` for round `t`, with `coefficient(i, j)`
/// giving the edge coefficient.
pub fn settle_round_with<S: Scalar>(
    t: usize,
    windows: &[Window<'_, S>],
    graph: &Graph,
    coefficient: impl Fn(usize, usize) -> S,
) -> Result<RoundSettlement<S>> {
    let n = graph.n_agents();
    if windows.len() != n {
        return Err(CoreError::MissingWindow {
            agent: windows.len().min(n),
        });
    }
    let deltas = windows
        .iter()
        .enumerate()
        .map(|(i, (prev, curr, next))| {
            second_difference(next, curr, prev).map_err(|_| CoreError::MissingWindow { agent: i })
        })
        .collect::<Result<Vec<S>>>()?;
    let mut transfers = Vec::with_capacity(graph.n_edges());
    let mut per_agent: Vec<Vec<S>> = vec![Vec::new(); n];
    for (i, j) in graph.edges() {
        let c = coefficient(i, j);
        let amount = pairwise_payment(deltas[i], deltas[j], c)?;
        per_agent[i].push(amount);
        per_agent[j].push(-amount);
        transfers.push(EdgeTransfer {
            i,
            j,
            amount,
            coefficient: c,
            delta_i: deltas[i],
            delta_j: deltas[j],
        });
    }
    let totals = per_agent.into_iter().map(exact_sum).collect();
    Ok(RoundSettlement {
        t,
        deltas,
        transfers,
        totals,
    })
}

/// [`settle_round_with`] with one coefficient for every edge.
pub fn settle_round<S: Scalar>(
    t: usize,
    windows: &[Window<'_, S>],
    graph: &Graph,
    c_t: S,
) -> Result<RoundSettlement<S>> {
    settle_round_with(t, windows, graph, |_, _| c_t)
}

/// What one side of an edge computes: both second differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaymentClaim<S> {
    pub delta_i: S,
    pub delta_j: S,
}

impl<S: Scalar> PaymentClaim<S> {
    pub fn from_windows(window_i: Window<'_, S>, window_j: Window<'_, S>) -> Result<Self> {
        let (pi, ci, ni) = window_i;
        let (pj, cj, nj) = window_j;
        Ok(Self {
            delta_i: second_difference(ni, ci, pi)?,
            delta_j: second_difference(nj, cj, pj)?,
        })
    }

    pub fn transfer(&self, c_t: S) -> Result<S> {
        pairwise_payment(self.delta_i, self.delta_j, c_t)
    }
}

/// True iff both sides' claims produce bit-identical transfers. Verification
/// is exact equality; any discrepancy is logged and rejected.
pub fn cross_verify<S: Scalar>(c_t: S, by_i: &PaymentClaim<S>, by_j: &PaymentClaim<S>) -> bool {
    match (by_i.transfer(c_t), by_j.transfer(c_t)) {
        (Ok(a), Ok(b)) if a.to_bits_eq(b) => true,
        (a, b) => {
            log::warn!("payment cross-verification failed: {a:?} vs {b:?}");
            false
        }
    }
}

/// Recomputes both claims from each side's copy of the shared windows.
pub fn cross_verify_windows<S: Scalar>(
    c_t: S,
    view_of_i: (Window<'_, S>, Window<'_, S>),
    view_of_j: (Window<'_, S>, Window<'_, S>),
) -> bool {
    match (
        PaymentClaim::from_windows(view_of_i.0, view_of_i.1),
        PaymentClaim::from_windows(view_of_j.0, view_of_j.1),
    ) {
        (Ok(a), Ok(b)) => cross_verify(c_t, &a, &b),
        _ => false,
    }
}

trait BitEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<S: Scalar> BitEq for S {
    fn to_bits_eq(self, other: Self) -> bool {
        // equal values with equal sign; -0.0 and 0.0 differ in bits
        self == other && self.is_sign_negative() == other.is_sign_negative()
    }
}

/// Append-only record of every round's settlement.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentLedger<S> {
    n_agents: usize,
    rounds: Vec<RoundSettlement<S>>,
}

impl<S: Scalar> PaymentLedger<S> {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n_agents,
            rounds: Vec::new(),
        }
    }

    pub fn push(&mut self, round: RoundSettlement<S>) {
        debug_assert_eq!(round.totals.len(), self.n_agents);
        self.rounds.push(round);
    }

    pub fn rounds(&self) -> &[RoundSettlement<S>] {
        &self.rounds
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// `P_{i,t}` for every round of agent `i`.
    pub fn agent_series(&self, i: usize) -> Vec<S> {
        self.rounds.iter().map(|r| r.totals[i]).collect()
    }

    /// `sum_t P_{i,t}` summed exactly over every directed entry of agent `i`.
    pub fn cumulative(&self, i: usize) -> S {
        exact_sum(
            self.rounds
                .iter()
                .flat_map(|r| r.directed().filter(move |&(p, _, _)| p == i).map(|(_, _, a)| a)),
        )
    }

    /// Largest `|P_i^j + P_j^i|` and `|sum_i P_{i,t}|` over all rounds.
    pub fn balance_violations(&self) -> (S, S) {
        let mut anti = S::zero();
        let mut budget = S::zero();
        for r in &self.rounds {
            for e in &r.transfers {
                let fwd = r.transfer(e.i, e.j).unwrap_or(S::nan());
                let back = r.transfer(e.j, e.i).unwrap_or(S::nan());
                anti = anti.max((fwd + back).abs());
            }
            budget = budget.max(r.budget_residual().abs());
        }
        (anti, budget)
    }

    /// CSV with header `t,i,j,transfer,C_t,delta_i,delta_j`; one row per
    /// ordered adjacent pair per round.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,i,j,transfer,C_t,delta_i,delta_j")?;
        for r in &self.rounds {
            for e in &r.transfers {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.t, e.i, e.j, e.amount, e.coefficient, e.delta_i, e.delta_j
                )?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.t, e.j, e.i, -e.amount, e.coefficient, e.delta_j, e.delta_i
                )?;
            }
        }
        Ok(())
    }
}

/// Settles each round as the engine produces it.
#[derive(Debug, Clone)]
pub struct LedgerObserver<S> {
    graph: Graph,
    schedule: PaymentCoefficientSchedule<S>,
    pub ledger: PaymentLedger<S>,
}

impl<S: Scalar> LedgerObserver<S> {
    pub fn new(graph: Graph, schedule: PaymentCoefficientSchedule<S>) -> Self {
        let n = graph.n_agents();
        Self {
            graph,
            schedule,
            ledger: PaymentLedger::new(n),
        }
    }
}

impl<S: Scalar> RoundObserver<S> for LedgerObserver<S> {
    fn on_round(&mut self, record: &RoundRecord<S>, states: &[AgentState<S>]) -> Result<()> {
        let windows: Vec<Window<'_, S>> = states.iter().map(AgentState::window).collect();
        let graph = &self.graph;
        let schedule = &self.schedule;
        let round = settle_round_with(record.t, &windows, graph, |i, j| {
            schedule.pair_coefficient(record.t, graph.degree(i), graph.degree(j))
        })?;
        self.ledger.push(round);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn second_difference_examples() {
        let th = [1.0, -2.0];
        assert_eq!(second_difference(&th, &th, &th).unwrap(), 0.0);
        assert_eq!(second_difference(&[2.0], &[1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(second_difference(&[3.0, 4.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 25.0);
        assert!(second_difference(&[1.0], &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn pairwise_payment_examples() {
        assert_eq!(pairwise_payment(1.5, 1.5, 7.0).unwrap(), 0.0);
        assert_eq!(pairwise_payment(2.0, 1.0, 3.0).unwrap(), 3.0);
        assert_eq!(pairwise_payment(1.0, 2.0, 3.0).unwrap(), -3.0);
        assert_eq!(pairwise_payment(9.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(pairwise_payment(-1.0, 1.0, 1.0).is_err());
        assert!(pairwise_payment(1.0, 1.0, -1.0).is_err());
    }

    fn params(horizon: usize) -> ScheduleParams<f64> {
        ScheduleParams::new(0.1, 0.55, 0.51, 1e-4, horizon).unwrap()
    }

    #[test]
    fn preset_coefficient_at_zero() {
        let s = PaymentCoefficientSchedule::Preset {
            c0: 1e-6,
            params: params(10),
        };
        assert_relative_eq!(s.coefficient(0), 100.0, epsilon = 1e-9);
        // kappa_t^2 (t+1)^{2v} / delta^2 * 1e-6 = (t+1)^{2(v-r)} * 100
        assert_relative_eq!(s.coefficient(99), 100.0 * 100f64.powf(0.08), max_relative = 1e-12);
    }

    #[test]
    fn theoretical_coefficient_matches_high_precision() {
        let p = ScheduleParams::new(0.1, 0.6, 0.5, 0.01, 100).unwrap();
        let s = PaymentCoefficientSchedule::Theoretical {
            reward_lipschitz: 1.0,
            smoothness: 1.0,
            rho: 0.5,
            min_degree: 2,
            params: p,
            per_agent_degree: false,
        };
        assert!(s.violations().is_empty());
        // frozen from a 40-digit evaluation of the closed form
        assert_relative_eq!(s.coefficient(0), 10_338.202_681_626_908, max_relative = 1e-12);
        assert_relative_eq!(s.coefficient(10), 87_668.291_623_175_97, max_relative = 1e-12);
        assert_eq!(s.coefficient(100), 0.0);
        assert_eq!(s.coefficient(150), 0.0);
    }

    #[test]
    fn theoretical_schedule_rejects_bad_window() {
        let p = ScheduleParams::new(0.1, 0.7, 0.5, 0.01, 100).unwrap();
        let s = PaymentCoefficientSchedule::Theoretical {
            reward_lipschitz: 1.0,
            smoothness: 1.0,
            rho: 0.5,
            min_degree: 2,
            params: p,
            per_agent_degree: false,
        };
        assert!(s.validated().is_err());
    }

    #[test]
    fn two_agent_settlement() {
        let g = Graph::path(2).unwrap();
        // Delta = (4, 1)
        let w0: Window<f64> = (&[0.0], &[0.0], &[2.0]);
        let w1: Window<f64> = (&[0.0], &[0.0], &[1.0]);
        let r = settle_round(3, &[w0, w1], &g, 0.5).unwrap();
        assert_eq!(r.totals, vec![1.5, -1.5]);
        assert_eq!(r.transfer(0, 1), Some(1.5));
        assert_eq!(r.transfer(1, 0), Some(-1.5));
        assert_eq!(r.budget_residual(), 0.0);
    }

    #[test]
    fn identical_trajectories_pay_nothing() {
        let g = Graph::ring(4).unwrap();
        let w: Window<f64> = (&[0.3, 0.1], &[1.0, 2.0], &[0.5, 0.5]);
        let r = settle_round(0, &[w; 4], &g, 10.0).unwrap();
        assert!(r.totals.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn missing_window_rejected() {
        let g = Graph::ring(3).unwrap();
        let w: Window<f64> = (&[0.0], &[0.0], &[0.0]);
        assert!(matches!(
            settle_round(0, &[w, w], &g, 1.0),
            Err(CoreError::MissingWindow { .. })
        ));
    }

    #[test]
    fn cross_verification_is_exact() {
        let prev = [0.1, 0.2];
        let curr = [0.5, 0.1];
        let ni = [1.0, 0.0];
        let nj = [0.2, 0.3];
        let wi: Window<f64> = (&prev, &curr, &ni);
        let wj: Window<f64> = (&curr, &prev, &nj);
        assert!(cross_verify_windows(2.0, (wi, wj), (wi, wj)));

        let honest = PaymentClaim::from_windows(wi, wj).unwrap();
        let mut tampered = honest;
        tampered.delta_j += 1e-3;
        assert!(!cross_verify(2.0, &honest, &tampered));

        let mut tiny = honest;
        tiny.delta_j *= 1.0 + 1e-15;
        assert_ne!(tiny.delta_j, honest.delta_j);
        assert!(!cross_verify(2.0, &honest, &tiny));
    }
}
