use std::sync::Arc;

use dsgd_core::linalg::exact_sum;
use dsgd_core::mechanism::{settle_round, Window};
use dsgd_core::strategy::select_best;
use dsgd_core::*;
use proptest::prelude::*;
use rand::SeedableRng;

fn vecs(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), n)
}

fn random_graph() -> impl Strategy<Value = Graph> {
    (3usize..9).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |mask| {
            let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            Graph::new(n, edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_coupling_is_doubly_stochastic(n in 3usize..24, w in 0.01f64..0.49) {
        let c = build_ring(n, w).unwrap();
        prop_assert!(c.weights().is_symmetric());
        prop_assert!(c.row_sum_error() < 1e-12);
        prop_assert!(c.rho() < 1.0 && c.rho() >= 0.0);
    }

    #[test]
    fn metropolis_coupling_is_valid(g in random_graph()) {
        let c = build_from_graph(g.clone(), WeightRule::<f64>::Metropolis).unwrap();
        prop_assert!(c.weights().is_symmetric());
        prop_assert!(c.row_sum_error() < 1e-12);
        for i in 0..g.n_agents() {
            for j in 0..g.n_agents() {
                if i != j {
                    prop_assert_eq!(c.weight(i, j) > 0.0, g.is_adjacent(i, j));
                }
            }
        }
    }

    #[test]
    fn ledger_is_antisymmetric_and_balanced(
        g in random_graph(),
        seed in any::<u64>(),
        c in 0.0f64..1e6,
    ) {
        let n = g.n_agents();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..3).map(|_| rand::Rng::random_range(rng, -5.0..5.0)).collect()).collect()
        };
        let (p, q, r) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let windows: Vec<Window<f64>> = (0..n).map(|i| (p[i].as_slice(), q[i].as_slice(), r[i].as_slice())).collect();
        let s = settle_round(0, &windows, &g, c).unwrap();
        prop_assert_eq!(s.budget_residual(), 0.0);
        for (i, j) in g.edges() {
            let a = s.transfer(i, j).unwrap();
            let b = s.transfer(j, i).unwrap();
            prop_assert_eq!(a + b, 0.0);
        }
        prop_assert_eq!(exact_sum(s.directed().map(|(_, _, x)| x)), 0.0);
    }

    #[test]
    fn payment_monotone_in_own_second_difference(
        xs in vecs(5, 2),
        bump in 0.0f64..4.0,
        c in 0.0f64..100.0,
    ) {
        let g = Graph::ring(5).unwrap();
        let zero = vec![vec![0.0; 2]; 5];
        let mut bumped = xs.clone();
        bumped[0][0] += if xs[0][0] >= 0.0 { bump } else { -bump };
        let w1: Vec<Window<f64>> = (0..5).map(|i| (zero[i].as_slice(), zero[i].as_slice(), xs[i].as_slice())).collect();
        let w2: Vec<Window<f64>> = (0..5).map(|i| (zero[i].as_slice(), zero[i].as_slice(), bumped[i].as_slice())).collect();
        let p1 = settle_round(0, &w1, &g, c).unwrap().totals[0];
        let p2 = settle_round(0, &w2, &g, c).unwrap().totals[0];
        prop_assert!(p2 >= p1 - 1e-9 * p1.abs().max(1.0));
    }

    #[test]
    fn scaling_without_noise_is_exact(g in prop::collection::vec(-1e3f64..1e3, 1..12), a in 1.0f64..10.0) {
        let act = Action::new(a, 0.0, NoiseLaw::Laplace).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = apply_action(&act, &g, &mut rng);
        for (x, y) in m.iter().zip(&g) {
            prop_assert_eq!(*x, a * y);
        }
    }

    #[test]
    fn net_utility_decreases_in_payments(
        f in 0.01f64..100.0,
        pays in prop::collection::vec(-10.0f64..10.0, 0..8),
        k in any::<prop::sample::Index>(),
        bump in 1e-3f64..10.0,
    ) {
        for reward in [RewardFunction::Linear, RewardFunction::SigmoidLike] {
            let base = net_utility(reward, f, &pays).unwrap();
            let mut more = pays.clone();
            if more.is_empty() {
                more.push(bump);
            } else {
                let i = k.index(more.len());
                more[i] += bump;
            }
            prop_assert!(net_utility(reward, f, &more).unwrap() < base);
        }
        let lin = |x: f64| net_utility(RewardFunction::Linear, x, &pays).unwrap();
        prop_assert!(lin(f + 1.0) < lin(f));
    }

    #[test]
    fn slope_recovers_power_law(c in 0.1f64..100.0, p in -2.0f64..0.5) {
        let series: Vec<(usize, f64)> = (0..2000).map(|t| (t, c * ((t + 1) as f64).powf(p))).collect();
        let s = convergence_slope(&series, (10, 1999)).unwrap();
        prop_assert!((s - p).abs() < 1e-9);
    }

    #[test]
    fn best_response_prefers_truthful_on_ties(utils in prop::collection::vec(-5i32..5, 6)) {
        let grid = BestResponseGrid::new(vec![1.0, 2.0, 3.0], vec![0.0, 0.5], NoiseLaw::Laplace).unwrap();
        let acts = grid.actions().unwrap();
        let table: Vec<(Action<f64>, f64)> = acts.iter().copied().zip(utils.iter().map(|&u| u as f64)).collect();
        let (best, u) = select_best(&table);
        let top = utils.iter().copied().max().unwrap() as f64;
        prop_assert_eq!(u, top);
        let first = table.iter().find(|(_, v)| *v == top).unwrap().0;
        prop_assert_eq!(best, first);
        let mut rev = table.clone();
        rev.reverse();
        prop_assert_eq!(select_best(&rev).0, best);
    }
}

fn mean_sim(seed: u64) -> Simulation<f64> {
    let w = Arc::new(build_ring(5, 0.3).unwrap());
    let means = (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
    let p = Arc::new(ProblemInstance::mean_estimation(means, 1.0).unwrap());
    let s = ScheduleParams::new(0.1, 0.55, 0.51, 1e-4, 80).unwrap();
    Simulation::new(w, p, s).unwrap().with_seed(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_are_reproducible(seed in any::<u64>()) {
        let sim = mean_sim(seed).with_policy(1, StrategyPolicy::Fixed(Action::new(2.0, 1.0, NoiseLaw::Laplace).unwrap()));
        let a = run(&sim).unwrap();
        let b = run(&sim).unwrap();
        prop_assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn ledger_balanced_over_whole_runs(seed in any::<u64>(), a in 1.0f64..4.0, b in 0.0f64..2.0) {
        let sim = mean_sim(seed).with_policy(3, StrategyPolicy::Fixed(Action::new(a, b, NoiseLaw::Laplace).unwrap()));
        let eval = Evaluation::new(PaymentCoefficientSchedule::Preset { c0: 1e-6, params: sim.schedule }, RewardFunction::Linear);
        let rep = evaluate(&sim, &eval).unwrap();
        prop_assert_eq!(rep.ledger.balance_violations(), (0.0, 0.0));
        let total = exact_sum((0..5).map(|i| rep.ledger.cumulative(i)));
        let scale = (0..5).map(|i| rep.ledger.cumulative(i).abs()).fold(1.0, f64::max);
        prop_assert!(total.abs() <= 8.0 * f64::EPSILON * scale);
    }

    #[test]
    fn truthful_deviation_has_zero_gain(seed in any::<u64>()) {
        let sim = mean_sim(seed);
        let eval = Evaluation::new(PaymentCoefficientSchedule::Constant(10.0), RewardFunction::Linear);
        let g = ic_gap(&sim, 2, &StrategyPolicy::Truthful, &eval, &[seed, seed ^ 1]).unwrap();
        prop_assert!(g.per_seed.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parameter_manipulation_replays(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let sim = mean_sim(seed).with_horizon(30);
        let alpha = move |_t: usize, th: &[f64]| th.iter().map(|x| x + shift).collect::<Vec<_>>();
        let pm = run_parameter_manipulation(&sim, 0, &alpha).unwrap();
        let eq = manipulate_parameters_equivalent(&sim, &pm).unwrap();
        prop_assert!(max_trajectory_gap(&pm.shared_params, &eq.replay) < 1e-9);
    }
}

#[test]
fn f32_pipeline_runs() {
    let w = Arc::new(build_ring(4, 0.25f32).unwrap());
    let means = (0..4).map(|i| vec![i as f32]).collect();
    let p = Arc::new(ProblemInstance::mean_estimation(means, 1.0f32).unwrap());
    let s = ScheduleParams::new(0.1f32, 0.55, 0.51, 1e-2, 200).unwrap();
    let sim = Simulation::new(w, p, s).unwrap().with_seed(9);
    let rep = evaluate(&sim, &Evaluation::new(PaymentCoefficientSchedule::Constant(1.0f32), RewardFunction::Linear)).unwrap();
    assert_eq!(rep.ledger.balance_violations(), (0.0, 0.0));
    assert!(rep.metrics.summary.iter().all(|s| s.final_dist_sq.is_finite()));
}
