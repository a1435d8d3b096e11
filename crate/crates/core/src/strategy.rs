//! Gradient manipulation actions `m = a g + b xi` and agent policies.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Zero-mean, unit-variance law of the injected noise `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NoiseLaw {
    #[default]
    Laplace,
    Gaussian,
}

impl NoiseLaw {
    pub fn sample<S: Scalar, R: Rng + ?Sized>(self, rng: &mut R) -> S {
        match self {
            NoiseLaw::Gaussian => S::standard_normal(rng),
            NoiseLaw::Laplace => {
                // Laplace(0, 1/sqrt 2) has unit variance; inverse CDF on (-1/2, 1/2).
                let u = S::open_unit(rng) - S::lit(0.5);
                let scale = S::FRAC_1_SQRT_2();
                let mag = -(S::one() - S::lit(2.0) * u.abs()).ln() * scale;
                if u < S::zero() {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    /// `E |xi|_2` for an `n`-dimensional vector of i.i.d. unit-variance draws,
    /// when known in closed form (Gaussian only).
    pub fn expected_norm(self, n: usize) -> Option<f64> {
        match self {
            NoiseLaw::Gaussian => {
                let n = n as f64;
                Some(2f64.sqrt() * (ln_gamma((n + 1.0) / 2.0) - ln_gamma(n / 2.0)).exp())
            }
            NoiseLaw::Laplace => None,
        }
    }
}

// Lanczos approximation (g = 7, n = 9), relative error ~1e-15 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (k, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// One manipulation `alpha(g) = a g + b xi` with `a >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<S> {
    a: S,
    b: S,
    noise: NoiseLaw,
}

impl<S: Scalar> Action<S> {
    pub fn new(a: S, b: S, noise: NoiseLaw) -> Result<Self> {
        if !(a >= S::one()) || !a.is_finite() {
            return Err(CoreError::InvalidAction(format!(
                "scaling factor a = {a} must be finite and >= 1"
            )));
        }
        if !b.is_finite() {
            return Err(CoreError::InvalidAction(format!("noise factor b = {b} is not finite")));
        }
        Ok(Self { a, b, noise })
    }

    /// The identity map, `a = 1, b = 0`.
    pub fn truthful() -> Self {
        Self {
            a: S::one(),
            b: S::zero(),
            noise: NoiseLaw::default(),
        }
    }

    pub fn a(&self) -> S {
        self.a
    }

    pub fn b(&self) -> S {
        self.b
    }

    pub fn noise(&self) -> NoiseLaw {
        self.noise
    }

    pub fn is_truthful(&self) -> bool {
        self.a == S::one() && self.b == S::zero()
    }

    /// Orders actions from most to least truthful: smaller `a`, then smaller `|b|`.
    pub fn truthfulness_order(&self, other: &Self) -> Ordering {
        self.a
            .partial_cmp(&other.a)
            .unwrap_or(Ordering::Equal)
            .then(
                self.b
                    .abs()
                    .partial_cmp(&other.b.abs())
                    .unwrap_or(Ordering::Equal),
            )
    }
}

/// `a g + b xi`. With `b = 0` no randomness is consumed, so the map is
/// deterministic and exactly linear in `g`.
pub fn apply_action<S: Scalar, R: Rng + ?Sized>(act: &Action<S>, g: &[S], rng: &mut R) -> Vec<S> {
    if act.is_truthful() {
        return g.to_vec();
    }
    if act.b == S::zero() {
        return linalg::scale(act.a, g);
    }
    g.iter()
        .map(|&gi| act.a * gi + act.b * act.noise.sample::<S, R>(rng))
        .collect()
}

/// Monte-Carlo estimate of `E |alpha(g) - g|` over the given gradient samples,
/// with fresh noise per sample.
pub fn truthfulness_deviation<S: Scalar, R: Rng + ?Sized>(
    act: &Action<S>,
    g_samples: &[Vec<S>],
    rng: &mut R,
) -> Result<S> {
    if g_samples.is_empty() {
        return Err(CoreError::Empty("gradient sample list"));
    }
    if act.is_truthful() {
        return Ok(S::zero());
    }
    let total: S = g_samples
        .iter()
        .map(|g| {
            let m = apply_action(act, g, rng);
            linalg::dist_sq(&m, g).sqrt()
        })
        .sum();
    Ok(total / S::from_count(g_samples.len()))
}

/// Candidate actions for an empirical best response: the Cartesian product of
/// `a_values` and `b_values` under one noise law.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseGrid<S> {
    pub a_values: Vec<S>,
    pub b_values: Vec<S>,
    pub noise: NoiseLaw,
}

impl<S: Scalar> BestResponseGrid<S> {
    pub fn new(a_values: Vec<S>, b_values: Vec<S>, noise: NoiseLaw) -> Result<Self> {
        if a_values.is_empty() || b_values.is_empty() {
            return Err(CoreError::Empty("best-response grid"));
        }
        let grid = Self {
            a_values,
            b_values,
            noise,
        };
        grid.actions()?;
        Ok(grid)
    }

    /// Grid points, `a` outer and `b` inner.
    pub fn actions(&self) -> Result<Vec<Action<S>>> {
        let mut out = Vec::with_capacity(self.a_values.len() * self.b_values.len());
        for &a in &self.a_values {
            for &b in &self.b_values {
                out.push(Action::new(a, b, self.noise)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyPolicy<S> {
    Truthful,
    Fixed(Action<S>),
    /// Per-iteration actions; rounds past the end reuse the last entry.
    Schedule(Vec<Action<S>>),
    /// Must be resolved to a concrete action (see [`best_response_search`])
    /// before a run.
    BestResponse(BestResponseGrid<S>),
}

impl<S: Scalar> StrategyPolicy<S> {
    pub fn is_truthful(&self) -> bool {
        match self {
            Self::Truthful => true,
            Self::Fixed(a) => a.is_truthful(),
            Self::Schedule(v) => v.iter().all(Action::is_truthful),
            Self::BestResponse(_) => false,
        }
    }

    /// Action taken at iteration `t`; `None` for an unresolved best response.
    pub fn action_at(&self, t: usize) -> Option<Action<S>> {
        match self {
            Self::Truthful => Some(Action::truthful()),
            Self::Fixed(a) => Some(*a),
            Self::Schedule(v) => v.get(t).or(v.last()).copied().or(Some(Action::truthful())),
            Self::BestResponse(_) => None,
        }
    }

    /// Whether the truthful action is reachable by this policy.
    pub fn admits_truthful(&self) -> bool {
        match self {
            Self::BestResponse(g) => {
                g.a_values.iter().any(|&a| a == S::one()) && g.b_values.iter().any(|&b| b == S::zero())
            }
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse<S> {
    pub action: Action<S>,
    pub mean_utility: S,
    /// Mean utility per grid point, in grid order.
    pub table: Vec<(Action<S>, S)>,
}

/// Evaluates every grid point over every seed and returns the action with the
/// highest mean net utility. Ties go to the more truthful action.
///
/// `evaluate(action, seed)` must run the full horizon with all other agents'
/// policies held fixed and return the deviator's net utility.
pub fn best_response_search<S, E, F>(
    grid: &BestResponseGrid<S>,
    seeds: &[u64],
    mut evaluate: F,
) -> std::result::Result<BestResponse<S>, E>
where
    S: Scalar,
    E: From<CoreError>,
    F: FnMut(&Action<S>, u64) -> std::result::Result<S, E>,
{
    if seeds.is_empty() {
        return Err(CoreError::Empty("seed list").into());
    }
    let actions = grid.actions()?;
    let mut table = Vec::with_capacity(actions.len());
    for act in actions {
        let mut total = S::zero();
        for &seed in seeds {
            total += evaluate(&act, seed)?;
        }
        table.push((act, total / S::from_count(seeds.len())));
    }
    let (action, mean_utility) = select_best(&table);
    Ok(BestResponse {
        action,
        mean_utility,
        table,
    })
}

/// Argmax with the truthfulness tie-break; independent of table order.
pub fn select_best<S: Scalar>(table: &[(Action<S>, S)]) -> (Action<S>, S) {
    let mut best = table[0];
    for &(act, u) in &table[1..] {
        let better = match u.partial_cmp(&best.1) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => act.truthfulness_order(&best.0) == Ordering::Less,
            _ => false,
        };
        if better {
            best = (act, u);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;

    fn rng() -> crate::rng::StreamRng {
        stream(11, 0, Purpose::ActionNoise)
    }

    #[test]
    fn identity_and_scaling() {
        let g = [3.0, -1.0];
        assert_eq!(apply_action(&Action::truthful(), &g, &mut rng()), vec![3.0, -1.0]);
        let act = Action::new(2.0, 0.0, NoiseLaw::Laplace).unwrap();
        assert_eq!(apply_action(&act, &g, &mut rng()), vec![6.0, -2.0]);
    }

    #[test]
    fn scaling_below_one_rejected() {
        assert!(Action::new(0.5, 0.0, NoiseLaw::Gaussian).is_err());
        assert!(Action::new(f64::NAN, 0.0, NoiseLaw::Gaussian).is_err());
        assert!(Action::new(1.0, f64::INFINITY, NoiseLaw::Gaussian).is_err());
    }

    #[test]
    fn injected_noise_variance_is_b_squared() {
        for law in [NoiseLaw::Laplace, NoiseLaw::Gaussian] {
            let act = Action::new(1.0, 5.0, law).unwrap();
            let mut r = rng();
            let draws = 100_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..draws {
                let m = apply_action(&act, &[0.7], &mut r);
                let d = m[0] - 0.7;
                s1 += d;
                s2 += d * d;
            }
            let mean = s1 / draws as f64;
            let var = s2 / draws as f64 - mean * mean;
            assert!((var - 25.0).abs() < 1.0, "{law:?}: var {var}");
            assert!(mean.abs() < 0.1, "{law:?}: mean {mean}");
        }
    }

    #[test]
    fn truthfulness_deviation_examples() {
        let g = vec![vec![0.6, 0.8]];
        assert_eq!(truthfulness_deviation(&Action::truthful(), &g, &mut rng()).unwrap(), 0.0);
        let act = Action::new(2.0, 0.0, NoiseLaw::Laplace).unwrap();
        assert_relative_eq!(truthfulness_deviation(&act, &g, &mut rng()).unwrap(), 1.0, epsilon = 1e-15);
        assert!(truthfulness_deviation::<f64, _>(&act, &[], &mut rng()).is_err());
    }

    #[test]
    fn gaussian_noise_norm_matches_chi_mean() {
        // frozen from an independent arbitrary-precision evaluation
        let frozen = [(1, 0.797_884_560_802_865_4), (2, 1.253_314_137_315_500_3), (3, 1.595_769_121_605_730_7), (10, 3.084_327_759_799_864)];
        for (n, v) in frozen {
            assert_relative_eq!(NoiseLaw::Gaussian.expected_norm(n).unwrap(), v, epsilon = 1e-12);
        }
        let n = 3;
        let act = Action::new(1.0, 1.0, NoiseLaw::Gaussian).unwrap();
        let samples = vec![vec![0.0; n]; 100_000];
        let est: f64 = truthfulness_deviation(&act, &samples, &mut rng()).unwrap();
        assert!((est - 1.595_769_121_605_730_7).abs() < 0.01, "{est}");
    }

    #[test]
    fn best_response_singleton_and_tie_break() {
        let grid = BestResponseGrid::new(vec![1.0], vec![0.0], NoiseLaw::Laplace).unwrap();
        let br = best_response_search::<f64, CoreError, _>(&grid, &[1, 2], |_, s| Ok(s as f64)).unwrap();
        assert!(br.action.is_truthful());
        assert_eq!(br.mean_utility, 1.5);

        let grid = BestResponseGrid::new(vec![3.0, 1.0, 2.0], vec![-1.0, 0.0], NoiseLaw::Laplace).unwrap();
        let br = best_response_search::<f64, CoreError, _>(&grid, &[0], |_, _| Ok(1.0)).unwrap();
        assert!(br.action.is_truthful());

        let br = best_response_search::<f64, CoreError, _>(&grid, &[0], |a, _| Ok(a.a())).unwrap();
        assert_eq!(br.action.a(), 3.0);
        assert_eq!(br.action.b(), 0.0);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(BestResponseGrid::<f64>::new(vec![], vec![0.0], NoiseLaw::Laplace).is_err());
        assert!(BestResponseGrid::new(vec![0.5], vec![0.0], NoiseLaw::Laplace).is_err());
    }

    #[test]
    fn schedule_policy_repeats_last_action() {
        let a2 = Action::new(2.0, 0.0, NoiseLaw::Laplace).unwrap();
        let p = StrategyPolicy::Schedule(vec![Action::truthful(), a2]);
        assert!(p.action_at(0).unwrap().is_truthful());
        assert_eq!(p.action_at(5).unwrap(), a2);
        assert!(StrategyPolicy::<f64>::Truthful.admits_truthful());
    }
}
