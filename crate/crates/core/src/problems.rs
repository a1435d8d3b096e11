//! Analytic local objectives `f_i` with exact and stochastic gradient oracles.
//!
//! The global objective is always `F(theta) = (1/N) sum_i f_i(theta)`.
//!
//! | kind            | `f_i(theta)`                               | gradient                |
//! |-----------------|--------------------------------------------|-------------------------|
//! | least squares   | `(theta - z_i)' S (theta - z_i) + s_xi^2`  | `2 S (theta - z_i)`     |
//! | mean estimation | `\|theta - mu_i\|^2`                       | `2 (theta - mu_i)`      |
//! | quadratic       | `(theta - c_i)' A_i (theta - c_i)`         | `2 A_i (theta - c_i)`   |
//! | log-cosh        | `sum_p ln cosh(theta_p - c_ip)`            | `tanh(theta - c_i)`     |
//!
//! Log-cosh is convex with bounded gradients and no global strong convexity,
//! which is the regime of the general-convex rate check.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::linalg::{self, cholesky, dist_sq, solve_spd, symmetric_eigenvalues, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    LeastSquares,
    MeanEstimation,
    Quadratic,
    LogCosh,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LeastSquares => "least_squares",
            Self::MeanEstimation => "mean_estimation",
            Self::Quadratic => "quadratic",
            Self::LogCosh => "log_cosh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Data<S> {
    LeastSquares {
        targets: Vec<Vec<S>>,
        covariance: Matrix<S>,
        covariance_chol: Matrix<S>,
        label_noise_var: S,
    },
    MeanEstimation {
        means: Vec<Vec<S>>,
        sigma2: S,
    },
    Quadratic {
        hessians: Vec<Matrix<S>>,
        centers: Vec<Vec<S>>,
        noise_var: S,
    },
    LogCosh {
        centers: Vec<Vec<S>>,
        noise_var: S,
    },
}

/// A gradient draw `g_i(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample<S> {
    pub value: Vec<S>,
    pub is_stochastic: bool,
}

/// Closed-form effect of one agent scaling its gradient by `a` while all
/// others stay truthful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationCost<S> {
    /// `f_i(theta*) - f_i(theta'*)`, the deviator's cost reduction.
    pub local_gain: S,
    /// `F(theta'*) - F(theta*)`, the network's cost increase.
    pub global_loss: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance<S> {
    dim: usize,
    data: Data<S>,
    batch: usize,
    smoothness: S,
    strong_convexity: S,
    lipschitz: Option<S>,
    optimum: Vec<S>,
}

fn check_vectors<S: Scalar>(what: &'static str, vs: &[Vec<S>]) -> Result<usize> {
    let dim = vs
        .first()
        .map(Vec::len)
        .ok_or(CoreError::Empty(what))?;
    if dim == 0 {
        return Err(CoreError::InvalidProblem(format!("{what}: zero dimension")));
    }
    for v in vs {
        if v.len() != dim {
            return Err(CoreError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if !linalg::all_finite(v) {
            return Err(CoreError::NonFinite(what));
        }
    }
    Ok(dim)
}

fn check_variance<S: Scalar>(what: &str, v: S) -> Result<()> {
    if !(v >= S::zero()) || !v.is_finite() {
        return Err(CoreError::InvalidProblem(format!(
            "{what} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

fn spd_extremes<S: Scalar>(m: &Matrix<S>, what: &str) -> Result<(S, S)> {
    if !m.is_symmetric() {
        return Err(CoreError::InvalidProblem(format!("{what} is not symmetric")));
    }
    let eig = symmetric_eigenvalues(m)?;
    let (hi, lo) = (eig[0], eig[eig.len() - 1]);
    if !(lo > S::zero()) {
        return Err(CoreError::InvalidProblem(format!(
            "{what} is not positive definite (smallest eigenvalue {lo})"
        )));
    }
    Ok((hi, lo))
}

fn ln_cosh<S: Scalar>(x: S) -> S {
    // |x| + ln(1 + e^{-2|x|}) - ln 2, stable for large |x|
    let ax = x.abs();
    ax + (-(ax + ax)).exp().ln_1p() - S::LN_2()
}

impl<S: Scalar> ProblemInstance<S> {
    /// Distributed least squares with shared feature covariance `covariance`.
    pub fn least_squares(
        targets: Vec<Vec<S>>,
        covariance: Matrix<S>,
        label_noise_var: S,
    ) -> Result<Self> {
        let dim = check_vectors("least-squares targets", &targets)?;
        if covariance.rows() != dim || !covariance.is_square() {
            return Err(CoreError::DimensionMismatch {
                expected: dim,
                found: covariance.rows(),
            });
        }
        check_variance("label noise variance", label_noise_var)?;
        let (hi, lo) = spd_extremes(&covariance, "feature covariance")?;
        let covariance_chol = cholesky(&covariance)?;
        let optimum = linalg::mean_vec(&targets);
        Ok(Self {
            dim,
            data: Data::LeastSquares {
                targets,
                covariance,
                covariance_chol,
                label_noise_var,
            },
            batch: 1,
            smoothness: S::lit(2.0) * hi,
            strong_convexity: S::lit(2.0) * lo,
            lipschitz: None,
            optimum,
        })
    }

    /// Mean estimation; samples have per-coordinate variance `sigma2 / dim`.
    pub fn mean_estimation(means: Vec<Vec<S>>, sigma2: S) -> Result<Self> {
        let dim = check_vectors("agent means", &means)?;
        check_variance("sampling variance", sigma2)?;
        let optimum = linalg::mean_vec(&means);
        Ok(Self {
            dim,
            data: Data::MeanEstimation { means, sigma2 },
            batch: 1,
            smoothness: S::lit(2.0),
            strong_convexity: S::lit(2.0),
            lipschitz: None,
            optimum,
        })
    }

    /// Heterogeneous quadratics; stochastic gradients add Gaussian noise of
    /// total variance `noise_var`.
    pub fn quadratic(hessians: Vec<Matrix<S>>, centers: Vec<Vec<S>>, noise_var: S) -> Result<Self> {
        let dim = check_vectors("quadratic centers", &centers)?;
        if hessians.len() != centers.len() {
            return Err(CoreError::DimensionMismatch {
                expected: centers.len(),
                found: hessians.len(),
            });
        }
        check_variance("gradient noise variance", noise_var)?;
        let mut hi = S::zero();
        let mut lo = S::infinity();
        let mut total = Matrix::zeros(dim, dim);
        let mut rhs = vec![S::zero(); dim];
        for (a, c) in hessians.iter().zip(&centers) {
            if a.rows() != dim || !a.is_square() {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    found: a.rows(),
                });
            }
            let (h, l) = spd_extremes(a, "quadratic Hessian")?;
            hi = hi.max(h);
            lo = lo.min(l);
            total = total.add(a);
            linalg::axpy(S::one(), &a.mul_vec(c), &mut rhs);
        }
        let optimum = solve_spd(&total, &rhs)?;
        Ok(Self {
            dim,
            data: Data::Quadratic {
                hessians,
                centers,
                noise_var,
            },
            batch: 1,
            smoothness: S::lit(2.0) * hi,
            strong_convexity: S::lit(2.0) * lo,
            lipschitz: None,
            optimum,
        })
    }

    /// Separable log-cosh losses centred at `centers`.
    pub fn log_cosh(centers: Vec<Vec<S>>, noise_var: S) -> Result<Self> {
        let dim = check_vectors("log-cosh centers", &centers)?;
        check_variance("gradient noise variance", noise_var)?;
        let optimum = (0..dim)
            .map(|p| {
                let cs: Vec<S> = centers.iter().map(|c| c[p]).collect();
                tanh_root(&cs)
            })
            .collect();
        Ok(Self {
            dim,
            data: Data::LogCosh { centers, noise_var },
            batch: 1,
            smoothness: S::one(),
            strong_convexity: S::zero(),
            lipschitz: Some(S::from_count(dim).sqrt()),
            optimum,
        })
    }

    /// Mini-batch size used by stochastic gradients.
    pub fn with_batch(mut self, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(CoreError::InvalidProblem("batch size must be positive".into()));
        }
        self.batch = batch;
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        match self.data {
            Data::LeastSquares { .. } => ProblemKind::LeastSquares,
            Data::MeanEstimation { .. } => ProblemKind::MeanEstimation,
            Data::Quadratic { .. } => ProblemKind::Quadratic,
            Data::LogCosh { .. } => ProblemKind::LogCosh,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_agents(&self) -> usize {
        self.local_optima().len()
    }

    /// Gradient Lipschitz constant `H` (max over agents).
    pub fn smoothness(&self) -> S {
        self.smoothness
    }

    /// Strong-convexity modulus (min over agents); zero when merely convex.
    pub fn strong_convexity(&self) -> S {
        self.strong_convexity
    }

    /// Lipschitz constant of `f_i` itself, when finite.
    pub fn lipschitz(&self) -> Option<S> {
        self.lipschitz
    }

    /// Per-agent minimizers: `z_i`, `mu_i` or `c_i`.
    pub fn local_optima(&self) -> &[Vec<S>] {
        match &self.data {
            Data::LeastSquares { targets, .. } => targets,
            Data::MeanEstimation { means, .. } => means,
            Data::Quadratic { centers, .. } | Data::LogCosh { centers, .. } => centers,
        }
    }

    /// Description of the gradient sampling law, recorded in run metadata.
    pub fn sampling_law(&self) -> String {
        match &self.data {
            Data::LeastSquares { .. } => format!(
                "features u ~ N(0, Sigma), labels v = u'z_i + N(0, s_xi^2); batch {}",
                self.batch
            ),
            Data::MeanEstimation { .. } => {
                format!("zeta_p ~ N(mu_ip, sigma^2/n); batch {}", self.batch)
            }
            Data::Quadratic { .. } | Data::LogCosh { .. } => format!(
                "additive gradient noise N(0, var/n) per coordinate; batch {}",
                self.batch
            ),
        }
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.n_agents() {
            return Err(CoreError::InvalidProblem(format!(
                "agent {agent} out of range for {} agents",
                self.n_agents()
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[S]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                found: theta.len(),
            });
        }
        if !linalg::all_finite(theta) {
            return Err(CoreError::NonFinite("parameter"));
        }
        Ok(())
    }

    /// `f_i(theta)`
    pub fn local_cost(&self, agent: usize, theta: &[S]) -> S {
        match &self.data {
            Data::LeastSquares {
                targets,
                covariance,
                label_noise_var,
                ..
            } => covariance.quad_form(&linalg::sub(theta, &targets[agent])) + *label_noise_var,
            Data::MeanEstimation { means, .. } => dist_sq(theta, &means[agent]),
            Data::Quadratic {
                hessians, centers, ..
            } => hessians[agent].quad_form(&linalg::sub(theta, &centers[agent])),
            Data::LogCosh { centers, .. } => theta
                .iter()
                .zip(&centers[agent])
                .map(|(&x, &c)| ln_cosh(x - c))
                .sum(),
        }
    }

    /// `F(theta) = (1/N) sum_i f_i(theta)`
    pub fn global_cost(&self, theta: &[S]) -> S {
        let n = self.n_agents();
        (0..n).map(|i| self.local_cost(i, theta)).sum::<S>() / S::from_count(n)
    }

    /// `F(theta) - F(theta*)`, evaluated without cancellation where a closed
    /// form exists.
    pub fn optimality_gap(&self, theta: &[S]) -> S {
        let diff = linalg::sub(theta, &self.optimum);
        match &self.data {
            Data::LeastSquares { covariance, .. } => covariance.quad_form(&diff),
            Data::MeanEstimation { .. } => linalg::norm_sq(&diff),
            Data::Quadratic { hessians, .. } => {
                let n = S::from_count(hessians.len());
                hessians.iter().map(|a| a.quad_form(&diff)).sum::<S>() / n
            }
            Data::LogCosh { .. } => {
                (self.global_cost(theta) - self.global_cost(&self.optimum)).max(S::zero())
            }
        }
    }

    /// Deterministic `grad f_i(theta)`.
    pub fn exact_gradient(&self, agent: usize, theta: &[S]) -> Result<Vec<S>> {
        self.check_agent(agent)?;
        self.check_theta(theta)?;
        Ok(self.exact_gradient_unchecked(agent, theta))
    }

    fn exact_gradient_unchecked(&self, agent: usize, theta: &[S]) -> Vec<S> {
        let two = S::lit(2.0);
        match &self.data {
            Data::LeastSquares {
                targets,
                covariance,
                ..
            } => linalg::scale(two, &covariance.mul_vec(&linalg::sub(theta, &targets[agent]))),
            Data::MeanEstimation { means, .. } => theta
                .iter()
                .zip(&means[agent])
                .map(|(&x, &m)| two * (x - m))
                .collect(),
            Data::Quadratic {
                hessians, centers, ..
            } => linalg::scale(
                two,
                &hessians[agent].mul_vec(&linalg::sub(theta, &centers[agent])),
            ),
            Data::LogCosh { centers, .. } => theta
                .iter()
                .zip(&centers[agent])
                .map(|(&x, &c)| (x - c).tanh())
                .collect(),
        }
    }

    /// Unbiased mini-batch sample of `grad f_i(theta)` drawn from `rng`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        theta: &[S],
        rng: &mut R,
    ) -> Result<GradientSample<S>> {
        self.check_agent(agent)?;
        self.check_theta(theta)?;
        let dim = self.dim;
        let inv_b = S::one() / S::from_count(self.batch);
        let two = S::lit(2.0);
        let value = match &self.data {
            Data::LeastSquares {
                targets,
                covariance_chol,
                label_noise_var,
                ..
            } => {
                let z = &targets[agent];
                let noise_sd = label_noise_var.sqrt();
                let mut acc = vec![S::zero(); dim];
                let mut std = vec![S::zero(); dim];
                for _ in 0..self.batch {
                    std.iter_mut().for_each(|v| *v = S::standard_normal(rng));
                    let u = covariance_chol.mul_vec(&std);
                    let label = linalg::dot(&u, z) + noise_sd * S::standard_normal(rng);
                    let residual = linalg::dot(&u, theta) - label;
                    linalg::axpy(two * residual * inv_b, &u, &mut acc);
                }
                acc
            }
            Data::MeanEstimation { means, sigma2 } => {
                let sd = (*sigma2 / S::from_count(dim)).sqrt();
                let mu = &means[agent];
                let mut zeta_bar = vec![S::zero(); dim];
                for _ in 0..self.batch {
                    for (zb, &m) in zeta_bar.iter_mut().zip(mu) {
                        *zb += (m + sd * S::standard_normal(rng)) * inv_b;
                    }
                }
                theta
                    .iter()
                    .zip(&zeta_bar)
                    .map(|(&x, &z)| two * (x - z))
                    .collect()
            }
            Data::Quadratic { noise_var, .. } | Data::LogCosh { noise_var, .. } => {
                let sd = (*noise_var / S::from_count(dim)).sqrt();
                let mut g = self.exact_gradient_unchecked(agent, theta);
                if sd > S::zero() {
                    for gi in g.iter_mut() {
                        let mut noise = S::zero();
                        for _ in 0..self.batch {
                            noise += S::standard_normal(rng);
                        }
                        *gi += sd * noise * inv_b;
                    }
                }
                g
            }
        };
        Ok(GradientSample {
            value,
            is_stochastic: true,
        })
    }

    /// `theta* = argmin F`.
    pub fn global_optimum(&self) -> &[S] {
        &self.optimum
    }

    /// Fixed point of the aggregate field when `deviator` scales its gradient
    /// by `a` and every other agent is truthful:
    /// `((a-1)/(a+N-1)) z_i + (N/(a+N-1)) z_bar`.
    pub fn deviated_optimum(&self, deviator: usize, a: S) -> Result<Vec<S>> {
        self.check_agent(deviator)?;
        let (zi, _) = self.shared_curvature_target(deviator, "deviated_optimum")?;
        check_scaling(a)?;
        let n = S::from_count(self.n_agents());
        let denom = a + n - S::one();
        let wi = (a - S::one()) / denom;
        let wbar = n / denom;
        Ok(zi
            .iter()
            .zip(&self.optimum)
            .map(|(&z, &zbar)| wi * z + wbar * zbar)
            .collect())
    }

    /// Closed-form `(f_i gain, F loss)` at the deviated optimum.
    pub fn deviation_cost_delta(&self, deviator: usize, a: S) -> Result<DeviationCost<S>> {
        self.check_agent(deviator)?;
        let (zi, metric) = self.shared_curvature_target(deviator, "deviation_cost_delta")?;
        check_scaling(a)?;
        let n = S::from_count(self.n_agents());
        let denom = a + n - S::one();
        let gap = linalg::sub(zi, &self.optimum);
        let base = match metric {
            Some(cov) => cov.quad_form(&gap),
            None => linalg::norm_sq(&gap),
        };
        let keep = n / denom;
        let shift = (a - S::one()) / denom;
        Ok(DeviationCost {
            local_gain: (S::one() - keep * keep) * base,
            global_loss: shift * shift * base,
        })
    }

    fn shared_curvature_target(
        &self,
        agent: usize,
        op: &'static str,
    ) -> Result<(&[S], Option<&Matrix<S>>)> {
        match &self.data {
            Data::LeastSquares {
                targets,
                covariance,
                ..
            } => Ok((&targets[agent], Some(covariance))),
            Data::MeanEstimation { means, .. } => Ok((&means[agent], None)),
            _ => Err(CoreError::UnsupportedKind {
                op,
                kind: self.kind().name(),
            }),
        }
    }
}

fn check_scaling<S: Scalar>(a: S) -> Result<()> {
    if !(a >= S::one()) || !a.is_finite() {
        return Err(CoreError::InvalidAction(format!(
            "scaling factor must be finite and >= 1, got {a}"
        )));
    }
    Ok(())
}

/// Root of `sum_i tanh(x - c_i) = 0`, which lies in `[min c, max c]`.
fn tanh_root<S: Scalar>(cs: &[S]) -> S {
    let field = |x: S| cs.iter().map(|&c| (x - c).tanh()).sum::<S>();
    let mut lo = cs.iter().copied().fold(S::infinity(), S::min);
    let mut hi = cs.iter().copied().fold(S::neg_infinity(), S::max);
    for _ in 0..200 {
        let mid = (lo + hi) / S::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if field(mid) > S::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) / S::lit(2.0)
}

/// Random instance generators used by scenarios and tests.
pub mod generate {
    use super::*;

    /// Uniformly random rotation (Gram-Schmidt on a Gaussian matrix).
    pub fn random_orthogonal<S: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix<S> {
        let mut cols: Vec<Vec<S>> = Vec::with_capacity(dim);
        while cols.len() < dim {
            let mut v: Vec<S> = (0..dim).map(|_| S::standard_normal(rng)).collect();
            for q in &cols {
                let proj = linalg::dot(&v, q);
                linalg::axpy(-proj, q, &mut v);
            }
            let nrm = linalg::norm(&v);
            if nrm > S::lit(1e-6) {
                cols.push(linalg::scale(S::one() / nrm, &v));
            }
        }
        // columns -> matrix
        Matrix::from_rows(&cols).expect("square").transpose()
    }

    /// SPD matrix `Q diag(s) Q'` with eigenvalues linearly spaced in `[lo, hi]`.
    pub fn spd_with_spectrum<S: Scalar, R: Rng + ?Sized>(
        dim: usize,
        lo: S,
        hi: S,
        rng: &mut R,
    ) -> Matrix<S> {
        let eig: Vec<S> = (0..dim)
            .map(|k| {
                if dim == 1 {
                    (lo + hi) / S::lit(2.0)
                } else {
                    lo + (hi - lo) * S::from_count(k) / S::from_count(dim - 1)
                }
            })
            .collect();
        let q = random_orthogonal::<S, R>(dim, rng);
        let m = q.matmul(&Matrix::from_diag(&eig)).matmul(&q.transpose());
        // symmetrize away rounding
        let mut sym = m.clone();
        for i in 0..dim {
            for j in 0..dim {
                sym[(i, j)] = (m[(i, j)] + m[(j, i)]) / S::lit(2.0);
            }
        }
        sym
    }

    /// `n` vectors with i.i.d. `N(offset, scale^2)` coordinates.
    pub fn gaussian_points<S: Scalar, R: Rng + ?Sized>(
        n: usize,
        dim: usize,
        offset: S,
        scale: S,
        rng: &mut R,
    ) -> Vec<Vec<S>> {
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| offset + scale * S::standard_normal(rng))
                    .collect()
            })
            .collect()
    }
}
