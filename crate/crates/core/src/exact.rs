//! Closed-form counterfactual analysis.
//!
//! Everything here is exact linear algebra on the induced chains: the
//! counterfactual distribution `d_γ̂`, the density ratio `c = d_γ̂ / d_μ`,
//! the three objectives, and the policy gradient of `J_γ̂` split into its
//! emphasis term and its distribution-shift term. Sampled estimators are
//! checked against these values.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{
    action_values_from, discounted_transition_matrix, expected_reward, solve_values, stationary_distribution,
    transition_matrix,
};
use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::mdp::FiniteMdp;
use crate::policy::SoftmaxPolicy;
use crate::scalar::{dot, max_abs_diff, Scalar};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest behavior-chain mass for which the density ratio is defined.
pub const MIN_BEHAVIOR_MASS: f64 = 1e-12;

/// Largest state space for which the adjugate cross-check runs.
pub const ADJUGATE_MAX_STATES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ObjectiveKind {
    /// `Σ d_π i v_π`.
    JPi,
    /// `Σ d_μ i v_π`.
    JMu,
    /// `Σ d_γ̂ î v_π`.
    JGamma,
}

fn check_gamma_hat<T: Scalar>(gamma_hat: T) -> Result<()> {
    if gamma_hat >= T::zero() && gamma_hat <= T::one() {
        Ok(())
    } else {
        Err(Error::GammaHatOutOfRange(gamma_hat.as_f64()))
    }
}

/// `d_γ̂ = (1−γ̂)(I − γ̂P_πᵀ)⁻¹ d_μ` for `γ̂ < 1`, and `d_π` at `γ̂ = 1`.
pub fn counterfactual_distribution<T: Scalar>(p_pi: &Matrix<T>, d_mu: &[T], gamma_hat: T) -> Result<Vec<T>> {
    check_gamma_hat(gamma_hat)?;
    if gamma_hat == T::one() {
        return stationary_distribution(p_pi);
    }
    let a = reverse_resolvent(p_pi, gamma_hat);
    let x = a.solve(d_mu).ok_or(Error::Singular("I - gamma_hat * P_pi^T"))?;
    Ok(x.into_iter().map(|v| v * (T::one() - gamma_hat)).collect())
}

/// `I − γ̂P_πᵀ`.
fn reverse_resolvent<T: Scalar>(p_pi: &Matrix<T>, gamma_hat: T) -> Matrix<T> {
    Matrix::identity(p_pi.rows()).sub(&p_pi.transpose().scale(gamma_hat))
}

/// `c(s) = d_γ̂(s) / d_μ(s)`.
pub fn density_ratio_exact<T: Scalar>(d_gamma: &[T], d_mu: &[T]) -> Result<Vec<T>> {
    d_gamma
        .iter()
        .zip(d_mu)
        .enumerate()
        .map(|(s, (&dg, &dm))| {
            if dm < T::of(MIN_BEHAVIOR_MASS) {
                Err(Error::BehaviorUnsupported {
                    state: s,
                    value: dm.as_f64(),
                })
            } else {
                Ok(dg / dm)
            }
        })
        .collect()
}

/// `‖c − γ̂D_μ⁻¹P_πᵀD_μc − (1−γ̂)1‖∞`.
pub fn density_ratio_residual<T: Scalar>(p_pi: &Matrix<T>, d_mu: &[T], c: &[T], gamma_hat: T) -> T {
    let weighted: Vec<T> = d_mu.iter().zip(c).map(|(&d, &x)| d * x).collect();
    let pushed = p_pi.vec_mul(&weighted);
    c.iter().zip(&pushed).zip(d_mu).fold(T::zero(), |m, ((&ci, &pi), &di)| {
        let rhs = gamma_hat * pi / di + (T::one() - gamma_hat);
        m.max((ci - rhs).abs())
    })
}

/// Exact value of one objective.
pub fn objective<T: Scalar>(
    kind: ObjectiveKind,
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    mu: &SoftmaxPolicy<T>,
    gamma_hat: T,
) -> Result<T> {
    let v = solve_values(&discounted_transition_matrix(mdp, pi), &expected_reward(mdp, pi))?;
    let p_pi = transition_matrix(mdp, pi);
    let weighted =
        |d: &[T], interest: &[T]| -> T { d.iter().zip(interest).zip(&v).map(|((&d, &i), &v)| d * i * v).sum() };
    match kind {
        ObjectiveKind::JPi => Ok(weighted(&stationary_distribution(&p_pi)?, mdp.interest_vec())),
        ObjectiveKind::JMu => {
            let d_mu = stationary_distribution(&transition_matrix(mdp, mu))?;
            Ok(weighted(&d_mu, mdp.interest_vec()))
        }
        ObjectiveKind::JGamma => {
            check_gamma_hat(gamma_hat)?;
            let d_gamma = if gamma_hat == T::one() {
                stationary_distribution(&p_pi)?
            } else {
                let d_mu = stationary_distribution(&transition_matrix(mdp, mu))?;
                counterfactual_distribution(&p_pi, &d_mu, gamma_hat)?
            };
            Ok(weighted(&d_gamma, mdp.interest_hat_vec()))
        }
    }
}

/// `∇P_π`, one `|S|×|S|` matrix per θ component.
///
/// Component `(s, b)` only touches row `s`:
/// `∇P[s, s'] = Σ_a ∂π(a|s)/∂θ[s,b] · p(s'|s,a)`.
pub fn grad_transition<T: Scalar>(mdp: &FiniteMdp<T>, pi: &SoftmaxPolicy<T>) -> Vec<Matrix<T>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let grads: Vec<Vec<T>> = (0..na).map(|a| pi.grad_prob_row(s, a)).collect();
        for b in 0..na {
            let mut m = Matrix::zeros(ns, ns);
            for (a, ga) in grads.iter().enumerate() {
                let w = ga[b];
                if w == T::zero() {
                    continue;
                }
                for (s2, &p) in mdp.next_dist(s, a).iter().enumerate() {
                    m[(s, s2)] += w * p;
                }
            }
            out.push(m);
        }
    }
    out
}

/// Gradient of `J_γ̂` decomposed into its two terms (valid for `γ̂ < 1`).
///
/// Matrices are indexed `[θ component, state]`.
#[derive(Debug, Clone)]
pub struct GradientTerms<T> {
    /// `b = ∇P_πᵀ D_μ c`.
    pub b: Matrix<T>,
    /// `f = (I − γ̂P_πᵀ)⁻¹ b`, the limit of `d_μ · E[F⁽²⁾ | S]`.
    pub f: Matrix<T>,
    /// `g = γ̂ D_μ⁻¹ f`, equal to `∇c`.
    pub g: Matrix<T>,
    /// `Σ_s m(s) Σ_a q_π(s,a) ∇π(a|s)`.
    pub term1: Vec<T>,
    /// `Σ_s d_μ(s) î(s) v_π(s) g(s)`.
    pub term2: Vec<T>,
    /// `term1 + term2`.
    pub grad_j_gamma: Vec<T>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    pub stationary_mu: f64,
    pub stationary_pi: f64,
    pub bellman: f64,
    /// Fixed-point residual of the density-ratio equation.
    pub density_ratio: f64,
    /// `|d_μᵀc − 1|`.
    pub normalization: f64,
    /// `‖(I − γ̂P_πᵀ)f − b‖∞`; zero when the gradient is not computed.
    pub emphasis: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [
            self.stationary_mu,
            self.stationary_pi,
            self.bellman,
            self.density_ratio,
            self.normalization,
            self.emphasis,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Every closed-form quantity for one `(π, μ, γ̂)`.
#[derive(Debug, Clone)]
pub struct CounterfactualAnalysis<T> {
    pub gamma_hat: T,
    pub p_pi: Matrix<T>,
    pub p_gamma: Matrix<T>,
    pub d_mu: Vec<T>,
    pub d_pi: Vec<T>,
    pub d_gamma: Vec<T>,
    pub c: Vec<T>,
    pub v_pi: Vec<T>,
    /// Flat `|S|·|A|`.
    pub q_pi: Vec<T>,
    /// `mᵀ = (î∘c)ᵀ D_μ (I − P_{π,γ})⁻¹`.
    pub m: Vec<T>,
    pub j_pi: T,
    pub j_mu: T,
    pub j_gamma: T,
    /// Absent at `γ̂ = 1`.
    pub gradient: Option<GradientTerms<T>>,
    pub residuals: Residuals,
}

impl<T: Scalar> CounterfactualAnalysis<T> {
    pub fn new(mdp: &FiniteMdp<T>, pi: &SoftmaxPolicy<T>, mu: &SoftmaxPolicy<T>, gamma_hat: T) -> Result<Self> {
        check_gamma_hat(gamma_hat)?;
        let p_pi = transition_matrix(mdp, pi);
        let p_mu = transition_matrix(mdp, mu);
        let p_gamma = discounted_transition_matrix(mdp, pi);
        let d_mu = stationary_distribution(&p_mu)?;
        let d_pi = stationary_distribution(&p_pi)?;
        let d_gamma = if gamma_hat == T::one() {
            d_pi.clone()
        } else {
            counterfactual_distribution(&p_pi, &d_mu, gamma_hat)?
        };
        let c = density_ratio_exact(&d_gamma, &d_mu)?;
        let r_pi = expected_reward(mdp, pi);
        let v_pi = solve_values(&p_gamma, &r_pi)?;
        let q_pi = action_values_from(mdp, &v_pi);

        let ns = mdp.n_states();
        let resolvent_t = Matrix::identity(ns).sub(&p_gamma).transpose();
        let interest_weight: Vec<T> = (0..ns).map(|s| d_mu[s] * mdp.interest_hat(s) * c[s]).collect();
        let m = resolvent_t.solve(&interest_weight).ok_or(Error::EmphasisUndefined)?;

        let weighted =
            |d: &[T], interest: &[T]| -> T { d.iter().zip(interest).zip(&v_pi).map(|((&d, &i), &v)| d * i * v).sum() };
        let j_pi = weighted(&d_pi, mdp.interest_vec());
        let j_mu = weighted(&d_mu, mdp.interest_vec());
        let j_gamma = weighted(&d_gamma, mdp.interest_hat_vec());

        let gradient = if gamma_hat < T::one() {
            Some(gradient_vectors(
                mdp, pi, &p_pi, &d_mu, &c, &v_pi, &q_pi, &m, gamma_hat,
            )?)
        } else {
            None
        };

        let bellman = max_abs_diff(
            &v_pi,
            &r_pi
                .iter()
                .zip(p_gamma.mul_vec(&v_pi))
                .map(|(&r, pv)| r + pv)
                .collect::<Vec<_>>(),
        );
        let emphasis = gradient.as_ref().map_or(0.0, |gt| {
            let a = reverse_resolvent(&p_pi, gamma_hat);
            (0..gt.f.rows())
                .map(|k| max_abs_diff(&a.mul_vec(gt.f.row(k)), gt.b.row(k)).as_f64())
                .fold(0.0, f64::max)
        });
        let residuals = Residuals {
            stationary_mu: max_abs_diff(&p_mu.vec_mul(&d_mu), &d_mu).as_f64(),
            stationary_pi: max_abs_diff(&p_pi.vec_mul(&d_pi), &d_pi).as_f64(),
            bellman: bellman.as_f64(),
            density_ratio: if gamma_hat < T::one() {
                density_ratio_residual(&p_pi, &d_mu, &c, gamma_hat).as_f64()
            } else {
                0.0
            },
            normalization: (dot(&d_mu, &c) - T::one()).abs().as_f64(),
            emphasis,
        };

        Ok(Self {
            gamma_hat,
            p_pi,
            p_gamma,
            d_mu,
            d_pi,
            d_gamma,
            c,
            v_pi,
            q_pi,
            m,
            j_pi,
            j_mu,
            j_gamma,
            gradient,
            residuals,
        })
    }

    pub fn objective(&self, kind: ObjectiveKind) -> T {
        match kind {
            ObjectiveKind::JPi => self.j_pi,
            ObjectiveKind::JMu => self.j_mu,
            ObjectiveKind::JGamma => self.j_gamma,
        }
    }

    pub fn report(&self) -> AnalysisReport {
        let v = |x: &[T]| crate::scalar::to_f64_vec(x);
        AnalysisReport {
            gamma_hat: self.gamma_hat.as_f64(),
            d_mu: v(&self.d_mu),
            d_pi: v(&self.d_pi),
            d_gamma: v(&self.d_gamma),
            c: v(&self.c),
            v_pi: v(&self.v_pi),
            j_pi: self.j_pi.as_f64(),
            j_mu: self.j_mu.as_f64(),
            j_gamma: self.j_gamma.as_f64(),
            grad_j_gamma: self.gradient.as_ref().map(|g| v(&g.grad_j_gamma)),
            residuals: self.residuals,
        }
    }
}

/// JSON form of a [`CounterfactualAnalysis`].
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub gamma_hat: f64,
    pub d_mu: Vec<f64>,
    pub d_pi: Vec<f64>,
    pub d_gamma: Vec<f64>,
    pub c: Vec<f64>,
    pub v_pi: Vec<f64>,
    #[serde(rename = "J_pi")]
    pub j_pi: f64,
    #[serde(rename = "J_mu")]
    pub j_mu: f64,
    #[serde(rename = "J_gamma")]
    pub j_gamma: f64,
    #[serde(rename = "grad_J_gamma")]
    pub grad_j_gamma: Option<Vec<f64>>,
    pub residuals: Residuals,
}

/// `b`, `f`, `g`, both gradient terms and their sum.
#[allow(clippy::too_many_arguments)]
pub fn gradient_vectors<T: Scalar>(
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    p_pi: &Matrix<T>,
    d_mu: &[T],
    c: &[T],
    v_pi: &[T],
    q_pi: &[T],
    m: &[T],
    gamma_hat: T,
) -> Result<GradientTerms<T>> {
    if !(gamma_hat >= T::zero() && gamma_hat < T::one()) {
        return Err(Error::GammaHatOutOfRange(gamma_hat.as_f64()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n_params = ns * na;
    let d_gamma: Vec<T> = d_mu.iter().zip(c).map(|(&d, &x)| d * x).collect();

    let grad_p = grad_transition(mdp, pi);
    let mut b = Matrix::zeros(n_params, ns);
    for (k, gp) in grad_p.iter().enumerate() {
        b.row_mut(k).copy_from_slice(&gp.vec_mul(&d_gamma));
    }
    let f = emphasis_limit(p_pi, &b, gamma_hat)?;
    let mut g = Matrix::zeros(n_params, ns);
    for k in 0..n_params {
        for s in 0..ns {
            g[(k, s)] = gamma_hat * f[(k, s)] / d_mu[s];
        }
    }

    let mut term1 = vec![T::zero(); n_params];
    for s in 0..ns {
        for a in 0..na {
            let w = m[s] * q_pi[s * na + a];
            for (b_idx, gpi) in pi.grad_prob_row(s, a).into_iter().enumerate() {
                term1[s * na + b_idx] += w * gpi;
            }
        }
    }
    let weight: Vec<T> = (0..ns).map(|s| d_mu[s] * mdp.interest_hat(s) * v_pi[s]).collect();
    let term2: Vec<T> = (0..n_params).map(|k| dot(&weight, g.row(k))).collect();
    let grad_j_gamma = term1.iter().zip(&term2).map(|(&x, &y)| x + y).collect();
    Ok(GradientTerms {
        b,
        f,
        g,
        term1,
        term2,
        grad_j_gamma,
    })
}

/// `f = (I − γ̂P_πᵀ)⁻¹ b` row by row.
pub fn emphasis_limit<T: Scalar>(p_pi: &Matrix<T>, b: &Matrix<T>, gamma_hat: T) -> Result<Matrix<T>> {
    let lu = Lu::new(&reverse_resolvent(p_pi, gamma_hat)).ok_or(Error::Singular("I - gamma_hat * P_pi^T"))?;
    let mut f = Matrix::zeros(b.rows(), b.cols());
    for k in 0..b.rows() {
        f.row_mut(k).copy_from_slice(&lu.solve(b.row(k)));
    }
    Ok(f)
}

/// `f` for a given analysis (`γ̂ < 1`).
pub fn f_vector<T: Scalar>(analysis: &CounterfactualAnalysis<T>) -> Result<&Matrix<T>> {
    analysis
        .gradient
        .as_ref()
        .map(|g| &g.f)
        .ok_or(Error::GammaHatOutOfRange(analysis.gamma_hat.as_f64()))
}

/// Central differences of a vector-valued function of θ.
///
/// Row `k` of the result is `(F(θ + h e_k) − F(θ − h e_k)) / 2h`. Components
/// are evaluated in parallel; each writes its own row, so the result is
/// identical to a serial evaluation.
pub fn central_difference<T, F>(pi: &SoftmaxPolicy<T>, h: T, f: F) -> Result<Matrix<T>>
where
    T: Scalar,
    F: Fn(&SoftmaxPolicy<T>) -> Result<Vec<T>> + Sync,
{
    let rows: Vec<Vec<T>> = (0..pi.n_params())
        .into_par_iter()
        .map(|k| {
            let plus = f(&pi.perturbed(k, h))?;
            let minus = f(&pi.perturbed(k, -h))?;
            Ok(plus.iter().zip(&minus).map(|(&p, &m)| (p - m) / (h + h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_rows(&rows))
}

/// Finite-difference gradient of an objective over θ.
pub fn fd_gradient<T: Scalar>(
    kind: ObjectiveKind,
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    mu: &SoftmaxPolicy<T>,
    gamma_hat: T,
    h: T,
) -> Result<Vec<T>> {
    if !(h > T::zero() && h <= T::of(1e-3)) {
        return Err(Error::Config(format!("finite-difference step {h} outside (0, 1e-3]")));
    }
    let m = central_difference(pi, h, |p| objective(kind, mdp, p, mu, gamma_hat).map(|j| vec![j]))?;
    Ok((0..m.rows()).map(|k| m[(k, 0)]).collect())
}

/// Finite-difference Jacobian of the exact density ratio, `[θ component, state]`.
pub fn fd_density_ratio_gradient<T: Scalar>(
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    d_mu: &[T],
    gamma_hat: T,
    h: T,
) -> Result<Matrix<T>> {
    central_difference(pi, h, |p| {
        let d_gamma = counterfactual_distribution(&transition_matrix(mdp, p), d_mu, gamma_hat)?;
        density_ratio_exact(&d_gamma, d_mu)
    })
}

/// Stationary distribution from a normalized row of `adj(I − P)`.
pub fn adjugate_stationary<T: Scalar>(p: &Matrix<T>) -> Result<Vec<T>> {
    let n = p.rows();
    if n > ADJUGATE_MAX_STATES {
        return Err(Error::Config(format!(
            "adjugate construction limited to {ADJUGATE_MAX_STATES} states, got {n}"
        )));
    }
    let adj = Matrix::identity(n).sub(p).adjugate();
    let (best, mass) = (0..n)
        .map(|i| (i, adj.row(i).iter().copied().sum::<T>()))
        .fold((0, T::zero()), |b, cur| if cur.1.abs() > b.1.abs() { cur } else { b });
    if mass.abs() <= T::epsilon() {
        return Err(Error::NonErgodic("adjugate of I - P has no nonzero row".into()));
    }
    Ok(adj.row(best).iter().map(|&x| x / mass).collect())
}

/// Rows of `adj(I − P)`, each normalized to sum one.
pub fn normalized_adjugate_rows<T: Scalar>(p: &Matrix<T>) -> Vec<Vec<T>> {
    let adj = Matrix::identity(p.rows()).sub(p).adjugate();
    (0..adj.rows())
        .map(|i| {
            let sum: T = adj.row(i).iter().copied().sum();
            adj.row(i).iter().map(|&x| x / sum).collect()
        })
        .collect()
}

/// `v_π`, `q_π` and `c` for the current policy, with `d_μ` precomputed.
/// Used as the oracle critic during training.
#[derive(Debug, Clone)]
pub struct OracleCritic<T> {
    pub v: Vec<T>,
    pub q: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> OracleCritic<T> {
    pub fn compute(mdp: &FiniteMdp<T>, pi: &SoftmaxPolicy<T>, d_mu: &[T], gamma_hat: T) -> Result<Self> {
        let v = solve_values(&discounted_transition_matrix(mdp, pi), &expected_reward(mdp, pi))?;
        let q = action_values_from(mdp, &v);
        let d_gamma = counterfactual_distribution(&transition_matrix(mdp, pi), d_mu, gamma_hat)?;
        let c = density_ratio_exact(&d_gamma, d_mu)?;
        Ok(Self { v, q, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_random_mdp, RandomMdpSpec};
    use approx::assert_relative_eq;

    fn random_case(seed: u64) -> (FiniteMdp<f64>, SoftmaxPolicy<f64>, SoftmaxPolicy<f64>) {
        let mdp = build_random_mdp::<f64>(&RandomMdpSpec {
            n_states: 4,
            n_actions: 3,
            seed,
            discount: 0.8,
        })
        .unwrap();
        let theta = (0..mdp.n_params())
            .map(|k| ((k * 37 + seed as usize * 11) % 17) as f64 / 8.0 - 1.0)
            .collect();
        let pi = SoftmaxPolicy::from_theta(&mdp, theta).unwrap();
        let mu = SoftmaxPolicy::uniform(&mdp);
        (mdp, pi, mu)
    }

    #[test]
    fn boundary_distributions() {
        let (mdp, pi, mu) = random_case(3);
        let a0 = CounterfactualAnalysis::new(&mdp, &pi, &mu, 0.0).unwrap();
        assert!(max_abs_diff(&a0.d_gamma, &a0.d_mu) < 1e-14);
        assert!(a0.c.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let a1 = CounterfactualAnalysis::new(&mdp, &pi, &mu, 1.0).unwrap();
        assert_eq!(a1.d_gamma, a1.d_pi);
        assert!(a1.gradient.is_none());
        assert_relative_eq!(a0.j_gamma, a0.j_mu, epsilon = 1e-12);
        assert_relative_eq!(a1.j_gamma, a1.j_pi, epsilon = 1e-12);
    }

    #[test]
    fn same_policy_gives_unit_ratio() {
        let (mdp, _, mu) = random_case(5);
        for gh in [0.0, 0.3, 0.9, 0.99] {
            let a = CounterfactualAnalysis::new(&mdp, &mu, &mu, gh).unwrap();
            assert!(a.c.iter().all(|&x| (x - 1.0).abs() < 1e-10), "{gh}: {:?}", a.c);
        }
    }

    #[test]
    fn gamma_hat_zero_kills_distribution_term() {
        let (mdp, pi, mu) = random_case(7);
        let a = CounterfactualAnalysis::new(&mdp, &pi, &mu, 0.0).unwrap();
        let g = a.gradient.unwrap();
        assert_eq!(g.g.max_abs(), 0.0);
        assert!(g.term2.iter().all(|&x| x == 0.0));
        assert_eq!(g.f, g.b);
    }

    #[test]
    fn grad_transition_rows_sum_to_zero_and_match_fd() {
        let (mdp, pi, _) = random_case(11);
        let gp = grad_transition(&mdp, &pi);
        let h = 1e-5;
        for (k, m) in gp.iter().enumerate() {
            for s in 0..mdp.n_states() {
                assert!(m.row(s).iter().sum::<f64>().abs() < 1e-15);
            }
            let plus = transition_matrix(&mdp, &pi.perturbed(k, h));
            let minus = transition_matrix(&mdp, &pi.perturbed(k, -h));
            let fd = plus.sub(&minus).scale(1.0 / (2.0 * h));
            assert!(fd.sub(m).max_abs() < 1e-7);
        }
    }

    #[test]
    fn f_satisfies_series_and_definition() {
        let (mdp, pi, mu) = random_case(13);
        let a = CounterfactualAnalysis::new(&mdp, &pi, &mu, 0.7).unwrap();
        let g = a.gradient.as_ref().unwrap();
        let pt = a.p_pi.transpose().scale(0.7);
        // Neumann partial sums b + γ̂Pᵀb + (γ̂Pᵀ)²b + ...
        for k in 0..g.b.rows() {
            let mut term = g.b.row(k).to_vec();
            let mut sum = term.clone();
            let mut prev_err = f64::INFINITY;
            for it in 0..200 {
                term = pt.mul_vec(&term);
                sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
                let err = max_abs_diff(&sum, g.f.row(k));
                if it % 20 == 19 {
                    assert!(err <= prev_err + 1e-15);
                    prev_err = err;
                }
            }
            assert!(prev_err < 1e-12);
            for s in 0..mdp.n_states() {
                assert_relative_eq!(g.g[(k, s)], 0.7 * g.f[(k, s)] / a.d_mu[s], epsilon = 1e-15);
            }
        }
        assert!(a.residuals.emphasis < 1e-10);
    }

    #[test]
    fn adjugate_matches_linear_solve() {
        let p = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5]]);
        let d = adjugate_stationary(&p).unwrap();
        assert_relative_eq!(d[0], 5.0 / 6.0, epsilon = 1e-14);
        let (mdp, pi, _) = random_case(17);
        let p = transition_matrix(&mdp, &pi);
        let rows = normalized_adjugate_rows(&p);
        let d = stationary_distribution(&p).unwrap();
        for r in rows {
            assert!(max_abs_diff(&r, &d) < 1e-8);
        }
        let bad = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(adjugate_stationary(&bad).is_err());
    }

    #[test]
    fn gradient_matches_fd() {
        let (mdp, pi, mu) = random_case(19);
        for gh in [0.0, 0.5, 0.9] {
            let a = CounterfactualAnalysis::new(&mdp, &pi, &mu, gh).unwrap();
            let fd = fd_gradient(ObjectiveKind::JGamma, &mdp, &pi, &mu, gh, FD_STEP).unwrap();
            let grad = &a.gradient.as_ref().unwrap().grad_j_gamma;
            let rel = max_abs_diff(grad, &fd) / crate::scalar::max_abs(&fd);
            assert!(rel < 1e-6, "γ̂={gh} rel={rel}");
        }
    }

    #[test]
    fn fd_step_is_validated_and_constant_objective_has_zero_gradient() {
        let (mdp, pi, mu) = random_case(23);
        assert!(fd_gradient(ObjectiveKind::JPi, &mdp, &pi, &mu, 0.5, 0.1).is_err());
        let zero = mdp.scale_rewards(0.0);
        let g = fd_gradient(ObjectiveKind::JGamma, &zero, &pi, &mu, 0.5, FD_STEP).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn behavior_support_required() {
        let err = density_ratio_exact(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("not fully supported"));
    }
}
