//! Markov chains induced by a policy: transition matrices, stationary
//! distributions and value functions.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mdp::FiniteMdp;
use crate::policy::SoftmaxPolicy;
use crate::scalar::{max_abs_diff, Scalar};

/// Residual above which a stationary solve is treated as failed.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-8;

/// Chain quantities for one policy.
#[derive(Debug, Clone)]
pub struct ChainAnalysis<T> {
    /// `P_π`.
    pub p: Matrix<T>,
    /// `P_{π,γ}`.
    pub p_gamma: Matrix<T>,
    /// Stationary distribution of `P_π`.
    pub d: Vec<T>,
}

impl<T: Scalar> ChainAnalysis<T> {
    pub fn new(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Result<Self> {
        let p = transition_matrix(mdp, policy);
        let d = stationary_distribution(&p)?;
        Ok(Self {
            p_gamma: discounted_transition_matrix(mdp, policy),
            p,
            d,
        })
    }
}

/// `P_π[s,s'] = Σ_a π(a|s) p(s'|s,a)`.
pub fn transition_matrix<T: Scalar>(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Matrix<T> {
    weighted_kernel(mdp, policy, |_, _, _| T::one())
}

/// `P_{π,γ}[s,s'] = Σ_a π(a|s) p(s'|s,a) γ(s,a,s')`.
pub fn discounted_transition_matrix<T: Scalar>(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Matrix<T> {
    weighted_kernel(mdp, policy, |s, a, s2| mdp.gamma(s, a, s2))
}

fn weighted_kernel<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &SoftmaxPolicy<T>,
    weight: impl Fn(usize, usize, usize) -> T,
) -> Matrix<T> {
    let n = mdp.n_states();
    let mut out = Matrix::zeros(n, n);
    for s in 0..n {
        let probs = policy.probs(s);
        for (a, &pa) in probs.iter().enumerate() {
            if pa == T::zero() {
                continue;
            }
            for s2 in 0..n {
                out[(s, s2)] += pa * mdp.p(s, a, s2) * weight(s, a, s2);
            }
        }
    }
    out
}

/// Whether the directed graph of positive entries of `p` is strongly
/// connected.
pub fn is_strongly_connected<T: Scalar>(p: &Matrix<T>) -> bool {
    let n = p.rows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > T::zero() && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    n > 0 && reach(true) && reach(false)
}

/// Unique `d` with `dᵀP = dᵀ`, `Σd = 1`.
///
/// Solves `(Pᵀ − I)d = 0` with its last equation replaced by the
/// normalization constraint.
pub fn stationary_distribution<T: Scalar>(p: &Matrix<T>) -> Result<Vec<T>> {
    let n = p.rows();
    if !is_strongly_connected(p) {
        return Err(Error::NonErgodic("transition graph is not strongly connected".into()));
    }
    let mut a = p.transpose().sub(&Matrix::identity(n));
    a.row_mut(n - 1).fill(T::one());
    let mut rhs = vec![T::zero(); n];
    rhs[n - 1] = T::one();
    let d = a
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodic("stationary system is singular".into()))?;
    let residual = max_abs_diff(&p.vec_mul(&d), &d);
    if residual.is_nan() || residual > T::tol(STATIONARY_RESIDUAL_TOL) {
        return Err(Error::NonErgodic(format!(
            "stationary solve residual {residual} too large"
        )));
    }
    Ok(d)
}

/// `r_π(s) = Σ_a π(a|s) r(s,a)`.
pub fn expected_reward<T: Scalar>(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Vec<T> {
    (0..mdp.n_states())
        .map(|s| {
            policy
                .probs(s)
                .iter()
                .enumerate()
                .map(|(a, &pa)| pa * mdp.reward(s, a))
                .sum()
        })
        .collect()
}

/// `v_π` from `v = r_π + P_{π,γ} v`.
pub fn state_values<T: Scalar>(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Result<Vec<T>> {
    let p_gamma = discounted_transition_matrix(mdp, policy);
    let r = expected_reward(mdp, policy);
    solve_values(&p_gamma, &r)
}

pub(crate) fn solve_values<T: Scalar>(p_gamma: &Matrix<T>, r: &[T]) -> Result<Vec<T>> {
    let n = p_gamma.rows();
    let a = Matrix::identity(n).sub(p_gamma);
    let v = a.solve(r).ok_or(Error::ValueUndefined)?;
    let scale = crate::scalar::max_abs(&v).max(T::one());
    let residual = max_abs_diff(&a.mul_vec(&v), r);
    if residual.is_nan() || residual > T::tol(1e-10) * scale {
        return Err(Error::ValueUndefined);
    }
    Ok(v)
}

/// `q(s,a) = r(s,a) + Σ_{s'} p(s'|s,a) γ(s,a,s') v(s')`, flat `|S|·|A|`.
pub fn action_values_from<T: Scalar>(mdp: &FiniteMdp<T>, v: &[T]) -> Vec<T> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let cont: T = (0..ns).map(|s2| mdp.p(s, a, s2) * mdp.gamma(s, a, s2) * v[s2]).sum();
            q.push(mdp.reward(s, a) + cont);
        }
    }
    q
}

pub fn action_values<T: Scalar>(mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Result<Vec<T>> {
    let v = state_values(mdp, policy)?;
    Ok(action_values_from(mdp, &v))
}
