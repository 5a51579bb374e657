use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::scalar::Scalar;

/// Tabular softmax policy `π(a|s) ∝ exp θ[s,a]` over the available actions
/// of each state.
///
/// Parameters are a flat `|S|·|A|` vector; component `s·|A| + a` is
/// `θ[s,a]`. Masked-out actions have probability zero and their parameters
/// never receive gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy<T> {
    n_states: usize,
    n_actions: usize,
    theta: Vec<T>,
    mask: Vec<bool>,
}

/// Logit gap used by [`SoftmaxPolicy::deterministic`]; `exp(-50)` is below
/// `f64` resolution relative to one.
pub const DETERMINISTIC_LOGIT_GAP: f64 = 50.0;

impl<T: Scalar> SoftmaxPolicy<T> {
    /// Uniform over available actions (`θ ≡ 0`).
    pub fn uniform(mdp: &FiniteMdp<T>) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            theta: vec![T::zero(); mdp.n_params()],
            mask: mdp.action_mask().to_vec(),
        }
    }

    pub fn from_theta(mdp: &FiniteMdp<T>, theta: Vec<T>) -> Result<Self> {
        if theta.len() != mdp.n_params() {
            return Err(Error::Shape {
                field: "theta",
                expected: mdp.n_params(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        Ok(Self {
            theta,
            ..Self::uniform(mdp)
        })
    }

    /// Numerically deterministic policy picking `choice[s]` in each state
    /// (states with a single available action ignore their entry).
    pub fn deterministic(mdp: &FiniteMdp<T>, choice: &[usize]) -> Result<Self> {
        let mut p = Self::uniform(mdp);
        for (s, &a) in choice.iter().enumerate().take(mdp.n_states()) {
            if a >= mdp.n_actions() || !mdp.is_available(s, a) {
                return Err(Error::Config(format!("action {a} not available in state {s}")));
            }
            p.theta[s * p.n_actions + a] = T::of(DETERMINISTIC_LOGIT_GAP);
        }
        Ok(p)
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn param_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    /// Copy with component `k` of θ shifted by `delta`.
    pub fn perturbed(&self, k: usize, delta: T) -> Self {
        let mut p = self.clone();
        p.theta[k] += delta;
        p
    }

    /// `π(·|s)`.
    pub fn probs(&self, s: usize) -> Vec<T> {
        let row = &self.theta[s * self.n_actions..(s + 1) * self.n_actions];
        let mask = &self.mask[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold(T::neg_infinity(), |m, (&x, _)| m.max(x));
        let mut out: Vec<T> = row
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { (x - max).exp() } else { T::zero() })
            .collect();
        let z: T = out.iter().copied().sum();
        out.iter_mut().for_each(|p| *p /= z);
        out
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs(s)[a]
    }

    /// Row `∂π(a|s)/∂θ[s,·]`; every other row of the gradient is zero.
    pub fn grad_prob_row(&self, s: usize, a: usize) -> Vec<T> {
        let probs = self.probs(s);
        let pa = probs[a];
        probs
            .iter()
            .enumerate()
            .map(|(b, &pb)| {
                let ind = if a == b { T::one() } else { T::zero() };
                pa * (ind - pb)
            })
            .collect()
    }

    /// Row `∂log π(a|s)/∂θ[s,·] = 1{a=b} − π(b|s)`.
    pub fn grad_log_row(&self, s: usize, a: usize) -> Vec<T> {
        let probs = self.probs(s);
        probs
            .iter()
            .enumerate()
            .map(|(b, &pb)| if a == b { T::one() - pb } else { -pb })
            .collect()
    }

    /// Full `∇_θ log π(a|s)` over all `|S|·|A|` parameters.
    pub fn log_policy_gradient(&self, s: usize, a: usize) -> Vec<T> {
        let mut g = vec![T::zero(); self.n_params()];
        self.add_log_gradient(&mut g, s, a, T::one());
        g
    }

    /// `out += scale · ∇_θ log π(a|s)` touching only row `s`.
    pub fn add_log_gradient(&self, out: &mut [T], s: usize, a: usize, scale: T) {
        let row = self.grad_log_row(s, a);
        let base = s * self.n_actions;
        for (o, g) in out[base..base + self.n_actions].iter_mut().zip(row) {
            *o += scale * g;
        }
    }

    /// Importance ratio `π(a|s) / μ(a|s)`.
    pub fn ratio(&self, behavior: &Self, s: usize, a: usize) -> T {
        self.prob(s, a) / behavior.prob(s, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpParts;
    use proptest::prelude::*;

    fn mdp(ns: usize, na: usize) -> FiniteMdp<f64> {
        let mut transition = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                transition[(s * na + a) * ns + (s + a) % ns] = 1.0;
            }
        }
        FiniteMdp::new(MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            reward: vec![0.0; ns * na],
            discount: vec![0.9; ns * na * ns],
            interest: vec![1.0; ns],
            interest_hat: vec![1.0; ns],
            action_mask: None,
        })
        .unwrap()
    }

    #[test]
    fn uniform_two_actions_gradient() {
        let m = mdp(2, 2);
        let p = SoftmaxPolicy::uniform(&m);
        assert_eq!(p.log_policy_gradient(1, 0), vec![0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn masked_actions_have_zero_mass() {
        let mut m = mdp(2, 2).to_document();
        m.action_mask = Some(vec![vec![true, true], vec![true, false]]);
        let m = FiniteMdp::<f64>::from_document(&m).unwrap();
        let p = SoftmaxPolicy::from_theta(&m, vec![0.3, -0.2, 1.0, 5.0]).unwrap();
        assert_eq!(p.probs(1), vec![1.0, 0.0]);
        assert_eq!(p.log_policy_gradient(1, 0), vec![0.0; 4]);
    }

    #[test]
    fn deterministic_is_numerically_one() {
        let m = mdp(2, 3);
        let p = SoftmaxPolicy::deterministic(&m, &[2, 1]).unwrap();
        assert_eq!(p.prob(0, 2), 1.0);
        assert_eq!(p.prob(1, 1), 1.0);
        assert!(SoftmaxPolicy::deterministic(&m, &[3, 0]).is_err());
    }

    proptest! {
        #[test]
        fn simplex_and_fd(theta in prop::collection::vec(-3.0f64..3.0, 12), s in 0usize..4, a in 0usize..3) {
            let m = mdp(4, 3);
            let p = SoftmaxPolicy::from_theta(&m, theta).unwrap();
            let probs = p.probs(s);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&x| x > 0.0));

            // Σ_a π(a|s) ∇log π(a|s) = 0
            let mut tangent = vec![0.0; 12];
            for (b, &pb) in probs.iter().enumerate() {
                p.add_log_gradient(&mut tangent, s, b, pb);
            }
            prop_assert!(tangent.iter().all(|x| x.abs() < 1e-12));

            // central differences, h = 1e-6
            let h = 1e-6;
            let g = p.log_policy_gradient(s, a);
            for (k, &gk) in g.iter().enumerate() {
                let fd = (p.perturbed(k, h).prob(s, a).ln() - p.perturbed(k, -h).prob(s, a).ln()) / (2.0 * h);
                prop_assert!((fd - gk).abs() < 1e-8, "k={} fd={} g={}", k, fd, gk);
            }
        }
    }
}
