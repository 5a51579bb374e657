//! Concrete environments and the transition sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, MdpParts};
use crate::policy::SoftmaxPolicy;
use crate::scalar::Scalar;

/// Deterministic RNG for `(seed, stream)`; distinct streams never overlap.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod two_circle {
    //! State and action indices of the two-circle MDP.
    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const C: usize = 2;
    pub const D: usize = 3;
    /// At `A`: move to `B` and go round the outer circle.
    pub const OUTER: usize = 0;
    /// At `A`: move to `C` and go round the inner circle.
    pub const INNER: usize = 1;
    pub const STATE_NAMES: [&str; 4] = ["A", "B", "C", "D"];
}

/// Two loops through a shared decision state `A`: an outer one
/// `A→B→D→A` paying `r_outer` on `D→A`, and an inner one `A→C→A` paying
/// `r_inner` on `C→A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoCircleSpec {
    pub gamma: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for TwoCircleSpec {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            r_inner: 2.5,
            r_outer: 4.0,
        }
    }
}

pub fn build_two_circle<T: Scalar>(spec: &TwoCircleSpec) -> Result<FiniteMdp<T>> {
    use two_circle::*;
    if !(spec.gamma >= 0.0 && spec.gamma < 1.0) {
        return Err(Error::Config(format!(
            "two-circle discount {} outside [0, 1)",
            spec.gamma
        )));
    }
    if !spec.r_inner.is_finite() || !spec.r_outer.is_finite() {
        return Err(Error::Config("two-circle rewards must be finite".into()));
    }
    let (ns, na) = (4, 2);
    // next state per (s, a); single-action states repeat their only move
    let next = [[B, C], [D, D], [A, A], [A, A]];
    let mut transition = vec![T::zero(); ns * na * ns];
    let mut reward = vec![T::zero(); ns * na];
    for s in 0..ns {
        for a in 0..na {
            transition[(s * na + a) * ns + next[s][a]] = T::one();
        }
    }
    for a in 0..na {
        reward[C * na + a] = T::of(spec.r_inner);
        reward[D * na + a] = T::of(spec.r_outer);
    }
    let mut mask = vec![true, true];
    mask.extend([true, false].repeat(3));
    FiniteMdp::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        discount: vec![T::of(spec.gamma); ns * na * ns],
        interest: vec![T::one(); ns],
        interest_hat: vec![T::one(); ns],
        action_mask: Some(mask),
    })
}

/// Random dense MDP. Every kernel row is strictly positive, so the chain
/// is ergodic under any policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub seed: u64,
    /// Constant discount on every transition.
    pub discount: f64,
}

/// Floor added to each Dirichlet weight so no transition probability is zero.
const KERNEL_FLOOR: f64 = 1e-3;

pub fn build_random_mdp<T: Scalar>(spec: &RandomMdpSpec) -> Result<FiniteMdp<T>> {
    if spec.n_states < 2 {
        return Err(Error::Config("random MDPs need at least 2 states".into()));
    }
    if spec.n_actions == 0 {
        return Err(Error::Config("random MDPs need at least 1 action".into()));
    }
    if !(spec.discount >= 0.0 && spec.discount < 1.0) {
        return Err(Error::Config(format!("discount {} outside [0, 1)", spec.discount)));
    }
    let (ns, na) = (spec.n_states, spec.n_actions);
    let mut rng = seeded_rng(spec.seed, 0);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        // Dirichlet(1) via normalized exponentials
        let w: Vec<f64> = (0..ns).map(|_| -(1.0 - rng.gen::<f64>()).ln() + KERNEL_FLOOR).collect();
        let z: f64 = w.iter().sum();
        transition.extend(w.iter().map(|&x| T::of(x / z)));
    }
    let reward = (0..ns * na).map(|_| T::of(rng.gen_range(-1.0..=1.0))).collect();
    FiniteMdp::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        discount: vec![T::of(spec.discount); ns * na * ns],
        interest: vec![T::one(); ns],
        interest_hat: vec![T::one(); ns],
        action_mask: None,
    })
}

/// One environment step `(S_t, A_t, R_{t+1}, S_{t+1}, γ(S_t, A_t, S_{t+1}))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub state: usize,
    pub action: usize,
    pub reward: T,
    pub next_state: usize,
    pub discount: T,
}

/// Index drawn from a categorical distribution given by `probs`.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draw `A ~ π(·|s)`, `S' ~ p(·|s, A)`, reward `r(s, A)`.
pub fn sample_transition<T: Scalar, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    policy: &SoftmaxPolicy<T>,
    state: usize,
    rng: &mut R,
) -> Transition<T> {
    let action = sample_categorical(&policy.probs(state), rng);
    let next_state = sample_categorical(mdp.next_dist(state, action), rng);
    Transition {
        state,
        action,
        reward: mdp.reward(state, action),
        next_state,
        discount: mdp.gamma(state, action, next_state),
    }
}

/// A stream of transitions following one policy from a start state.
#[derive(Debug, Clone)]
pub struct Sampler<T> {
    rng: ChaCha8Rng,
    state: usize,
    /// Half-width of additive uniform reward noise; zero-mean, off by default.
    reward_noise: T,
}

impl<T: Scalar> Sampler<T> {
    pub fn new(seed: u64, stream: u64, start: usize) -> Self {
        Self {
            rng: seeded_rng(seed, stream),
            state: start,
            reward_noise: T::zero(),
        }
    }

    pub fn with_reward_noise(mut self, half_width: T) -> Self {
        self.reward_noise = half_width;
        self
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn step(&mut self, mdp: &FiniteMdp<T>, policy: &SoftmaxPolicy<T>) -> Transition<T> {
        let mut tr = sample_transition(mdp, policy, self.state, &mut self.rng);
        if self.reward_noise > T::zero() {
            let w = self.reward_noise.as_f64();
            tr.reward += T::of(self.rng.gen_range(-w..=w));
        }
        self.state = tr.next_state;
        tr
    }
}
