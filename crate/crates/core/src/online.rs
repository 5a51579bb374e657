//! Sample-based learners and emphatic traces.
//!
//! [`DensityRatioLearner`] learns `c` with the discounted COP-TD rule,
//! [`ValueLearner`] is tabular off-policy TD(0), and [`TraceState`] carries
//! the two emphasis traces whose products with the critic form the policy
//! gradient sample `Z_t = Z⁽¹⁾_t + Z⁽²⁾_t`.

use serde::{Deserialize, Serialize};

use crate::envs::{Sampler, Transition};
use crate::error::{Error, Result};
use crate::exact::CounterfactualAnalysis;
use crate::mdp::FiniteMdp;
use crate::policy::SoftmaxPolicy;
use crate::scalar::Scalar;
use crate::stats::{BatchMeans, Estimate};

/// Closed interval used to clip importance ratios and density ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub lo: f64,
    pub hi: f64,
}

impl ClipRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn apply<T: Scalar>(&self, x: T) -> T {
        x.max(T::of(self.lo)).min(T::of(self.hi))
    }
}

impl Default for ClipRange {
    fn default() -> Self {
        Self::new(0.0, 2.0)
    }
}

#[inline]
fn clip<T: Scalar>(range: Option<ClipRange>, x: T) -> T {
    match range {
        Some(r) => r.apply(x),
        None => x,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum StepSize {
    Constant(f64),
    /// `α₀ / √t` on the `t`-th update.
    InverseSqrt(f64),
}

impl StepSize {
    #[inline]
    pub fn at<T: Scalar>(&self, t: u64) -> T {
        match *self {
            StepSize::Constant(a) => T::of(a),
            StepSize::InverseSqrt(a0) => T::of(a0 / (t.max(1) as f64).sqrt()),
        }
    }
}

/// Tabular discounted COP-TD estimate of the density ratio.
#[derive(Debug, Clone)]
pub struct DensityRatioLearner<T> {
    c: Vec<T>,
    step: StepSize,
    gamma_hat: T,
    clip: Option<ClipRange>,
    rho_clip: Option<ClipRange>,
    updates: u64,
}

impl<T: Scalar> DensityRatioLearner<T> {
    /// Starts at `C ≡ 1` with no clipping.
    pub fn new(n_states: usize, gamma_hat: T, step: StepSize) -> Self {
        Self {
            c: vec![T::one(); n_states],
            step,
            gamma_hat,
            clip: None,
            rho_clip: None,
            updates: 0,
        }
    }

    pub fn with_clip(mut self, clip: Option<ClipRange>) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_rho_clip(mut self, rho_clip: Option<ClipRange>) -> Self {
        self.rho_clip = rho_clip;
        self
    }

    pub fn with_initial(mut self, c: Vec<T>) -> Self {
        assert_eq!(c.len(), self.c.len());
        self.c = c;
        self
    }

    #[inline]
    pub fn ratio(&self, s: usize) -> T {
        self.c[s]
    }

    pub fn values(&self) -> &[T] {
        &self.c
    }

    /// `γ̂ρ_t C(S_t) + (1−γ̂) − C(S_{t+1})`, the increment direction before
    /// scaling by the step size.
    pub fn td_error(&self, tr: &Transition<T>, rho: T) -> T {
        let rho = clip(self.rho_clip, rho);
        self.gamma_hat * rho * self.c[tr.state] + (T::one() - self.gamma_hat) - self.c[tr.next_state]
    }

    /// `C(S_{t+1}) ← C(S_{t+1}) + α[γ̂ρ_t C(S_t) + (1−γ̂) − C(S_{t+1})]`.
    /// Returns the error term.
    pub fn cop_td_step(&mut self, tr: &Transition<T>, rho: T) -> T {
        self.updates += 1;
        let alpha: T = self.step.at(self.updates);
        let err = self.td_error(tr, rho);
        let c = &mut self.c[tr.next_state];
        *c = clip(self.clip, *c + alpha * err);
        err
    }

    /// Like [`Self::cop_td_step`], bootstrapping `C(S_t)` from a frozen copy.
    pub fn cop_td_step_with_target(&mut self, tr: &Transition<T>, rho: T, target: &[T]) -> T {
        self.updates += 1;
        let alpha: T = self.step.at(self.updates);
        let rho = clip(self.rho_clip, rho);
        let err = self.gamma_hat * rho * target[tr.state] + (T::one() - self.gamma_hat) - self.c[tr.next_state];
        let c = &mut self.c[tr.next_state];
        *c = clip(self.clip, *c + alpha * err);
        err
    }
}

/// Tabular off-policy TD(0).
#[derive(Debug, Clone)]
pub struct ValueLearner<T> {
    v: Vec<T>,
    step: StepSize,
    updates: u64,
}

impl<T: Scalar> ValueLearner<T> {
    pub fn new(n_states: usize, step: StepSize) -> Self {
        Self {
            v: vec![T::zero(); n_states],
            step,
            updates: 0,
        }
    }

    pub fn with_initial(mut self, v: Vec<T>) -> Self {
        assert_eq!(v.len(), self.v.len());
        self.v = v;
        self
    }

    #[inline]
    pub fn value(&self, s: usize) -> T {
        self.v[s]
    }

    pub fn values(&self) -> &[T] {
        &self.v
    }

    /// `δ_t = R_{t+1} + γ(S_t, A_t, S_{t+1}) V(S_{t+1}) − V(S_t)`.
    pub fn td_error(&self, tr: &Transition<T>) -> T {
        tr.reward + tr.discount * self.v[tr.next_state] - self.v[tr.state]
    }

    /// `V(S_t) ← V(S_t) + α ρ_t δ_t`; returns `δ_t` from before the update.
    pub fn td_step(&mut self, tr: &Transition<T>, rho: T) -> T {
        self.updates += 1;
        let alpha: T = self.step.at(self.updates);
        let delta = self.td_error(tr);
        self.v[tr.state] += alpha * rho * delta;
        delta
    }

    /// Like [`Self::td_step`], bootstrapping `V(S_{t+1})` from a frozen copy.
    pub fn td_step_with_target(&mut self, tr: &Transition<T>, rho: T, target: &[T]) -> T {
        self.updates += 1;
        let alpha: T = self.step.at(self.updates);
        let delta = tr.reward + tr.discount * target[tr.next_state] - self.v[tr.state];
        self.v[tr.state] += alpha * rho * delta;
        delta
    }
}

/// Which interest seeds the first emphasis trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterestMode {
    /// `i(s) = î(s)`.
    Extrinsic,
    /// `i(s) = î(s) c(s)`.
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma_hat: f64,
    pub rho_clip: Option<ClipRange>,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} = {x} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma_hat) {
            return Err(Error::GammaHatOutOfRange(self.gamma_hat));
        }
        Ok(())
    }
}

/// Per-step quantities the traces need from the critic side.
pub trait TraceSources<T> {
    /// Interest `i(S_t)` feeding `F⁽¹⁾`.
    fn interest(&self, s: usize) -> T;
    fn interest_hat(&self, s: usize) -> T;
    /// Density ratio used in the intrinsic interest, `c(S_{t−1})`.
    fn ratio(&self, s: usize) -> T;
    /// Action-value signal for `Z⁽¹⁾`: `q_π(S_t, A_t)` or a TD error.
    fn critic(&self, tr: &Transition<T>) -> T;
    /// `v_π(S_t)` for `Z⁽²⁾`.
    fn value(&self, s: usize) -> T;
}

/// Exact `c`, `v_π`, `q_π` from a closed-form analysis.
#[derive(Debug, Clone, Copy)]
pub struct OracleSources<'a, T> {
    pub mdp: &'a FiniteMdp<T>,
    pub c: &'a [T],
    pub v: &'a [T],
    pub q: &'a [T],
    pub mode: InterestMode,
}

impl<'a, T: Scalar> OracleSources<'a, T> {
    pub fn from_analysis(mdp: &'a FiniteMdp<T>, analysis: &'a CounterfactualAnalysis<T>, mode: InterestMode) -> Self {
        Self {
            mdp,
            c: &analysis.c,
            v: &analysis.v_pi,
            q: &analysis.q_pi,
            mode,
        }
    }
}

impl<T: Scalar> TraceSources<T> for OracleSources<'_, T> {
    fn interest(&self, s: usize) -> T {
        match self.mode {
            InterestMode::Extrinsic => self.mdp.interest_hat(s),
            InterestMode::Counterfactual => self.mdp.interest_hat(s) * self.c[s],
        }
    }

    fn interest_hat(&self, s: usize) -> T {
        self.mdp.interest_hat(s)
    }

    fn ratio(&self, s: usize) -> T {
        self.c[s]
    }

    fn critic(&self, tr: &Transition<T>) -> T {
        self.q[tr.state * self.mdp.n_actions() + tr.action]
    }

    fn value(&self, s: usize) -> T {
        self.v[s]
    }
}

#[derive(Debug, Clone, Copy)]
struct Previous<T> {
    state: usize,
    action: usize,
    /// Clipped `ρ_{t−1}`.
    rho: T,
    /// `γ(S_{t−1}, A_{t−1}, S_t)`.
    discount: T,
}

/// Emphasis traces `F⁽¹⁾` (scalar) and `F⁽²⁾` (one entry per θ component).
#[derive(Debug, Clone)]
pub struct TraceState<T> {
    config: TraceConfig,
    f1: T,
    f2: Vec<T>,
    prev: Option<Previous<T>>,
    t: u64,
}

/// Output of one trace step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample<T> {
    pub f1: T,
    pub m1: T,
    pub m2: Vec<T>,
    pub z1: Vec<T>,
    pub z2: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> TraceState<T> {
    pub fn new(config: TraceConfig, n_params: usize) -> Self {
        Self {
            config,
            f1: T::zero(),
            f2: vec![T::zero(); n_params],
            prev: None,
            t: 0,
        }
    }

    pub fn config(&self) -> &TraceConfig {
        &self.config
    }

    pub fn f1(&self) -> T {
        self.f1
    }

    pub fn f2(&self) -> &[T] {
        &self.f2
    }

    /// Number of transitions observed, including the first.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn prev_state(&self) -> Option<usize> {
        self.prev.map(|p| p.state)
    }

    pub fn clip_rho(&self, rho: T) -> T {
        clip(self.config.rho_clip, rho)
    }

    /// Record the very first transition. The traces are not advanced;
    /// it only provides `S_{t−1}`, `A_{t−1}`, `ρ_{t−1}` for the next step.
    pub fn begin(&mut self, tr: &Transition<T>, rho: T) {
        self.prev = Some(Previous {
            state: tr.state,
            action: tr.action,
            rho: self.clip_rho(rho),
            discount: tr.discount,
        });
        self.t = 1;
    }

    /// Advance both traces on transition `t ≥ 1` and form `Z_t`.
    ///
    /// ```text
    /// F⁽¹⁾ ← i(S_t) + γ_t ρ_{t−1} F⁽¹⁾        M⁽¹⁾ = (1−λ₁) i(S_t) + λ₁ F⁽¹⁾
    /// I    ← c(S_{t−1}) ρ_{t−1} ∇log π(A_{t−1}|S_{t−1})
    /// F⁽²⁾ ← I + γ̂ ρ_{t−1} F⁽²⁾               M⁽²⁾ = (1−λ₂) I + λ₂ F⁽²⁾
    /// Z⁽¹⁾ = ρ_t M⁽¹⁾ q̂ ∇log π(A_t|S_t)        Z⁽²⁾ = γ̂ î(S_t) v(S_t) M⁽²⁾
    /// ```
    pub fn step(
        &mut self,
        tr: &Transition<T>,
        pi: &SoftmaxPolicy<T>,
        rho: T,
        sources: &impl TraceSources<T>,
    ) -> Result<TraceSample<T>> {
        let prev = self.prev.ok_or(Error::TraceNotWarmed)?;
        let cfg = self.config;
        let (l1, l2, gh) = (T::of(cfg.lambda1), T::of(cfg.lambda2), T::of(cfg.gamma_hat));
        let rho = self.clip_rho(rho);
        let s = tr.state;

        let interest = sources.interest(s);
        self.f1 = interest + prev.discount * prev.rho * self.f1;
        let m1 = (T::one() - l1) * interest + l1 * self.f1;

        let n = self.f2.len();
        let mut intrinsic = vec![T::zero(); n];
        pi.add_log_gradient(
            &mut intrinsic,
            prev.state,
            prev.action,
            sources.ratio(prev.state) * prev.rho,
        );
        let decay = gh * prev.rho;
        for (f, &i) in self.f2.iter_mut().zip(&intrinsic) {
            *f = i + decay * *f;
        }
        let m2: Vec<T> = intrinsic
            .iter()
            .zip(&self.f2)
            .map(|(&i, &f)| (T::one() - l2) * i + l2 * f)
            .collect();

        let mut z1 = vec![T::zero(); n];
        pi.add_log_gradient(&mut z1, s, tr.action, rho * m1 * sources.critic(tr));
        let scale2 = gh * sources.interest_hat(s) * sources.value(s);
        let z2: Vec<T> = m2.iter().map(|&m| scale2 * m).collect();
        let z = z1.iter().zip(&z2).map(|(&a, &b)| a + b).collect();

        self.prev = Some(Previous {
            state: s,
            action: tr.action,
            rho,
            discount: tr.discount,
        });
        self.t += 1;
        Ok(TraceSample {
            f1: self.f1,
            m1,
            m2,
            z1,
            z2,
            z,
        })
    }

    /// `begin` on the first call, `step` afterwards.
    pub fn observe(
        &mut self,
        tr: &Transition<T>,
        pi: &SoftmaxPolicy<T>,
        rho: T,
        sources: &impl TraceSources<T>,
    ) -> Result<Option<TraceSample<T>>> {
        if self.prev.is_none() {
            self.begin(tr, rho);
            Ok(None)
        } else {
            self.step(tr, pi, rho, sources).map(Some)
        }
    }
}

/// Settings for long-run averages of trace quantities under a frozen policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongRunConfig {
    pub trace: TraceConfig,
    /// Samples averaged after warm-up.
    pub steps: u64,
    pub warmup: u64,
    pub seed: u64,
    pub n_batches: usize,
}

/// Default batch count for batch-means error bars.
pub const DEFAULT_BATCHES: usize = 500;

/// Averages of `Z_t`, `Z⁽¹⁾_t`, `Z⁽²⁾_t` over a behavior-policy run with exact
/// `c`, `v_π`, `q_π` and interest `î·c`.
#[derive(Debug, Clone)]
pub struct LongRunAverage<T> {
    pub z: Estimate<T>,
    pub z1: Estimate<T>,
    pub z2: Estimate<T>,
    pub analysis: CounterfactualAnalysis<T>,
}

pub fn long_run_average<T: Scalar>(
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    mu: &SoftmaxPolicy<T>,
    cfg: &LongRunConfig,
) -> Result<LongRunAverage<T>> {
    cfg.trace.validate()?;
    let analysis = CounterfactualAnalysis::new(mdp, pi, mu, T::of(cfg.trace.gamma_hat))?;
    let sources = OracleSources::from_analysis(mdp, &analysis, InterestMode::Counterfactual);
    let n = pi.n_params();
    let mut trace = TraceState::new(cfg.trace, n);
    let mut sampler = Sampler::new(cfg.seed, 1, 0);
    let mut z = BatchMeans::new(n, cfg.steps, cfg.n_batches);
    let mut z1 = BatchMeans::new(n, cfg.steps, cfg.n_batches);
    let mut z2 = BatchMeans::new(n, cfg.steps, cfg.n_batches);
    let mut seen = 0u64;
    while seen < cfg.warmup + cfg.steps {
        let tr = sampler.step(mdp, mu);
        let rho = pi.ratio(mu, tr.state, tr.action);
        if let Some(sample) = trace.observe(&tr, pi, rho, &sources)? {
            seen += 1;
            if seen > cfg.warmup {
                z.push(&sample.z);
                z1.push(&sample.z1);
                z2.push(&sample.z2);
            }
        }
    }
    Ok(LongRunAverage {
        z: z.finish(),
        z1: z1.finish(),
        z2: z2.finish(),
        analysis,
    })
}

/// Long-run average of `1{S_t = s} F⁽²⁾_t` with `λ₂ = 1`, exact `c` and no
/// clipping. Its limit is `f(s)` for each θ component; the estimate's flat
/// index is `k·|S| + s`.
#[allow(clippy::too_many_arguments)]
pub fn emphasis_state_average<T: Scalar>(
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    mu: &SoftmaxPolicy<T>,
    gamma_hat: f64,
    steps: u64,
    warmup: u64,
    seed: u64,
    n_batches: usize,
) -> Result<(Estimate<T>, CounterfactualAnalysis<T>)> {
    let trace_cfg = TraceConfig {
        lambda1: 1.0,
        lambda2: 1.0,
        gamma_hat,
        rho_clip: None,
    };
    trace_cfg.validate()?;
    let analysis = CounterfactualAnalysis::new(mdp, pi, mu, T::of(gamma_hat))?;
    let sources = OracleSources::from_analysis(mdp, &analysis, InterestMode::Counterfactual);
    let (n, ns) = (pi.n_params(), mdp.n_states());
    let mut trace = TraceState::new(trace_cfg, n);
    let mut sampler = Sampler::new(seed, 2, 0);
    let mut acc = BatchMeans::new(n * ns, steps, n_batches);
    let mut seen = 0u64;
    while seen < warmup + steps {
        let tr = sampler.step(mdp, mu);
        let rho = pi.ratio(mu, tr.state, tr.action);
        if trace.observe(&tr, pi, rho, &sources)?.is_some() {
            seen += 1;
            if seen > warmup {
                let s = tr.state;
                acc.push_sparse(trace.f2().iter().enumerate().map(|(k, &f)| (k * ns + s, f)));
            }
        }
    }
    Ok((acc.finish(), analysis))
}
