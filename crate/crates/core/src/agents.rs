//! Tabular Off-PAC, ACE and Geoff-PAC.
//!
//! All three share one step loop: sample a transition under the behavior
//! policy, update the critic and the density ratio, advance the emphasis
//! traces, then apply exactly one actor update. They differ only in the
//! actor direction.

use serde::{Deserialize, Serialize};

use crate::chain::{stationary_distribution, transition_matrix};
use crate::envs::{Sampler, Transition};
use crate::error::{Error, Result};
use crate::exact::{objective, CounterfactualAnalysis, ObjectiveKind, OracleCritic};
use crate::mdp::FiniteMdp;
use crate::online::{
    ClipRange, DensityRatioLearner, InterestMode, OracleSources, StepSize, TraceConfig, TraceSample, TraceSources,
    TraceState, ValueLearner,
};
use crate::policy::SoftmaxPolicy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    OffPac,
    Ace,
    GeoffPac,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::OffPac => "off_pac",
            Algorithm::Ace => "ace",
            Algorithm::GeoffPac => "geoff_pac",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off_pac" | "offpac" => Ok(Algorithm::OffPac),
            "ace" => Ok(Algorithm::Ace),
            "geoff_pac" | "geoffpac" => Ok(Algorithm::GeoffPac),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Tabular TD critic; the TD error stands in for `q_π`.
    LearnedTd,
    /// Exact `q_π`, `v_π` and `c` of the current policy.
    OracleQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma_hat: f64,
    pub alpha_actor: f64,
    pub alpha_critic: f64,
    pub alpha_density: f64,
    pub rho_clip: Option<ClipRange>,
    pub c_clip: Option<ClipRange>,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub seed: u64,
    pub critic_mode: CriticMode,
    /// Steps between metric rows.
    pub metric_every: u64,
    /// `(state, action)` whose probability is reported as `pi_probe`.
    pub probe: (usize, usize),
    /// When set, the critic and density learners bootstrap from frozen
    /// copies refreshed every this many steps.
    pub target_sync: Option<u64>,
    /// Subtract a constant baseline from the critic values fed to the actor:
    /// `J_μ` with the oracle critic, the running mean of `V(S_t)` otherwise.
    /// Leaves the expected update unchanged when `î` is constant.
    pub baseline: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::GeoffPac,
            lambda1: 1.0,
            lambda2: 1.0,
            gamma_hat: 0.9,
            alpha_actor: 0.01,
            alpha_critic: 0.1,
            alpha_density: 0.05,
            rho_clip: Some(ClipRange::default()),
            c_clip: Some(ClipRange::default()),
            warmup_steps: 1_000,
            total_steps: 50_000,
            seed: 0,
            critic_mode: CriticMode::LearnedTd,
            metric_every: 1_000,
            probe: (0, 0),
            target_sync: None,
            baseline: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.algorithm != Algorithm::OffPac {
            if !(0.0..1.0).contains(&self.gamma_hat) {
                return Err(Error::GammaHatOutOfRange(self.gamma_hat));
            }
            for (name, x) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Config(format!("{name} = {x} outside [0, 1]")));
                }
            }
        }
        for (name, x) in [
            ("alpha_actor", self.alpha_actor),
            ("alpha_critic", self.alpha_critic),
            ("alpha_density", self.alpha_density),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} = {x} must be finite and non-negative")));
            }
        }
        if self.metric_every == 0 {
            return Err(Error::Config("metric_every must be positive".into()));
        }
        if self.target_sync == Some(0) {
            return Err(Error::Config("target_sync must be positive".into()));
        }
        let (s, a) = self.probe;
        if s >= n_states || a >= n_actions {
            return Err(Error::Config(format!("probe {s}:{a} outside the MDP")));
        }
        Ok(())
    }

    fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            // Off-PAC never reads the traces
            gamma_hat: if self.algorithm == Algorithm::OffPac {
                0.0
            } else {
                self.gamma_hat
            },
            rho_clip: self.rho_clip,
        }
    }

    fn interest_mode(&self) -> InterestMode {
        match self.algorithm {
            Algorithm::GeoffPac => InterestMode::Counterfactual,
            _ => InterestMode::Extrinsic,
        }
    }
}

/// One metric row of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: u64,
    pub pi_probe: f64,
    #[serde(rename = "J_pi")]
    pub j_pi: f64,
    #[serde(rename = "J_mu")]
    pub j_mu: f64,
    #[serde(rename = "J_gamma")]
    pub j_gamma: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "norm_F2")]
    pub norm_f2: f64,
    #[serde(rename = "C_probe")]
    pub c_probe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub config: AgentConfig,
    pub rows: Vec<MetricRow>,
    pub final_theta: Vec<f64>,
}

impl TrainingRun {
    pub fn final_row(&self) -> &MetricRow {
        self.rows.last().expect("a run always has its initial row")
    }
}

struct LearnedSources<'a, T> {
    mdp: &'a FiniteMdp<T>,
    c: &'a [T],
    v: &'a [T],
    delta: T,
    baseline: T,
    mode: InterestMode,
}

impl<T: Scalar> TraceSources<T> for LearnedSources<'_, T> {
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

    fn critic(&self, _: &Transition<T>) -> T {
        self.delta
    }

    fn value(&self, s: usize) -> T {
        self.v[s] - self.baseline
    }
}

/// Oracle sources with a constant subtracted from `q_π` and `v_π`.
struct Shifted<'a, T> {
    inner: OracleSources<'a, T>,
    baseline: T,
}

impl<T: Scalar> TraceSources<T> for Shifted<'_, T> {
    fn interest(&self, s: usize) -> T {
        self.inner.interest(s)
    }

    fn interest_hat(&self, s: usize) -> T {
        self.inner.interest_hat(s)
    }

    fn ratio(&self, s: usize) -> T {
        self.inner.ratio(s)
    }

    fn critic(&self, tr: &Transition<T>) -> T {
        self.inner.critic(tr) - self.baseline
    }

    fn value(&self, s: usize) -> T {
        self.inner.value(s) - self.baseline
    }
}

/// What one call to [`Agent::step`] did.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub transition: Transition<T>,
    /// `None` on the first transition, which only seeds the traces.
    pub sample: Option<TraceSample<T>>,
    /// The actor direction, when an actor update was applied.
    pub direction: Option<Vec<T>>,
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct Agent<'a, T> {
    mdp: &'a FiniteMdp<T>,
    config: AgentConfig,
    pi: SoftmaxPolicy<T>,
    mu: SoftmaxPolicy<T>,
    d_mu: Vec<T>,
    value: ValueLearner<T>,
    density: DensityRatioLearner<T>,
    value_target: Vec<T>,
    density_target: Vec<T>,
    trace: TraceState<T>,
    sampler: Sampler<T>,
    value_sum: T,
    steps: u64,
}

impl<'a, T: Scalar> Agent<'a, T> {
    /// Fresh agent with a uniform target policy and uniform behavior policy.
    pub fn new(mdp: &'a FiniteMdp<T>, config: AgentConfig) -> Result<Self> {
        let pi = SoftmaxPolicy::uniform(mdp);
        Self::with_policy(mdp, config, pi)
    }

    pub fn with_policy(mdp: &'a FiniteMdp<T>, config: AgentConfig, pi: SoftmaxPolicy<T>) -> Result<Self> {
        config.validate(mdp.n_states(), mdp.n_actions())?;
        let ih = mdp.interest_hat_vec();
        if config.baseline && config.algorithm == Algorithm::GeoffPac && ih.iter().any(|&x| x != ih[0]) {
            return Err(Error::Config(
                "a value baseline biases the counterfactual term unless the interest is constant".into(),
            ));
        }
        let mu = SoftmaxPolicy::uniform(mdp);
        let d_mu = stationary_distribution(&transition_matrix(mdp, &mu))?;
        let ns = mdp.n_states();
        let value = ValueLearner::new(ns, StepSize::Constant(config.alpha_critic));
        let density = DensityRatioLearner::new(ns, T::of(config.gamma_hat), StepSize::Constant(config.alpha_density))
            .with_clip(config.c_clip)
            .with_rho_clip(config.rho_clip);
        Ok(Self {
            value_target: value.values().to_vec(),
            density_target: density.values().to_vec(),
            trace: TraceState::new(config.trace_config(), mdp.n_params()),
            sampler: Sampler::new(config.seed, 0, 0),
            mdp,
            pi,
            mu,
            d_mu,
            value,
            density,
            config,
            value_sum: T::zero(),
            steps: 0,
        })
    }

    pub fn policy(&self) -> &SoftmaxPolicy<T> {
        &self.pi
    }

    pub fn behavior(&self) -> &SoftmaxPolicy<T> {
        &self.mu
    }

    pub fn trace(&self) -> &TraceState<T> {
        &self.trace
    }

    pub fn density(&self) -> &DensityRatioLearner<T> {
        &self.density
    }

    pub fn value(&self) -> &ValueLearner<T> {
        &self.value
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Sample one transition under `μ` and apply the algorithm's updates.
    pub fn step(&mut self) -> Result<StepOutcome<T>> {
        let tr = self.sampler.step(self.mdp, &self.mu);
        self.apply(tr)
    }

    /// Apply the updates for an externally supplied transition.
    pub fn apply(&mut self, tr: Transition<T>) -> Result<StepOutcome<T>> {
        let cfg = &self.config;
        let rho = self.trace.clip_rho(self.pi.ratio(&self.mu, tr.state, tr.action));
        let t = self.steps;
        self.steps += 1;
        if self.trace.prev_state().is_none() {
            self.trace.begin(&tr, rho);
            return Ok(StepOutcome {
                transition: tr,
                sample: None,
                direction: None,
            });
        }

        let mode = cfg.interest_mode();
        let (sample, critic) = match cfg.critic_mode {
            CriticMode::LearnedTd => {
                let delta = match cfg.target_sync {
                    None => {
                        let delta = self.value.td_step(&tr, rho);
                        self.density.cop_td_step(&tr, rho);
                        delta
                    }
                    Some(_) => {
                        let delta = self.value.td_step_with_target(&tr, rho, &self.value_target);
                        self.density.cop_td_step_with_target(&tr, rho, &self.density_target);
                        delta
                    }
                };
                if let Some(k) = cfg.target_sync {
                    if self.steps.is_multiple_of(k) {
                        self.value_target = self.value.values().to_vec();
                        self.density_target = self.density.values().to_vec();
                    }
                }
                self.value_sum += self.value.value(tr.state);
                let baseline = if cfg.baseline {
                    self.value_sum / T::of(self.steps as f64)
                } else {
                    T::zero()
                };
                let sources = LearnedSources {
                    mdp: self.mdp,
                    c: self.density.values(),
                    v: self.value.values(),
                    delta,
                    baseline,
                    mode,
                };
                (self.trace.step(&tr, &self.pi, rho, &sources)?, delta)
            }
            CriticMode::OracleQ => {
                let oracle = OracleCritic::compute(self.mdp, &self.pi, &self.d_mu, T::of(cfg.gamma_hat))?;
                let baseline = if cfg.baseline {
                    crate::scalar::dot(&self.d_mu, &oracle.v)
                } else {
                    T::zero()
                };
                let sources = Shifted {
                    inner: OracleSources {
                        mdp: self.mdp,
                        c: &oracle.c,
                        v: &oracle.v,
                        q: &oracle.q,
                        mode,
                    },
                    baseline,
                };
                let critic = sources.critic(&tr);
                (self.trace.step(&tr, &self.pi, rho, &sources)?, critic)
            }
        };

        let direction = (t >= cfg.warmup_steps).then(|| match cfg.algorithm {
            Algorithm::OffPac => {
                let mut d = vec![T::zero(); self.pi.n_params()];
                self.pi.add_log_gradient(&mut d, tr.state, tr.action, rho * critic);
                d
            }
            Algorithm::Ace => sample.z1.clone(),
            Algorithm::GeoffPac => sample.z.clone(),
        });
        if let Some(d) = &direction {
            let alpha = T::of(cfg.alpha_actor);
            for (th, &g) in self.pi.theta_mut().iter_mut().zip(d) {
                *th += alpha * g;
            }
            if self.pi.theta().iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("policy parameters diverged".into()));
            }
        }
        Ok(StepOutcome {
            transition: tr,
            sample: Some(sample),
            direction,
        })
    }

    /// Metric row for the current state of the run.
    pub fn metrics(&self) -> Result<MetricRow> {
        let gh = T::of(self.config.gamma_hat.min(1.0));
        let analysis = CounterfactualAnalysis::new(self.mdp, &self.pi, &self.mu, gh)?;
        let (ps, pa) = self.config.probe;
        let c_probe = match self.config.critic_mode {
            CriticMode::LearnedTd => self.density.ratio(ps),
            CriticMode::OracleQ => analysis.c[ps],
        };
        Ok(MetricRow {
            step: self.steps,
            pi_probe: self.pi.prob(ps, pa).as_f64(),
            j_pi: analysis.j_pi.as_f64(),
            j_mu: analysis.j_mu.as_f64(),
            j_gamma: analysis.j_gamma.as_f64(),
            f1: self.trace.f1().as_f64(),
            norm_f2: self.trace.f2().iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt(),
            c_probe: c_probe.as_f64(),
        })
    }
}

/// Run one configuration to completion.
pub fn train<T: Scalar>(mdp: &FiniteMdp<T>, config: &AgentConfig) -> Result<TrainingRun> {
    let mut agent = Agent::new(mdp, config.clone())?;
    let mut rows = vec![agent.metrics()?];
    for _ in 0..config.total_steps {
        agent.step()?;
        if agent.steps() % config.metric_every == 0 || agent.steps() == config.total_steps {
            rows.push(agent.metrics()?);
        }
    }
    Ok(TrainingRun {
        config: config.clone(),
        rows,
        final_theta: agent.pi.theta().iter().map(|x| x.as_f64()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    #[serde(rename = "J_pi")]
    pub j_pi: f64,
    #[serde(rename = "J_mu")]
    pub j_mu: f64,
    /// `(γ̂, J_γ̂)` in the order requested.
    #[serde(rename = "J_gamma")]
    pub j_gamma: Vec<(f64, f64)>,
}

/// Exact objectives of `pi` against behavior `mu` for each `γ̂`.
pub fn evaluate_policy<T: Scalar>(
    mdp: &FiniteMdp<T>,
    pi: &SoftmaxPolicy<T>,
    mu: &SoftmaxPolicy<T>,
    gamma_hats: &[f64],
) -> Result<PolicyEvaluation> {
    let j = |k, gh: f64| objective(k, mdp, pi, mu, T::of(gh)).map(|x| x.as_f64());
    Ok(PolicyEvaluation {
        j_pi: j(ObjectiveKind::JPi, 0.0)?,
        j_mu: j(ObjectiveKind::JMu, 0.0)?,
        j_gamma: gamma_hats
            .iter()
            .map(|&gh| j(ObjectiveKind::JGamma, gh).map(|x| (gh, x)))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_random_mdp, build_two_circle, two_circle, RandomMdpSpec, TwoCircleSpec};

    fn random() -> FiniteMdp<f64> {
        build_random_mdp(&RandomMdpSpec {
            n_states: 4,
            n_actions: 3,
            seed: 8,
            discount: 0.7,
        })
        .unwrap()
    }

    #[test]
    fn geoff_pac_without_counterfactual_is_ace() {
        let mdp = random();
        let base = AgentConfig {
            lambda1: 0.8,
            gamma_hat: 0.0,
            warmup_steps: 10,
            total_steps: 3_000,
            seed: 3,
            ..AgentConfig::default()
        };
        let ace = train(
            &mdp,
            &AgentConfig {
                algorithm: Algorithm::Ace,
                ..base.clone()
            },
        )
        .unwrap();
        let geoff = train(
            &mdp,
            &AgentConfig {
                algorithm: Algorithm::GeoffPac,
                ..base
            },
        )
        .unwrap();
        assert_eq!(ace.final_theta, geoff.final_theta);
    }

    #[test]
    fn ace_without_emphasis_is_off_pac() {
        let mdp = random();
        let base = AgentConfig {
            lambda1: 0.0,
            warmup_steps: 0,
            total_steps: 3_000,
            seed: 4,
            ..AgentConfig::default()
        };
        let ace = train(
            &mdp,
            &AgentConfig {
                algorithm: Algorithm::Ace,
                ..base.clone()
            },
        )
        .unwrap();
        let off = train(
            &mdp,
            &AgentConfig {
                algorithm: Algorithm::OffPac,
                ..base
            },
        )
        .unwrap();
        assert_eq!(ace.final_theta, off.final_theta);
    }

    #[test]
    fn zero_actor_step_freezes_policy() {
        let mdp = build_two_circle::<f64>(&TwoCircleSpec::default()).unwrap();
        let run = train(
            &mdp,
            &AgentConfig {
                alpha_actor: 0.0,
                total_steps: 2_000,
                metric_every: 500,
                ..AgentConfig::default()
            },
        )
        .unwrap();
        assert!(run.final_theta.iter().all(|&x| x == 0.0));
        let first = &run.rows[0];
        assert!(run
            .rows
            .iter()
            .all(|r| r.pi_probe == first.pi_probe && r.j_pi == first.j_pi));
        assert_eq!(run.rows.len(), 5);
    }

    #[test]
    fn runs_are_deterministic() {
        let mdp = random();
        let cfg = AgentConfig {
            total_steps: 2_000,
            warmup_steps: 100,
            ..AgentConfig::default()
        };
        assert_eq!(train(&mdp, &cfg).unwrap(), train(&mdp, &cfg).unwrap());
        let other = train(&mdp, &AgentConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(other.final_theta, train(&mdp, &cfg).unwrap().final_theta);
    }

    #[test]
    fn one_actor_update_per_step_after_warmup() {
        let mdp = random();
        let mut agent = Agent::new(
            &mdp,
            AgentConfig {
                warmup_steps: 5,
                ..AgentConfig::default()
            },
        )
        .unwrap();
        let outcomes: Vec<_> = (0..20).map(|_| agent.step().unwrap()).collect();
        assert!(outcomes[0].sample.is_none());
        for (t, o) in outcomes.iter().enumerate().skip(1) {
            assert_eq!(o.direction.is_some(), t >= 5, "t={t}");
        }
    }

    #[test]
    fn geoff_pac_rejects_full_counterfactual() {
        let mdp = random();
        let err = Agent::new(
            &mdp,
            AgentConfig {
                gamma_hat: 1.0,
                ..AgentConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::GammaHatOutOfRange(_)));
        assert!(Agent::new(
            &mdp,
            AgentConfig {
                algorithm: Algorithm::OffPac,
                gamma_hat: 1.0,
                ..AgentConfig::default()
            }
        )
        .is_ok());
    }

    #[test]
    fn target_sync_mode_runs() {
        let mdp = random();
        let run = train(
            &mdp,
            &AgentConfig {
                target_sync: Some(50),
                total_steps: 2_000,
                ..AgentConfig::default()
            },
        )
        .unwrap();
        assert!(run.final_theta.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn evaluation_endpoints() {
        let mdp = build_two_circle::<f64>(&TwoCircleSpec::default()).unwrap();
        let mu = SoftmaxPolicy::uniform(&mdp);
        let pi = SoftmaxPolicy::deterministic(&mdp, &[two_circle::OUTER, 0, 0, 0]).unwrap();
        let e = evaluate_policy(&mdp, &pi, &mu, &[0.0, 0.5, 1.0]).unwrap();
        assert!((e.j_gamma[0].1 - e.j_mu).abs() < 1e-12);
        assert!((e.j_gamma[2].1 - e.j_pi).abs() < 1e-12);
        let same = evaluate_policy(&mdp, &mu, &mu, &[]).unwrap();
        assert!((same.j_pi - same.j_mu).abs() < 1e-12);
    }
}
