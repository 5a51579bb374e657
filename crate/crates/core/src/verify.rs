//! Verification suites: closed-form identities, finite-difference gradient
//! checks and statistical checks of the online estimators.
//!
//! Each suite returns one [`CheckResult`] per check. The CLI `verify`
//! command and the acceptance tests both run these.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::transition_matrix;
use crate::envs::{build_random_mdp, seeded_rng, RandomMdpSpec, Sampler};
use crate::error::Result;
use crate::exact::{
    counterfactual_distribution, density_ratio_exact, density_ratio_residual, fd_density_ratio_gradient, fd_gradient,
    CounterfactualAnalysis, ObjectiveKind, FD_STEP,
};
use crate::linalg::Matrix;
use crate::mdp::FiniteMdp;
use crate::online::{
    emphasis_state_average, long_run_average, DensityRatioLearner, LongRunConfig, StepSize, TraceConfig,
};
use crate::policy::SoftmaxPolicy;
use crate::scalar::{dot, max_abs, max_abs_diff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    /// The check passes when `metric <= threshold`.
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: impl Into<String>, metric: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if metric <= threshold {
                Status::Pass
            } else {
                Status::Fail
            },
            metric,
            threshold,
            detail: detail.into(),
        }
    }

    fn skipped(name: impl Into<String>, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            metric: 0.0,
            threshold,
            detail: detail.into(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        format!(
            "{tag} {}: {:.3e} (threshold {:.3e}) {}",
            self.name, self.metric, self.threshold, self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn new(checks: Vec<CheckResult>) -> Self {
        Self {
            passed: !checks.iter().any(CheckResult::failed),
            checks,
        }
    }
}

/// Deliberate defects used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// Report `term1 − term2` as the gradient.
    FlipTerm2,
}

/// A random MDP with a random target policy and a uniform behavior policy.
pub struct Instance {
    pub mdp: FiniteMdp<f64>,
    pub pi: SoftmaxPolicy<f64>,
    pub mu: SoftmaxPolicy<f64>,
}

/// θ is uniform in `[−theta_scale, theta_scale]`.
pub fn random_instance(spec: &RandomMdpSpec, theta_scale: f64) -> Result<Instance> {
    let mdp = build_random_mdp::<f64>(spec)?;
    let mut rng = seeded_rng(spec.seed, 7);
    let theta = (0..mdp.n_params())
        .map(|_| rng.gen_range(-theta_scale..=theta_scale))
        .collect();
    Ok(Instance {
        pi: SoftmaxPolicy::from_theta(&mdp, theta)?,
        mu: SoftmaxPolicy::uniform(&mdp),
        mdp,
    })
}

fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    max_abs_diff(got, want) / max_abs(want).max(1e-12)
}

fn matrix_relative_error(got: &Matrix<f64>, want: &Matrix<f64>) -> f64 {
    got.sub(want).max_abs() / want.max_abs().max(1e-12)
}

fn fmt_gamma(gh: f64) -> String {
    format!("gamma_hat={gh}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointParams {
    pub n_mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma_hats: Vec<f64>,
    pub seed: u64,
    pub tol: f64,
    /// `γ̂` standing in for the `γ̂ → 1` limit.
    pub near_one: f64,
    pub near_one_tol: f64,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            n_mdps: 100,
            max_states: 8,
            max_actions: 4,
            gamma_hats: (0..10).map(|i| i as f64 / 10.0).collect(),
            seed: 0,
            tol: 1e-10,
            near_one: 1.0 - 1e-6,
            near_one_tol: 1e-4,
        }
    }
}

#[derive(Default)]
struct FixedPointStats {
    residual: f64,
    normalization: f64,
    at_zero: f64,
    near_one: f64,
}

/// Fixed point of the density ratio, normalization and both boundary limits.
pub fn fixed_point_suite(p: &FixedPointParams) -> Result<Vec<CheckResult>> {
    let per_mdp: Vec<FixedPointStats> = (0..p.n_mdps)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(p.seed, 1000 + i as u64);
            let spec = RandomMdpSpec {
                n_states: rng.gen_range(2..=p.max_states),
                n_actions: rng.gen_range(1..=p.max_actions),
                seed: p.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                discount: rng.gen_range(0.0..0.95),
            };
            let inst = random_instance(&spec, 1.0)?;
            let p_pi = transition_matrix(&inst.mdp, &inst.pi);
            let base = CounterfactualAnalysis::new(&inst.mdp, &inst.pi, &inst.mu, 0.0)?;
            let mut st = FixedPointStats {
                at_zero: max_abs_diff(&base.d_gamma, &base.d_mu),
                ..Default::default()
            };
            for &gh in &p.gamma_hats {
                let d_gamma = counterfactual_distribution(&p_pi, &base.d_mu, gh)?;
                let c = density_ratio_exact(&d_gamma, &base.d_mu)?;
                st.residual = st.residual.max(density_ratio_residual(&p_pi, &base.d_mu, &c, gh));
                st.normalization = st.normalization.max((dot(&base.d_mu, &c) - 1.0).abs());
            }
            let limit = counterfactual_distribution(&p_pi, &base.d_mu, p.near_one)?;
            st.near_one = max_abs_diff(&limit, &base.d_pi);
            Ok(st)
        })
        .collect::<Result<_>>()?;
    let worst = |f: fn(&FixedPointStats) -> f64| per_mdp.iter().map(f).fold(0.0, f64::max);
    let scope = format!("{} random MDPs, {} values of gamma_hat", p.n_mdps, p.gamma_hats.len());
    Ok(vec![
        CheckResult::bound("fixed_point.residual", worst(|s| s.residual), p.tol, scope.clone()),
        CheckResult::bound(
            "fixed_point.normalization",
            worst(|s| s.normalization),
            p.tol,
            scope.clone(),
        ),
        CheckResult::bound(
            "fixed_point.gamma_hat_zero",
            worst(|s| s.at_zero),
            p.tol,
            "d_gamma = d_mu",
        ),
        CheckResult::bound(
            "fixed_point.gamma_hat_one",
            worst(|s| s.near_one),
            p.near_one_tol,
            format!("d_gamma -> d_pi at gamma_hat = {}", p.near_one),
        ),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientParams {
    pub n_mdps: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma_hats: Vec<f64>,
    pub seed: u64,
    pub h: f64,
    pub tol: f64,
    pub mutation: Mutation,
}

impl Default for GradientParams {
    fn default() -> Self {
        Self {
            n_mdps: 20,
            n_states: 5,
            n_actions: 3,
            gamma_hats: vec![0.2, 0.5, 0.9],
            seed: 0,
            h: FD_STEP,
            tol: 1e-6,
            mutation: Mutation::None,
        }
    }
}

/// Closed-form gradient, its distribution term and `g = ∇c` against central
/// differences.
pub fn gradient_suite(p: &GradientParams) -> Result<Vec<CheckResult>> {
    let cases: Vec<(usize, f64)> = (0..p.n_mdps)
        .flat_map(|i| p.gamma_hats.iter().map(move |&gh| (i, gh)))
        .collect();
    // (gradient, term2, g) relative errors per case
    let errs: Vec<(f64, f64, f64)> = cases
        .par_iter()
        .map(|&(i, gh)| {
            let spec = RandomMdpSpec {
                n_states: p.n_states,
                n_actions: p.n_actions,
                seed: p.seed.wrapping_mul(7919).wrapping_add(i as u64),
                discount: 0.8,
            };
            let inst = random_instance(&spec, 1.0)?;
            let a = CounterfactualAnalysis::new(&inst.mdp, &inst.pi, &inst.mu, gh)?;
            let terms = a.gradient.as_ref().expect("gamma_hat < 1");
            let grad: Vec<f64> = match p.mutation {
                Mutation::None => terms.grad_j_gamma.clone(),
                Mutation::FlipTerm2 => terms.term1.iter().zip(&terms.term2).map(|(x, y)| x - y).collect(),
            };
            let fd = fd_gradient(ObjectiveKind::JGamma, &inst.mdp, &inst.pi, &inst.mu, gh, p.h)?;
            let fd_c = fd_density_ratio_gradient(&inst.mdp, &inst.pi, &a.d_mu, gh, p.h)?;
            let weight: Vec<f64> = (0..inst.mdp.n_states())
                .map(|s| a.d_mu[s] * inst.mdp.interest_hat(s) * a.v_pi[s])
                .collect();
            let fd_term2: Vec<f64> = (0..fd_c.rows()).map(|k| dot(&weight, fd_c.row(k))).collect();
            let term2: Vec<f64> = match p.mutation {
                Mutation::None => terms.term2.clone(),
                Mutation::FlipTerm2 => terms.term2.iter().map(|x| -x).collect(),
            };
            let term2_err = if gh == 0.0 {
                0.0
            } else {
                relative_error(&term2, &fd_term2)
            };
            let g_err = if gh == 0.0 {
                fd_c.max_abs()
            } else {
                matrix_relative_error(&terms.g, &fd_c)
            };
            Ok((relative_error(&grad, &fd), term2_err, g_err))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for &gh in &p.gamma_hats {
        let here = || {
            cases
                .iter()
                .zip(&errs)
                .filter(move |((_, g), _)| *g == gh)
                .map(|(_, e)| e)
        };
        let scope = format!("{} random MDPs, {}", p.n_mdps, fmt_gamma(gh));
        out.push(CheckResult::bound(
            format!("objective.gradient[{}]", fmt_gamma(gh)),
            here().map(|e| e.0).fold(0.0, f64::max),
            p.tol,
            scope.clone(),
        ));
        if gh == 0.0 {
            out.push(CheckResult::skipped(
                format!("objective.second_term[{}]", fmt_gamma(gh)),
                p.tol,
                "skipped (identically zero)",
            ));
        } else {
            out.push(CheckResult::bound(
                format!("objective.second_term[{}]", fmt_gamma(gh)),
                here().map(|e| e.1).fold(0.0, f64::max),
                p.tol,
                scope.clone(),
            ));
        }
        out.push(CheckResult::bound(
            format!("density_ratio.gradient[{}]", fmt_gamma(gh)),
            here().map(|e| e.2).fold(0.0, f64::max),
            p.tol,
            scope,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct StatisticalParams {
    pub n_mdps: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub theta_scale: f64,
    pub gamma_hats: Vec<f64>,
    pub steps: u64,
    pub warmup: u64,
    pub n_batches: usize,
    pub seed: u64,
    /// Pass when every component lies within this many standard errors.
    pub z_max: f64,
}

impl StatisticalParams {
    /// One random MDP, `10⁶` steps, `γ̂ ∈ {0.2, 0.5, 0.9}`.
    pub fn emphasis_trace() -> Self {
        Self {
            n_mdps: 1,
            n_states: 4,
            n_actions: 2,
            discount: 0.6,
            theta_scale: 0.5,
            gamma_hats: vec![0.2, 0.5, 0.9],
            steps: 1_000_000,
            warmup: 10_000,
            n_batches: 500,
            seed: 100,
            z_max: 3.0,
        }
    }

    /// Five random 4-state MDPs, `2·10⁶` steps.
    pub fn oracle_update() -> Self {
        Self {
            n_mdps: 5,
            steps: 2_000_000,
            ..Self::emphasis_trace()
        }
    }

    fn instance(&self, i: usize) -> Result<Instance> {
        random_instance(
            &RandomMdpSpec {
                n_states: self.n_states,
                n_actions: self.n_actions,
                seed: self.seed + i as u64,
                discount: self.discount,
            },
            self.theta_scale,
        )
    }

    fn cases(&self) -> Vec<(usize, f64)> {
        (0..self.n_mdps)
            .flat_map(|i| self.gamma_hats.iter().map(move |&gh| (i, gh)))
            .collect()
    }
}

/// Long-run average of `1{S_t = s}F⁽²⁾_t` against `(I − γ̂P_πᵀ)⁻¹b`.
pub fn emphasis_trace_suite(p: &StatisticalParams) -> Result<Vec<CheckResult>> {
    p.cases()
        .par_iter()
        .map(|&(i, gh)| {
            let inst = p.instance(i)?;
            let (est, analysis) = emphasis_state_average(
                &inst.mdp,
                &inst.pi,
                &inst.mu,
                gh,
                p.steps,
                p.warmup,
                p.seed + i as u64,
                p.n_batches,
            )?;
            let f = &analysis.gradient.as_ref().expect("gamma_hat < 1").f;
            let z = est.max_z_score(f.as_slice());
            Ok(CheckResult::bound(
                format!("emphasis_trace[mdp={i},{}]", fmt_gamma(gh)),
                z,
                p.z_max,
                format!(
                    "max |z| over {} (state, component) pairs, {} steps",
                    f.as_slice().len(),
                    p.steps
                ),
            ))
        })
        .collect()
}

/// Long-run average of `Z_t` with the oracle critic against the closed-form
/// gradient.
pub fn oracle_update_suite(p: &StatisticalParams) -> Result<Vec<CheckResult>> {
    p.cases()
        .par_iter()
        .map(|&(i, gh)| {
            let inst = p.instance(i)?;
            let cfg = LongRunConfig {
                trace: TraceConfig {
                    lambda1: 1.0,
                    lambda2: 1.0,
                    gamma_hat: gh,
                    rho_clip: None,
                },
                steps: p.steps,
                warmup: p.warmup,
                seed: p.seed + i as u64,
                n_batches: p.n_batches,
            };
            let avg = long_run_average(&inst.mdp, &inst.pi, &inst.mu, &cfg)?;
            let grad = &avg.analysis.gradient.as_ref().expect("gamma_hat < 1").grad_j_gamma;
            Ok(CheckResult::bound(
                format!("oracle_update[mdp={i},{}]", fmt_gamma(gh)),
                avg.z.max_z_score(grad),
                p.z_max,
                format!("max |z| over {} components, {} steps", grad.len(), p.steps),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CopTdParams {
    pub n_mdps: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma_hats: Vec<f64>,
    pub steps: u64,
    /// `α_t = alpha0 / √t`.
    pub alpha0: f64,
    /// Fraction of the run, from the start, left out of the time average.
    pub burn_in: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for CopTdParams {
    fn default() -> Self {
        Self {
            n_mdps: 10,
            n_states: 5,
            n_actions: 3,
            gamma_hats: vec![0.0, 0.25, 0.5],
            steps: 1_000_000,
            alpha0: 0.5,
            burn_in: 0.5,
            seed: 200,
            tol: 0.05,
        }
    }
}

/// Tabular COP-TD with decaying steps and no clipping; the time-averaged
/// estimate against the exact ratio.
pub fn cop_td_suite(p: &CopTdParams) -> Result<Vec<CheckResult>> {
    let cases: Vec<(usize, f64)> = (0..p.n_mdps)
        .flat_map(|i| p.gamma_hats.iter().map(move |&gh| (i, gh)))
        .collect();
    let errs: Vec<f64> = cases
        .par_iter()
        .map(|&(i, gh)| {
            let inst = random_instance(
                &RandomMdpSpec {
                    n_states: p.n_states,
                    n_actions: p.n_actions,
                    seed: p.seed + i as u64,
                    discount: 0.9,
                },
                1.0,
            )?;
            let exact = CounterfactualAnalysis::new(&inst.mdp, &inst.pi, &inst.mu, gh)?.c;
            let mut learner = DensityRatioLearner::new(inst.mdp.n_states(), gh, StepSize::InverseSqrt(p.alpha0));
            let mut sampler = Sampler::new(p.seed + i as u64, 3, 0);
            let start = (p.steps as f64 * p.burn_in) as u64;
            let mut sum = vec![0.0; exact.len()];
            for t in 0..p.steps {
                let tr = sampler.step(&inst.mdp, &inst.mu);
                learner.cop_td_step(&tr, inst.pi.ratio(&inst.mu, tr.state, tr.action));
                if t >= start {
                    for (acc, &c) in sum.iter_mut().zip(learner.values()) {
                        *acc += c;
                    }
                }
            }
            let n = (p.steps - start) as f64;
            let avg: Vec<f64> = sum.iter().map(|x| x / n).collect();
            Ok(max_abs_diff(&avg, &exact))
        })
        .collect::<Result<_>>()?;
    Ok(p.gamma_hats
        .iter()
        .map(|&gh| {
            let worst = cases
                .iter()
                .zip(&errs)
                .filter(|((_, g), _)| *g == gh)
                .map(|(_, &e)| e)
                .fold(0.0, f64::max);
            CheckResult::bound(
                format!("cop_td[{}]", fmt_gamma(gh)),
                worst,
                p.tol,
                format!(
                    "{} random MDPs, {} steps, time-averaged C vs exact c",
                    p.n_mdps, p.steps
                ),
            )
        })
        .collect())
}

/// What `run_all` runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Only the closed-form suites; the statistical ones are reported as
    /// skipped.
    pub quick: bool,
    pub mutation: Mutation,
    /// Base seed for instance generation.
    pub seed: u64,
}

/// Every suite at its default size.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = fixed_point_suite(&FixedPointParams {
        seed: opts.seed,
        ..FixedPointParams::default()
    })?;
    checks.extend(gradient_suite(&GradientParams {
        seed: opts.seed,
        mutation: opts.mutation,
        gamma_hats: vec![0.0, 0.2, 0.5, 0.9],
        ..GradientParams::default()
    })?);
    if opts.quick {
        for name in ["cop_td", "emphasis_trace", "oracle_update"] {
            checks.push(CheckResult::skipped(name, 0.0, "skipped (quick mode)"));
        }
    } else {
        checks.extend(cop_td_suite(&CopTdParams {
            seed: opts.seed + CopTdParams::default().seed,
            ..CopTdParams::default()
        })?);
        checks.extend(emphasis_trace_suite(&StatisticalParams {
            seed: opts.seed + StatisticalParams::emphasis_trace().seed,
            ..StatisticalParams::emphasis_trace()
        })?);
        checks.extend(oracle_update_suite(&StatisticalParams {
            seed: opts.seed + StatisticalParams::oracle_update().seed,
            ..StatisticalParams::oracle_update()
        })?);
    }
    Ok(VerifyReport::new(checks))
}
