//! Experiment configuration, environment lookup, multi-seed training and
//! the γ̂ × λ₂ grid, with their CSV outputs.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{train, AgentConfig, MetricRow, TrainingRun};
use crate::envs::{build_random_mdp, build_two_circle, RandomMdpSpec, TwoCircleSpec};
use crate::error::{Error, Result};
use crate::exact::{AnalysisReport, CounterfactualAnalysis};
use crate::mdp::FiniteMdp;
use crate::policy::SoftmaxPolicy;

/// Name of the built-in two-circle environment.
pub const TWO_CIRCLE: &str = "two_circle";

/// Everything a CLI command needs. Every field has a default, and command
/// line flags override values read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `two_circle`, `random:<states>:<actions>:<seed>[:<discount>]`, or a
    /// path to an MDP JSON document.
    pub env: String,
    /// Parameters of the built-in two-circle MDP.
    pub two_circle: TwoCircleSpec,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// `γ̂` values for `analyze`.
    pub gamma_hats: Vec<f64>,
    /// Target policy logits for `analyze`; uniform when absent.
    pub policy_theta: Option<Vec<f64>>,
    pub grid_gamma_hat: Vec<f64>,
    pub grid_lambda2: Vec<f64>,
    /// Worker threads for multi-run commands; all cores when absent.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: TWO_CIRCLE.into(),
            two_circle: TwoCircleSpec::default(),
            agent: AgentConfig::default(),
            seeds: vec![0],
            out: None,
            gamma_hats: vec![0.0, 0.5, 0.9],
            policy_theta: None,
            grid_gamma_hat: vec![0.0, 0.3, 0.6, 0.9],
            grid_lambda2: vec![0.0, 0.5, 1.0],
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Resolve an environment reference.
pub fn load_env(cfg: &ExperimentConfig) -> Result<FiniteMdp<f64>> {
    if cfg.env == TWO_CIRCLE {
        return build_two_circle(&cfg.two_circle);
    }
    if let Some(rest) = cfg.env.strip_prefix("random:") {
        return build_random_mdp(&parse_random(rest)?);
    }
    FiniteMdp::from_json(&read(Path::new(&cfg.env))?)
}

fn parse_random(rest: &str) -> Result<RandomMdpSpec> {
    let bad = || {
        Error::Config(format!(
            "expected random:<states>:<actions>:<seed>[:<discount>], got random:{rest}"
        ))
    };
    let parts: Vec<&str> = rest.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    Ok(RandomMdpSpec {
        n_states: parts[0].parse().map_err(|_| bad())?,
        n_actions: parts[1].parse().map_err(|_| bad())?,
        seed: parts[2].parse().map_err(|_| bad())?,
        discount: parts.get(3).map_or(Ok(0.9), |d| d.parse()).map_err(|_| bad())?,
    })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    if jobs == Some(0) {
        return Err(Error::Config("jobs must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut seen = HashSet::new();
    for s in seeds {
        if !seen.insert(s) {
            return Err(Error::Config(format!("duplicate seed {s}")));
        }
    }
    Ok(())
}

/// One exact analysis per `γ̂` of the configured target policy against the
/// uniform behavior policy.
pub fn analyze(mdp: &FiniteMdp<f64>, cfg: &ExperimentConfig) -> Result<Vec<AnalysisReport>> {
    if cfg.gamma_hats.is_empty() {
        return Err(Error::Config("analyze needs at least one gamma_hat".into()));
    }
    let pi = match &cfg.policy_theta {
        Some(theta) => SoftmaxPolicy::from_theta(mdp, theta.clone())?,
        None => SoftmaxPolicy::uniform(mdp),
    };
    let mu = SoftmaxPolicy::uniform(mdp);
    cfg.gamma_hats
        .iter()
        .map(|&gh| CounterfactualAnalysis::new(mdp, &pi, &mu, gh).map(|a| a.report()))
        .collect()
}

/// One training run per seed, in seed order.
pub fn train_seeds(
    mdp: &FiniteMdp<f64>,
    agent: &AgentConfig,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<TrainingRun>> {
    check_seeds(seeds)?;
    pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| train(mdp, &AgentConfig { seed, ..agent.clone() }))
            .collect()
    })
}

#[derive(Serialize)]
struct TrainingCsvRow {
    seed: u64,
    step: u64,
    pi_probe: f64,
    #[serde(rename = "J_pi")]
    j_pi: f64,
    #[serde(rename = "J_mu")]
    j_mu: f64,
    #[serde(rename = "J_gamma")]
    j_gamma: f64,
    #[serde(rename = "F1")]
    f1: f64,
    #[serde(rename = "norm_F2")]
    norm_f2: f64,
    #[serde(rename = "C_probe")]
    c_probe: f64,
}

impl TrainingCsvRow {
    fn new(seed: u64, r: &MetricRow) -> Self {
        Self {
            seed,
            step: r.step,
            pi_probe: r.pi_probe,
            j_pi: r.j_pi,
            j_mu: r.j_mu,
            j_gamma: r.j_gamma,
            f1: r.f1,
            norm_f2: r.norm_f2,
            c_probe: r.c_probe,
        }
    }
}

/// Training metrics of several runs as one CSV, keyed by seed.
pub fn write_training_csv<W: Write>(w: W, runs: &[TrainingRun]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    if runs.is_empty() {
        return Err(Error::Config("no training runs to write".into()));
    }
    for run in runs {
        for row in &run.rows {
            out.serialize(TrainingCsvRow::new(run.config.seed, row))
                .map_err(csv_error)?;
        }
    }
    out.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub gamma_hat: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub final_pi_probe: f64,
    #[serde(rename = "final_J_pi")]
    pub final_j_pi: f64,
}

/// Train every `(γ̂, λ₂, seed)` cell. Rows come back sorted by
/// `(γ̂, λ₂, seed)` however the cells were scheduled.
pub fn run_grid(
    mdp: &FiniteMdp<f64>,
    agent: &AgentConfig,
    gamma_hats: &[f64],
    lambda2s: &[f64],
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<GridRow>> {
    if gamma_hats.is_empty() || lambda2s.is_empty() {
        return Err(Error::Config("grid axes must be non-empty".into()));
    }
    check_seeds(seeds)?;
    let cells: Vec<(f64, f64, u64)> = gamma_hats
        .iter()
        .flat_map(|&g| {
            lambda2s
                .iter()
                .flat_map(move |&l| seeds.iter().map(move |&s| (g, l, s)))
        })
        .collect();
    let mut rows: Vec<GridRow> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(gamma_hat, lambda2, seed)| {
                let cfg = AgentConfig {
                    gamma_hat,
                    lambda2,
                    seed,
                    ..agent.clone()
                };
                let run = train(mdp, &cfg)?;
                let last = run.final_row();
                Ok(GridRow {
                    gamma_hat,
                    lambda2,
                    seed,
                    final_pi_probe: last.pi_probe,
                    final_j_pi: last.j_pi,
                })
            })
            .collect::<Result<_>>()
    })?;
    rows.sort_by(|a, b| {
        a.gamma_hat
            .total_cmp(&b.gamma_hat)
            .then(a.lambda2.total_cmp(&b.lambda2))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn write_grid_csv<W: Write>(w: W, rows: &[GridRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for row in rows {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })
}

/// Spread of the final probe probability attributable to each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisVariance {
    /// Variance over γ̂ levels of the mean over all other cells.
    pub gamma_hat: f64,
    /// Variance over λ₂ levels of the mean over all other cells.
    pub lambda2: f64,
}

pub fn grid_axis_variance(rows: &[GridRow]) -> AxisVariance {
    fn marginal_variance(rows: &[GridRow], key: fn(&GridRow) -> f64) -> f64 {
        let mut levels: Vec<f64> = rows.iter().map(key).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let means: Vec<f64> = levels
            .iter()
            .map(|&l| {
                let xs: Vec<f64> = rows.iter().filter(|r| key(r) == l).map(|r| r.final_pi_probe).collect();
                xs.iter().sum::<f64>() / xs.len() as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len() as f64
    }
    AxisVariance {
        gamma_hat: marginal_variance(rows, |r| r.gamma_hat),
        lambda2: marginal_variance(rows, |r| r.lambda2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> AgentConfig {
        AgentConfig {
            total_steps: 2_000,
            metric_every: 1_000,
            warmup_steps: 100,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn random_env_references() {
        let cfg = ExperimentConfig {
            env: "random:3:2:7".into(),
            ..Default::default()
        };
        let m = load_env(&cfg).unwrap();
        assert_eq!((m.n_states(), m.n_actions()), (3, 2));
        assert_eq!(m.gamma(0, 0, 0), 0.9);
        let cfg = ExperimentConfig {
            env: "random:3:2:7:0.5".into(),
            ..Default::default()
        };
        assert_eq!(load_env(&cfg).unwrap().gamma(0, 0, 0), 0.5);
        for bad in ["random:3", "random:a:2:1", "random:3:2:1:x:y"] {
            let cfg = ExperimentConfig {
                env: bad.into(),
                ..Default::default()
            };
            assert!(matches!(load_env(&cfg), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn missing_env_file_names_path() {
        let cfg = ExperimentConfig {
            env: "/nonexistent/mdp.json".into(),
            ..Default::default()
        };
        let err = load_env(&cfg).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/mdp.json"), "{err}");
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"agent": {"gamma_hat": 0.3}}"#).unwrap();
        assert_eq!(partial.agent.gamma_hat, 0.3);
        assert_eq!(partial.agent.lambda1, 1.0);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"gama_hat": 1}"#).is_err());
    }

    #[test]
    fn analyze_blocks_per_gamma_hat() {
        let cfg = ExperimentConfig::default();
        let mdp = load_env(&cfg).unwrap();
        let reports = analyze(&mdp, &cfg).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(reports[0].c.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert!(reports.iter().all(|r| r.residuals.max() < 1e-10));
    }

    #[test]
    fn grid_is_sorted_and_matches_train() {
        let mdp = build_two_circle::<f64>(&TwoCircleSpec::default()).unwrap();
        let agent = quick();
        let rows = run_grid(&mdp, &agent, &[0.6, 0.0], &[1.0, 0.5], &[3, 1], Some(2)).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!((rows[0].gamma_hat, rows[0].lambda2, rows[0].seed), (0.0, 0.5, 1));
        let serial = run_grid(&mdp, &agent, &[0.6, 0.0], &[1.0, 0.5], &[3, 1], Some(1)).unwrap();
        assert_eq!(rows, serial);

        let single = run_grid(&mdp, &agent, &[0.6], &[0.5], &[3], None).unwrap();
        let run = train(
            &mdp,
            &AgentConfig {
                gamma_hat: 0.6,
                lambda2: 0.5,
                seed: 3,
                ..agent
            },
        )
        .unwrap();
        assert_eq!(single[0].final_pi_probe, run.final_row().pi_probe);
        assert_eq!(single[0].final_j_pi, run.final_row().j_pi);
    }

    #[test]
    fn duplicate_seeds_and_empty_axes_rejected() {
        let mdp = build_two_circle::<f64>(&TwoCircleSpec::default()).unwrap();
        let err = run_grid(&mdp, &quick(), &[0.0], &[1.0], &[1, 1], None).unwrap_err();
        assert!(err.to_string().contains("duplicate seed 1"), "{err}");
        assert!(run_grid(&mdp, &quick(), &[], &[1.0], &[1], None).is_err());
        assert!(train_seeds(&mdp, &quick(), &[2, 2], None).is_err());
    }

    #[test]
    fn training_csv_layout() {
        let mdp = build_two_circle::<f64>(&TwoCircleSpec::default()).unwrap();
        let runs = train_seeds(
            &mdp,
            &AgentConfig {
                total_steps: 0,
                ..quick()
            },
            &[5],
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_training_csv(&mut buf, &runs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "seed,step,pi_probe,J_pi,J_mu,J_gamma,F1,norm_F2,C_probe");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("5,0,0.5,"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn axis_variance_separates_axes() {
        let row = |g, l, p| GridRow {
            gamma_hat: g,
            lambda2: l,
            seed: 0,
            final_pi_probe: p,
            final_j_pi: 0.0,
        };
        let rows = vec![
            row(0.0, 0.0, 0.0),
            row(0.0, 1.0, 0.0),
            row(0.9, 0.0, 1.0),
            row(0.9, 1.0, 1.0),
        ];
        let v = grid_axis_variance(&rows);
        assert_eq!(v.gamma_hat, 0.25);
        assert_eq!(v.lambda2, 0.0);
    }
}
