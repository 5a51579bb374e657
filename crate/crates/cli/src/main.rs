use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geoffpac::experiment::{
    analyze, grid_axis_variance, load_env, run_grid, train_seeds, write_grid_csv, write_training_csv, ExperimentConfig,
};
use geoffpac::verify::{run_all, Mutation, VerifyOptions};
use geoffpac::{Algorithm, CriticMode};

const SEED_ENV: &str = "GEOFFPAC_SEED";

#[derive(Parser)]
#[command(
    name = "geoffpac",
    version,
    about = "Counterfactual off-policy actor-critic on finite MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact analysis of a target policy, one JSON block per gamma_hat.
    Analyze(Overrides),
    /// Run the verification suites and print a JSON verdict.
    Verify(VerifyArgs),
    /// Train one agent per seed and write its metrics as CSV.
    Train(Overrides),
    /// Sweep gamma_hat x lambda2 x seeds and write final metrics as CSV.
    Grid(Overrides),
    /// Environment utilities.
    #[command(subcommand)]
    Env(EnvCommand),
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Write an environment as an MDP JSON document.
    Dump(Overrides),
}

#[derive(Clone, Copy, ValueEnum)]
enum Critic {
    Learned,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    FlipTerm2,
}

#[derive(Args)]
struct VerifyArgs {
    /// Skip the statistical suites.
    #[arg(long)]
    quick: bool,
    /// Inject a known defect; the gradient check must then fail.
    #[arg(long, value_enum)]
    mutate: Option<MutationArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags mirroring `ExperimentConfig` keys; each overrides the file value.
#[derive(Args, Default)]
struct Overrides {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// two_circle, random:<states>:<actions>:<seed>[:<discount>], or an MDP JSON path.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algorithm>,
    /// A single value, or a comma-separated list for `analyze`.
    #[arg(long, value_delimiter = ',')]
    gamma_hat: Vec<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    alpha_actor: Option<f64>,
    #[arg(long)]
    alpha_critic: Option<f64>,
    #[arg(long)]
    alpha_density: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    metric_every: Option<u64>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Probe state and action, `s:a`.
    #[arg(long, value_parser = parse_probe)]
    probe: Option<(usize, usize)>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    grid_gamma_hat: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_lambda2: Vec<f64>,
    #[arg(long, value_enum)]
    critic: Option<Critic>,
    /// Disable ratio and density-ratio clipping.
    #[arg(long)]
    no_clip: bool,
    /// Do not subtract a value baseline in the actor update.
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: geoffpac::Error| e.to_string())
}

fn parse_probe(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected s:a, got {s:?}"))?;
    let parse = |x: &str| x.parse::<usize>().map_err(|_| format!("expected s:a, got {s:?}"));
    Ok((parse(a)?, parse(b)?))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

impl Overrides {
    /// Defaults, then the config file, then `GEOFFPAC_SEED` if no file set
    /// seeds, then flags.
    fn resolve(&self, gamma_list: bool) -> Result<ExperimentConfig> {
        let (mut cfg, file_has_seeds) = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
                let text = std::fs::read_to_string(path)?;
                let raw: serde_json::Value = serde_json::from_str(&text)?;
                let mut cfg = cfg;
                if raw.get("seeds").is_none() && raw.pointer("/agent/seed").is_some() {
                    cfg.seeds = vec![cfg.agent.seed];
                }
                let has = raw.get("seeds").is_some() || raw.pointer("/agent/seed").is_some();
                (cfg, has)
            }
            None => (ExperimentConfig::default(), false),
        };
        if !file_has_seeds {
            if let Some(s) = env_seed()? {
                cfg.seeds = vec![s];
            }
        }
        let a = &mut cfg.agent;
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        if let Some(x) = self.algo {
            a.algorithm = x;
        }
        match (gamma_list, self.gamma_hat.as_slice()) {
            (_, []) => {}
            (true, list) => cfg.gamma_hats = list.to_vec(),
            (false, [g]) => a.gamma_hat = *g,
            (false, _) => bail!("--gamma-hat takes a single value here"),
        }
        if let Some(x) = self.lambda1 {
            a.lambda1 = x;
        }
        if let Some(x) = self.lambda2 {
            a.lambda2 = x;
        }
        if let Some(x) = self.alpha_actor {
            a.alpha_actor = x;
        }
        if let Some(x) = self.alpha_critic {
            a.alpha_critic = x;
        }
        if let Some(x) = self.alpha_density {
            a.alpha_density = x;
        }
        if let Some(x) = self.steps {
            a.total_steps = x;
        }
        if let Some(x) = self.warmup {
            a.warmup_steps = x;
        }
        if let Some(x) = self.metric_every {
            a.metric_every = x;
        }
        if let Some(x) = self.probe {
            a.probe = x;
        }
        if let Some(c) = self.critic {
            a.critic_mode = match c {
                Critic::Learned => CriticMode::LearnedTd,
                Critic::Oracle => CriticMode::OracleQ,
            };
        }
        if self.no_clip {
            a.rho_clip = None;
            a.c_clip = None;
        }
        if self.no_baseline {
            a.baseline = false;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if !self.grid_gamma_hat.is_empty() {
            cfg.grid_gamma_hat = self.grid_gamma_hat.clone();
        }
        if !self.grid_lambda2.is_empty() {
            cfg.grid_lambda2 = self.grid_lambda2.clone();
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(cfg)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `Ok(false)` means a verification failure.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Analyze(o) => {
            let cfg = o.resolve(true)?;
            let mdp = load_env(&cfg).with_context(|| format!("loading environment {}", cfg.env))?;
            write_json(cfg.out.as_deref(), &analyze(&mdp, &cfg)?)?;
        }
        Command::Verify(v) => {
            let seed = match v.seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(0),
            };
            let report = run_all(&VerifyOptions {
                quick: v.quick,
                mutation: match v.mutate {
                    Some(MutationArg::FlipTerm2) => Mutation::FlipTerm2,
                    None => Mutation::None,
                },
                seed,
            })?;
            for c in &report.checks {
                eprintln!("{}", c.line());
            }
            write_json(v.out.as_deref(), &report)?;
            return Ok(report.passed);
        }
        Command::Train(o) => {
            let cfg = o.resolve(false)?;
            let mdp = load_env(&cfg).with_context(|| format!("loading environment {}", cfg.env))?;
            let runs = train_seeds(&mdp, &cfg.agent, &cfg.seeds, cfg.jobs)?;
            let mut w = output(cfg.out.as_deref())?;
            write_training_csv(&mut w, &runs)?;
            w.flush()?;
            for r in &runs {
                eprintln!(
                    "seed {}: final pi_probe {:.4}, J_pi {:.4}",
                    r.config.seed,
                    r.final_row().pi_probe,
                    r.final_row().j_pi
                );
            }
        }
        Command::Grid(o) => {
            let cfg = o.resolve(false)?;
            let mdp = load_env(&cfg).with_context(|| format!("loading environment {}", cfg.env))?;
            let rows = run_grid(
                &mdp,
                &cfg.agent,
                &cfg.grid_gamma_hat,
                &cfg.grid_lambda2,
                &cfg.seeds,
                cfg.jobs,
            )?;
            let mut w = output(cfg.out.as_deref())?;
            write_grid_csv(&mut w, &rows)?;
            w.flush()?;
            let v = grid_axis_variance(&rows);
            eprintln!(
                "variance of final pi_probe: gamma_hat axis {:.4}, lambda2 axis {:.4}",
                v.gamma_hat, v.lambda2
            );
        }
        Command::Env(EnvCommand::Dump(o)) => {
            let cfg = o.resolve(false)?;
            let mdp = load_env(&cfg).with_context(|| format!("loading environment {}", cfg.env))?;
            write_json(cfg.out.as_deref(), &mdp.to_document())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
