use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdpc::run::{run_ablation, run_eval, run_oracle_checks, run_train, AblationAxis, RUNS_DIR_ENV};
use sdpc::{Algorithm, Error, ImportanceDirection, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "sdpc", version, about = "Train and check soft decomposed policy-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, env = RUNS_DIR_ENV, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify the tabular and single-state identities on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one run per value of a hyperparameter.
    Ablate {
        /// N, target_entropy, multistep, importance or target_alpha.
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, env = RUNS_DIR_ENV, default_value = "runs")]
        runs_dir: PathBuf,
    },
}

/// Every flag overrides the matching field of `--config` (or the default).
#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON file with a (partial) run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    /// centered or endpoints.
    #[arg(long, value_parser = parse_serde::<sdpc::policy::GridPlacement>)]
    grid_placement: Option<sdpc::policy::GridPlacement>,
    #[arg(long, allow_hyphen_values = true)]
    target_entropy: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    alpha_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    multistep: Option<bool>,
    #[arg(long)]
    importance: Option<bool>,
    /// stored_over_current or current_over_stored.
    #[arg(long, value_parser = parse_serde::<ImportanceDirection>)]
    importance_direction: Option<ImportanceDirection>,
    #[arg(long)]
    importance_scale: Option<f64>,
    #[arg(long)]
    importance_clip: Option<f64>,
    #[arg(long)]
    target_alpha: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    log_alpha_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    log_alpha_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    initial_log_alpha: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

impl ConfigArgs {
    fn resolve(self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            algorithm, env, seed, bins, grid_placement, gamma, tau, policy_lr, critic_lr,
            alpha_lr, batch_size, buffer_capacity, hidden, total_steps, warmup_steps, eval_every,
            eval_episodes, importance_direction, importance_scale, importance_clip,
            log_alpha_min, log_alpha_max, initial_log_alpha, checkpoint_every
        );
        if let Some(v) = self.target_entropy {
            c.target_entropy = Some(v);
        }
        if let Some(v) = self.multistep {
            c.multistep = Some(v);
        }
        if let Some(v) = self.importance {
            c.importance = Some(v);
        }
        if let Some(v) = self.target_alpha {
            c.target_alpha = Some(v);
        }
        c.validate()?;
        Ok(c)
    }
}

fn train(config: ConfigArgs, runs_dir: &Path) -> Result<(), Error> {
    let config = config.resolve()?;
    let outcome = run_train(&config, runs_dir)?;
    for row in &outcome.rows {
        println!(
            "step {:>8}  return {:>10.2} ± {:<8.2}  alpha {:.4}  entropy {:.3}",
            row.step, row.eval_mean_return, row.eval_return_std, row.alpha, row.entropy
        );
    }
    println!("{}", outcome.dir.display());
    Ok(())
}

fn eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<(), Error> {
    let report = run_eval(checkpoint, episodes, seed)?;
    println!("episode,return");
    for (k, r) in report.returns.iter().enumerate() {
        println!("{k},{r}");
    }
    println!("mean,{}", report.mean);
    Ok(())
}

fn oracle_check(trials: usize, seed: u64) -> Result<bool, Error> {
    let report = run_oracle_checks(trials, seed)?;
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} #{}: {}", c.suite, c.trial, c.detail);
    }
    println!(
        "{} checks, {} failed",
        report.checks.len(),
        report.failures()
    );
    Ok(report.passed())
}

fn ablate(axis: &str, config: ConfigArgs, runs_dir: &Path) -> Result<(), Error> {
    let axis: AblationAxis = axis.parse()?;
    let config = config.resolve()?;
    for cell in run_ablation(&config, axis, runs_dir)? {
        let last = cell.outcome.rows.last().map_or(f64::NAN, |r| r.eval_mean_return);
        println!("{:<32} final return {:>10.2}  {}", cell.label, last, cell.outcome.dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, runs_dir } => train(config, &runs_dir).map(|()| true),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => eval(&checkpoint, episodes, seed).map(|()| true),
        Command::OracleCheck { trials, seed } => oracle_check(trials, seed),
        Command::Ablate {
            axis,
            config,
            runs_dir,
        } => ablate(&axis, config, &runs_dir).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
