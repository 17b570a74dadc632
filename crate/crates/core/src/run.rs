//! Run directories, checkpoints on disk, evaluation, oracle suites, and ablations.
//!
//! A training run lives in `<root>/<timestamp>-<algo>-<env>-<seed>/` and holds
//!
//! * `config.json`: the resolved [`RunConfig`],
//! * `metrics.csv`: one [`MetricsRow`] per evaluation, deterministic given the seed,
//! * `timing.csv`: wall-clock seconds per evaluation,
//! * `checkpoint-<step>.ckpt` every `checkpoint_every` steps and `final.ckpt`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, ImportanceDirection};
use crate::checkpoint::Checkpoint;
use crate::config::{Algorithm, RunConfig};
use crate::envs::{make, EnvSpec};
use crate::error::{Error, Result};
use crate::oracle::{check_bridge, check_kl_equivalence, check_variance_limit, TabularMdp, TabularPolicy};
use crate::sdac::SdacAgent;
use crate::sdcq::SdcqAgent;
use crate::train::{eval_seed, evaluate, mean_and_std, train, AnyAgent, Control, MetricsRow};

/// Environment variable overriding the run-directory root.
pub const RUNS_DIR_ENV: &str = "SDPC_RUNS_DIR";

/// `$SDPC_RUNS_DIR`, or `runs` when unset.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Fresh agent for `config`, initialized from its seed.
pub fn build_agent(config: &RunConfig, spec: EnvSpec) -> Result<AnyAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let agent_config = config.agent_config();
    Ok(match config.algorithm {
        Algorithm::Sdac => AnyAgent::Sdac(SdacAgent::new(spec, agent_config, &mut rng)?),
        Algorithm::Sdcq => AnyAgent::Sdcq(SdcqAgent::new(spec, agent_config, &mut rng)?),
    })
}

/// Checkpoint of `agent` carrying the run configuration in its metadata.
pub fn checkpoint_with_config(agent: &dyn Agent, config: &RunConfig, step: u64) -> Result<Checkpoint> {
    let mut ck = agent.to_checkpoint();
    if let Some(meta) = ck.metadata.as_object_mut() {
        meta.insert("config".into(), serde_json::to_value(config.resolved())?);
        meta.insert("step".into(), step.into());
    }
    Ok(ck)
}

/// Rebuilds the agent and its configuration from a checkpoint written by a run.
pub fn load_agent(ck: &Checkpoint) -> Result<(AnyAgent, RunConfig)> {
    let config: RunConfig = match ck.metadata.get("config") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::Format(format!("checkpoint configuration: {e}")))?,
        None => return Err(Error::Format("checkpoint carries no run configuration".into())),
    };
    let spec = make(&config.env)?.spec();
    let agent_config = config.agent_config();
    let agent = match config.algorithm {
        Algorithm::Sdac => AnyAgent::Sdac(SdacAgent::from_checkpoint(ck, spec, agent_config)?),
        Algorithm::Sdcq => AnyAgent::Sdcq(SdcqAgent::from_checkpoint(ck, spec, agent_config)?),
    };
    Ok((agent, config))
}

/// Where a run wrote its files and what it measured.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
}

fn fresh_dir(root: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    for k in 0u32.. {
        let name = if k == 0 { stem.to_owned() } else { format!("{stem}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("u32 range exhausted")
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Validates `config`, creates a new run directory under `root`, and trains.
pub fn run_train(config: &RunConfig, root: &Path) -> Result<RunOutcome> {
    config.validate()?;
    make(&config.env)?;
    let stem = format!(
        "{}-{}-{}-{}",
        timestamp(),
        config.algorithm.name(),
        sanitize(&config.env),
        config.seed
    );
    let dir = fresh_dir(root, &stem)?;
    train_into(config, &dir, &mut |_, _| Ok(Control::Continue))
}

/// Trains `config` writing every output file into the existing directory `dir`.
///
/// `on_row` sees each metrics row after it is written and may stop the run.
pub fn train_into(
    config: &RunConfig,
    dir: &Path,
    on_row: &mut dyn FnMut(&MetricsRow, &dyn Agent) -> Result<Control>,
) -> Result<RunOutcome> {
    config.validate()?;
    let resolved = config.resolved();
    let mut env = make(&resolved.env)?;
    let mut eval_env = make(&resolved.env)?;
    let mut agent = build_agent(&resolved, env.spec())?;

    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&resolved)? + "\n")?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(metrics, "{}", MetricsRow::CSV_HEADER)?;
    metrics.flush()?;
    let mut timing = BufWriter::new(File::create(dir.join("timing.csv"))?);
    writeln!(timing, "step,wall_clock_seconds")?;
    timing.flush()?;

    let mut last_saved = 0u64;
    let settings = resolved.train_settings();
    let rows = train(&mut agent, env.as_mut(), eval_env.as_mut(), &settings, &mut |row, agent| {
        writeln!(metrics, "{}", row.csv_line())?;
        metrics.flush()?;
        writeln!(timing, "{},{}", row.step, row.wall_clock_seconds)?;
        timing.flush()?;
        let every = resolved.checkpoint_every;
        if every > 0 && row.step / every > last_saved / every {
            checkpoint_with_config(agent, &resolved, row.step)?
                .save(&dir.join(format!("checkpoint-{}.ckpt", row.step)))?;
            last_saved = row.step;
        }
        on_row(row, agent)
    })?;
    let step = rows.last().map_or(0, |r| r.step);
    checkpoint_with_config(&agent, &resolved, step)?.save(&dir.join("final.ckpt"))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        rows,
    })
}

/// Greedy returns of a saved agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates the agent stored at `checkpoint` for `episodes` greedy episodes.
pub fn run_eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::config("episodes", "must be at least 1"));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let (agent, config) = load_agent(&ck)?;
    let mut env = make(&config.env)?;
    let seeds: Vec<u64> = (0..episodes).map(|k| eval_seed(seed, k)).collect();
    let returns = evaluate(&agent, env.as_mut(), &seeds)?;
    let (mean, std) = mean_and_std(&returns);
    Ok(EvalReport { returns, mean, std })
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub trial: usize,
    pub passed: bool,
    pub detail: String,
}

/// Results of [`run_oracle_checks`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Residual bound of the tabular identity checks.
pub const BRIDGE_TOLERANCE: f64 = 1e-9;
/// Bound on the gap between the KL and scaled actor gradients.
pub const KL_GRADIENT_TOLERANCE: f64 = 1e-10;
/// Accepted band of the KL to half-variance ratio at scale 1e-3.
pub const VARIANCE_RATIO_BAND: (f64, f64) = (0.98, 1.02);

/// Runs `trials` random instances of each oracle suite.
///
/// * `bridge`: random 4-state MDPs with two 3-valued dimensions and `γ = 0.9`,
///   exact soft evaluation of a random policy, `α ∈ {0, 0.1, 1}`.
/// * `kl_gradient`: random 6-entry rows, `α ∈ {0.1, 1, 10}`.
/// * `variance_limit`: random non-constant directions at scale 1e-3, plus a
///   constant direction that must be exempt.
pub fn run_oracle_checks(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for trial in 0..trials {
        let mdp = TabularMdp::random(4, 2, 3, 0.9, &mut rng)?;
        let policy = TabularPolicy::random(&mdp, 2.0, &mut rng);
        let mut worst = 0.0f64;
        for alpha in [0.0, 0.1, 1.0] {
            let r = check_bridge(&mdp, &policy, alpha)?;
            worst = worst.max(r.corrected);
            if alpha == 0.0 {
                worst = worst.max(r.uncorrected);
            }
        }
        report.checks.push(CheckResult {
            suite: "bridge",
            trial,
            passed: worst < BRIDGE_TOLERANCE,
            detail: format!("max residual {worst:.3e}"),
        });
    }
    for trial in 0..trials {
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut worst = 0.0f64;
        for alpha in [0.1, 1.0, 10.0] {
            worst = worst.max(check_kl_equivalence(&q, &logits, alpha)?);
        }
        report.checks.push(CheckResult {
            suite: "kl_gradient",
            trial,
            passed: worst < KL_GRADIENT_TOLERANCE,
            detail: format!("max gap {worst:.3e}"),
        });
    }
    for trial in 0..trials {
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let alpha = rng.gen_range(0.1..2.0);
        let mut direction: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        direction[0] += 1.0; // never constant
        let ratio = check_variance_limit(&q, &direction, alpha, &[1e-3])?[0];
        let shift = check_variance_limit(&q, &[0.7; 6], alpha, &[1e-3])?[0];
        let (lo, hi) = VARIANCE_RATIO_BAND;
        let passed = shift.is_none() && ratio.is_some_and(|r| (lo..=hi).contains(&r));
        report.checks.push(CheckResult {
            suite: "variance_limit",
            trial,
            passed,
            detail: format!("ratio {:.6}", ratio.unwrap_or(f64::NAN)),
        });
    }
    Ok(report)
}

/// Hyperparameter swept by [`run_ablation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Bins,
    TargetEntropy,
    Multistep,
    Importance,
    TargetAlpha,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Bins => "bins",
            AblationAxis::TargetEntropy => "target_entropy",
            AblationAxis::Multistep => "multistep",
            AblationAxis::Importance => "importance",
            AblationAxis::TargetAlpha => "target_alpha",
        }
    }

    /// Labelled configurations of the sweep, derived from `base`.
    pub fn cells(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |label: String, f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            (label, c)
        };
        match self {
            AblationAxis::Bins => [10, 20, 50]
                .into_iter()
                .map(|n| with(format!("bins_{n}"), &|c| c.bins = n))
                .collect(),
            AblationAxis::TargetEntropy => [-2.0, -1.0, 0.0, 1.0]
                .into_iter()
                .map(|h| with(format!("target_entropy_{h}"), &|c| c.target_entropy = Some(h)))
                .collect(),
            AblationAxis::Multistep => [true, false]
                .into_iter()
                .map(|on| with(format!("multistep_{}", on_off(on)), &|c| c.multistep = Some(on)))
                .collect(),
            AblationAxis::TargetAlpha => [true, false]
                .into_iter()
                .map(|on| with(format!("target_alpha_{}", on_off(on)), &|c| c.target_alpha = Some(on)))
                .collect(),
            AblationAxis::Importance => vec![
                with("importance_off".into(), &|c| c.importance = Some(false)),
                with("importance_stored_over_current".into(), &|c| {
                    c.importance = Some(true);
                    c.importance_direction = ImportanceDirection::StoredOverCurrent;
                }),
                with("importance_current_over_stored".into(), &|c| {
                    c.importance = Some(true);
                    c.importance_direction = ImportanceDirection::CurrentOverStored;
                }),
            ],
        }
    }
}

fn on_off(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "N" | "n" | "bins" => AblationAxis::Bins,
            "target_entropy" => AblationAxis::TargetEntropy,
            "multistep" => AblationAxis::Multistep,
            "importance" => AblationAxis::Importance,
            "target_alpha" => AblationAxis::TargetAlpha,
            other => {
                return Err(Error::config(
                    "axis",
                    format!("unknown axis `{other}`; expected N, target_entropy, multistep, importance or target_alpha"),
                ))
            }
        })
    }
}

/// One finished ablation run.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub label: String,
    pub outcome: RunOutcome,
}

/// Runs every cell of `axis` in `<root>/<timestamp>-ablate-<axis>-<algo>-<env>-<seed>/<label>/`.
pub fn run_ablation(base: &RunConfig, axis: AblationAxis, root: &Path) -> Result<Vec<AblationCell>> {
    let cells = axis.cells(base);
    for (_, cfg) in &cells {
        cfg.validate()?;
    }
    make(&base.env)?;
    let stem = format!(
        "{}-ablate-{}-{}-{}-{}",
        timestamp(),
        axis.name(),
        base.algorithm.name(),
        sanitize(&base.env),
        base.seed
    );
    let sweep = fresh_dir(root, &stem)?;
    cells
        .into_iter()
        .map(|(label, cfg)| {
            let dir = sweep.join(&label);
            fs::create_dir(&dir)?;
            let outcome = train_into(&cfg, &dir, &mut |_, _| Ok(Control::Continue))?;
            Ok(AblationCell { label, outcome })
        })
        .collect()
}
