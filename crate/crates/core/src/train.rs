//! Interaction loop, evaluation, and metrics.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AgentConfig, StepStats};
use crate::checkpoint::Checkpoint;
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::policy::{ActionGrid, SampledAction};
use crate::replay::{ReplayBuffer, Transition};
use crate::sdac::SdacAgent;
use crate::sdcq::SdcqAgent;
use crate::temperature::TemperatureState;

/// Either learning algorithm behind one type.
#[derive(Debug, Clone)]
pub enum AnyAgent {
    Sdac(SdacAgent),
    Sdcq(SdcqAgent),
}

impl AnyAgent {
    fn inner(&self) -> &dyn Agent {
        match self {
            AnyAgent::Sdac(a) => a,
            AnyAgent::Sdcq(a) => a,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Agent {
        match self {
            AnyAgent::Sdac(a) => a,
            AnyAgent::Sdcq(a) => a,
        }
    }
}

impl Agent for AnyAgent {
    fn grid(&self) -> &ActionGrid {
        self.inner().grid()
    }

    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn temperature(&self) -> &TemperatureState {
        self.inner().temperature()
    }

    fn config(&self) -> &AgentConfig {
        self.inner().config()
    }

    fn act(&self, state: &[f64], explore: bool, rng: &mut dyn RngCore) -> Result<SampledAction> {
        self.inner().act(state, explore, rng)
    }

    fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<StepStats> {
        self.inner_mut().train_step(buffer, rng)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        self.inner().to_checkpoint()
    }
}

/// Loop lengths and cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSettings {
    pub total_steps: u64,
    /// Leading steps taken uniformly at random, without updates.
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
}

/// One evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_mean_return: f64,
    pub eval_return_std: f64,
    pub alpha: f64,
    /// Mean summed normalized entropy over the updates since the last row.
    pub entropy: f64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub wall_clock_seconds: f64,
}

impl MetricsRow {
    /// Column names of the deterministic CSV columns.
    pub const CSV_HEADER: &'static str =
        "step,eval_mean_return,eval_return_std,alpha,entropy,critic_loss,policy_loss";

    /// Deterministic columns; wall-clock time is excluded.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.eval_mean_return,
            self.eval_return_std,
            self.alpha,
            self.entropy,
            self.critic_loss,
            self.policy_loss
        )
    }
}

/// Whether training should go on after a metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Seed of the `k`-th evaluation episode of a run.
pub fn eval_seed(run_seed: u64, k: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x5EED_0000 + k as u64)
}

/// Greedy returns of `episodes` episodes with the given reset seeds.
pub fn evaluate(agent: &dyn Agent, env: &mut dyn Environment, seeds: &[u64]) -> Result<Vec<f64>> {
    // Greedy action selection never draws from this.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    seeds
        .iter()
        .map(|&seed| {
            let mut state = env.reset(seed);
            let mut total = 0.0;
            loop {
                let a = agent.act(&state, false, &mut unused)?;
                let r = env.step(&a.action)?;
                total += r.reward;
                if r.done() {
                    return Ok(total);
                }
                state = r.next_state;
            }
        })
        .collect()
}

pub(crate) fn mean_and_std(values: &[f64]) -> (f64, f64) {
    crate::agent::mean_std(values)
}

fn uniform_action(grid: &ActionGrid, rng: &mut dyn RngCore) -> SampledAction {
    let indices: Vec<usize> = (0..grid.dims()).map(|_| rng.gen_range(0..grid.bins())).collect();
    SampledAction {
        action: grid.action_from_indices(&indices),
        p_joint: (grid.bins() as f64).powi(-(grid.dims() as i32)),
        indices,
    }
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    entropy: f64,
    critic: f64,
    policy: f64,
}

impl Accumulator {
    fn add(&mut self, s: &StepStats) {
        self.n += 1;
        self.entropy += s.entropy;
        self.critic += s.critic_loss;
        self.policy += s.policy_loss;
    }

    fn means(&self) -> (f64, f64, f64) {
        if self.n == 0 {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let n = self.n as f64;
        (self.entropy / n, self.critic / n, self.policy / n)
    }
}

/// Runs the interaction loop.
///
/// After warmup the agent explores and takes one update per environment step
/// once the buffer can fill a batch. Every `eval_every` steps the greedy
/// policy is evaluated on `eval_env` and `on_row` is called; returning
/// [`Control::Stop`] ends the run early. Everything is a function of
/// `settings.seed` and the agent's initial parameters.
pub fn train(
    agent: &mut dyn Agent,
    env: &mut dyn Environment,
    eval_env: &mut dyn Environment,
    settings: &TrainSettings,
    on_row: &mut dyn FnMut(&MetricsRow, &dyn Agent) -> Result<Control>,
) -> Result<Vec<MetricsRow>> {
    if settings.eval_every == 0 {
        return Err(Error::config("eval_every", "must be at least 1"));
    }
    check_spec(agent, &env.spec())?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xA5A5_5A5A_C3C3_3C3C);
    let mut buffer = ReplayBuffer::new(settings.buffer_capacity)?;
    let eval_seeds: Vec<u64> = (0..settings.eval_episodes)
        .map(|k| eval_seed(settings.seed, k))
        .collect();
    let mut rows = Vec::new();
    let mut acc = Accumulator::default();
    let mut state: Option<Vec<f64>> = None;
    let (mut episode, mut episode_step) = (0u64, 0u64);

    for step in 1..=settings.total_steps {
        let s = match state.take() {
            Some(s) => s,
            None => {
                let seed = rng.gen::<u64>();
                episode_step = 0;
                env.reset(seed)
            }
        };
        let chosen = if step <= settings.warmup_steps {
            uniform_action(agent.grid(), &mut rng)
        } else {
            agent.act(&s, true, &mut rng)?
        };
        let result = env.step(&chosen.action)?;
        let done = result.done();
        buffer.push(Transition {
            state: s,
            action: chosen.action,
            indices: chosen.indices,
            p_old: chosen.p_joint,
            reward: result.reward,
            next_state: result.next_state.clone(),
            terminal: result.terminal,
            truncated: result.truncated,
            episode_id: episode,
            step_id: episode_step,
        });
        episode_step += 1;
        if done {
            episode += 1;
        } else {
            state = Some(result.next_state);
        }

        if step > settings.warmup_steps && agent.ready(&buffer) {
            acc.add(&agent.train_step(&buffer, &mut rng)?);
        }

        if step % settings.eval_every == 0 {
            let returns = evaluate(agent, eval_env, &eval_seeds)?;
            let (mean, std) = mean_and_std(&returns);
            let (entropy, critic_loss, policy_loss) = acc.means();
            acc = Accumulator::default();
            let row = MetricsRow {
                step,
                eval_mean_return: mean,
                eval_return_std: std,
                alpha: agent.temperature().alpha(),
                entropy,
                critic_loss,
                policy_loss,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
            };
            let control = on_row(&row, agent)?;
            rows.push(row);
            if control == Control::Stop {
                break;
            }
        }
    }
    Ok(rows)
}

fn check_spec(agent: &dyn Agent, spec: &EnvSpec) -> Result<()> {
    if agent.state_dim() != spec.state_dim || agent.grid().dims() != spec.action_dim {
        return Err(Error::Shape(format!(
            "agent expects {} state and {} action components, environment has {} and {}",
            agent.state_dim(),
            agent.grid().dims(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    Ok(())
}
