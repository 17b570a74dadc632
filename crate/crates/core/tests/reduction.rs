//! With one-step windows and unit weights, the decomposed-Q learner's
//! critic update is the actor-critic one when both describe the same policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdpc::envs::make;
use sdpc::nn::{Matrix, Mlp};
use sdpc::replay::{ReplayBuffer, Transition};
use sdpc::sdac::SdacAgent;
use sdpc::sdcq::SdcqAgent;
use sdpc::{Agent, AgentConfig};

const ALPHA: f64 = 0.3;

fn config() -> AgentConfig {
    AgentConfig {
        hidden: vec![16, 16],
        batch_size: 32,
        bins: 9,
        initial_log_alpha: ALPHA.ln(),
        ..AgentConfig::small(0.0)
    }
}

/// Multiplies the output layer so the network's outputs scale by `factor`.
fn scale_output(net: &mut Mlp, factor: f64) {
    let widths = net.widths().to_vec();
    let last = (widths[widths.len() - 2] + 1) * widths[widths.len() - 1];
    let n = net.param_count();
    for p in &mut net.params_mut()[n - last..] {
        *p *= factor;
    }
}

fn agents() -> (SdacAgent, SdcqAgent) {
    let spec = make("pointmass-2").unwrap().spec();
    let sdac = SdacAgent::new(spec, config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut sdcq = SdcqAgent::new(spec, config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(sdac.actor().params(), sdcq.network().params());
    scale_output(sdcq.network_mut(), ALPHA);
    (sdac, sdcq)
}

fn filled_buffer(agent: &dyn Agent) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut env = make("pointmass-2").unwrap();
    let mut buffer = ReplayBuffer::new(500).unwrap();
    let mut state = env.reset(0);
    let (mut episode, mut step) = (0, 0);
    for _ in 0..200 {
        let chosen = agent.act(&state, true, &mut rng).unwrap();
        let r = env.step(&chosen.action).unwrap();
        buffer.push(Transition {
            state,
            action: chosen.action.clone(),
            indices: chosen.indices.clone(),
            p_old: chosen.p_joint,
            reward: r.reward,
            next_state: r.next_state.clone(),
            terminal: r.terminal,
            truncated: r.truncated,
            episode_id: episode,
            step_id: step,
        });
        step += 1;
        state = if r.done() {
            episode += 1;
            step = 0;
            env.reset(episode)
        } else {
            r.next_state
        };
    }
    buffer
}

#[test]
fn scaled_values_give_the_actor_policy() {
    let (sdac, sdcq) = agents();
    let states = Matrix::from_rows(&[[0.3, -0.2, 0.1, 0.5], [-0.9, 0.4, 0.0, -0.3]]).unwrap();
    let a = sdac.distributions(&states).unwrap();
    let b = sdcq.distributions(&states, ALPHA).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn one_step_critic_updates_coincide() {
    let (mut sdac, mut sdcq) = agents();
    assert!(!sdcq.config().multistep && !sdcq.config().importance && !sdcq.config().target_alpha);
    let buffer = filled_buffer(&sdac);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..20 {
        let windows = buffer.sample_windows(32, 1, &mut sample_rng).unwrap();
        assert!(sdcq.window_weights(&windows).unwrap().iter().all(|&w| w == 1.0));
        let la = sdac.critic_step(&windows, &mut ChaCha8Rng::seed_from_u64(round)).unwrap();
        let lb = sdcq.critic_step(&windows, &mut ChaCha8Rng::seed_from_u64(round)).unwrap();
        assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0), "round {round}: {la} vs {lb}");
    }
    for i in 0..2 {
        for (p, q) in sdac.critics().online(i).params().iter().zip(sdcq.critics().online(i).params()) {
            assert!((p - q).abs() < 1e-9, "critic {i}: {p} vs {q}");
        }
    }
}
