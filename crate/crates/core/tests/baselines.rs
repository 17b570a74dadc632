//! Reference returns of fixed policies, the floor a learner must clear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdpc::envs::{make, Environment};

fn episode_return(env: &mut dyn Environment, seed: u64, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
    let mut state = env.reset(seed);
    let mut total = 0.0;
    loop {
        let r = env.step(&policy(&state)).unwrap();
        total += r.reward;
        if r.done() {
            return total;
        }
        state = r.next_state;
    }
}

fn mean_return(id: &str, episodes: u64, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
    let mut env = make(id).unwrap();
    (0..episodes)
        .map(|seed| episode_return(env.as_mut(), seed, &mut policy))
        .sum::<f64>()
        / episodes as f64
}

#[test]
fn pendulum_baselines() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random = mean_return("pendulum", 50, |_| vec![rng.gen_range(-1.0..1.0)]);
    let idle = mean_return("pendulum", 50, |_| vec![0.0]);
    // Uniform torque on the swing-up task lands near -1200 per episode.
    for value in [random, idle] {
        assert!((-1400.0..=-1000.0).contains(&value), "{random} {idle}");
    }
}

#[test]
fn pointmass_baselines() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random = mean_return("pointmass-2", 50, |_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    let idle = mean_return("pointmass-2", 50, |_| vec![0.0, 0.0]);
    let steer = mean_return("pointmass-2", 50, |s| {
        (0..2).map(|m| (-2.0 * s[m] - 2.0 * s[2 + m]).clamp(-1.0, 1.0)).collect()
    });
    assert!(steer > idle && idle > random, "steer {steer} idle {idle} random {random}");
}
