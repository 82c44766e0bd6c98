#![allow(dead_code)]

use ctrlsense::nn::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a - n| / (|a| + |n|)` over the whole parameter vector; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every parameter of `net`.
pub fn numeric_gradient(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    let mut out = vec![0.0; net.params().len()];
    for (i, g) in out.iter_mut().enumerate() {
        let base = probe.params()[i];
        probe.params_mut()[i] = base + FD_STEP;
        let up = f(&probe);
        probe.params_mut()[i] = base - FD_STEP;
        let down = f(&probe);
        probe.params_mut()[i] = base;
        *g = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// Jitters every parameter so no pre-activation sits exactly on a ReLU
/// kink, which freshly initialised zero biases can produce.
pub fn jitter(mut net: Mlp, rng: &mut ChaCha8Rng) -> Mlp {
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    net
}

/// A random belief-like input in (0, 1).
pub fn random_input(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    (0..width).map(|_| rng.random_range(0.01..0.99)).collect()
}

/// Worst relative error of `grad_log_prob` over `instances` random actors.
pub fn actor_gradient_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=8);
        let hidden = rng.random_range(4..=24);
        let actor = Mlp::actor(n, hidden, n, &mut rng);
        let actor = jitter(actor, &mut rng);
        let x = random_input(&mut rng, n);
        let a = rng.random_range(0..n);
        let analytic = actor.grad_log_prob(&x, a).unwrap();
        let numeric = numeric_gradient(&actor, |m| m.forward_actor(&x).unwrap()[a].ln());
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of `grad_value` over `instances` random critics.
pub fn critic_gradient_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let width = 2 * rng.random_range(2..=8) + 1;
        let hidden = rng.random_range(4..=24);
        let critic = Mlp::critic(width, hidden, &mut rng);
        let critic = jitter(critic, &mut rng);
        let x = random_input(&mut rng, width);
        let analytic = critic.grad_value(&x).unwrap();
        let numeric = numeric_gradient(&critic, |m| m.forward_critic(&x).unwrap());
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
