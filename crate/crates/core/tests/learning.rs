use ctrlsense::agent::{critic_input, evaluate, train, training_data, EpisodeTrace, Policy, SelectionMode, Setup};
use ctrlsense::experiment::mean_and_stderr;
use ctrlsense::nn::{Direction, Mlp, Optimizer};
use ctrlsense::rng::{stream, Domain};
use ctrlsense::{Algorithm, Execution, ExperimentConfig};
use rand::Rng;

fn discounted_return(trace: &EpisodeTrace, gamma: f64) -> f64 {
    trace.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
}

fn setup(rho: f64, train_episodes: usize) -> (ExperimentConfig, Setup) {
    let cfg = ExperimentConfig {
        correlation: rho,
        train_episodes,
        ..ExperimentConfig::default()
    };
    let data = training_data(&cfg).unwrap();
    let setup = Setup::from_data(&cfg, Algorithm::Proposed.update_rule(), &data).unwrap();
    (cfg, setup)
}

struct Transition {
    previous: Vec<f64>,
    current: Vec<f64>,
    reward: f64,
    terminal: bool,
}

fn mean_td_squared(critic: &Mlp, batch: &[Transition], targets: &[f64]) -> f64 {
    batch
        .iter()
        .zip(targets)
        .map(|(t, y)| (y - critic.forward_critic(&t.previous).unwrap()).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn critic_objective_decreases_on_frozen_batch() {
    let (cfg, setup) = setup(0.6, 0);
    let gamma = cfg.agent.discount;
    let mut batch = Vec::new();
    for e in 0..20u64 {
        let mut rng = stream(3, Domain::Misc, e);
        let episode = setup.sample_episode(&mut rng);
        let mut state = setup.initial_state().unwrap();
        let mut theta_prev = critic_input(state.features(), state.features(), 0.0);
        for k in 1..=cfg.agent.max_episode_length {
            let obs = episode.observe(rng.random_range(0..setup.n()), k, &mut rng).unwrap();
            let next = setup.model.update(&state, &obs).unwrap();
            let reward = setup.model.reward(&state, &next).unwrap();
            let stop = setup.model.should_stop(&next, cfg.agent.confidence_threshold);
            let theta = critic_input(next.features(), state.features(), reward);
            batch.push(Transition {
                previous: theta_prev,
                current: theta.clone(),
                reward,
                terminal: stop,
            });
            theta_prev = theta;
            state = next;
            if stop {
                break;
            }
        }
    }

    let mut rng = stream(3, Domain::Init, 0);
    let critic = Mlp::critic(2 * setup.n() + 1, cfg.agent.hidden_width, &mut rng);
    // TD targets are computed once and held fixed, as the semi-gradient assumes.
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            t.reward
                + if t.terminal {
                    0.0
                } else {
                    gamma * critic.forward_critic(&t.current).unwrap()
                }
        })
        .collect();
    let descend = |mut critic: Mlp, mut opt: Optimizer| {
        let mut losses = vec![mean_td_squared(&critic, &batch, &targets)];
        for _ in 0..100 {
            let mut grad = vec![0.0; critic.params().len()];
            for (t, y) in batch.iter().zip(&targets) {
                let d = y - critic.forward_critic(&t.previous).unwrap();
                for (g, gv) in grad.iter_mut().zip(critic.grad_value(&t.previous).unwrap()) {
                    *g += -2.0 * d * gv / batch.len() as f64;
                }
            }
            opt.step(critic.params_mut(), &grad, Direction::Descend).unwrap();
            losses.push(mean_td_squared(&critic, &batch, &targets));
        }
        losses
    };

    let plain = descend(critic.clone(), Optimizer::Sgd { learning_rate: 0.05 });
    assert!(plain.windows(2).all(|w| w[1] < w[0]), "{plain:?}");

    // Adam reaches the noise floor within a few steps and then oscillates
    // around it, so only the level is checked.
    let adam = descend(
        critic.clone(),
        Optimizer::adam(cfg.agent.critic_lr, critic.params().len()),
    );
    let tail = adam[51..].iter().sum::<f64>() / 50.0;
    assert!(adam[100] < adam[0] && tail < adam[0], "{adam:?}");
}

#[test]
fn training_raises_discounted_return_over_uniform_policy() {
    let (cfg, setup) = setup(1.0, 1000);
    let trained = train(&setup, cfg.train_episodes, 5).unwrap().learner;
    let gamma = cfg.agent.discount;
    let score = |policy| {
        let traces = evaluate(policy, &setup, 2000, 6, Execution::Parallel).unwrap();
        let returns: Vec<f64> = traces.iter().map(|t| discounted_return(t, gamma)).collect();
        mean_and_stderr(&returns)
    };
    let (learned, se_l) = score(Policy::Actor(&trained.actor, SelectionMode::Sample));
    let (uniform, se_u) = score(Policy::Uniform);
    assert!(
        learned - uniform > 2.0 * (se_l * se_l + se_u * se_u).sqrt(),
        "learned {learned:.4}±{se_l:.4}, uniform {uniform:.4}±{se_u:.4}"
    );
}

#[test]
#[ignore = "unmet at the default hyperparameters: the learned policy trades stopping time for early entropy reduction"]
fn learning_does_not_lengthen_episodes_at_zero_correlation() {
    let (cfg, setup) = setup(0.0, 5000);
    let outcome = train(&setup, cfg.train_episodes, 9).unwrap();
    let tail = &outcome.curve[outcome.curve.len() - 500..];
    let trained = tail.iter().map(|p| p.stopping_time as f64).sum::<f64>() / 500.0;
    let traces = evaluate(Policy::Uniform, &setup, 500, 9, Execution::Parallel).unwrap();
    let uniform = traces.iter().map(|t| t.stopping_time as f64).sum::<f64>() / 500.0;
    assert!(trained <= uniform, "trained {trained:.2}, uniform {uniform:.2}");
}
