//! Episode execution and online actor-critic learning.
//!
//! Every algorithm runs the same loop: pick a process, observe it, update
//! the tracker, collect the entropy-reduction reward, and stop once every
//! process is confidently classified (at least one observation is always
//! taken). Learning algorithms additionally take one critic step and one
//! actor step per observation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{extract_estimate, BeliefModel, BeliefState, JointBelief, UpdateRule};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{AgentConfig, BeliefVector, DependencyModel, ExperimentConfig, ProcessStateVector, StateEstimate};
use crate::nn::{Direction, Mlp, Optimizer};
use crate::rng::{self, Domain, StreamRng};
use crate::sim::{
    estimate_dependency_model, estimate_joint_prior, estimate_prior_beliefs, generate_training_data, Episode,
    TrainingDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Actor-critic over the pairwise marginal recursion.
    Proposed,
    /// Actor-critic over the exact joint posterior.
    Joint,
    /// Actor-critic over self-only marginal updates.
    Naive,
    /// Uniformly random selection with the pairwise marginal recursion.
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Proposed,
        Algorithm::Joint,
        Algorithm::Naive,
        Algorithm::Random,
    ];

    pub fn update_rule(self) -> UpdateRule {
        match self {
            Algorithm::Proposed | Algorithm::Random => UpdateRule::Marginal,
            Algorithm::Joint => UpdateRule::Joint,
            Algorithm::Naive => UpdateRule::Naive,
        }
    }

    pub fn is_learning(self) -> bool {
        self != Algorithm::Random
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Proposed => "proposed",
            Algorithm::Joint => "joint",
            Algorithm::Naive => "naive",
            Algorithm::Random => "random",
        }
    }

    pub(crate) fn id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown algorithm {s:?} (expected proposed, joint, naive or random)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    #[default]
    Sample,
    /// Argmax, lowest index on ties.
    Greedy,
}

pub fn select_from_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R, mode: SelectionMode) -> usize {
    match mode {
        SelectionMode::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        SelectionMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // Rounding left `acc` just below 1: take the last action with mass.
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
        }
    }
}

pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    features: &[f64],
    rng: &mut R,
    mode: SelectionMode,
) -> Result<usize> {
    let probs = actor.forward_actor(features)?;
    Ok(select_from_probs(&probs, rng, mode))
}

/// `r + gamma * V(next) - V(prev)`, with `V(next) = 0` on the terminal step.
pub fn td_error(reward: f64, v_current: f64, v_previous: f64, discount: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { v_current };
    reward + discount * bootstrap - v_previous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub time: usize,
    pub action: usize,
    pub observation: u8,
    pub belief_before: BeliefVector,
    pub belief_after: BeliefVector,
    pub reward: f64,
    pub td_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
    pub stopping_time: usize,
    pub truncated: bool,
    pub estimate: StateEstimate,
    pub ground_truth: ProcessStateVector,
    /// The estimate matches the ground truth in every entry.
    pub correct: bool,
    /// Tracker uncertainty (nats) before the first and after the last step.
    pub initial_uncertainty: f64,
    pub final_uncertainty: f64,
}

impl EpisodeTrace {
    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Counted as a success: correct and not cut off by the episode cap.
    pub fn success(&self) -> bool {
        self.correct && !self.truncated
    }
}

/// Everything an episode needs besides the policy: the tracker and its
/// initial state, plus the prior used to draw ground truth.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: BeliefModel,
    pub prior_beliefs: BeliefVector,
    pub joint_prior: Option<JointBelief>,
    pub prior: crate::model::CorrelatedPriorConfig,
    pub agent: AgentConfig,
}

impl Setup {
    /// Tracker estimated from labelled data.
    pub fn from_data(config: &ExperimentConfig, rule: UpdateRule, data: &TrainingDataset) -> Result<Self> {
        if data.n_processes() != config.n_processes {
            return Err(Error::ShapeMismatch {
                expected: config.n_processes,
                actual: data.n_processes(),
            });
        }
        let joint_prior = match rule {
            UpdateRule::Joint => Some(estimate_joint_prior(data)?),
            _ => None,
        };
        Self::assemble(
            config,
            rule,
            estimate_dependency_model(data)?,
            estimate_prior_beliefs(data),
            joint_prior,
        )
    }

    /// Tracker built from the exact prior instead of data.
    pub fn analytic(config: &ExperimentConfig, rule: UpdateRule) -> Result<Self> {
        let prior = config.prior();
        let joint_prior = match rule {
            UpdateRule::Joint => Some(JointBelief::from_prior(&prior)?),
            _ => None,
        };
        let beliefs = BeliefVector::uniform(config.n_processes, config.normal_probability);
        Self::assemble(config, rule, DependencyModel::analytic(&prior)?, beliefs, joint_prior)
    }

    pub fn assemble(
        config: &ExperimentConfig,
        rule: UpdateRule,
        dependency: DependencyModel,
        prior_beliefs: BeliefVector,
        joint_prior: Option<JointBelief>,
    ) -> Result<Self> {
        let mut model = BeliefModel::new(rule, dependency, config.channel()?);
        model.joint_reward = config.baselines.joint_reward;
        model.joint_stopping = config.baselines.joint_stopping;
        Ok(Self {
            model,
            prior_beliefs,
            joint_prior,
            prior: config.prior(),
            agent: config.agent.clone(),
        })
    }

    pub fn initial_state(&self) -> Result<BeliefState> {
        self.model.initial_state(&self.prior_beliefs, self.joint_prior.as_ref())
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        Episode::sample(&self.prior, self.model.channel, rng)
    }
}

/// Generates the labelled training set for a config from its seed.
pub fn training_data(config: &ExperimentConfig) -> Result<TrainingDataset> {
    let mut rng = rng::stream(config.seed, Domain::TrainingData, 0);
    generate_training_data(&config.prior(), config.training_samples, &mut rng)
}

/// Policy and value networks with their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_optimizer: Optimizer,
    pub critic_optimizer: Optimizer,
}

impl ActorCritic {
    /// Actor sees the tracker features; critic sees
    /// `(features(k), features(k-1), r(k))`.
    pub fn new<R: Rng + ?Sized>(feature_width: usize, n_actions: usize, agent: &AgentConfig, rng: &mut R) -> Self {
        let actor = Mlp::actor(feature_width, agent.hidden_width, n_actions, rng);
        let critic = Mlp::critic(2 * feature_width + 1, agent.hidden_width, rng);
        let actor_optimizer = Optimizer::adam(agent.actor_lr, actor.params().len());
        let critic_optimizer = Optimizer::adam(agent.critic_lr, critic.params().len());
        Self {
            actor,
            critic,
            actor_optimizer,
            critic_optimizer,
        }
    }

    pub fn for_setup(setup: &Setup, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Init, 0);
        Self::new(setup.model.feature_width(), setup.n(), &setup.agent, &mut rng)
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite()
    }
}

pub fn critic_input(current: &[f64], previous: &[f64], reward: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(current.len() + previous.len() + 1);
    v.extend_from_slice(current);
    v.extend_from_slice(previous);
    v.push(reward);
    v
}

/// How actions are chosen in an episode.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Actor(&'a Mlp, SelectionMode),
    Uniform,
}

enum Driver<'a> {
    Learn(&'a mut ActorCritic),
    Frozen(Policy<'a>),
}

fn non_finite(step: usize, what: &str) -> Error {
    Error::EpisodeAborted {
        step,
        reason: format!("non-finite {what}"),
    }
}

fn drive<R: Rng + ?Sized>(
    setup: &Setup,
    episode: &Episode,
    mut driver: Driver<'_>,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let n = setup.n();
    if episode.n() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: episode.n(),
        });
    }
    let cap = setup.agent.max_episode_length;
    let threshold = setup.agent.confidence_threshold;
    let gamma = setup.agent.discount;

    let mut state = setup.initial_state()?;
    let initial_uncertainty = setup.model.uncertainty(&state);
    let mut steps = Vec::new();
    let mut stopped = false;

    // Critic bookkeeping: theta(k-1) and V(theta(k-1)).
    let (mut theta_prev, mut v_prev) = match &driver {
        Driver::Learn(ac) => {
            let f = state.features();
            let theta = critic_input(f, f, 0.0);
            let v = ac.critic.forward_critic(&theta)?;
            (theta, v)
        }
        Driver::Frozen(_) => (Vec::new(), 0.0),
    };

    for k in 1..=cap {
        let action = match &driver {
            Driver::Learn(ac) => select_action(&ac.actor, state.features(), rng, SelectionMode::Sample)?,
            Driver::Frozen(Policy::Actor(actor, mode)) => select_action(actor, state.features(), rng, *mode)?,
            Driver::Frozen(Policy::Uniform) => rng.random_range(0..n),
        };
        let obs = episode.observe(action, k, rng)?;
        let next = setup.model.update(&state, &obs)?;
        let reward = setup.model.reward(&state, &next)?;
        stopped = setup.model.should_stop(&next, threshold);
        let terminal = stopped || k == cap;

        let td = match &mut driver {
            Driver::Learn(ac) => {
                let theta = critic_input(next.features(), state.features(), reward);
                let v_current = ac.critic.forward_critic(&theta)?;
                if !v_current.is_finite() {
                    return Err(non_finite(k, "value estimate"));
                }
                let delta = td_error(reward, v_current, v_prev, gamma, terminal);

                let mut actor_grad = ac.actor.grad_log_prob(state.features(), action)?;
                actor_grad.iter_mut().for_each(|g| *g *= delta);
                if setup.agent.entropy_bonus > 0.0 {
                    let h = ac.actor.grad_policy_entropy(state.features())?;
                    for (g, hg) in actor_grad.iter_mut().zip(h) {
                        *g += setup.agent.entropy_bonus * hg;
                    }
                }
                // A zero critique leaves the actor untouched, moments included.
                if actor_grad.iter().any(|&g| g != 0.0) {
                    ac.actor_optimizer
                        .step(ac.actor.params_mut(), &actor_grad, Direction::Ascend)
                        .map_err(|e| Error::EpisodeAborted {
                            step: k,
                            reason: e.to_string(),
                        })?;
                }

                // Semi-gradient of delta^2: the target is held fixed.
                let mut critic_grad = ac.critic.grad_value(&theta_prev)?;
                critic_grad.iter_mut().for_each(|g| *g *= -2.0 * delta);
                ac.critic_optimizer
                    .step(ac.critic.params_mut(), &critic_grad, Direction::Descend)
                    .map_err(|e| Error::EpisodeAborted {
                        step: k,
                        reason: e.to_string(),
                    })?;

                if !ac.is_finite() {
                    return Err(non_finite(k, "network parameters"));
                }
                v_prev = ac.critic.forward_critic(&theta)?;
                theta_prev = theta;
                Some(delta)
            }
            Driver::Frozen(_) => None,
        };

        steps.push(EpisodeStep {
            time: k,
            action,
            observation: obs.value,
            belief_before: state.marginals.clone(),
            belief_after: next.marginals.clone(),
            reward,
            td_error: td,
        });
        state = next;
        if stopped {
            break;
        }
    }

    let estimate = extract_estimate(&state.marginals);
    let correct = estimate.estimate == episode.ground_truth;
    Ok(EpisodeTrace {
        stopping_time: steps.len(),
        truncated: !stopped,
        estimate,
        ground_truth: episode.ground_truth.clone(),
        correct,
        initial_uncertainty,
        final_uncertainty: setup.model.uncertainty(&state),
        steps,
    })
}

/// One learning episode: the actor ascends `delta * grad log mu` and the
/// critic descends `delta^2` after every observation.
pub fn train_episode<R: Rng + ?Sized>(
    learner: &mut ActorCritic,
    setup: &Setup,
    episode: &Episode,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    drive(setup, episode, Driver::Learn(learner), rng)
}

/// One evaluation episode with frozen parameters.
pub fn run_episode<R: Rng + ?Sized>(
    policy: Policy<'_>,
    setup: &Setup,
    episode: &Episode,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    drive(setup, episode, Driver::Frozen(policy), rng)
}

/// Per-episode learning-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward_sum: f64,
    pub stopping_time: usize,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: ActorCritic,
    pub curve: Vec<CurvePoint>,
}

/// Runs `episodes` online learning episodes from a fresh initialisation.
///
/// Episode `i` draws its ground truth, actions and observations from stream
/// `(seed, TrainEpisode, i)`.
pub fn train(setup: &Setup, episodes: usize, seed: u64) -> Result<TrainOutcome> {
    train_from(ActorCritic::for_setup(setup, seed), setup, episodes, seed)
}

pub fn train_from(mut learner: ActorCritic, setup: &Setup, episodes: usize, seed: u64) -> Result<TrainOutcome> {
    let mut curve = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = rng::stream(seed, Domain::TrainEpisode, i as u64);
        let episode = setup.sample_episode(&mut rng);
        let trace = train_episode(&mut learner, setup, &episode, &mut rng).inspect_err(|e| {
            log::error!("training episode {i} aborted: {e}");
        })?;
        curve.push(CurvePoint {
            episode: i + 1,
            reward_sum: trace.reward_sum(),
            stopping_time: trace.stopping_time,
            correct: trace.success(),
        });
    }
    Ok(TrainOutcome { learner, curve })
}

/// Runs `episodes` frozen-policy episodes; episode `i` uses stream
/// `(seed, EvalEpisode, i)`, so results do not depend on `execution`.
pub fn evaluate(
    policy: Policy<'_>,
    setup: &Setup,
    episodes: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<EpisodeTrace>> {
    execution
        .map_indexed(episodes, |i| {
            let mut rng: StreamRng = rng::stream(seed, Domain::EvalEpisode, i as u64);
            let episode = setup.sample_episode(&mut rng);
            run_episode(policy, setup, &episode, &mut rng)
        })
        .into_iter()
        .collect()
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained networks plus everything needed to evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub episodes_trained: usize,
    pub prior_beliefs: BeliefVector,
    pub dependency: DependencyModel,
    pub joint_prior: Option<JointBelief>,
    pub networks: ActorCritic,
}

impl Checkpoint {
    pub fn new(
        algorithm: Algorithm,
        config: &ExperimentConfig,
        setup: &Setup,
        networks: ActorCritic,
        episodes_trained: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            algorithm,
            config_hash: config.hash(),
            config: config.clone(),
            episodes_trained,
            prior_beliefs: setup.prior_beliefs.clone(),
            dependency: setup.model.dependency.clone(),
            joint_prior: setup.joint_prior.clone(),
            networks,
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        Setup::assemble(
            &self.config,
            self.algorithm.update_rule(),
            self.dependency.clone(),
            self.prior_beliefs.clone(),
            self.joint_prior.clone(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match the embedded config".into(),
            ));
        }
        ckpt.dependency.validate()?;
        let setup = ckpt.setup()?;
        let width = setup.model.feature_width();
        let nets = &ckpt.networks;
        if nets.actor.input_width() != width
            || nets.actor.output_width() != setup.n()
            || nets.critic.input_width() != 2 * width + 1
        {
            return Err(Error::Checkpoint("network shapes do not match the config".into()));
        }
        Ok(ckpt)
    }
}
