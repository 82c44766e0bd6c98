//! Posterior updates, entropy reward, estimate extraction and stopping.
//!
//! Three trackers share one interface ([`BeliefModel`]): the pairwise
//! marginal recursion, the naive self-only marginal update, and the exact
//! joint posterior over all `2^N` configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    clamp_prob, pair_pmf, BeliefVector, CorrelatedPriorConfig, DependencyModel, JointReward, JointStopping,
    Observation, ObservationChannel, ProcessStateVector, StateEstimate,
};

/// Largest `N` for which a joint posterior may be allocated.
pub const MAX_JOINT_PROCESSES: usize = 24;

const JOINT_SUM_TOLERANCE: f64 = 1e-9;

/// `P[y_a = y | s_i = s]`, marginalising over the observed process's state
/// through the pairwise conditionals.
pub fn likelihood(
    dep: &DependencyModel,
    channel: &ObservationChannel,
    observed: usize,
    y: u8,
    target: usize,
    s: u8,
) -> f64 {
    let total: f64 = (0..2u8)
        .map(|s_obs| channel.prob(s_obs, y) * dep.get(target, observed, s, s_obs))
        .sum();
    clamp_prob(total)
}

fn bayes(prior_normal: f64, l_normal: f64, l_anomalous: f64) -> f64 {
    if l_normal == l_anomalous {
        return prior_normal;
    }
    let num = prior_normal * l_normal;
    let norm = num + (1.0 - prior_normal) * l_anomalous;
    clamp_prob(num / norm)
}

fn check_obs(n: usize, obs: &Observation) -> Result<()> {
    if obs.process >= n {
        return Err(Error::IndexOutOfRange { index: obs.process, n });
    }
    if obs.value > 1 {
        return Err(Error::Invalid(format!("observation value {} is not binary", obs.value)));
    }
    Ok(())
}

/// Marginal recursion: every process is updated through its pairwise
/// conditional with the observed process.
pub fn update_marginal(
    belief: &BeliefVector,
    dep: &DependencyModel,
    channel: &ObservationChannel,
    obs: &Observation,
) -> Result<BeliefVector> {
    let n = belief.len();
    if dep.n() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: dep.n(),
        });
    }
    check_obs(n, obs)?;
    let next = (0..n)
        .map(|i| {
            let l0 = likelihood(dep, channel, obs.process, obs.value, i, 0);
            let l1 = likelihood(dep, channel, obs.process, obs.value, i, 1);
            bayes(belief.get(i), l0, l1)
        })
        .collect();
    Ok(BeliefVector::from_raw(next))
}

/// Updates only the observed entry; cross-process dependence is ignored.
pub fn update_naive(belief: &BeliefVector, channel: &ObservationChannel, obs: &Observation) -> Result<BeliefVector> {
    check_obs(belief.len(), obs)?;
    let mut next = belief.as_slice().to_vec();
    let a = obs.process;
    let l0 = clamp_prob(channel.prob(0, obs.value));
    let l1 = clamp_prob(channel.prob(1, obs.value));
    next[a] = bayes(next[a], l0, l1);
    Ok(BeliefVector::from_raw(next))
}

/// Posterior over all `2^N` joint configurations. Configuration index
/// `c` has process `i` in bit `N - 1 - i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBelief {
    n: usize,
    probabilities: Vec<f64>,
}

impl JointBelief {
    pub fn size_for(n: usize) -> Result<usize> {
        if n == 0 || n > MAX_JOINT_PROCESSES {
            return Err(Error::Invalid(format!(
                "joint posterior needs 1..={MAX_JOINT_PROCESSES} processes, got {n}"
            )));
        }
        Ok(1 << n)
    }

    pub fn new(n: usize, probabilities: Vec<f64>) -> Result<Self> {
        let size = Self::size_for(n)?;
        if probabilities.len() != size {
            return Err(Error::ShapeMismatch {
                expected: size,
                actual: probabilities.len(),
            });
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("joint entries must lie in [0, 1]".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > JOINT_SUM_TOLERANCE {
            return Err(Error::Invalid(format!("joint entries sum to {total}")));
        }
        Ok(Self { n, probabilities })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        let size = Self::size_for(n)?;
        Ok(Self {
            n,
            probabilities: vec![1.0 / size as f64; size],
        })
    }

    pub fn point_mass(state: &ProcessStateVector) -> Result<Self> {
        let size = Self::size_for(state.len())?;
        let mut probabilities = vec![0.0; size];
        probabilities[state.config_index()] = 1.0;
        Ok(Self {
            n: state.len(),
            probabilities,
        })
    }

    /// Exact prior pmf of the correlated-pair model.
    pub fn from_prior(prior: &CorrelatedPriorConfig) -> Result<Self> {
        prior.validate().map_err(Error::InvalidConfig)?;
        let n = prior.n_processes;
        let size = Self::size_for(n)?;
        let q = prior.normal_probability;
        let pmf = pair_pmf(q, prior.correlation);
        let partner = prior.partners();
        let probabilities = (0..size)
            .map(|c| {
                let bit = |i: usize| (c >> (n - 1 - i)) & 1;
                let mut p = 1.0;
                for i in 0..n {
                    match partner[i] {
                        Some(j) if j < i => {}
                        Some(j) => p *= pmf[bit(i)][bit(j)],
                        None => p *= if bit(i) == 0 { q } else { 1.0 - q },
                    }
                }
                p
            })
            .collect();
        Ok(Self { n, probabilities })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn max_probability(&self) -> f64 {
        self.probabilities.iter().copied().fold(0.0, f64::max)
    }

    /// Shannon entropy of the joint pmf in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probabilities
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Exact Bayes update of the joint posterior with one channel reading.
pub fn update_joint(joint: &JointBelief, channel: &ObservationChannel, obs: &Observation) -> Result<JointBelief> {
    let n = joint.n;
    check_obs(n, obs)?;
    let shift = n - 1 - obs.process;
    let factor = [
        clamp_prob(channel.prob(0, obs.value)),
        clamp_prob(channel.prob(1, obs.value)),
    ];
    let mut next: Vec<f64> = joint
        .probabilities
        .iter()
        .enumerate()
        .map(|(c, &p)| p * factor[(c >> shift) & 1])
        .collect();
    let total: f64 = next.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegeneratePosterior);
    }
    next.iter_mut().for_each(|p| *p /= total);
    Ok(JointBelief { n, probabilities: next })
}

/// Per-process probability of being normal, without clamping.
pub fn marginal_probabilities(joint: &JointBelief) -> Vec<f64> {
    let n = joint.n;
    let mut normal = vec![0.0; n];
    for (c, &p) in joint.probabilities.iter().enumerate() {
        for (i, m) in normal.iter_mut().enumerate() {
            if (c >> (n - 1 - i)) & 1 == 0 {
                *m += p;
            }
        }
    }
    normal
}

pub fn marginalize(joint: &JointBelief) -> BeliefVector {
    BeliefVector::from_raw(marginal_probabilities(joint))
}

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(x: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(x) + term(1.0 - x)
}

pub fn total_entropy(belief: &BeliefVector) -> f64 {
    belief.as_slice().iter().map(|&x| entropy(x)).sum()
}

/// Entropy reduction summed over processes.
pub fn reward(previous: &BeliefVector, current: &BeliefVector) -> Result<f64> {
    if previous.len() != current.len() {
        return Err(Error::ShapeMismatch {
            expected: previous.len(),
            actual: current.len(),
        });
    }
    Ok(previous
        .as_slice()
        .iter()
        .zip(current.as_slice())
        .map(|(&a, &b)| entropy(a) - entropy(b))
        .sum())
}

/// Declares each process normal when its belief is at least one half.
pub fn extract_estimate(belief: &BeliefVector) -> StateEstimate {
    let estimate = belief.as_slice().iter().map(|&x| u8::from(x < 1.0 - x)).collect();
    StateEstimate {
        estimate: ProcessStateVector::new(estimate).expect("non-empty binary estimate"),
        confidences: (0..belief.len()).map(|i| belief.confidence(i)).collect(),
    }
}

/// True when every process's confidence strictly exceeds `threshold`.
pub fn should_stop(belief: &BeliefVector, threshold: f64) -> bool {
    belief.min_confidence() > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Pairwise-conditional marginal recursion.
    Marginal,
    /// Self-only marginal update.
    Naive,
    /// Exact joint posterior.
    Joint,
}

/// Tracker state: the marginal beliefs plus, for the joint rule, the full
/// joint posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub marginals: BeliefVector,
    pub joint: Option<JointBelief>,
}

impl BeliefState {
    /// What the policy and value networks see: the joint pmf when tracked,
    /// otherwise the marginal beliefs.
    pub fn features(&self) -> &[f64] {
        match &self.joint {
            Some(j) => j.as_slice(),
            None => self.marginals.as_slice(),
        }
    }
}

/// Immutable per-run configuration of one belief tracker.
#[derive(Debug, Clone)]
pub struct BeliefModel {
    pub rule: UpdateRule,
    pub dependency: DependencyModel,
    pub channel: ObservationChannel,
    pub joint_reward: JointReward,
    pub joint_stopping: JointStopping,
}

impl BeliefModel {
    pub fn new(rule: UpdateRule, dependency: DependencyModel, channel: ObservationChannel) -> Self {
        Self {
            rule,
            dependency,
            channel,
            joint_reward: JointReward::default(),
            joint_stopping: JointStopping::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.dependency.n()
    }

    /// Width of [`BeliefState::features`] under this rule.
    pub fn feature_width(&self) -> usize {
        match self.rule {
            UpdateRule::Joint => 1 << self.n(),
            _ => self.n(),
        }
    }

    /// Initial state. The joint rule needs a joint prior; the marginal rules
    /// ignore it.
    pub fn initial_state(&self, marginals: &BeliefVector, joint: Option<&JointBelief>) -> Result<BeliefState> {
        if marginals.len() != self.n() {
            return Err(Error::ShapeMismatch {
                expected: self.n(),
                actual: marginals.len(),
            });
        }
        match self.rule {
            UpdateRule::Joint => {
                let joint = joint.ok_or_else(|| Error::Invalid("joint rule needs a joint prior".into()))?;
                if joint.n() != self.n() {
                    return Err(Error::ShapeMismatch {
                        expected: self.n(),
                        actual: joint.n(),
                    });
                }
                Ok(BeliefState {
                    marginals: marginalize(joint),
                    joint: Some(joint.clone()),
                })
            }
            _ => Ok(BeliefState {
                marginals: marginals.clamped(),
                joint: None,
            }),
        }
    }

    pub fn update(&self, state: &BeliefState, obs: &Observation) -> Result<BeliefState> {
        match (self.rule, &state.joint) {
            (UpdateRule::Marginal, _) => Ok(BeliefState {
                marginals: update_marginal(&state.marginals, &self.dependency, &self.channel, obs)?,
                joint: None,
            }),
            (UpdateRule::Naive, _) => Ok(BeliefState {
                marginals: update_naive(&state.marginals, &self.channel, obs)?,
                joint: None,
            }),
            (UpdateRule::Joint, Some(joint)) => {
                let joint = update_joint(joint, &self.channel, obs)?;
                Ok(BeliefState {
                    marginals: marginalize(&joint),
                    joint: Some(joint),
                })
            }
            (UpdateRule::Joint, None) => Err(Error::Invalid("joint rule state lacks a joint posterior".into())),
        }
    }

    /// Uncertainty whose decrease is the instantaneous reward.
    pub fn uncertainty(&self, state: &BeliefState) -> f64 {
        match (&state.joint, self.joint_reward) {
            (Some(joint), JointReward::JointEntropy) => joint.entropy(),
            _ => total_entropy(&state.marginals),
        }
    }

    pub fn reward(&self, previous: &BeliefState, current: &BeliefState) -> Result<f64> {
        match (&previous.joint, &current.joint, self.joint_reward) {
            (Some(a), Some(b), JointReward::JointEntropy) => Ok(a.entropy() - b.entropy()),
            _ => reward(&previous.marginals, &current.marginals),
        }
    }

    pub fn should_stop(&self, state: &BeliefState, threshold: f64) -> bool {
        match (&state.joint, self.joint_stopping) {
            (Some(joint), JointStopping::MaxJoint) => joint.max_probability() > threshold,
            _ => should_stop(&state.marginals, threshold),
        }
    }
}
