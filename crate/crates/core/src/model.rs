//! Domain types shared by the simulator, the belief engine and the agent.
//!
//! Library APIs index processes from 0. Files, configs and CLI output use
//! 1-based process numbers; conversion happens at those boundaries only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Probabilities are kept inside `[EPS, 1 - EPS]` wherever a log or a
/// division could otherwise blow up.
pub const EPS: f64 = 1e-12;

/// Tolerance for row-stochasticity of conditional tables.
pub const ROW_TOLERANCE: f64 = 1e-9;

pub fn clamp_prob(x: f64) -> f64 {
    x.clamp(EPS, 1.0 - EPS)
}

/// Hidden state of all processes: 0 = normal, 1 = anomalous.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ProcessStateVector(Vec<u8>);

impl ProcessStateVector {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Invalid("state vector must have at least one process".into()));
        }
        if let Some(pos) = states.iter().position(|&s| s > 1) {
            return Err(Error::Invalid(format!(
                "state entry {} is {}, expected 0 or 1",
                pos + 1,
                states[pos]
            )));
        }
        Ok(Self(states))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Decodes a joint configuration index; process 0 is the most
    /// significant bit.
    pub fn from_config_index(index: usize, n: usize) -> Self {
        Self((0..n).map(|i| ((index >> (n - 1 - i)) & 1) as u8).collect())
    }

    pub fn config_index(&self) -> usize {
        self.0.iter().fold(0, |acc, &s| (acc << 1) | s as usize)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn anomalous_count(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }
}

impl TryFrom<Vec<u8>> for ProcessStateVector {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProcessStateVector> for Vec<u8> {
    fn from(s: ProcessStateVector) -> Self {
        s.0
    }
}

/// One noisy reading of the selected process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub process: usize,
    pub value: u8,
    /// Time index `k >= 1`.
    pub time: usize,
}

/// Binary symmetric channel: the reading is flipped with `flip_probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationChannel {
    flip_probability: f64,
}

impl ObservationChannel {
    pub fn new(flip_probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_probability) {
            return Err(Error::Invalid(format!(
                "flip probability {flip_probability} outside [0, 1]"
            )));
        }
        Ok(Self { flip_probability })
    }

    pub fn flip_probability(&self) -> f64 {
        self.flip_probability
    }

    /// `P[y | s_a = state]`.
    pub fn prob(&self, state: u8, y: u8) -> f64 {
        if state == y {
            1.0 - self.flip_probability
        } else {
            self.flip_probability
        }
    }
}

/// Per-process posterior probability of being normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    /// Accepts any entries in `[0, 1]`; use [`BeliefVector::clamped`] to
    /// move them into the working range.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Invalid("belief vector must be non-empty".into()));
        }
        if let Some(x) = probabilities.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!("belief entry {x} outside [0, 1]")));
        }
        Ok(Self(probabilities))
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self(vec![clamp_prob(value); n])
    }

    pub(crate) fn from_raw(probabilities: Vec<f64>) -> Self {
        Self(probabilities.into_iter().map(clamp_prob).collect())
    }

    pub fn clamped(&self) -> Self {
        Self::from_raw(self.0.clone())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn confidence(&self, i: usize) -> f64 {
        self.0[i].max(1.0 - self.0[i])
    }

    pub fn min_confidence(&self) -> f64 {
        (0..self.len())
            .map(|i| self.confidence(i))
            .fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<f64>> for BeliefVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BeliefVector> for Vec<f64> {
    fn from(b: BeliefVector) -> Self {
        b.0
    }
}

/// Joint pmf of one correlated pair, indexed `[s_i][s_j]`.
///
/// Each mixed cell carries `(1 - rho) q (1 - q)`, which keeps both
/// marginals at exactly `q` for every `rho`.
pub fn pair_pmf(q: f64, rho: f64) -> [[f64; 2]; 2] {
    let mixed = (1.0 - rho) * q * (1.0 - q);
    [
        [q * q + rho * q * (1.0 - q), mixed],
        [mixed, (1.0 - q) * (1.0 - q) + rho * q * (1.0 - q)],
    ]
}

/// Pairwise conditionals `P[s_j = s' | s_i = s]` for all ordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyModel {
    n: usize,
    table: Vec<f64>,
}

impl DependencyModel {
    fn slot(n: usize, i: usize, j: usize, s: u8, s_next: u8) -> usize {
        ((i * n + j) * 2 + s as usize) * 2 + s_next as usize
    }

    /// Builds a model from a closure giving `P[s_j = 0 | s_i = s]` for
    /// `i != j`. The diagonal is always deterministic.
    pub fn from_fn(n: usize, mut p_zero: impl FnMut(usize, usize, u8) -> f64) -> Result<Self> {
        let mut table = vec![0.0; n * n * 4];
        for i in 0..n {
            for j in 0..n {
                for s in 0..2u8 {
                    let p0 = if i == j {
                        if s == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        p_zero(i, j, s)
                    };
                    table[Self::slot(n, i, j, s, 0)] = p0;
                    table[Self::slot(n, i, j, s, 1)] = 1.0 - p0;
                }
            }
        }
        let model = Self { n, table };
        model.validate()?;
        Ok(model)
    }

    /// Exact conditionals implied by the correlated-pair prior.
    pub fn analytic(prior: &CorrelatedPriorConfig) -> Result<Self> {
        prior.validate().map_err(Error::InvalidConfig)?;
        let q = prior.normal_probability;
        let pmf = pair_pmf(q, prior.correlation);
        let partner = prior.partners();
        Self::from_fn(prior.n_processes, |i, j, s| {
            if partner[i] == Some(j) {
                let row = pmf[s as usize];
                let mass = row[0] + row[1];
                // A conditioning event with zero prior mass falls back to the marginal.
                if mass > 0.0 {
                    row[0] / mass
                } else {
                    q
                }
            } else {
                q
            }
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, s: u8, s_next: u8) -> f64 {
        self.table[Self::slot(self.n, i, j, s, s_next)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.table.len() != self.n * self.n * 4 {
            return Err(Error::ShapeMismatch {
                expected: self.n * self.n * 4,
                actual: self.table.len(),
            });
        }
        for i in 0..self.n {
            for j in 0..self.n {
                for s in 0..2u8 {
                    let a = self.get(i, j, s, 0);
                    let b = self.get(i, j, s, 1);
                    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                        return Err(Error::Invalid(format!(
                            "conditional ({i},{j},{s}) has entries outside [0, 1]"
                        )));
                    }
                    if (a + b - 1.0).abs() > ROW_TOLERANCE {
                        return Err(Error::Invalid(format!("conditional ({i},{j},{s}) sums to {}", a + b)));
                    }
                    if i == j && (a - if s == 0 { 1.0 } else { 0.0 }).abs() > 0.0 {
                        return Err(Error::Invalid(format!("diagonal entry {i} is not deterministic")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Final declaration of the detector together with per-process confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub estimate: ProcessStateVector,
    pub confidences: Vec<f64>,
}

impl StateEstimate {
    pub fn min_confidence(&self) -> f64 {
        self.confidences.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub discount: f64,
    pub confidence_threshold: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_max_episode_length")]
    pub max_episode_length: usize,
    /// Weight of an optional policy-entropy bonus in the actor step. Off by default.
    #[serde(default)]
    pub entropy_bonus: f64,
}

fn default_hidden_width() -> usize {
    64
}

fn default_max_episode_length() -> usize {
    100
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            confidence_threshold: 0.95,
            actor_lr: 5e-4,
            critic_lr: 5e-3,
            hidden_width: default_hidden_width(),
            max_episode_length: default_max_episode_length(),
            entropy_bonus: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.discount > 0.0 && self.discount < 1.0) {
            v.push(violation("agent.discount", format!("{} not in (0, 1)", self.discount)));
        }
        if !(self.confidence_threshold > 0.5 && self.confidence_threshold < 1.0) {
            v.push(violation(
                "agent.confidence_threshold",
                format!("{} not in (0.5, 1)", self.confidence_threshold),
            ));
        }
        // Zero learning rates are allowed: they freeze the networks.
        for (path, lr) in [("agent.actor_lr", self.actor_lr), ("agent.critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                v.push(violation(path, format!("{lr} must be finite and non-negative")));
            }
        }
        if self.hidden_width == 0 {
            v.push(violation("agent.hidden_width", "must be at least 1"));
        }
        if self.max_episode_length == 0 {
            v.push(violation("agent.max_episode_length", "must be at least 1"));
        }
        if !(self.entropy_bonus.is_finite() && self.entropy_bonus >= 0.0) {
            v.push(violation("agent.entropy_bonus", "must be finite and non-negative"));
        }
        v
    }
}

/// Prior over process states: disjoint correlated pairs, everything else
/// independent, every process normal with probability `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPriorConfig {
    pub n_processes: usize,
    pub normal_probability: f64,
    pub correlation: f64,
    /// 0-based index pairs.
    pub pair_structure: Vec<(usize, usize)>,
}

impl CorrelatedPriorConfig {
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.n_processes == 0 {
            v.push(violation("n_processes", "must be at least 1"));
        }
        check_unit(&mut v, "normal_probability", self.normal_probability);
        check_unit(&mut v, "correlation", self.correlation);
        let pairs: Vec<[usize; 2]> = self.pair_structure.iter().map(|&(a, b)| [a + 1, b + 1]).collect();
        check_pairs(&mut v, &pairs, self.n_processes);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// `partners()[i]` is the process correlated with `i`, if any.
    pub fn partners(&self) -> Vec<Option<usize>> {
        let mut partner = vec![None; self.n_processes];
        for &(a, b) in &self.pair_structure {
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
        partner
    }
}

/// Which posterior the joint-pmf baseline uses for its entropy reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointReward {
    #[default]
    JointEntropy,
    SummedMarginalEntropy,
}

/// How the joint-pmf baseline decides to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointStopping {
    /// Same min-confidence rule on the marginals as every other algorithm.
    #[default]
    Marginal,
    /// Stop when the most likely joint configuration exceeds the threshold.
    MaxJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineOptions {
    #[serde(default)]
    pub joint_reward: JointReward,
    #[serde(default)]
    pub joint_stopping: JointStopping,
}

/// Top-level run configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_processes: usize,
    pub normal_probability: f64,
    pub correlation: f64,
    pub flip_probability: f64,
    /// 1-based process numbers, as written in config files.
    #[serde(default)]
    pub pair_structure: Vec<[usize; 2]>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_training_samples")]
    pub training_samples: usize,
    #[serde(default = "default_train_episodes")]
    pub train_episodes: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub baselines: BaselineOptions,
}

fn default_training_samples() -> usize {
    100_000
}

fn default_train_episodes() -> usize {
    5000
}

fn default_eval_episodes() -> usize {
    2000
}

impl Default for ExperimentConfig {
    /// Five processes, two correlated pairs, `q = 0.8`, `p = 0.2`.
    fn default() -> Self {
        Self {
            n_processes: 5,
            normal_probability: 0.8,
            correlation: 0.6,
            flip_probability: 0.2,
            pair_structure: vec![[1, 2], [3, 4]],
            agent: AgentConfig::default(),
            seed: 0,
            training_samples: default_training_samples(),
            train_episodes: default_train_episodes(),
            eval_episodes: default_eval_episodes(),
            baselines: BaselineOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.n_processes == 0 {
            v.push(violation("n_processes", "must be at least 1"));
        }
        check_unit(&mut v, "normal_probability", self.normal_probability);
        check_unit(&mut v, "correlation", self.correlation);
        check_unit(&mut v, "flip_probability", self.flip_probability);
        check_pairs(&mut v, &self.pair_structure, self.n_processes);
        v.extend(self.agent.validate());
        if self.training_samples == 0 {
            v.push(violation("training_samples", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            v.push(violation("eval_episodes", "must be at least 1"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        validate_config(Self::from_json(&text)?)
    }

    pub fn prior(&self) -> CorrelatedPriorConfig {
        CorrelatedPriorConfig {
            n_processes: self.n_processes,
            normal_probability: self.normal_probability,
            correlation: self.correlation,
            pair_structure: self
                .pair_structure
                .iter()
                .map(|&[a, b]| (a.saturating_sub(1), b.saturating_sub(1)))
                .collect(),
        }
    }

    pub fn channel(&self) -> Result<ObservationChannel> {
        ObservationChannel::new(self.flip_probability)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Returns the config unchanged if every invariant holds, otherwise the
/// full list of violations.
pub fn validate_config(config: ExperimentConfig) -> Result<ExperimentConfig> {
    match config.validate() {
        Ok(()) => Ok(config),
        Err(v) => Err(Error::InvalidConfig(v)),
    }
}

fn violation(path: &str, message: impl Into<String>) -> Violation {
    Violation {
        path: path.to_string(),
        message: message.into(),
    }
}

fn check_unit(v: &mut Vec<Violation>, path: &str, x: f64) {
    if !(0.0..=1.0).contains(&x) {
        v.push(violation(path, format!("{x} not in [0, 1]")));
    }
}

fn check_pairs(v: &mut Vec<Violation>, pairs: &[[usize; 2]], n: usize) {
    let mut seen = vec![false; n + 1];
    for (k, &[a, b]) in pairs.iter().enumerate() {
        let path = format!("pair_structure[{k}]");
        if a == b {
            v.push(violation(&path, format!("process {a} paired with itself")));
            continue;
        }
        for x in [a, b] {
            if x == 0 || x > n {
                v.push(violation(&path, format!("process {x} outside 1..={n}")));
            } else if seen[x] {
                v.push(violation(&path, format!("process {x} appears in more than one pair")));
            } else {
                seen[x] = true;
            }
        }
    }
}
