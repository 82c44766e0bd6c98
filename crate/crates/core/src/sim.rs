//! Ground-truth sampling, the noisy observation channel, labelled training
//! data and the estimators built from it.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::belief::JointBelief;
use crate::error::{Error, Result};
use crate::model::{
    clamp_prob, pair_pmf, BeliefVector, CorrelatedPriorConfig, DependencyModel, Observation, ObservationChannel,
    ProcessStateVector,
};

/// Draws one state vector from the correlated-pair prior.
pub fn sample_state<R: Rng + ?Sized>(prior: &CorrelatedPriorConfig, rng: &mut R) -> ProcessStateVector {
    let n = prior.n_processes;
    let q = prior.normal_probability;
    let pmf = pair_pmf(q, prior.correlation);
    let partner = prior.partners();
    let mut states = vec![0u8; n];
    for i in 0..n {
        match partner[i] {
            Some(j) if j < i => {} // drawn together with its partner
            Some(j) => {
                let u: f64 = rng.random();
                let (a, b) = if u < pmf[0][0] {
                    (0, 0)
                } else if u < pmf[0][0] + pmf[0][1] {
                    (0, 1)
                } else if u < pmf[0][0] + pmf[0][1] + pmf[1][0] {
                    (1, 0)
                } else {
                    (1, 1)
                };
                states[i] = a;
                states[j] = b;
            }
            None => states[i] = u8::from(!rng.random_bool(q)),
        }
    }
    ProcessStateVector::new(states).expect("sampled states are binary")
}

/// One detection run: the hidden truth stays fixed while observations are
/// drawn independently through the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ground_truth: ProcessStateVector,
    pub channel: ObservationChannel,
}

impl Episode {
    pub fn new(ground_truth: ProcessStateVector, channel: ObservationChannel) -> Self {
        Self { ground_truth, channel }
    }

    pub fn sample<R: Rng + ?Sized>(prior: &CorrelatedPriorConfig, channel: ObservationChannel, rng: &mut R) -> Self {
        Self::new(sample_state(prior, rng), channel)
    }

    pub fn n(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn observe<R: Rng + ?Sized>(&self, process: usize, time: usize, rng: &mut R) -> Result<Observation> {
        if process >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: process,
                n: self.n(),
            });
        }
        let truth = self.ground_truth.get(process);
        let flip = rng.random_bool(self.channel.flip_probability());
        Ok(Observation {
            process,
            value: truth ^ u8::from(flip),
            time,
        })
    }
}

/// Labelled state vectors used to estimate the prior and pairwise
/// conditionals.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    samples: Vec<ProcessStateVector>,
}

impl TrainingDataset {
    pub fn new(samples: Vec<ProcessStateVector>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::EmptyDataset);
        };
        let n = first.len();
        if let Some(pos) = samples.iter().position(|s| s.len() != n) {
            return Err(Error::MalformedDataset {
                line: pos + 1,
                reason: format!("expected {n} processes, found {}", samples[pos].len()),
            });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ProcessStateVector] {
        &self.samples
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn n_processes(&self) -> usize {
        self.samples[0].len()
    }

    /// One state vector per line, `N` space-separated bits.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            for (k, &bit) in s.as_slice().iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                line.push(if bit == 0 { '0' } else { '1' });
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut samples = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bits = line
                .split_whitespace()
                .map(|tok| match tok {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::MalformedDataset {
                        line: k + 1,
                        reason: format!("token {other:?}"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(ProcessStateVector::new(bits)?);
        }
        Self::new(samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

pub fn generate_training_data<R: Rng + ?Sized>(
    prior: &CorrelatedPriorConfig,
    count: usize,
    rng: &mut R,
) -> Result<TrainingDataset> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    TrainingDataset::new((0..count).map(|_| sample_state(prior, rng)).collect())
}

/// Laplace-smoothed pairwise conditionals:
/// `(#(s_i = s, s_j = s') + 1) / (#(s_i = s) + 2)`.
pub fn estimate_dependency_model(data: &TrainingDataset) -> Result<DependencyModel> {
    let n = data.n_processes();
    // joint[i][j][s][s'] counts
    let mut counts = vec![[[0u64; 2]; 2]; n * n];
    for sample in data.samples() {
        let bits = sample.as_slice();
        for i in 0..n {
            let si = bits[i] as usize;
            for j in 0..n {
                counts[i * n + j][si][bits[j] as usize] += 1;
            }
        }
    }
    DependencyModel::from_fn(n, |i, j, s| {
        let row = counts[i * n + j][s as usize];
        (row[0] as f64 + 1.0) / ((row[0] + row[1]) as f64 + 2.0)
    })
}

/// Laplace-smoothed fraction of samples in which each process is normal.
pub fn estimate_prior_beliefs(data: &TrainingDataset) -> BeliefVector {
    let n = data.n_processes();
    let total = data.sample_count() as f64;
    let mut zeros = vec![0u64; n];
    for sample in data.samples() {
        for (z, &bit) in zeros.iter_mut().zip(sample.as_slice()) {
            *z += u64::from(bit == 0);
        }
    }
    BeliefVector::from_raw(
        zeros
            .into_iter()
            .map(|z| clamp_prob((z as f64 + 1.0) / (total + 2.0)))
            .collect(),
    )
}

/// Laplace-smoothed empirical joint pmf over all `2^N` configurations.
pub fn estimate_joint_prior(data: &TrainingDataset) -> Result<JointBelief> {
    let n = data.n_processes();
    let size = JointBelief::size_for(n)?;
    let mut counts = vec![1.0; size];
    for sample in data.samples() {
        counts[sample.config_index()] += 1.0;
    }
    let total = data.sample_count() as f64 + size as f64;
    JointBelief::new(n, counts.into_iter().map(|c| c / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn prior(rho: f64, q: f64) -> CorrelatedPriorConfig {
        CorrelatedPriorConfig {
            n_processes: 5,
            normal_probability: q,
            correlation: rho,
            pair_structure: vec![(0, 1), (2, 3)],
        }
    }

    fn data(rho: f64, count: usize, seed: u64) -> TrainingDataset {
        generate_training_data(&prior(rho, 0.8), count, &mut stream(seed, Domain::Misc, 0)).unwrap()
    }

    #[test]
    fn full_correlation_pairs_always_agree() {
        let d = data(1.0, 20_000, 1);
        for s in d.samples() {
            assert_eq!(s.get(0), s.get(1));
            assert_eq!(s.get(2), s.get(3));
        }
    }

    #[test]
    fn pair_cell_frequencies_match_pmf() {
        // Oracle: q^2 + rho q (1-q) evaluated by hand.
        for &(rho, expected) in &[(0.6, 0.64 + 0.6 * 0.8 * 0.2), (0.0, 0.8 * 0.8)] {
            let d = data(rho, 100_000, 2);
            let both_normal = d.samples().iter().filter(|s| s.get(0) == 0 && s.get(1) == 0).count();
            let freq = both_normal as f64 / 1e5;
            assert!((freq - expected).abs() < 0.01, "rho={rho}: {freq} vs {expected}");
        }
    }

    #[test]
    fn marginal_normal_rate_is_q() {
        let d = data(0.0, 100_000, 3);
        for i in 0..5 {
            let rate = d.samples().iter().filter(|s| s.get(i) == 0).count() as f64 / 1e5;
            assert!((rate - 0.8).abs() < 0.005, "process {i}: {rate}");
        }
    }

    #[test]
    fn channel_extremes_and_flip_rate() {
        let mut rng = stream(4, Domain::Misc, 0);
        let truth = ProcessStateVector::new(vec![0, 1]).unwrap();
        let clean = Episode::new(truth.clone(), ObservationChannel::new(0.0).unwrap());
        let flipped = Episode::new(truth.clone(), ObservationChannel::new(1.0).unwrap());
        for k in 1..200 {
            assert_eq!(clean.observe(1, k, &mut rng).unwrap().value, 1);
            assert_eq!(flipped.observe(1, k, &mut rng).unwrap().value, 0);
        }
        let noisy = Episode::new(truth, ObservationChannel::new(0.2).unwrap());
        let ones: u32 = (0..100_000)
            .map(|k| u32::from(noisy.observe(0, k + 1, &mut rng).unwrap().value))
            .sum();
        assert!((ones as f64 / 1e5 - 0.2).abs() < 0.005);
        assert!(matches!(
            noisy.observe(2, 1, &mut rng),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn repeated_observations_are_uncorrelated() {
        let mut rng = stream(5, Domain::Misc, 0);
        let ep = Episode::new(
            ProcessStateVector::new(vec![1]).unwrap(),
            ObservationChannel::new(0.3).unwrap(),
        );
        let ys: Vec<f64> = (0..50_000)
            .map(|k| ep.observe(0, k + 1, &mut rng).unwrap().value as f64)
            .collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        let lag1 = ys.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (ys.len() - 1) as f64;
        assert!((lag1 / var).abs() < 0.02, "lag-1 autocorrelation {}", lag1 / var);
    }

    #[test]
    fn dependency_estimates_converge() {
        let d = data(1.0, 100_000, 6);
        let dep = estimate_dependency_model(&d).unwrap();
        assert!(dep.get(0, 1, 0, 0) >= 0.99);

        let d = data(0.6, 100_000, 7);
        let dep = estimate_dependency_model(&d).unwrap();
        // Oracle: P[0,0] / P[s_1 = 0] = 0.736 / 0.8.
        assert!((dep.get(0, 1, 0, 0) - 0.736 / 0.8).abs() < 0.01);
        assert!((dep.get(0, 4, 0, 0) - 0.8).abs() < 0.01);

        let truth = DependencyModel::analytic(&prior(0.6, 0.8)).unwrap();
        let mut max_err: f64 = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                for s in 0..2 {
                    for t in 0..2 {
                        max_err = max_err.max((dep.get(i, j, s, t) - truth.get(i, j, s, t)).abs());
                    }
                }
            }
        }
        assert!(max_err < 0.02, "max entry error {max_err}");
    }

    #[test]
    fn prior_belief_estimates() {
        let d = data(0.6, 100_000, 8);
        let b = estimate_prior_beliefs(&d);
        for i in 0..5 {
            assert!((b.get(i) - 0.8).abs() < 0.005);
        }
        let all_normal = TrainingDataset::new(vec![ProcessStateVector::zeros(3); 50]).unwrap();
        let b = estimate_prior_beliefs(&all_normal);
        assert!(b.get(0) > 0.98 && b.get(0) <= 1.0 - crate::model::EPS);
        // One all-normal sample: (1 + 1) / (1 + 2) for every process.
        let single = TrainingDataset::new(vec![ProcessStateVector::zeros(4)]).unwrap();
        let b = estimate_prior_beliefs(&single);
        assert!(b.as_slice().iter().all(|&x| (x - 2.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn empty_and_ragged_datasets_are_rejected() {
        assert!(matches!(TrainingDataset::new(vec![]), Err(Error::EmptyDataset)));
        let ragged = vec![ProcessStateVector::zeros(2), ProcessStateVector::zeros(3)];
        assert!(matches!(
            TrainingDataset::new(ragged),
            Err(Error::MalformedDataset { line: 2, .. })
        ));
        assert!(generate_training_data(&prior(0.0, 0.8), 0, &mut stream(0, Domain::Misc, 0)).is_err());
        let one = generate_training_data(&prior(0.0, 0.8), 1, &mut stream(0, Domain::Misc, 0)).unwrap();
        assert_eq!(one.sample_count(), 1);
    }

    #[test]
    fn text_format_round_trips() {
        let d = data(0.6, 100, 9);
        let mut buf = Vec::new();
        d.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap().split(' ').count(), 5);
        assert_eq!(TrainingDataset::read(&buf[..]).unwrap(), d);
        assert!(matches!(
            TrainingDataset::read(&b"0 1\n0 x\n"[..]),
            Err(Error::MalformedDataset { line: 2, .. })
        ));
    }

    #[test]
    fn joint_prior_is_a_distribution() {
        let d = data(1.0, 10_000, 10);
        let joint = estimate_joint_prior(&d).unwrap();
        assert!((joint.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Mismatched pair configurations only carry smoothing mass.
        let mixed = ProcessStateVector::new(vec![0, 1, 0, 0, 0]).unwrap().config_index();
        assert!(joint.as_slice()[mixed] < 1e-3);
    }
}
