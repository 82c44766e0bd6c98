//! Sweeps over correlation and confidence threshold, per-decision latency,
//! and result files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    evaluate, train, training_data, ActorCritic, Algorithm, EpisodeTrace, Policy, SelectionMode, Setup,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::ExperimentConfig;
use crate::rng::{self, derive_seed, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub rho_grid: Vec<f64>,
    pub threshold_grid: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub episodes_per_cell: usize,
    pub master_seed: u64,
    /// Wall-clock latency is not reproducible; cells only carry it when
    /// this is set.
    #[serde(default)]
    pub measure_latency: bool,
    #[serde(default = "default_latency_decisions")]
    pub latency_decisions: usize,
}

fn default_latency_decisions() -> usize {
    2000
}

impl SweepSpec {
    /// Five processes, `rho` in {0, 0.6, 1}, thresholds {0.7, 0.8, 0.9, 0.95}.
    pub fn standard(master_seed: u64) -> Self {
        Self {
            rho_grid: vec![0.0, 0.6, 1.0],
            threshold_grid: vec![0.7, 0.8, 0.9, 0.95],
            algorithms: vec![Algorithm::Proposed, Algorithm::Joint, Algorithm::Naive],
            episodes_per_cell: 2000,
            master_seed,
            measure_latency: false,
            latency_decisions: default_latency_decisions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.rho_grid.is_empty() {
            problems.push("rho_grid is empty".to_string());
        }
        if self.threshold_grid.is_empty() {
            problems.push("threshold_grid is empty".to_string());
        }
        if self.algorithms.is_empty() {
            problems.push("algorithms is empty".to_string());
        }
        if let Some(r) = self.rho_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            problems.push(format!("rho {r} not in [0, 1]"));
        }
        if let Some(t) = self.threshold_grid.iter().find(|t| !(**t > 0.5 && **t < 1.0)) {
            problems.push(format!("threshold {t} not in (0.5, 1)"));
        }
        if self.episodes_per_cell == 0 {
            problems.push("episodes_per_cell must be positive".to_string());
        }
        if self.measure_latency && self.latency_decisions == 0 {
            problems.push("latency_decisions must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid sweep: {}", problems.join("; "))))
        }
    }

    pub fn cells(&self) -> Vec<(Algorithm, f64, f64)> {
        let mut cells = Vec::new();
        for &a in &self.algorithms {
            for &rho in &self.rho_grid {
                for &t in &self.threshold_grid {
                    cells.push((a, rho, t));
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub algorithm: Algorithm,
    pub rho: f64,
    pub pi_upper: f64,
    pub accuracy: f64,
    pub mean_stopping_time: f64,
    #[serde(rename = "stderr")]
    pub stopping_time_stderr: f64,
    pub truncation_rate: f64,
    #[serde(rename = "latency_s")]
    pub mean_decision_latency: Option<f64>,
}

impl CellResult {
    /// Aggregates evaluation traces; truncated episodes count as incorrect.
    pub fn from_traces(algorithm: Algorithm, rho: f64, pi_upper: f64, traces: &[EpisodeTrace]) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Invalid("no episodes to aggregate".into()));
        }
        let n = traces.len() as f64;
        let times: Vec<f64> = traces.iter().map(|t| t.stopping_time as f64).collect();
        let (mean, stderr) = mean_and_stderr(&times);
        Ok(Self {
            algorithm,
            rho,
            pi_upper,
            accuracy: traces.iter().filter(|t| t.success()).count() as f64 / n,
            mean_stopping_time: mean,
            stopping_time_stderr: stderr,
            truncation_rate: traces.iter().filter(|t| t.truncated).count() as f64 / n,
            mean_decision_latency: None,
        })
    }

    /// Binomial standard error of the accuracy.
    pub fn accuracy_stderr(&self, episodes: usize) -> f64 {
        (self.accuracy * (1.0 - self.accuracy) / episodes as f64).sqrt()
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Config for one sweep cell: the base config with `rho` and the
/// threshold substituted and the seed derived from the cell coordinates.
pub fn cell_config(base: &ExperimentConfig, master_seed: u64, rho: f64, pi_upper: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.correlation = rho;
    cfg.agent.confidence_threshold = pi_upper;
    // Training data depends on rho only, so every algorithm in a column
    // sees the same dependency estimates.
    cfg.seed = derive_seed(master_seed, &[rho.to_bits()]);
    cfg
}

/// Seeds for one cell: `(training, evaluation)`. Evaluation streams are
/// shared across algorithms so their episodes see identical ground truth.
pub fn cell_seeds(master_seed: u64, algorithm: Algorithm, rho: f64, pi_upper: f64) -> (u64, u64) {
    (
        derive_seed(master_seed, &[1, algorithm.id(), rho.to_bits(), pi_upper.to_bits()]),
        derive_seed(master_seed, &[2, rho.to_bits(), pi_upper.to_bits()]),
    )
}

/// Output of one cell: the aggregate plus the evaluation traces.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub result: CellResult,
    pub traces: Vec<EpisodeTrace>,
    pub networks: Option<ActorCritic>,
}

/// Trains (for learning algorithms) and evaluates one cell.
pub fn run_cell(
    spec: &SweepSpec,
    base: &ExperimentConfig,
    algorithm: Algorithm,
    rho: f64,
    pi_upper: f64,
    execution: Execution,
) -> Result<CellRun> {
    let cfg = cell_config(base, spec.master_seed, rho, pi_upper);
    cfg.validate().map_err(Error::InvalidConfig)?;
    let data = training_data(&cfg)?;
    let setup = Setup::from_data(&cfg, algorithm.update_rule(), &data)?;
    let (train_seed, eval_seed) = cell_seeds(spec.master_seed, algorithm, rho, pi_upper);

    let networks = if algorithm.is_learning() {
        Some(train(&setup, cfg.train_episodes, train_seed)?.learner)
    } else {
        None
    };
    let policy = match &networks {
        Some(n) => Policy::Actor(&n.actor, SelectionMode::Sample),
        None => Policy::Uniform,
    };
    let traces = evaluate(policy, &setup, spec.episodes_per_cell, eval_seed, execution)?;
    let mut result = CellResult::from_traces(algorithm, rho, pi_upper, &traces)?;
    if spec.measure_latency {
        let report = measure_latency_with(
            &setup,
            networks.as_ref().map(|n| &n.actor),
            spec.latency_decisions,
            eval_seed,
        )?;
        result.mean_decision_latency = Some(report.mean.as_secs_f64());
    }
    Ok(CellRun {
        result,
        traces,
        networks,
    })
}

#[derive(Debug)]
pub struct SweepReport {
    pub results: Vec<CellResult>,
    pub failures: Vec<((Algorithm, f64, f64), Error)>,
}

/// Runs every cell. Cells fan out across workers; each cell's training is
/// sequential. A failing cell is logged and skipped.
pub fn run_sweep(spec: &SweepSpec, base: &ExperimentConfig, execution: Execution) -> Result<SweepReport> {
    spec.validate()?;
    base.validate().map_err(Error::InvalidConfig)?;
    let cells = spec.cells();
    let outcomes = execution.map_indexed(cells.len(), |i| {
        let (a, rho, t) = cells[i];
        run_cell(spec, base, a, rho, t, execution).map(|run| run.result)
    });
    let mut report = SweepReport {
        results: Vec::new(),
        failures: Vec::new(),
    };
    for (cell, outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(r) => report.results.push(r),
            Err(e) => {
                log::warn!("cell {} rho={} pi_upper={} failed: {e}", cell.0, cell.1, cell.2);
                report.failures.push((cell, e));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub mean: Duration,
    pub median: Duration,
    pub decisions: usize,
}

/// Wall-clock cost of one selection decision (tracker update, policy
/// forward pass and sampling) for `algorithm` under `config`, using a
/// freshly initialised policy and the exact prior.
pub fn measure_decision_latency(
    algorithm: Algorithm,
    config: &ExperimentConfig,
    n_decisions: usize,
) -> Result<LatencyReport> {
    let setup = Setup::analytic(config, algorithm.update_rule())?;
    let networks = algorithm
        .is_learning()
        .then(|| ActorCritic::for_setup(&setup, config.seed));
    measure_latency_with(&setup, networks.as_ref().map(|n| &n.actor), n_decisions, config.seed)
}

pub fn measure_latency_with(
    setup: &Setup,
    actor: Option<&crate::nn::Mlp>,
    n_decisions: usize,
    seed: u64,
) -> Result<LatencyReport> {
    if n_decisions == 0 {
        return Err(Error::Invalid("n_decisions must be positive".into()));
    }
    let mut rng = rng::stream(seed, Domain::Latency, 0);
    let n = setup.n();
    let threshold = setup.agent.confidence_threshold;
    let initial = setup.initial_state()?;
    let mut episode = setup.sample_episode(&mut rng);
    let mut state = initial.clone();
    let mut samples = Vec::with_capacity(n_decisions);
    let warmup = (n_decisions / 10).max(10);
    for k in 0..warmup + n_decisions {
        let start = Instant::now();
        let action = match actor {
            Some(a) => crate::agent::select_action(a, state.features(), &mut rng, SelectionMode::Sample)?,
            None => rng.random_range(0..n),
        };
        let obs = episode.observe(action, k + 1, &mut rng)?;
        state = setup.model.update(&state, &obs)?;
        let elapsed = start.elapsed();
        if k >= warmup {
            samples.push(elapsed);
        }
        if setup.model.should_stop(&state, threshold) {
            episode = setup.sample_episode(&mut rng);
            state = initial.clone();
        }
    }
    let mean = samples.iter().sum::<Duration>() / samples.len() as u32;
    samples.sort();
    Ok(LatencyReport {
        mean,
        median: samples[samples.len() / 2],
        decisions: n_decisions,
    })
}

/// Run metadata written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub cells: usize,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub spec: SweepSpec,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, spec: &SweepSpec, cells: usize, started: std::time::SystemTime) -> Self {
        let unix = |t: std::time::SystemTime| {
            t.duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        };
        Self {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            master_seed: spec.master_seed,
            cells,
            started_unix_s: unix(started),
            finished_unix_s: unix(std::time::SystemTime::now()),
            spec: spec.clone(),
        }
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const LONG_RESULTS_FILE: &str = "results_long.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_results_csv<W: std::io::Write>(results: &[CellResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: std::io::Read>(input: R) -> Result<Vec<CellResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Long format: one `(algorithm, rho, pi_upper, metric, value)` row per metric.
pub fn write_long_csv<W: std::io::Write>(results: &[CellResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algorithm", "rho", "pi_upper", "metric", "value"])?;
    for r in results {
        let mut metrics = vec![
            ("accuracy", r.accuracy),
            ("mean_stopping_time", r.mean_stopping_time),
            ("stderr", r.stopping_time_stderr),
            ("truncation_rate", r.truncation_rate),
        ];
        if let Some(l) = r.mean_decision_latency {
            metrics.push(("latency_s", l));
        }
        for (name, value) in metrics {
            w.serialize((r.algorithm, r.rho, r.pi_upper, name, value))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `results_long.csv` and `manifest.json` into `dir`.
pub fn emit_results(results: &[CellResult], manifest: &Manifest, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Invalid("no results to emit".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = [
        dir.join(RESULTS_FILE),
        dir.join(LONG_RESULTS_FILE),
        dir.join(MANIFEST_FILE),
    ];
    write_results_csv(results, std::fs::File::create(&paths[0])?)?;
    write_long_csv(results, std::fs::File::create(&paths[1])?)?;
    serde_json::to_writer_pretty(std::fs::File::create(&paths[2])?, manifest)?;
    Ok(paths.to_vec())
}
