use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use ctrlsense::agent::{evaluate, train_from, training_data, ActorCritic, Checkpoint, Policy, SelectionMode, Setup};
use ctrlsense::experiment::{emit_results, measure_decision_latency, run_sweep, Manifest, SweepSpec};
use ctrlsense::sim::{estimate_dependency_model, estimate_prior_beliefs, generate_training_data, TrainingDataset};
use ctrlsense::{rng, Algorithm, Execution, ExperimentConfig};

/// Controlled-sensing anomaly detection: simulator, training and sweeps.
#[derive(Parser, Debug)]
#[command(name = "ctrlsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults to the five-process setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample labelled state vectors and write them as text.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (defaults to the config's training_samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the pairwise conditionals and prior estimated from data.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Dataset file written by gen-data; generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one algorithm and write a checkpoint plus learning curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        algorithm: Algorithm,
        /// Training episodes (defaults to the config's train_episodes).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write per-episode summaries.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pick the most likely process instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every (algorithm, rho, threshold) cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep spec (JSON); defaults to the standard grid.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Restrict to these algorithms (comma separated).
        #[arg(long, value_delimiter = ',')]
        algorithm: Vec<Algorithm>,
        /// Evaluation episodes per cell.
        #[arg(long)]
        episodes: Option<usize>,
        /// Training episodes per learning cell.
        #[arg(long)]
        train_episodes: Option<usize>,
        /// Record per-decision latency (makes output non-reproducible).
        #[arg(long)]
        latency: bool,
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure wall-clock time per selection decision.
    Latency {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed", value_delimiter = ',')]
        algorithm: Vec<Algorithm>,
        /// Number of processes (overrides the config).
        #[arg(long)]
        processes: Option<usize>,
        #[arg(long, default_value_t = 20_000)]
        decisions: usize,
    },
}

/// Failure classes map to exit codes 1 (bad input) and 2 (runtime).
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ctrlsense::Error> for Failure {
    fn from(e: ctrlsense::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ctrlsense::Error>() {
            Ok(core) => core.into(),
            Err(other) => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(invalid)?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(invalid)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(ctrlsense::model::validate_config(cfg)?)
}

fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<TrainingDataset, Failure> {
    let data = TrainingDataset::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(invalid)?;
    if data.n_processes() != cfg.n_processes {
        return Err(invalid(anyhow!(
            "dataset has {} processes, config has {}",
            data.n_processes(),
            cfg.n_processes
        )));
    }
    Ok(data)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { common, out, samples } => {
            let cfg = load_config(&common)?;
            let count = samples.unwrap_or(cfg.training_samples);
            let mut rng = rng::stream(cfg.seed, rng::Domain::TrainingData, 0);
            let data = generate_training_data(&cfg.prior(), count, &mut rng)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("dataset.txt");
            data.save(&path)?;
            log::info!("wrote {} samples to {}", data.sample_count(), path.display());
        }
        Command::Inspect { common, data } => {
            let cfg = load_config(&common)?;
            let data = match data {
                Some(p) => load_dataset(&p, &cfg)?,
                None => training_data(&cfg)?,
            };
            print_model(&data)?;
        }
        Command::Train {
            common,
            algorithm,
            episodes,
            data,
            out,
        } => {
            let cfg = load_config(&common)?;
            let data = match data {
                Some(p) => load_dataset(&p, &cfg)?,
                None => training_data(&cfg)?,
            };
            let episodes = episodes.unwrap_or(cfg.train_episodes);
            let setup = Setup::from_data(&cfg, algorithm.update_rule(), &data)?;
            let networks = ActorCritic::for_setup(&setup, cfg.seed);
            let outcome = if algorithm.is_learning() {
                train_from(networks, &setup, episodes, cfg.seed)?
            } else {
                log::info!("{algorithm} does not learn; writing an untrained checkpoint");
                ctrlsense::agent::TrainOutcome {
                    learner: networks,
                    curve: Vec::new(),
                }
            };
            std::fs::create_dir_all(&out)?;
            let ckpt = Checkpoint::new(algorithm, &cfg, &setup, outcome.learner, outcome.curve.len());
            ckpt.save(out.join("checkpoint.json"))?;
            let mut w = csv::Writer::from_path(out.join("learning_curve.csv")).map_err(anyhow::Error::from)?;
            if outcome.curve.is_empty() {
                w.write_record(["episode", "reward_sum", "stopping_time", "correct"])
                    .map_err(anyhow::Error::from)?;
            }
            for p in &outcome.curve {
                w.serialize(p).map_err(anyhow::Error::from)?;
            }
            w.flush()?;
            log::info!(
                "trained {algorithm} for {} episodes; wrote {}",
                outcome.curve.len(),
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            greedy,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))
                .map_err(invalid)?;
            let setup = ckpt.setup()?;
            let episodes = episodes.unwrap_or(ckpt.config.eval_episodes);
            if episodes == 0 {
                return Err(invalid(anyhow!("--episodes must be positive")));
            }
            let seed = seed.unwrap_or(ckpt.config.seed);
            let mode = if greedy {
                SelectionMode::Greedy
            } else {
                SelectionMode::Sample
            };
            let policy = if ckpt.algorithm.is_learning() {
                Policy::Actor(&ckpt.networks.actor, mode)
            } else {
                Policy::Uniform
            };
            let traces = evaluate(policy, &setup, episodes, seed, Execution::Parallel)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("traces.csv");
            write_traces(&path, &traces)?;
            let result = ctrlsense::CellResult::from_traces(
                ckpt.algorithm,
                ckpt.config.correlation,
                ckpt.config.agent.confidence_threshold,
                &traces,
            )?;
            println!(
                "{} episodes: accuracy {:.4}, mean stopping time {:.3} ± {:.3}, truncated {:.4}",
                episodes,
                result.accuracy,
                result.mean_stopping_time,
                result.stopping_time_stderr,
                result.truncation_rate
            );
        }
        Command::Sweep {
            common,
            sweep,
            algorithm,
            episodes,
            train_episodes,
            latency,
            sequential,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            let mut spec = match sweep {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))
                        .map_err(invalid)?;
                    serde_json::from_str::<SweepSpec>(&text)
                        .with_context(|| format!("parsing {}", p.display()))
                        .map_err(invalid)?
                }
                None => SweepSpec {
                    episodes_per_cell: cfg.eval_episodes,
                    ..SweepSpec::standard(cfg.seed)
                },
            };
            if common.seed.is_some() {
                spec.master_seed = cfg.seed;
            }
            if !algorithm.is_empty() {
                spec.algorithms = algorithm;
            }
            if let Some(e) = episodes {
                spec.episodes_per_cell = e;
            }
            if let Some(t) = train_episodes {
                cfg.train_episodes = t;
            }
            spec.measure_latency |= latency;
            spec.validate()?;
            let started = std::time::SystemTime::now();
            let execution = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let report = run_sweep(&spec, &cfg, execution)?;
            for (cell, err) in &report.failures {
                log::warn!("cell {} rho={} pi_upper={} skipped: {err}", cell.0, cell.1, cell.2);
            }
            if report.results.is_empty() {
                return Err(Failure::Runtime(anyhow!("every sweep cell failed")));
            }
            let manifest = Manifest::new(&cfg, &spec, report.results.len(), started);
            for path in emit_results(&report.results, &manifest, &out)? {
                log::info!("wrote {}", path.display());
            }
        }
        Command::Latency {
            common,
            algorithm,
            processes,
            decisions,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = processes {
                cfg.n_processes = n;
                cfg = ctrlsense::model::validate_config(cfg)?;
            }
            if decisions == 0 {
                return Err(invalid(anyhow!("--decisions must be positive")));
            }
            for a in algorithm {
                let r = measure_decision_latency(a, &cfg, decisions)?;
                println!(
                    "{a:9} N={} mean {:.3} us  median {:.3} us  ({} decisions)",
                    cfg.n_processes,
                    r.mean.as_secs_f64() * 1e6,
                    r.median.as_secs_f64() * 1e6,
                    r.decisions
                );
            }
        }
    }
    Ok(())
}

fn print_model(data: &TrainingDataset) -> Result<(), Failure> {
    let dep = estimate_dependency_model(data)?;
    let prior = estimate_prior_beliefs(data);
    let n = dep.n();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "samples: {}", data.sample_count())?;
    writeln!(out, "prior P[s_i = 0]:")?;
    for i in 0..n {
        writeln!(out, "  {:>3}  {:.4}", i + 1, prior.get(i))?;
    }
    for s in 0..2u8 {
        writeln!(out, "P[s_j = 0 | s_i = {s}]  (rows i, columns j)")?;
        write!(out, "{:>5}", "i\\j")?;
        for j in 0..n {
            write!(out, "{:>8}", j + 1)?;
        }
        writeln!(out)?;
        for i in 0..n {
            write!(out, "{:>5}", i + 1)?;
            for j in 0..n {
                write!(out, "{:>8.4}", dep.get(i, j, s, 0))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn bits(v: &[u8]) -> String {
    v.iter().map(|b| if *b == 0 { '0' } else { '1' }).collect()
}

fn write_traces(path: &Path, traces: &[ctrlsense::EpisodeTrace]) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "episode,stopping_time,truncated,correct,reward_sum,min_confidence,estimate,ground_truth,actions"
    )?;
    for (i, t) in traces.iter().enumerate() {
        let actions: Vec<String> = t.steps.iter().map(|s| (s.action + 1).to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            i + 1,
            t.stopping_time,
            t.truncated,
            t.correct,
            t.reward_sum(),
            t.estimate.min_confidence(),
            bits(t.estimate.estimate.as_slice()),
            bits(t.ground_truth.as_slice()),
            actions.join(" ")
        )?;
    }
    w.flush()?;
    Ok(())
}
