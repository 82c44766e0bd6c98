use std::path::Path;
use std::process::{Command, Output};

fn ctrlsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlsense"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ctrlsense")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, threshold: f64) -> String {
    let path = dir.join("config.json");
    let json = format!(
        r#"{{
  "n_processes": 5,
  "normal_probability": 0.8,
  "correlation": 0.6,
  "flip_probability": 0.2,
  "pair_structure": [[1, 2], [3, 4]],
  "agent": {{ "discount": 0.9, "confidence_threshold": {threshold}, "actor_lr": 0.0005, "critic_lr": 0.005 }},
  "seed": 4,
  "training_samples": 5000,
  "train_episodes": 20,
  "eval_episodes": 50
}}"#
    );
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&ctrlsense(&["--help"])), 0);
    assert_eq!(code(&ctrlsense(&["--version"])), 0);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(code(&ctrlsense(&["frobnicate"])), 1);
    let out = ctrlsense(&["train", "--algorithm", "greedy", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown algorithm"));
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.5);
    let out = ctrlsense(&["inspect", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("confidence_threshold"), "{}", stderr(&out));

    let missing = dir.path().join("absent.json");
    assert_eq!(code(&ctrlsense(&["inspect", "--config", missing.to_str().unwrap()])), 1);
}

#[test]
fn gen_data_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.95);
    let out_dir = dir.path().join("data");
    let out = ctrlsense(&[
        "gen-data",
        "--config",
        &cfg,
        "--samples",
        "300",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dataset = out_dir.join("dataset.txt");
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert_eq!(text.lines().count(), 300);
    assert!(text.lines().all(|l| l.split(' ').count() == 5));

    let out = ctrlsense(&["inspect", "--config", &cfg, "--data", dataset.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    assert!(report.contains("samples: 300"));
    assert!(report.contains("P[s_j = 0 | s_i = 1]"));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.9);
    let run = dir.path().join("run");
    let out = ctrlsense(&[
        "train",
        "--config",
        &cfg,
        "--episodes",
        "15",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let curve = std::fs::read_to_string(run.join("learning_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("episode,reward_sum,stopping_time,correct"));
    assert_eq!(lines.count(), 15);

    let ckpt = run.join("checkpoint.json");
    let eval_dir = dir.path().join("eval");
    let out = ctrlsense(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--episodes",
        "30",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("30 episodes"));
    let traces = std::fs::read_to_string(eval_dir.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 31);
    assert!(traces.starts_with("episode,stopping_time,truncated,correct"));
}

#[test]
fn corrupt_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("checkpoint.json");
    std::fs::write(&ckpt, "{\"format_version\": 99}").unwrap();
    let out = ctrlsense(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.95);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out_dir = blocker.join("sub");
    let out = ctrlsense(&[
        "gen-data",
        "--config",
        &cfg,
        "--samples",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.95);
    let spec = dir.path().join("sweep.json");
    std::fs::write(
        &spec,
        r#"{"rho_grid": [0.0, 1.0], "threshold_grid": [0.9], "algorithms": ["proposed", "random"],
            "episodes_per_cell": 40, "master_seed": 8}"#,
    )
    .unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = ctrlsense(&[
            "sweep",
            "--config",
            &cfg,
            "--sweep",
            spec.to_str().unwrap(),
            "--train-episodes",
            "10",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let results = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
    assert_eq!(
        results.lines().next().unwrap(),
        "algorithm,rho,pi_upper,accuracy,mean_stopping_time,stderr,truncation_rate,latency_s"
    );
    assert_eq!(results, std::fs::read_to_string(b.join("results.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("results_long.csv")).unwrap(),
        std::fs::read(b.join("results_long.csv")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"], 4);
    assert_eq!(manifest["master_seed"], 8);
}

#[test]
fn latency_reports_each_algorithm() {
    let out = ctrlsense(&["latency", "--algorithm", "proposed,naive", "--decisions", "200"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("proposed") && text.contains("naive") && text.contains("median"));
}
