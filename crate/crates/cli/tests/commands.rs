use hbsel::{cmd_compare, cmd_gen_dataset, cmd_train, CliError, RunContext, TrainArgs};
use hbsel_core::ml::{SelectorModel, TrainingSet};
use hbsel_core::SystemConfig;
use std::path::{Path, PathBuf};
use std::process::Command;

fn tiny_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn tiny() -> SystemConfig {
    SystemConfig::load(tiny_path()).unwrap()
}

fn context(config: SystemConfig, out: &Path, episodes: usize) -> RunContext {
    RunContext {
        config,
        out: out.to_path_buf(),
        jobs: 1,
        episodes: Some(episodes),
    }
}

fn hbsel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hbsel"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn simulate_twice_gives_identical_outputs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let config = tiny_path();
    for d in &dirs {
        let out = hbsel(&[
            "--config",
            config.to_str().unwrap(),
            "--episodes",
            "3",
            "--out",
            d.path().to_str().unwrap(),
            "simulate",
            "--scheduler",
            "adaptive",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "summary.csv",
        "cdf_adaptive.csv",
        "episodes.csv",
        "manifest.json",
    ] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, jobs) in dirs.iter().zip([1, 3]) {
        let mut ctx = context(tiny(), d.path(), 5);
        ctx.jobs = jobs;
        cmd_compare(
            &ctx,
            &["greedy".into(), "top1".into()],
            &[],
            false,
            "compare",
        )
        .unwrap();
    }
    for file in [
        "summary.csv",
        "episodes.csv",
        "paired_wins.csv",
        "cdf_greedy.csv",
    ] {
        assert_eq!(
            std::fs::read(dirs[0].path().join(file)).unwrap(),
            std::fs::read(dirs[1].path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn exhaustive_is_refused_at_twenty_users() {
    let d = tempfile::tempdir().unwrap();
    let out = hbsel(&[
        "--episodes",
        "1",
        "--out",
        d.path().to_str().unwrap(),
        "simulate",
        "--scheduler",
        "exhaustive",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the cap"));

    let ctx = context(tiny(), d.path(), 1);
    cmd_compare(&ctx, &["exhaustive".into()], &[], false, "simulate").unwrap();
}

#[test]
fn ml_without_model_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(tiny(), d.path(), 1);
    let err = cmd_compare(&ctx, &["ml".into()], &[], false, "simulate").unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(err.exit_code(), 2);

    let config = tiny_path();
    let out = hbsel(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        d.path().to_str().unwrap(),
        "simulate",
        "--scheduler",
        "ml",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scheduler_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(tiny(), d.path(), 1);
    assert!(matches!(
        cmd_compare(&ctx, &["best".into()], &[], false, "simulate"),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn dataset_has_one_row_per_slot() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let steps = cfg.steps;
    let ctx = context(cfg, d.path(), 3);
    let ds = cmd_gen_dataset(&ctx, Some("W+C(D)")).unwrap();
    assert_eq!(ds.len(), 3 * steps);
    let back = TrainingSet::load(d.path().join("dataset.bin")).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.mode.to_string(), "W+C(D)");
    assert!(d.path().join("manifest.json").exists());
}

fn short_config() -> SystemConfig {
    let mut cfg = tiny();
    cfg.steps = 5;
    cfg.n_s = 5;
    cfg
}

#[test]
fn tiny_training_runs_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(short_config(), d.path(), 2);
    let args = TrainArgs {
        epochs: Some(2),
        ..Default::default()
    };
    let outcome = cmd_train(&ctx, &args).unwrap();
    assert_eq!(outcome.report.epochs.len(), 2);
    assert!(outcome
        .report
        .epochs
        .iter()
        .all(|e| e.train_loss.is_finite()));
    let curve = std::fs::read_to_string(d.path().join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert_eq!(
        curve.lines().next().unwrap(),
        "epoch,train_loss,holdout_loss,holdout_accuracy"
    );
    let model = SelectorModel::load(&outcome.model_path).unwrap();
    assert_eq!(model, outcome.model);

    let reports = cmd_compare(
        &ctx,
        &["ml".into()],
        std::slice::from_ref(&outcome.model_path),
        true,
        "evaluate",
    )
    .unwrap();
    assert_eq!(reports.len(), 1);
    assert!(d.path().join("perslot_ml.csv").exists());
    let manifest = std::fs::read_to_string(d.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("sha256"));
}

#[test]
fn resuming_starts_from_a_lower_loss() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(short_config(), d.path(), 4);
    let dataset = cmd_gen_dataset(&ctx, None)
        .map(|_| d.path().join("dataset.bin"))
        .unwrap();
    let warm = d.path().join("warm.bin");
    cmd_train(
        &ctx,
        &TrainArgs {
            dataset: Some(dataset.clone()),
            model: Some(warm.clone()),
            epochs: Some(8),
            ..Default::default()
        },
    )
    .unwrap();
    let cold = cmd_train(
        &ctx,
        &TrainArgs {
            dataset: Some(dataset.clone()),
            model: Some(d.path().join("cold.bin")),
            epochs: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let resumed = cmd_train(
        &ctx,
        &TrainArgs {
            dataset: Some(dataset),
            model: Some(d.path().join("resumed.bin")),
            resume: Some(warm),
            epochs: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let (c, r) = (
        cold.report.epochs[0].train_loss,
        resumed.report.epochs[0].train_loss,
    );
    assert!(r < c, "resumed {r} vs cold {c}");
}

#[test]
fn single_scheduler_compare_has_one_row() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(tiny(), d.path(), 2);
    let reports = cmd_compare(&ctx, &["topN".into()], &[], false, "compare").unwrap();
    assert_eq!(reports.len(), 1);
    let summary = std::fs::read_to_string(d.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.starts_with("scheduler,episodes,pf_mean_nats,pf_std_nats,geo_mean_bps_hz"));
    assert!(!d.path().join("paired_wins.csv").exists());
}

#[test]
fn greedy_beats_top1_on_paired_episodes() {
    let d = tempfile::tempdir().unwrap();
    let ctx = context(tiny(), d.path(), 60);
    let reports = cmd_compare(
        &ctx,
        &["greedy".into(), "top1".into()],
        &[],
        false,
        "compare",
    )
    .unwrap();
    let (g, t) = (&reports[0].rows, &reports[1].rows);
    let wins = g
        .iter()
        .zip(t)
        .filter(|(a, b)| a.pf_nats >= b.pf_nats)
        .count();
    assert!(
        wins * 100 >= 95 * g.len(),
        "greedy >= top1 on {wins}/{}",
        g.len()
    );
    let paired = std::fs::read_to_string(d.path().join("paired_wins.csv")).unwrap();
    assert!(paired.starts_with("scheduler,versus,episodes,win_fraction"));
}
