mod common;

use std::process::Command;

use cdiff_cli::commands::evaluate::{evaluate_scorer, OracleScorer, Scorer};
use cdiff_cli::commands::{evaluate, report, sweep, train};
use cdiff_cli::config::RunConfig;
use cdiff_cli::pipeline::{load_prepared, prepare, Layout};
use cdiff_core::diffusion::NeighborContext;
use ndarray::Array2;

use common::{load, setup, tiny_spec, SMALL};

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn prepare_writes_a_manifest_of_every_artifact_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(1), SMALL, &[]);
    let layout = prepare(&cfg).unwrap();
    let first = read(&layout.manifest());
    for name in Layout::FILES {
        assert!(first.contains(&format!("artifact\t{name}\t")), "{name} missing from manifest");
    }
    assert_eq!(first.lines().filter(|l| l.starts_with("input\t")).count(), 2);
    prepare(&cfg).unwrap();
    assert_eq!(first, read(&layout.manifest()));
    let leftovers: Vec<_> = std::fs::read_dir(&cfg.output_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec!["prepare"]);
}

#[test]
fn missing_reviews_file_names_the_path_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = setup(dir.path(), &tiny_spec(1), SMALL, &[]);
    cfg.data.reviews = dir.path().join("data/nope.tsv");
    let err = format!("{:#}", prepare(&cfg).unwrap_err());
    assert!(err.contains("nope.tsv"), "{err}");
    assert!(err.contains("stage data"), "{err}");
    assert_eq!(std::fs::read_dir(&cfg.output_dir).unwrap().count(), 0);
}

#[test]
fn stale_or_tampered_artifacts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cfg) = setup(dir.path(), &tiny_spec(1), SMALL, &[]);
    assert!(train::run(&cfg, None).is_err(), "training without prepare must fail");
    let layout = prepare(&cfg).unwrap();
    load_prepared(&cfg).unwrap();

    let changed = load(&path, &["neighbors.k=6"]);
    let err = load_prepared(&changed).err().unwrap().to_string();
    assert!(err.contains("different"), "{err}");

    let pseudo = layout.path("pseudo.bin");
    let mut bytes = std::fs::read(&pseudo).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&pseudo, bytes).unwrap();
    let err = train::run(&cfg, None).err().unwrap().to_string();
    assert!(err.contains("hash mismatch"), "{err}");
    assert!(!cfg.output_dir.join("train").exists());
}

#[test]
fn train_writes_checkpoint_history_and_reloadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(2), SMALL, &[]);
    prepare(&cfg).unwrap();
    let a = train::run(&cfg, Some(3)).unwrap();
    assert!(a.checkpoint.exists());
    assert_eq!(read(&a.dir.join("history.tsv")).lines().count(), 4);
    let echoed = RunConfig::load(&a.dir.join("config.toml"), &[]).unwrap();
    assert_eq!(echoed.train.seed, 3);
    let again = train::run(&echoed, None).unwrap();
    assert_eq!(a.dir, again.dir);
    assert_eq!(a.outcome.history.step_losses, again.outcome.history.step_losses);

    let b = train::run(&cfg, Some(4)).unwrap();
    assert_eq!(b.outcome.history.epochs.len(), 3);
    assert_ne!(a.outcome.history.step_losses, b.outcome.history.step_losses);
}

#[test]
fn own_only_history_equals_plain_denoiser_history() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cfg) = setup(dir.path(), &tiny_spec(3), SMALL, &["model.mix.alpha=1.0", "model.mix.beta=0.0", "model.mix.gamma=0.0"]);
    prepare(&cfg).unwrap();
    let own = train::run(&cfg, None).unwrap();
    let plain = train::run(&load(&path, &["model.aggregation=false"]), Some(0)).unwrap();
    assert_eq!(own.outcome.history.step_losses, plain.outcome.history.step_losses);
}

#[test]
fn patience_keeps_the_best_validation_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(
        dir.path(),
        &tiny_spec(4),
        SMALL,
        &["train.max_epochs=25", "train.patience=2", "train.learning_rate=0.01"],
    );
    prepare(&cfg).unwrap();
    let run = train::run(&cfg, None).unwrap();
    let h = &run.outcome.history;
    let best = h.epochs.iter().map(|r| r.val_recall).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(h.epochs[h.best_epoch - 1].val_recall, best);
    if h.epochs.len() < 25 {
        assert_eq!(h.epochs.len(), h.best_epoch + 2);
    }
    let (saved, meta) =
        cdiff_core::diffusion::load_checkpoint::<f32>(&run.checkpoint, &cdiff_core::aggregate::AttentionRegistry::with_builtins())
            .unwrap();
    assert_eq!(meta.best_epoch, h.best_epoch);
    let rounded: Vec<Vec<f32>> = run.outcome.model.param_slices().iter().map(|s| s.to_vec()).collect();
    assert_eq!(saved.param_slices().iter().map(|s| s.to_vec()).collect::<Vec<_>>(), rounded);
}

#[test]
fn evaluate_reports_every_cutoff_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(5), SMALL, &["train.t_infer=3"]);
    prepare(&cfg).unwrap();
    let run = train::run(&cfg, None).unwrap();
    let a = evaluate::run(&cfg, &run.checkpoint, Some(vec![10, 20, 50, 100])).unwrap();
    let report_a = read(&a.dir.join("metrics.tsv"));
    let per_user_a = read(&a.dir.join("per_user.tsv"));
    let b = evaluate::run(&cfg, &run.checkpoint, None).unwrap();
    assert_eq!(report_a, read(&b.dir.join("metrics.tsv")));
    assert_eq!(per_user_a, read(&b.dir.join("per_user.tsv")));
    for prefix in ["Recall", "NDCG"] {
        let rows: Vec<&str> = report_a.lines().filter(|l| l.starts_with(prefix)).collect();
        assert_eq!(rows.len(), 4, "{report_a}");
    }
}

#[test]
fn oracle_scores_reach_perfect_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(6), SMALL, &[]);
    prepare(&cfg).unwrap();
    let loaded = load_prepared(&cfg).unwrap();
    let ctx = NeighborContext::new(&loaded.split.train, &loaded.pseudo, &loaded.cache);
    let m = evaluate_scorer(&OracleScorer { split: &loaded.split }, &loaded.split, &ctx, &[10, 20, 50, 100]).unwrap();
    assert!(m.n_evaluable > 0);
    for k in [10, 20, 50, 100] {
        assert_eq!(m.recall(k), Some(1.0));
        assert_eq!(m.ndcg(k), Some(1.0));
    }
}

struct Narrow;

impl Scorer for Narrow {
    fn n_items(&self) -> usize {
        3
    }

    fn scores(&self, users: &[usize], _: &NeighborContext) -> Array2<f32> {
        Array2::zeros((users.len(), 3))
    }
}

#[test]
fn mismatched_scorer_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(6), SMALL, &[]);
    prepare(&cfg).unwrap();
    let loaded = load_prepared(&cfg).unwrap();
    let ctx = NeighborContext::new(&loaded.split.train, &loaded.pseudo, &loaded.cache);
    let err = evaluate_scorer(&Narrow, &loaded.split, &ctx, &[20]).unwrap_err().to_string();
    assert!(err.contains("dimension mismatch"), "{err}");
}

#[test]
fn checkpoint_from_another_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(7), SMALL, &[]);
    prepare(&cfg).unwrap();
    let other = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(7);
    spec.n_items = 36;
    let (_, other_cfg) = setup(other.path(), &spec, SMALL, &[]);
    prepare(&other_cfg).unwrap();
    let foreign = train::run(&other_cfg, None).unwrap();
    let err = format!("{:#}", evaluate::run(&cfg, &foreign.checkpoint, None).err().unwrap());
    assert!(err.contains("dimension mismatch"), "{err}");
}

#[test]
fn sweep_rows_skips_and_best_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(8), SMALL, &["train.max_epochs=1"]);
    let grid = sweep::GridSpec {
        mixtures: vec![[0.5, 0.3, 0.2], [0.5, 0.5, 0.5], [0.5, 0.3, 0.2]],
        k: vec![2, 4, 8],
        ..Default::default()
    };
    let run = sweep::run(&cfg, &grid).unwrap();
    assert_eq!(run.rows.len(), 6);
    assert_eq!(run.rows.iter().filter(|r| r.result.is_ok()).count(), 3);
    assert_eq!(run.rows.iter().filter(|r| r.best).count(), 1);
    let table = read(&run.dir.join("results.tsv"));
    let widths: Vec<usize> = table.lines().map(|l| l.split('\t').count()).collect();
    assert!(widths.iter().all(|&w| w == widths[0]), "ragged table:\n{table}");
    assert!(table.contains("skipped: alpha+beta+gamma = 1.5"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("0\t+real&pseudo\t0.5\t0.3\t0.2\t2\t40\tok")), "{table}");
}

#[test]
fn report_consolidates_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), &tiny_spec(9), SMALL, &["train.max_epochs=1"]);
    prepare(&cfg).unwrap();
    for seed in [0, 1] {
        let run = train::run(&cfg, Some(seed)).unwrap();
        evaluate::run(&cfg, &run.checkpoint, None).unwrap();
    }
    let text = report::run(&cfg.output_dir).unwrap();
    assert!(text.contains("train/seed-mean"), "{text}");
    assert!(text.contains("Recall@20"), "{text}");
    let csv = read(&cfg.output_dir.join("report.csv"));
    assert!(csv.starts_with("source,metric,value,n\n"));
    assert!(csv.lines().any(|l| l.starts_with("\"train/seed-1\",best_epoch,")), "{csv}");
    assert!(report::run(&dir.path().join("missing")).is_err());
}

#[test]
fn binary_exit_codes_and_one_line_errors() {
    let bin = env!("CARGO_BIN_EXE_cdiff");
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "n_users = 40\nn_items = 30\nn_clusters = 2\ninteractions_per_user = 12\nvocab_size = 60\nrho = 0.9\nseed = 1\n",
    )
    .unwrap();
    let out = Command::new(bin).args(["synth", "--spec"]).arg(&spec).arg("--out").arg(dir.path().join("data")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/ratings.tsv").exists());

    std::fs::write(dir.path().join("config.toml"), SMALL).unwrap();
    let out = Command::new(bin)
        .env("CDIFF_THREADS", "1")
        .args(["prepare", "--config"])
        .arg(dir.path().join("config.toml"))
        .args(["--set", "neighbors.k=3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(bin)
        .env("RUST_LOG", "off")
        .args(["train", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success(), "k changed since prepare, training must refuse");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "), "{stderr}");

    let out = Command::new(bin).env("RUST_LOG", "off").args(["train", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.toml"));
}
