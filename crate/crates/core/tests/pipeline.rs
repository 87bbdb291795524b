//! End-to-end pipeline: artifact round-trips, prerequisite errors, and
//! whole-run determinism on a small configuration.

use thermens_core::pipeline::{run_command, ExperimentConfig};
use thermens_core::Error;

fn tiny_config(dir: &std::path::Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.out_dir = dir.to_path_buf();
    cfg.simulate.rooms = 4;
    cfg.simulate.days = 12;
    cfg.simulate.train_fraction = 0.75;
    cfg.simulate.test_fraction = 0.25;
    cfg.train.d_h = 16;
    cfg.train.cfg.hidden = 16;
    cfg.train.cfg.lambda = 0.5;
    cfg.train.cfg.stage1_epochs = 1;
    cfg.train.cfg.stage2_epochs = 1;
    cfg.train.cfg.steps_per_epoch = 64;
    cfg.train.cfg.batch_size = 16;
    cfg.baselines.static_search_budget = 50;
    cfg.mpc.days = 1;
    cfg.mpc.cfg.horizon = 2;
    cfg
}

#[test]
fn full_pipeline_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 42);
    for cmd in ["simulate", "fit", "train", "evaluate", "mpc-run", "report"] {
        run_command(&cfg, cmd).unwrap_or_else(|e| panic!("{cmd} failed: {e}"));
    }
    for artifact in [
        "data/room_000.csv",
        "data/room_000.meta.json",
        "data/split.json",
        "models/library.json",
        "train/agents.json",
        "train/agents_meta.json",
        "train/training_log.csv",
        "train/single_tier.json",
        "train/single_tier_log.csv",
        "eval/records_hrl.csv",
        "eval/records_heuristic.csv",
        "eval/records_equal.csv",
        "eval/records_static.csv",
        "eval/records_best_single.csv",
        "eval/records_single_tier.csv",
        "eval/metrics.json",
        "eval/timings.json",
        "mpc/closedloop_hrl.csv",
        "mpc/closedloop_single.csv",
        "mpc/closedloop_thermostat.csv",
        "mpc/summary.json",
        "report/report.csv",
        "report/report.txt",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing artifact {artifact}");
    }

    // Every emitted artifact reloads through the module that produced it.
    let split: thermens_core::pipeline::RoomSplit =
        serde_json::from_reader(std::fs::File::open(dir.path().join("data/split.json")).unwrap()).unwrap();
    assert_eq!(split.train.len(), 3);
    assert_eq!(split.test.len(), 1);
    let lib = thermens_core::models::ModelLibrary::load(dir.path().join("models/library.json")).unwrap();
    assert_eq!(lib.len(), 6);
    let agents = thermens_core::agents::HrlAgents::load(
        dir.path().join("train/agents.json"),
        dir.path().join("train/agents_meta.json"),
    )
    .unwrap();
    assert_eq!(agents.encoder.n_models, 6);
    let report = thermens_core::metrics::MetricsReport::load(dir.path().join("eval/metrics.json")).unwrap();
    assert!(report.methods.contains_key("hrl"));
    assert!(report.methods.contains_key("customized_mlr"));
    assert!(report.methods["hrl"].improvement_pct.contains_key("customized_dict"));
    let records =
        thermens_core::engine::read_records_csv(dir.path().join("eval/records_hrl.csv")).unwrap();
    assert_eq!(records.len(), report.methods["hrl"].steps);
}

#[test]
fn evaluate_without_train_names_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 7);
    run_command(&cfg, "simulate").unwrap();
    run_command(&cfg, "fit").unwrap();
    match run_command(&cfg, "evaluate") {
        Err(Error::MissingArtifact { path, produced_by }) => {
            assert!(path.ends_with("agents.json"), "unexpected path {path:?}");
            assert_eq!(produced_by, "train");
        }
        other => panic!("expected missing-artifact error, got {other:?}"),
    }
}

#[test]
fn fit_without_simulate_names_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 7);
    match run_command(&cfg, "fit") {
        Err(Error::MissingArtifact { produced_by, .. }) => assert_eq!(produced_by, "simulate"),
        other => panic!("expected missing-artifact error, got {other:?}"),
    }
}

#[test]
fn invalid_config_lists_offending_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 7);
    cfg.simulate.train_fraction = 0.9; // fractions no longer sum to 1
    cfg.simulate.sampling_minutes = 30;
    match run_command(&cfg, "simulate") {
        Err(Error::Config(msg)) => {
            assert!(msg.contains("train_fraction"), "{msg}");
            assert!(msg.contains("sampling_minutes"), "{msg}");
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn same_seed_reproduces_metrics_bit_identically() {
    let run = |dir: &std::path::Path| -> Vec<u8> {
        let cfg = tiny_config(dir, 99);
        for cmd in ["simulate", "fit", "train", "evaluate"] {
            run_command(&cfg, cmd).unwrap();
        }
        std::fs::read(dir.join("eval/metrics.json")).unwrap()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run(dir_a.path());
    let b = run(dir_b.path());
    assert_eq!(a, b, "metrics reports differ between identical runs");
}

#[test]
fn toml_roundtrip_of_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5);
    let text = toml::to_string_pretty(&cfg).unwrap();
    let back: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg, back);

    // A config file with defaults only.
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, format!("seed = 3\nout_dir = {:?}\n", dir.path().join("out"))).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded.seed, 3);
    assert_eq!(loaded.simulate.rooms, 25);
}
