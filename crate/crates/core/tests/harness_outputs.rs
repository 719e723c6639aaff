use skyshield_core::episode::Mode;
use skyshield_core::harness::{self, EpisodeRow, ExperimentConfig, HarnessError, TrajectoryLine};
use skyshield_core::planner::FaultConfig;
use std::path::Path;

fn small(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![1, 2],
        episodes: 3,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn read_rows(path: &Path) -> Vec<EpisodeRow> {
    csv::Reader::from_path(path).unwrap().deserialize().map(Result::unwrap).collect()
}

fn read_lines(path: &Path) -> Vec<TrajectoryLine> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn outputs_round_trip_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let b = harness::run_experiment(&small(dir.path())).unwrap();
    let rows = read_rows(&dir.path().join("episodes.csv"));
    assert_eq!(rows, b.rows);
    let keys: Vec<(u64, u64)> = rows.iter().map(|r| (r.seed, r.episode)).collect();
    assert_eq!(keys, vec![(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]);
    let summary: harness::Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, b.summary);
    let shares: f64 = summary.hallucinations.shares.iter().map(|s| s.1).sum();
    assert!(summary.hallucinations.total == 0 || (shares - 1.0).abs() < 1e-12);
}

#[test]
fn success_rate_rebuilds_from_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::PlannerOnly, Mode::Safeguarded] {
        let cfg = ExperimentConfig {
            mode,
            output_dir: dir.path().join(mode.label()),
            ..small(dir.path())
        };
        harness::run_experiment(&cfg).unwrap();
        let rows = read_rows(&cfg.output_dir.join("episodes.csv"));
        let lines = read_lines(&cfg.output_dir.join("trajectory.jsonl"));
        let rebuilt = harness::success_from_trajectory(&rows, &lines);
        for (row, s) in rows.iter().zip(rebuilt) {
            assert_eq!(row.success_rate, s, "{mode:?} seed {} episode {}", row.seed, row.episode);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str| {
        ["episodes.csv", "summary.json", "trajectory.jsonl"].map(|f| std::fs::read(dir.path().join(sub).join(f)).unwrap())
    };
    for sub in ["a", "b"] {
        let cfg = ExperimentConfig {
            output_dir: dir.path().join(sub),
            ..small(dir.path())
        };
        harness::run_experiment(&cfg).unwrap();
    }
    assert_eq!(read("a"), read("b"));
}

#[test]
fn compare_pairs_identical_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let cmp = harness::compare(&small(dir.path())).unwrap();
    assert!(cmp.layouts_match);
    assert_eq!(cmp.pairs.len(), 6);
    assert!(cmp.pairs.iter().all(|p| !p.layout_hash.starts_with("MISMATCH")));
    assert!(dir.path().join("compare.json").exists());
    assert!(dir.path().join("planner_only/episodes.csv").exists());
    assert!(dir.path().join("safeguarded/summary.json").exists());
    assert!(cmp.safeguarded.success_rate.mean >= cmp.planner_only.success_rate.mean);
}

#[test]
fn faults_off_needs_no_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        faults: FaultConfig::off(),
        episodes: 10,
        record_trajectory: false,
        ..small(dir.path())
    };
    let b = harness::run_experiment(&cfg).unwrap();
    assert_eq!(b.summary.success_rate.mean, 1.0);
    assert_eq!(b.summary.overrides.mean, 0.0);
    assert!(!dir.path().join("trajectory.jsonl").exists());
}

#[test]
fn planner_only_strands_someone_in_twenty_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        mode: Mode::PlannerOnly,
        seeds: (0..20).collect(),
        episodes: 1,
        record_trajectory: false,
        ..small(dir.path())
    };
    let b = harness::run_episodes(&cfg).unwrap();
    assert!(b.rows.iter().any(|r| r.success_rate < 1.0));
}

#[test]
fn errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let e = ExperimentConfig::load(&missing).unwrap_err();
    assert!(e.to_string().contains("nope.toml"), "{e}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "episodes = \"many\"").unwrap();
    let e = ExperimentConfig::load(&bad).unwrap_err();
    assert!(matches!(e, HarnessError::Config { .. }));
    assert!(e.to_string().contains("bad.toml"), "{e}");

    // output path blocked by a regular file
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let cfg = ExperimentConfig {
        output_dir: blocker.join("out"),
        episodes: 1,
        ..small(dir.path())
    };
    let e = harness::run_experiment(&cfg).unwrap_err();
    assert!(e.to_string().contains("blocker"), "{e}");
}

#[test]
fn training_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        episodes: 5,
        seeds: vec![7],
        ..small(dir.path())
    };
    let (agent, log) = harness::train_experiment(&cfg).unwrap();
    assert_eq!(log.rows.len(), 5);
    assert!(agent.lagrange.lambda.iter().all(|&l| l >= 0.0));
    let csv_rows = csv::Reader::from_path(dir.path().join("training.csv")).unwrap().records().count();
    assert_eq!(csv_rows, 5);
    let f = std::fs::File::open(dir.path().join("agent.ckpt")).unwrap();
    let back = skyshield_core::rl::Agent::read_checkpoint(cfg.rl.clone(), f).unwrap();
    assert_eq!(back.policy, agent.policy);

    // the checkpoint can drive the override layer
    let run = ExperimentConfig {
        policy_checkpoint: Some(dir.path().join("agent.ckpt")),
        output_dir: dir.path().join("with_policy"),
        episodes: 2,
        ..cfg
    };
    let b = harness::run_experiment(&run).unwrap();
    assert!(b.rows.iter().all(|r| r.executed_violations == 0));
}
