mod common;

use std::fs;

use infoplane::harness::{
    capture_activations, csv_string, emit_csv, read_csv, read_manifest, run_on, svg_infoplane, sweep_on,
    ExperimentConfig, MiEndpoint, SweepGrid, TrajectoryRecord, CSV_HEADER,
};
use infoplane::mnist::{test_error, Dataset};
use infoplane::nn::{LayerKind, NodeId};
use infoplane::topology::ArchitectureKind;

fn small_config(kind: ArchitectureKind, depth: usize, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        architecture: kind,
        width: 4,
        depth,
        epochs,
        seed: 7,
        mi_subsample: 60,
        timing: false,
        ..Default::default()
    }
}

fn data() -> (Dataset, Dataset) {
    (common::synthetic_dataset(300, 1), common::synthetic_dataset(120, 2))
}

#[test]
fn trajectory_has_epoch_zero_and_one_step_per_epoch() {
    let (train, test) = data();
    let (t, _) = run_on(&small_config(ArchitectureKind::PlainMlp, 3, 6), &train, &test).unwrap();
    assert!(!t.diverged);
    assert_eq!(t.records.len(), 7);
    assert_eq!(t.optimizer_steps, 6);
    for (i, r) in t.records.iter().enumerate() {
        assert_eq!(r.epoch, i);
        assert!(r.mi_nats.is_finite() && r.mi_bits.is_finite());
        assert!((r.mi_bits - r.mi_nats / std::f64::consts::LN_2).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.test_error));
        assert_eq!(r.wall_ms, 0);
    }
    assert!(t.records[6].train_loss < t.records[0].train_loss);
}

#[test]
fn zero_epochs_is_initialization_only() {
    let (train, test) = data();
    let (t, _) = run_on(&small_config(ArchitectureKind::Shortcut, 3, 0), &train, &test).unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.optimizer_steps, 0);
}

#[test]
fn training_reduces_error_on_learnable_data() {
    let (train, test) = data();
    let mut c = small_config(ArchitectureKind::PlainMlp, 3, 60);
    c.learning_rate = 1e-2;
    let (t, _) = run_on(&c, &train, &test).unwrap();
    let first = t.records[0].test_error;
    let last = t.records.last().unwrap().test_error;
    assert!(last < first, "{first} -> {last}");
    assert!(last < 0.3, "{last}");
}

#[test]
fn identical_configs_give_identical_csv() {
    let (train, test) = data();
    let c = small_config(ArchitectureKind::ShortcutResidual, 5, 4);
    let a = csv_string(&run_on(&c, &train, &test).unwrap().0.records);
    let b = csv_string(&run_on(&c, &train, &test).unwrap().0.records);
    assert_eq!(a, b);
    let other = ExperimentConfig { seed: 8, ..c };
    assert_ne!(a, csv_string(&run_on(&other, &train, &test).unwrap().0.records));
}

#[test]
fn capture_at_logits_reproduces_test_error() {
    let (train, test) = data();
    let (t, state) = run_on(&small_config(ArchitectureKind::Residual, 5, 3), &train, &test).unwrap();
    let logits_node = state.architecture.landmarks.logits;
    let captured = capture_activations(&state.architecture.topology, &state.params, &test, &[logits_node]).unwrap();
    let err = test_error(captured[0].samples(), &test.labels).unwrap();
    assert_eq!(err, t.records.last().unwrap().test_error);
}

#[test]
fn tanh_activations_stay_in_open_interval() {
    let (train, test) = data();
    let (_, state) = run_on(&small_config(ArchitectureKind::PlainMlp, 4, 3), &train, &test).unwrap();
    let topo = &state.architecture.topology;
    let tanh_nodes: Vec<NodeId> = topo
        .nodes()
        .iter()
        .filter(|n| n.kind == LayerKind::Tanh)
        .map(|n| n.id)
        .collect();
    assert_eq!(tanh_nodes, state.architecture.landmarks.hidden);
    for e in capture_activations(topo, &state.params, &test, &tanh_nodes).unwrap() {
        assert!(e.samples().as_slice().iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn capture_rejects_unknown_nodes() {
    let (train, test) = data();
    let (_, state) = run_on(&small_config(ArchitectureKind::PlainMlp, 3, 0), &train, &test).unwrap();
    let topo = &state.architecture.topology;
    assert!(capture_activations(topo, &state.params, &test, &[NodeId(10_000)]).is_err());
    assert!(capture_activations(topo, &state.params, &test, &[topo.sink().id]).is_err());
}

#[test]
fn mi_rows_depend_only_on_seed() {
    let (train, test) = data();
    let c = small_config(ArchitectureKind::PlainMlp, 3, 0);
    let (_, a) = run_on(&c, &train, &test).unwrap();
    let (_, b) = run_on(&ExperimentConfig { architecture: ArchitectureKind::Shortcut, ..c.clone() }, &train, &test).unwrap();
    let (_, other) = run_on(&ExperimentConfig { seed: 99, ..c }, &train, &test).unwrap();
    assert_eq!(a.mi_rows.len(), 60);
    assert!(a.mi_rows.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a.mi_rows, b.mi_rows);
    assert_ne!(a.mi_rows, other.mi_rows);
}

#[test]
fn shortcut_raises_initial_mi_only_through_the_sum() {
    let (train, test) = data();
    for seed in [1, 2, 3] {
        let mut plain = small_config(ArchitectureKind::PlainMlp, 6, 0);
        plain.width = 8;
        plain.seed = seed;
        let shortcut = ExperimentConfig { architecture: ArchitectureKind::Shortcut, ..plain.clone() };
        let mi = |c: &ExperimentConfig| run_on(c, &train, &test).unwrap().0.records[0].mi_nats;
        assert!(mi(&shortcut) > mi(&plain), "seed {seed}");
        // the hidden stack is identical, so measured at the last hidden layer
        // the two networks agree exactly
        let at_hidden = |c: &ExperimentConfig| ExperimentConfig { mi_endpoint: MiEndpoint::LastHidden, ..c.clone() };
        assert_eq!(mi(&at_hidden(&shortcut)), mi(&at_hidden(&plain)));
    }
}

#[test]
fn non_finite_input_truncates_with_marker() {
    let (mut train, test) = data();
    train.images.set(3, 100, f64::NAN);
    let (t, _) = run_on(&small_config(ArchitectureKind::PlainMlp, 3, 5), &train, &test).unwrap();
    assert!(t.diverged);
    assert_eq!(t.records.len(), 1);
    assert!(t.records[0].is_divergence_marker());
    assert!(t.records[0].test_error.is_nan());
}

#[test]
fn huge_learning_rate_diverges_after_a_step() {
    let (train, test) = data();
    let mut c = small_config(ArchitectureKind::PlainMlp, 3, 5);
    c.learning_rate = 1e308;
    let (t, _) = run_on(&c, &train, &test).unwrap();
    assert!(t.diverged);
    assert!(t.records.len() >= 2);
    assert!(t.records[..t.records.len() - 1].iter().all(|r| !r.is_divergence_marker()));
    assert!(t.records.last().unwrap().is_divergence_marker());
}

#[test]
fn oversized_subsample_is_a_config_error() {
    let (train, test) = data();
    let mut c = small_config(ArchitectureKind::PlainMlp, 3, 1);
    c.mi_subsample = 500;
    assert!(matches!(run_on(&c, &train, &test), Err(infoplane::Error::Config(_))));
}

#[test]
fn zero_subsample_uses_every_validation_row() {
    let (train, test) = data();
    let mut c = small_config(ArchitectureKind::PlainMlp, 3, 0);
    c.mi_subsample = 0;
    let (_, state) = run_on(&c, &train, &test).unwrap();
    assert_eq!(state.mi_rows, (0..test.len()).collect::<Vec<_>>());
}

fn sample_records() -> Vec<TrajectoryRecord> {
    vec![
        TrajectoryRecord { epoch: 0, train_loss: 2.302585092994046, test_error: 0.9, mi_nats: 0.1 + 0.2, mi_bits: 1.0 / 3.0, wall_ms: 12 },
        TrajectoryRecord { epoch: 1, train_loss: 1e-300, test_error: 0.0, mi_nats: -0.0123456789012345678, mi_bits: 5e-324, wall_ms: 40 },
        TrajectoryRecord::divergence_marker(2, f64::INFINITY, 41),
    ]
}

#[test]
fn csv_header_and_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    emit_csv(&sample_records()[..1], &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(CSV_HEADER, "epoch,train_loss,test_error,mi_nats,mi_bits,wall_ms");
    assert!(emit_csv(&[], &path).is_err());
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/run.csv");
    let records = sample_records();
    emit_csv(&records, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.wall_ms, b.wall_ms);
        for (x, y) in [(a.train_loss, b.train_loss), (a.test_error, b.test_error), (a.mi_nats, b.mi_nats), (a.mi_bits, b.mi_bits)] {
            assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()), "{x} vs {y}");
        }
    }
}

#[test]
fn csv_to_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(emit_csv(&sample_records(), &blocker.join("run.csv")).is_err());
}

#[test]
fn svg_is_xml_with_one_marker_per_finite_record() {
    let runs = vec![
        ("a".to_string(), sample_records()[..2].to_vec()),
        ("b & <c>".to_string(), vec![TrajectoryRecord { epoch: 0, train_loss: 1.0, test_error: 0.5, mi_nats: 1.0, mi_bits: 1.4, wall_ms: 0 }]),
    ];
    let svg = svg_infoplane(&runs).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let markers = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle") && n.attribute("class") == Some("marker"))
        .count();
    assert_eq!(markers, 3);
    let runs_g = doc.descendants().filter(|n| n.attribute("class") == Some("run")).count();
    assert_eq!(runs_g, 2);
    let arrows = doc.descendants().filter(|n| n.attribute("class") == Some("direction")).count();
    assert_eq!(arrows, 1);
    assert!(svg_infoplane(&[("x".into(), sample_records()[2..].to_vec())]).is_err());
}

fn sweep_grid(epochs: usize) -> SweepGrid {
    SweepGrid {
        base: small_config(ArchitectureKind::PlainMlp, 3, epochs),
        architectures: vec![ArchitectureKind::PlainMlp, ArchitectureKind::Shortcut],
        widths: vec![4],
        depths: vec![3, 4],
        seeds: vec![0, 1, 2],
    }
}

#[test]
fn sweep_writes_every_run_and_resumes() {
    let (train, test) = data();
    let dir = tempfile::tempdir().unwrap();
    let grid = sweep_grid(2);
    let report = sweep_on(&grid, dir.path(), 3, &train, &test).unwrap();
    assert_eq!(report.executed, 12);
    assert!(report.failures.is_empty());
    let csvs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 13); // 12 runs plus the manifest
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.len(), 12);
    let configs = grid.expand(dir.path()).unwrap();
    for c in &configs {
        let entry = manifest.iter().find(|e| e.hash == c.hash()).unwrap();
        assert_eq!(entry.status, "ok");
        assert_eq!(dir.path().join(&entry.csv), c.out);
        assert_eq!(read_csv(&c.out).unwrap().len(), 3);
    }

    // simulate a sweep killed before the last three runs were recorded
    let text = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    let kept: Vec<&str> = text.lines().take(1 + 9).collect();
    fs::write(dir.path().join("manifest.csv"), kept.join("\n") + "\n").unwrap();
    let again = sweep_on(&grid, dir.path(), 2, &train, &test).unwrap();
    assert_eq!(again.executed, 3);
    assert_eq!(again.skipped, 9);
    assert_eq!(read_manifest(dir.path()).unwrap().len(), 12);

    let idle = sweep_on(&grid, dir.path(), 2, &train, &test).unwrap();
    assert_eq!((idle.executed, idle.skipped), (0, 12));
}

#[test]
fn sweep_records_failures_and_continues() {
    let (train, test) = data();
    let dir = tempfile::tempdir().unwrap();
    let mut grid = sweep_grid(1);
    grid.base.mi_subsample = 1000; // larger than the validation set
    let report = sweep_on(&grid, dir.path(), 2, &train, &test).unwrap();
    assert_eq!(report.executed, 12);
    assert_eq!(report.failures.len(), 12);
    let manifest = read_manifest(dir.path()).unwrap();
    assert!(manifest.iter().all(|e| e.status == "failed" && !e.detail.is_empty()));
    // failed runs are retried
    assert_eq!(sweep_on(&grid, dir.path(), 2, &train, &test).unwrap().executed, 12);
}

#[test]
fn config_hash_is_fixed() {
    // canonical serialization of the defaults; a change here invalidates existing manifests
    assert_eq!(ExperimentConfig::default().hash(), "2d22857380b2261c7a17f78247b7c20edeaea1441371f00f446bc0edd05dd7a0");
}
