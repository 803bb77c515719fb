use std::path::Path;

use regen_tad::backbone::BackboneConfig;
use regen_tad::data_gen::{Dgp, Mechanism, Placement};
use regen_tad::decision::{flag_count, DecisionMode};
use regen_tad::eval::experiment::{
    horizon_sweep_spec, run_experiment_to_dir, CellStatus, ExperimentManifest, SuiteTable,
};
use regen_tad::eval::{run_experiment, run_experiment_with, CancelToken, Cell, ExperimentSpec, Variant, ENSEMBLE};
use regen_tad::pipeline::PipelineConfig;

fn small() -> PipelineConfig {
    PipelineConfig {
        l: 12,
        h: 3,
        backbone: BackboneConfig {
            conv_filters: 4,
            embed_dim: 8,
            heads: 2,
            ff_width: 8,
            lstm_hidden: 3,
            latent_dim: 4,
            refine_hidden: 8,
            epochs: 2,
            ..BackboneConfig::new(12, 3, 1)
        },
        knn_k: 5,
        purify_enabled: false,
        ..PipelineConfig::default()
    }
}

fn spec(cells: Vec<Cell>, replications: usize) -> ExperimentSpec {
    ExperimentSpec {
        name: "test".into(),
        t: 160,
        p: 3,
        cells,
        replications,
        master_seed: 42,
        pipeline: small(),
        variants: vec![Variant::single("s2-only", 1)],
    }
}

fn mean_shift() -> Cell {
    Cell::injected(Dgp::IidGaussian, Mechanism::MeanShift, 0.1, Placement::Late, 3)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn zero_replications_give_an_empty_result() {
    let r = run_experiment(&spec(vec![mean_shift()], 0)).unwrap();
    assert!(r.is_empty());
    assert!(r.summaries.is_empty());
}

#[test]
fn one_cell_two_seeds_table_shape() {
    let s = spec(vec![mean_shift()], 2);
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment_to_dir(&s, dir.path(), SuiteTable::Overall, &CancelToken::new()).unwrap();
    assert_eq!(r.records.len(), 2 * 2);
    assert_eq!(r.failures(), 0);
    let results = read(&dir.path().join("results.csv"));
    // Header plus one row per variant.
    assert_eq!(results.lines().count(), 1 + 2);
    assert!(results.lines().nth(1).unwrap().contains(ENSEMBLE));
    let runs = read(&dir.path().join("runs.csv"));
    assert_eq!(runs.lines().count(), 1 + 4);
    for f in ["overall.csv", "timings.csv", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let m: ExperimentManifest = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert!(m.complete);
    assert_eq!(m.seeds, s.seeds());
}

#[test]
fn reruns_write_identical_tables() {
    let s = spec(vec![mean_shift(), Cell::clean(Dgp::Var1, 3)], 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment_to_dir(&s, a.path(), SuiteTable::Overall, &CancelToken::new()).unwrap();
    run_experiment_to_dir(&s, b.path(), SuiteTable::Overall, &CancelToken::new()).unwrap();
    for f in ["results.csv", "runs.csv", "overall.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn rank_mode_clean_cells_flag_the_ceiling() {
    let mut s = spec(vec![Cell::clean(Dgp::IidGaussian, 3), Cell::clean(Dgp::Garch11, 3)], 2);
    s.pipeline.decision.mode = DecisionMode::Rank;
    let r = run_experiment(&s).unwrap();
    for rec in &r.records {
        assert_eq!(rec.flagged, flag_count(0.05, rec.n_test), "{rec:?}");
        assert_eq!(rec.metrics.unwrap().tp, 0);
    }
}

#[test]
fn clean_audit_has_one_row_per_dgp() {
    let dgps = [Dgp::IidGaussian, Dgp::Var1, Dgp::StaticFactor];
    let s = regen_tad::eval::experiment::clean_fpr_spec(&dgps, &small(), 160, 3, 1, 0);
    assert!(s.pipeline.decision.mode == DecisionMode::Threshold);
    let dir = tempfile::tempdir().unwrap();
    run_experiment_to_dir(&s, dir.path(), SuiteTable::CleanFpr, &CancelToken::new()).unwrap();
    let table = read(&dir.path().join("clean_fpr.csv"));
    let lines: Vec<&str> = table.lines().collect();
    // One row per DGP plus the overall average.
    assert_eq!(lines.len(), 1 + dgps.len() + 1);
    for d in dgps {
        assert!(lines.iter().any(|l| l.starts_with(d.as_str())), "{d} missing");
    }
}

#[test]
fn cancelled_run_leaves_pending_cells_in_the_manifest() {
    let s = spec(vec![mean_shift(), Cell::clean(Dgp::IidGaussian, 3)], 1);
    let cancel = CancelToken::new();
    let dir = tempfile::tempdir().unwrap();
    let r = {
        let token = cancel.clone();
        // Cancel once the first cell has been recorded.
        run_experiment_with(&s, &cancel, |_| {
            token.cancel();
            Ok(())
        })
        .unwrap()
    };
    assert!(r.cancelled);
    assert_eq!(r.statuses, vec![CellStatus::Complete, CellStatus::Pending]);

    cancel.cancel();
    run_experiment_to_dir(&s, dir.path(), SuiteTable::Overall, &cancel).unwrap();
    let m: ExperimentManifest = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert!(!m.complete);
    assert!(m.cells.iter().all(|c| c.status == CellStatus::Pending));
}

#[test]
fn failing_cells_are_recorded_and_the_suite_continues() {
    // An IID baseline has no factor structure for a correlation breakdown.
    let bad = Cell::injected(Dgp::IidGaussian, Mechanism::CorrelationBreakdown, 0.1, Placement::Late, 3);
    let s = spec(vec![bad, mean_shift()], 1);
    let r = run_experiment(&s).unwrap();
    assert_eq!(r.statuses, vec![CellStatus::Failed, CellStatus::Complete]);
    assert!(r.records.iter().filter(|x| x.cell == 0).all(|x| x.error.is_some()));
    assert!(r.records.iter().filter(|x| x.cell == 1).all(|x| x.error.is_none()));
}

#[test]
fn single_horizon_sweep_is_the_plain_spec() {
    let s = spec(vec![mean_shift()], 1);
    assert_eq!(horizon_sweep_spec(&s, &[3]), s);
    let swept = horizon_sweep_spec(&s, &[1, 5]);
    assert_eq!(swept.cells.iter().map(|c| c.h).collect::<Vec<_>>(), vec![1, 5]);
}
