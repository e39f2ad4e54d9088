use std::path::{Path, PathBuf};

use lexforge::config::{validate_config, PipelineConfig, StageToggles};
use lexforge::pipeline::{run_pipeline, PipelineError, RunReport, REPORT_FILE};

fn bundled() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/pipeline.toml");
    PipelineConfig::load(&path).unwrap()
}

fn run_into(dir: &Path) -> RunReport {
    let mut cfg = bundled();
    cfg.output_dir = dir.to_path_buf();
    run_pipeline(&cfg).unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn bundled_config_validates() {
    assert_eq!(validate_config(&bundled()), vec![]);
}

#[test]
fn bundled_run_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_into(a.path());
    let rb = run_into(b.path());
    assert_eq!(ra.without_wall_clock(), rb.without_wall_clock());
    assert_eq!(ra.stages_run.len(), 8);

    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.iter().map(|p| p.file_name()).collect::<Vec<_>>(), fb.iter().map(|p| p.file_name()).collect::<Vec<_>>());
    for (x, y) in fa.iter().zip(&fb) {
        if x.file_name().unwrap() == REPORT_FILE {
            continue;
        }
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }

    let mix = ra.mix.as_ref().unwrap();
    assert!(mix.docs_out > 0 && mix.docs_out < mix.docs_in);
    let sched = ra.schedule.as_ref().unwrap();
    assert!(sched.downstream_coverage_exact);
    assert_eq!(sched.core_quota, 6);
    let hipo = ra.hipo.as_ref().unwrap();
    assert!(hipo.iterations.windows(2).all(|w| w[1].evaluated <= w[0].evaluated));
}

#[test]
fn all_stages_disabled_is_an_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg.stages = StageToggles::default();
    cfg.output_dir = dir.path().to_path_buf();
    let r = run_pipeline(&cfg).unwrap();
    assert!(r.stages_run.is_empty());
    assert!(r.filter.is_none() && r.mix.is_none() && r.failure.is_none());
    assert_eq!(r.artifacts, [REPORT_FILE]);
}

#[test]
fn missing_hipo_section_is_a_config_error() {
    let mut cfg = bundled();
    cfg.hipo = None;
    match run_pipeline(&cfg) {
        Err(PipelineError::Config(e)) => assert_eq!(e.issues()[0].path, "hipo"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn stage_failure_leaves_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.inputs.psft_core = Some(dir.path().join("missing.jsonl"));
    match run_pipeline(&cfg) {
        Err(PipelineError::Stage { stage, report, .. }) => {
            assert_eq!(stage, "schedule");
            assert_eq!(report.stages_run, ["filter", "score", "enhance", "mix", "pack"]);
            let on_disk: RunReport = serde_json::from_slice(&std::fs::read(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
            assert_eq!(on_disk.failure.unwrap().stage, "schedule");
        }
        other => panic!("expected a stage failure, got {other:?}"),
    }
}
