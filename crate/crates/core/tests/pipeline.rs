use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use speechprep::backend::{Gateway, VadWindow};
use speechprep::filter::DropReason;
use speechprep::fixtures::{write_corpus, write_corrupt};
use speechprep::manifest::{read_manifest, validate_manifest};
use speechprep::pipeline::{discover_sources, run, PipelineConfig, PipelineError, SourceItem, STATE_DIR};

fn corpus(dir: &Path) -> Vec<SourceItem> {
    let input = dir.join("in");
    write_corpus(&input).unwrap();
    discover_sources(&[input]).unwrap()
}

fn config(out: PathBuf, parallelism: usize) -> PipelineConfig {
    PipelineConfig {
        parallelism,
        ..PipelineConfig::new(out)
    }
}

fn stubs() -> Gateway {
    Gateway::stubs(VadWindow::default())
}

#[test]
fn every_drop_path_fires_and_accounts() {
    let dir = tempfile::tempdir().unwrap();
    let items = corpus(dir.path());
    let out = run(&config(dir.path().join("out"), 1), &items, &stubs()).unwrap();
    let r = &out.report;

    let reasons: BTreeSet<(String, DropReason)> = r.drops.iter().map(|d| (d.stage.clone(), d.reason)).collect();
    for expected in [
        ("asr", DropReason::EmptyTranscript),
        ("filter", DropReason::Language),
        ("filter", DropReason::Confidence),
        ("filter", DropReason::Quality),
        ("filter", DropReason::CharDurationOutlier),
    ] {
        assert!(
            reasons.contains(&(expected.0.to_string(), expected.1)),
            "missing {expected:?} in {reasons:?}"
        );
    }
    assert!(r.accounting.iter().all(|a| a.closes()), "{:?}", r.accounting);
    assert!(r.failed.is_empty());
    assert_eq!(r.items_processed, 3);

    // Monotone duration and the report covering exactly the manifest.
    let hours: Vec<f64> = r.stages.iter().map(|s| s.total_hours).collect();
    assert_eq!(hours[0], hours[1]);
    assert!(hours.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{hours:?}");
    assert_eq!(r.stages[5].clip_count as usize, out.records.len());
    let manifest_s: f64 = out.records.iter().map(|m| m.duration).sum();
    assert!((manifest_s / 3600.0 - hours[5]).abs() < 1e-6);
    for s in &r.stages {
        if let Some(d) = s.duration {
            assert!(d.min <= d.mean && d.mean <= d.max);
        }
        assert!(s.retention_pct <= 100.0 + 1e-9);
    }

    assert_eq!(read_manifest(&out.manifest_path).unwrap(), out.records);
    assert!(validate_manifest(&out.manifest_path, &dir.path().join("out"))
        .unwrap()
        .is_empty());
    assert!(!dir.path().join("out/exchange/run").exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let items = corpus(dir.path());
    let a = run(&config(dir.path().join("p1"), 1), &items, &stubs()).unwrap();
    let b = run(&config(dir.path().join("p8"), 8), &items, &stubs()).unwrap();
    assert_eq!(fs::read(&a.manifest_path).unwrap(), fs::read(&b.manifest_path).unwrap());
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.report.render_rows(), b.report.render_rows());
}

#[test]
fn corrupt_item_is_quarantined() {
    let dir = tempfile::tempdir().unwrap();
    let mut items = corpus(dir.path());
    let bad = write_corrupt(&dir.path().join("in"), "broken").unwrap();
    items.push(SourceItem {
        source_id: "broken".into(),
        path: bad,
    });
    let out = run(&config(dir.path().join("out"), 4), &items, &stubs()).unwrap();
    assert_eq!(out.report.items_total, 4);
    assert_eq!(out.report.items_processed, 3);
    assert_eq!(out.report.failed.len(), 1);
    assert_eq!(out.report.failed[0].source_id, "broken");
    assert_eq!(out.report.failed[0].stage, "standardize");
    assert!(out.records.iter().all(|r| r.source_id != "broken"));
}

#[test]
fn all_failed_is_fatal_but_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_corrupt(dir.path(), "broken").unwrap();
    let items = vec![SourceItem {
        source_id: "broken".into(),
        path: bad,
    }];
    let out = dir.path().join("out");
    match run(&config(out.clone(), 1), &items, &stubs()) {
        Err(PipelineError::AllFailed(r)) => assert_eq!(r.failed.len(), 1),
        other => panic!("{other:?}"),
    }
    assert!(out.join("report.json").exists());
}

#[test]
fn empty_inputs_and_bad_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path().join("out"), 1);
    assert!(matches!(run(&cfg, &[], &stubs()), Err(PipelineError::NoInputs)));
    let mut bad = cfg.clone();
    bad.stitch.min_s = 40.0;
    let items = corpus(dir.path());
    match run(&bad, &items, &stubs()) {
        Err(PipelineError::ConfigInvalid(m)) => assert!(m.contains("min_s"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn resume_skips_finished_items() {
    let dir = tempfile::tempdir().unwrap();
    let items = corpus(dir.path());
    let cfg = config(dir.path().join("out"), 2);
    let first = run(&cfg, &items, &stubs()).unwrap();
    let manifest = fs::read(&first.manifest_path).unwrap();

    // Forget one item, as if the run had been interrupted before it finished.
    fs::remove_file(dir.path().join("out").join(STATE_DIR).join("street.json")).unwrap();
    let resumed = run(&PipelineConfig { resume: true, ..cfg.clone() }, &items, &stubs()).unwrap();
    assert_eq!(resumed.report.items_resumed, 2);
    assert_eq!(fs::read(&resumed.manifest_path).unwrap(), manifest);
    assert_eq!(resumed.report.without_timing().stages, first.report.without_timing().stages);

    // A fresh run ignores and clears old markers.
    let fresh = run(&cfg, &items, &stubs()).unwrap();
    assert_eq!(fresh.report.items_resumed, 0);
}

#[test]
fn changed_policy_invalidates_markers() {
    let dir = tempfile::tempdir().unwrap();
    let items = corpus(dir.path());
    let cfg = config(dir.path().join("out"), 1);
    run(&cfg, &items, &stubs()).unwrap();
    let mut looser = PipelineConfig { resume: true, ..cfg };
    looser.filter.min_quality = 2.0;
    let r = run(&looser, &items, &stubs()).unwrap();
    assert_eq!(r.report.items_resumed, 0);
    assert!(!r.report.drops.iter().any(|d| d.reason == DropReason::Quality));
}

#[test]
fn discovery_ids_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    fs::create_dir_all(root.join("sub dir")).unwrap();
    fs::write(root.join("a.wav"), b"x").unwrap();
    fs::write(root.join("sub dir/b.WAV"), b"x").unwrap();
    fs::write(root.join("notes.txt"), b"x").unwrap();
    fs::write(root.join("a.asr.json"), b"{}").unwrap();
    let ids: Vec<String> = discover_sources(&[root.clone()])
        .unwrap()
        .into_iter()
        .map(|s| s.source_id)
        .collect();
    assert_eq!(ids, vec!["a", "sub_dir__b"]);
    assert!(matches!(
        discover_sources(&[dir.path().join("missing")]),
        Err(PipelineError::ConfigInvalid(_))
    ));
    assert!(discover_sources(&[dir.path().join("data/notes.txt").parent().unwrap().join("nothing")]).is_err());
}
