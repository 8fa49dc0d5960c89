use std::collections::BTreeMap;
use std::path::Path;

use super::*;
use crate::auditkit::{AnnotationRequest, AuditLabel};

fn small_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        seed: 3,
        scenes: 3,
        ..PipelineConfig::default()
    };
    c.scene.furniture = (2, 3);
    c.scene.small_objects = (3, 4);
    c.scene.frames = 5;
    c.trainer.warmup_epochs = 2;
    c.trainer.bootstrap_epochs = 1;
    c.trainer.joint_epochs = 2;
    c.audit.pool_size = 60;
    c.audit.strata.unannotated = Some(30);
    c
}

fn run_all(ws: &Workspace) -> AuditSummary {
    ws.synth().unwrap();
    ws.propose().unwrap();
    ws.witness().unwrap();
    ws.triage().unwrap();
    ws.train().unwrap();
    ws.decode().unwrap();
    ws.audit_pool().unwrap();
    ws.audit_report(true).unwrap()
}

fn digests(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, crate::sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

#[test]
fn triage_partitions_the_unannotated_candidates() {
    let cfg = small_config();
    let ctx = Context::new(&cfg);
    let scenes = synth(&cfg).unwrap();
    let cands = propose(&ctx, &scenes).unwrap();
    let unannotated = cands
        .iter()
        .filter(|c| c.status != LabelStatus::AnnotatedPositive)
        .count();
    assert!(unannotated < cands.len());
    let records = witness(&cfg, &ctx, &scenes, &cands).unwrap();
    assert_eq!(records.len(), unannotated);
    let rows = triage(&cfg, &ctx, &scenes, &records).unwrap();
    let counts = DecisionCounts::of(rows.iter().map(|r| &r.decision));
    assert_eq!(counts.total(), records.len());
    for (r, row) in records.iter().zip(&rows) {
        assert_eq!(
            (&r.scene_id, r.subject_id, r.object_id, &r.phrase),
            (&row.scene_id, row.subject_id, row.object_id, &row.phrase)
        );
    }
}

#[test]
fn synth_is_reproducible_and_seed_sensitive() {
    let cfg = small_config();
    let a = synth(&cfg).unwrap();
    assert_eq!(a, synth(&cfg).unwrap());
    let other = PipelineConfig { seed: 4, ..cfg };
    assert_ne!(a[0].name, synth(&other).unwrap()[0].name);
}

#[test]
fn downstream_stages_refuse_a_foreign_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    Workspace::new(dir.path(), cfg.clone(), false).unwrap().synth().unwrap();
    let mut changed = cfg;
    changed.decode.decode.top_n = 1;
    let err = Workspace::new(dir.path(), changed.clone(), false)
        .unwrap()
        .propose()
        .unwrap_err();
    assert_eq!(err.code(), "hash_mismatch");
    assert!(Workspace::new(dir.path(), changed, true).unwrap().propose().unwrap() > 0);
}

#[test]
fn missing_inputs_and_bad_configs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), small_config(), false).unwrap();
    assert_eq!(ws.witness().unwrap_err().code(), "missing_input");
    let bad = PipelineConfig {
        scenes: 0,
        ..small_config()
    };
    assert!(matches!(
        Workspace::new(dir.path(), bad, false),
        Err(PipelineError::Config(_))
    ));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small_config();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let partial: PipelineConfig = serde_json::from_str(r#"{"scenes": 4, "decode": {"top_n": 2}}"#).unwrap();
    assert_eq!((partial.scenes, partial.decode.decode.top_n), (4, 2));
    assert_eq!(partial.decode.min_logit, 0.0);
}

#[test]
fn full_run_is_identical_across_thread_counts() {
    let cfg = small_config();
    let mut runs = Vec::new();
    for threads in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let summary = pool.install(|| run_all(&Workspace::new(dir.path(), cfg.clone(), false).unwrap()));
        runs.push((digests(dir.path()), summary, dir));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
    let files = &runs[0].0;
    for f in [
        "scenes/manifest.json",
        "candidates.jsonl",
        "train/full.bin",
        "audit/report.json",
    ] {
        assert!(files.contains_key(f), "{f} missing");
    }
    assert_eq!(runs[0].1.reports.len(), METHODS_AUDITED.len());
}

#[test]
fn service_over_a_workspace_pool_accepts_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path(), small_config(), false).unwrap();
    run_all(&ws);
    let service = ws.audit_service().unwrap();
    let first = service.pool()[0].id.clone();
    service
        .post_annotation(AnnotationRequest {
            candidate_id: first.clone(),
            annotator_id: "a1".into(),
            label: AuditLabel::Supported.name().into(),
            frames: vec![0],
            region_3d: None,
        })
        .unwrap();
    assert_eq!(service.progress().labeled, 1);
    let report = ws.audit_report(false).unwrap();
    assert_eq!(report.reports.len(), METHODS_AUDITED.len());
}
