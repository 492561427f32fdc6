use std::fs;
use std::path::{Path, PathBuf};

use landrisk::orchestrator::{run_pipeline, MessageKind, PipelineConfig, PlanEntry};
use landrisk::Error;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/hma_mini.csv")
}

fn config(out: &Path, epochs: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.catalog.path = fixture();
    cfg.output_dir = out.to_path_buf();
    cfg.training.epochs = epochs;
    cfg
}

#[test]
fn stages_emit_messages_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&config(dir.path(), 40)).unwrap();
    let kinds: Vec<MessageKind> = run.messages.iter().map(|m| m.kind).collect();
    assert_eq!(
        kinds,
        [MessageKind::RiskPredictions, MessageKind::ContextBundle, MessageKind::ResponsePlan]
    );
    assert!(run.messages.windows(2).all(|w| w[0].seq < w[1].seq));
    for m in &run.messages {
        assert_eq!(m.sender, m.kind.owner());
        assert!(m.payload.exists(), "{}", m.payload.display());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&run.artifacts.manifest).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(run.summary.records, 55);
    assert!(run.summary.trained);
}

#[test]
fn checkpoint_rerun_skips_training_and_matches() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&config(&dir.path().join("a"), 60)).unwrap();
    let mut cfg = config(&dir.path().join("b"), 60);
    cfg.checkpoint = Some(first.artifacts.checkpoint.clone());
    let second = run_pipeline(&cfg).unwrap();
    assert!(!second.summary.trained);
    assert!(second.summary.best_epoch.is_none());
    let pairs = [
        (&first.artifacts.predictions, &second.artifacts.predictions),
        (&first.artifacts.hotspots, &second.artifacts.hotspots),
        (&first.artifacts.context_bundle, &second.artifacts.context_bundle),
        (&first.artifacts.coherence, &second.artifacts.coherence),
        (&first.artifacts.response_plan, &second.artifacts.response_plan),
    ];
    for (a, b) in pairs {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
    }
}

#[test]
fn top_plan_entry_names_the_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&config(dir.path(), 200)).unwrap();
    let top = run.hotspots.first().expect("hotspot");
    // Kathmandu valley cell of the default 0.5 degree grid.
    assert!((top.cell.center.0 - 27.75).abs() < 1e-9 && (top.cell.center.1 - 85.25).abs() < 1e-9);
    match &run.response_plan.entries[0] {
        PlanEntry::Hotspot { rank, top_events, prompt, .. } => {
            assert_eq!(*rank, 1);
            assert!(!top_events.is_empty());
            for e in top_events {
                assert!(top.cell.event_ids.contains(&e.event_id), "{} not in the cluster cell", e.event_id);
            }
            assert!(prompt.contains("Kathmandu"));
        }
        other => panic!("unexpected first entry {other:?}"),
    }
    let risks: Vec<f64> = run
        .response_plan
        .entries
        .iter()
        .map(|e| match e {
            PlanEntry::Hotspot { risk, .. } => *risk,
            PlanEntry::NoElevatedRisk { .. } => panic!("sentinel alongside hotspots"),
        })
        .collect();
    assert!(risks.windows(2).all(|w| w[0] >= w[1] - 1e-9));
}

#[test]
fn unreachable_threshold_gives_sentinel_plan() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 20);
    cfg.hotspot.risk_threshold = 1.0;
    cfg.catalog.bbox = landrisk::catalog::BoundingBox::new(40.0, 46.0, 60.0, 70.0).unwrap();
    let run = run_pipeline(&cfg);
    // The shifted bbox drops every fixture event, so ingest leaves nothing to train on.
    let err = run.unwrap_err();
    assert!(err.stage().is_some());

    let mut cfg = config(dir.path(), 20);
    cfg.hotspot.risk_threshold = 1.0;
    cfg.hotspot.top_n = 0;
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.hotspots.len(), 0);
    assert!(matches!(&run.response_plan.entries[..], [PlanEntry::NoElevatedRisk { .. }]));
}

#[test]
fn missing_catalog_aborts_at_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 5);
    cfg.catalog.path = dir.path().join("nope.csv");
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("ingest"));
    assert!(matches!(err.root(), Error::Io { .. }));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "incomplete");
    assert_eq!(manifest["failed_stage"], "ingest");
}

#[test]
fn seed_changes_training_but_not_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&config(&dir.path().join("a"), 30)).unwrap();
    let mut cfg = config(&dir.path().join("b"), 30);
    cfg.seed = 8;
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(a.summary.knowledge_graph, b.summary.knowledge_graph);
    assert_ne!(
        fs::read(&a.artifacts.checkpoint).unwrap(),
        fs::read(&b.artifacts.checkpoint).unwrap()
    );
}
