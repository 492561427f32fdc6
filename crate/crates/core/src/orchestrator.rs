//! End-to-end pipeline run by three sequential agents.
//!
//! * Prediction: ingest, knowledge graph, features and labels, proximity
//!   graph, training (or checkpoint load) and per-event risk probabilities.
//! * Planning: hotspot detection and retrieval context for every hotspot.
//! * Execution: the response plan.
//!
//! Each agent emits one [`AgentMessage`] pointing at the artifact it wrote.
//! All randomness derives from [`PipelineConfig::seed`], and timestamps are
//! logical sequence numbers, so two runs with the same configuration write
//! identical hotspot and plan files.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{
    filter_region, parse_catalog, BoundingBox, CatalogFormat, EventRecord, RowDiagnostic,
};
use crate::error::{Error, Result};
use crate::features::{
    build_features, split_dataset, synthesize_labels, DatasetSplit, LabelingConfig, RiskClass,
    RiskLabel, SplitRatios,
};
use crate::gnn::metrics::{evaluate, Metrics};
use crate::gnn::model::{model_forward, param_count, ModelConfig, Params};
use crate::gnn::train::{train, write_history_csv, Checkpoint, Optimizer, TrainConfig, TrainOutcome};
use crate::gnn::Matrix;
use crate::graph_store::{build_knowledge_graph_with, KnowledgeGraphOptions, PropertyGraph};
use crate::hotspot::{
    detect_hotspots, risk_key, score_grid, GridSpec, Hotspot, HotspotReport, RiskPoint, DEFAULT_CELL_DEG,
    DEFAULT_INFLUENCE_RADIUS_KM, DEFAULT_RISK_THRESHOLD, DEFAULT_TOP_N,
};
use crate::retrieval::coherence::{evaluate_batch, load_queries, BatchReport, CoherenceQuery};
use crate::retrieval::embed::{HashingEmbedder, DEFAULT_DIM};
use crate::retrieval::prompt::render_prompt;
use crate::retrieval::search::{retrieve, RetrievalResult};
use crate::retrieval::CoherenceWeights;
use crate::spatial_graph::{GraphSummary, ProximityGraph, DEFAULT_THRESHOLD_KM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    pub path: PathBuf,
    /// Guessed from the file extension when absent.
    pub format: Option<CatalogFormat>,
    pub bbox: BoundingBox,
}

impl Default for CatalogSection {
    fn default() -> Self {
        CatalogSection {
            path: PathBuf::new(),
            format: None,
            bbox: BoundingBox::HMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeGraphSection {
    pub embedding_dim: usize,
    /// Add NEAR edges between events closer than this.
    pub near_threshold_km: Option<f64>,
}

impl Default for KnowledgeGraphSection {
    fn default() -> Self {
        KnowledgeGraphSection {
            embedding_dim: DEFAULT_DIM,
            near_threshold_km: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximitySection {
    pub threshold_km: f64,
}

impl Default for ProximitySection {
    fn default() -> Self {
        ProximitySection {
            threshold_km: DEFAULT_THRESHOLD_KM,
        }
    }
}

/// Training options; the seed comes from the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: Option<usize>,
    pub optimizer: Optimizer,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            patience: t.patience,
            optimizer: t.optimizer,
        }
    }
}

impl TrainingSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
            patience: self.patience,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotspotSection {
    pub cell_deg: f64,
    pub influence_radius_km: f64,
    pub risk_threshold: f64,
    pub top_n: usize,
}

impl Default for HotspotSection {
    fn default() -> Self {
        HotspotSection {
            cell_deg: DEFAULT_CELL_DEG,
            influence_radius_km: DEFAULT_INFLUENCE_RADIUS_KM,
            risk_threshold: DEFAULT_RISK_THRESHOLD,
            top_n: DEFAULT_TOP_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    pub expand: bool,
    /// JSON array of `{query, ground_truth}`. Without it the coherence
    /// report uses the highest-risk events, title as query and description
    /// as ground truth.
    pub coherence_batch: Option<PathBuf>,
    pub default_queries: usize,
    pub weights: CoherenceWeights,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            k: 5,
            expand: true,
            coherence_batch: None,
            default_queries: 6,
            weights: CoherenceWeights::default(),
        }
    }
}

/// Whole-run configuration, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Load parameters from here instead of training.
    pub checkpoint: Option<PathBuf>,
    pub catalog: CatalogSection,
    pub labels: LabelingConfig,
    pub split: SplitRatios,
    pub knowledge_graph: KnowledgeGraphSection,
    pub proximity: ProximitySection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub hotspot: HotspotSection,
    pub retrieval: RetrievalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            output_dir: PathBuf::from("landrisk-out"),
            checkpoint: None,
            catalog: CatalogSection::default(),
            labels: LabelingConfig::default(),
            split: SplitRatios::default(),
            knowledge_graph: KnowledgeGraphSection::default(),
            proximity: ProximitySection::default(),
            model: ModelConfig::default(),
            training: TrainingSection::default(),
            hotspot: HotspotSection::default(),
            retrieval: RetrievalSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a `.json` or `.toml` file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::from_json_str(&text)?,
            _ => Self::from_toml_str(&text)?,
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog.path);
        fix(&mut self.output_dir);
        if let Some(p) = self.checkpoint.as_mut() {
            fix(p);
        }
        if let Some(p) = self.retrieval.coherence_batch.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog.bbox.validate()?;
        self.labels.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        self.training.to_train_config(self.seed).validate()?;
        GridSpec::new(self.catalog.bbox, self.hotspot.cell_deg)?;
        if !(0.0..=1.0).contains(&self.hotspot.risk_threshold) {
            return Err(Error::arg("hotspot.risk_threshold must lie in [0, 1]"));
        }
        if !(self.proximity.threshold_km > 0.0) {
            return Err(Error::arg("proximity.threshold_km must be positive"));
        }
        if self.knowledge_graph.embedding_dim == 0 {
            return Err(Error::arg("knowledge_graph.embedding_dim must be at least 1"));
        }
        if self.retrieval.k == 0 {
            return Err(Error::arg("retrieval.k must be at least 1"));
        }
        self.retrieval.weights.validate()
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<EventRecord>,
    pub rejected: Vec<RowDiagnostic>,
    pub parsed: usize,
    pub out_of_region: usize,
}

/// Parse the catalog and keep the records inside the configured bbox.
pub fn ingest(section: &CatalogSection) -> Result<Ingested> {
    let format = match section.format {
        Some(f) => f,
        None => CatalogFormat::from_path(&section.path).ok_or_else(|| {
            Error::Format(format!(
                "cannot infer the format of `{}`; set it explicitly",
                section.path.display()
            ))
        })?,
    };
    let parsed = parse_catalog(&section.path, format)?;
    let records = filter_region(&parsed.records, &section.bbox)?;
    Ok(Ingested {
        out_of_region: parsed.records.len() - records.len(),
        parsed: parsed.records.len(),
        rejected: parsed.rejected,
        records,
    })
}

pub fn knowledge_graph(config: &PipelineConfig, records: &[EventRecord]) -> Result<PropertyGraph> {
    let embedder = HashingEmbedder::new(config.knowledge_graph.embedding_dim)?;
    build_knowledge_graph_with(
        records,
        &KnowledgeGraphOptions {
            embedder: Some(&embedder),
            near_threshold_km: config.knowledge_graph.near_threshold_km,
        },
    )
}

/// Model inputs derived from the records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<RiskLabel>,
    pub classes: Vec<RiskClass>,
    pub split: DatasetSplit,
    pub proximity: ProximityGraph,
}

pub fn features_and_labels(
    config: &PipelineConfig,
    records: &[EventRecord],
) -> Result<(Matrix, Vec<RiskLabel>, DatasetSplit)> {
    let rows: Vec<_> = build_features(records)?.iter().map(|f| f.to_array()).collect();
    let features = Matrix::from_rows(&rows)?;
    let labels = synthesize_labels(records, &config.labels)?;
    let classes: Vec<RiskClass> = labels.iter().map(|l| l.class).collect();
    let split = split_dataset(&classes, config.split, config.seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok((features, labels, split))
}

pub fn proximity_graph(config: &PipelineConfig, records: &[EventRecord]) -> Result<ProximityGraph> {
    let points: Vec<(f64, f64)> = records.iter().map(EventRecord::coords).collect();
    ProximityGraph::build(&points, config.proximity.threshold_km)
}

/// Features, labels, split and proximity graph in one call.
pub fn dataset(config: &PipelineConfig, records: &[EventRecord]) -> Result<Dataset> {
    let (features, labels, split) = features_and_labels(config, records)?;
    let proximity = proximity_graph(config, records)?;
    Ok(Dataset {
        classes: labels.iter().map(|l| l.class).collect(),
        features,
        labels,
        split,
        proximity,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: Params,
    /// `None` when the parameters came from a checkpoint.
    pub outcome: Option<TrainOutcome>,
}

pub fn fit(config: &PipelineConfig, data: &Dataset) -> Result<TrainedModel> {
    let tc = config.training.to_train_config(config.seed);
    log::info!("training {} parameters", param_count(&config.model));
    let outcome = train(&config.model, &tc, &data.features, &data.proximity, &data.classes, &data.split)?;
    log::info!(
        "best epoch {} (val macro F1 {:.4}), train loss {:.4} -> {:.4}",
        outcome.best_epoch,
        outcome.best_val_f1,
        outcome.initial_train_loss(),
        outcome.final_train_loss
    );
    Ok(TrainedModel {
        config: config.model.clone(),
        params: outcome.params.clone(),
        outcome: Some(outcome),
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let ck = Checkpoint::load(path)?;
    Ok(TrainedModel {
        params: ck.params()?,
        config: ck.config,
        outcome: None,
    })
}

/// Class probabilities `[Low, Medium, High]` for every record.
pub fn predict(model: &TrainedModel, data: &Dataset) -> Result<Matrix> {
    Ok(model_forward(&model.config, &model.params, &data.features, &data.proximity)?.probs)
}

fn predicted_classes(probs: &Matrix) -> Vec<RiskClass> {
    probs
        .argmax_rows()
        .into_iter()
        .map(|c| RiskClass::from_index(c).expect("three classes"))
        .collect()
}

/// Metrics over the rows in `index`.
pub fn evaluate_subset(probs: &Matrix, classes: &[RiskClass], index: &[usize]) -> Result<Metrics> {
    let pred = predicted_classes(&probs.select_rows(index));
    let truth: Vec<RiskClass> = index.iter().map(|&i| classes[i]).collect();
    evaluate(&pred, &truth)
}

pub fn risk_points(records: &[EventRecord], probs: &Matrix) -> Vec<RiskPoint> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| RiskPoint {
            event_id: r.event_id.clone(),
            lat: r.latitude,
            lon: r.longitude,
            probs: [probs[(i, 0)], probs[(i, 1)], probs[(i, 2)]],
        })
        .collect()
}

pub fn hotspots(config: &PipelineConfig, points: &[RiskPoint]) -> Result<HotspotReport> {
    let spec = GridSpec::new(config.catalog.bbox, config.hotspot.cell_deg)?;
    let scores = score_grid(&spec, points, config.hotspot.influence_radius_km)?;
    detect_hotspots(&scores, config.hotspot.risk_threshold, config.hotspot.top_n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributingEvent {
    pub event_id: String,
    pub title: String,
    pub p_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotContext {
    pub rank: usize,
    pub center: (f64, f64),
    pub risk: f64,
    pub top_events: Vec<ContributingEvent>,
    pub retrieval: RetrievalResult,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub contexts: Vec<HotspotContext>,
}

const TOP_EVENTS: usize = 5;

/// Retrieval context for every hotspot. The retrieval query is the text of
/// the hotspot's most likely High-risk event.
pub fn context_bundle(
    config: &PipelineConfig,
    graph: &PropertyGraph,
    records: &[EventRecord],
    points: &[RiskPoint],
    hotspots: &[Hotspot],
) -> Result<ContextBundle> {
    let embedder = HashingEmbedder::new(config.knowledge_graph.embedding_dim)?;
    let by_id: HashMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.event_id.as_str(), i))
        .collect();
    let mut contexts = Vec::with_capacity(hotspots.len());
    for h in hotspots {
        let mut members: Vec<usize> = h
            .cell
            .event_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).copied())
            .collect();
        members.sort_by(|&a, &b| {
            points[b].probs[2]
                .total_cmp(&points[a].probs[2])
                .then(records[a].event_id.cmp(&records[b].event_id))
        });
        let top_events: Vec<ContributingEvent> = members
            .iter()
            .take(TOP_EVENTS)
            .map(|&i| ContributingEvent {
                event_id: records[i].event_id.clone(),
                title: records[i].event_title.clone(),
                p_high: points[i].probs[2],
            })
            .collect();
        let lead = members
            .first()
            .map(|&i| format!("{} {}", records[i].event_title, records[i].event_description))
            .unwrap_or_default();
        let retrieval = retrieve(graph, &embedder, &lead, config.retrieval.k, config.retrieval.expand)?;
        let question = format!(
            "Assess landslide risk and recommend response actions for the area around \
             ({:.3}, {:.3}), where {} recorded events give a cell risk of {:.3}.",
            h.cell.center.0, h.cell.center.1, h.cell.event_count, h.cell.risk
        );
        let prompt = render_prompt(&question, &retrieval, graph)?;
        contexts.push(HotspotContext {
            rank: h.rank,
            center: h.cell.center,
            risk: h.cell.risk,
            top_events,
            retrieval,
            prompt,
        });
    }
    Ok(ContextBundle { contexts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlanEntry {
    Hotspot {
        rank: usize,
        center: (f64, f64),
        risk: f64,
        priority: String,
        top_events: Vec<ContributingEvent>,
        prompt: String,
    },
    NoElevatedRisk {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePlan {
    pub entries: Vec<PlanEntry>,
}

pub const NO_ELEVATED_RISK: &str = "no elevated risk detected";

fn priority(risk: f64) -> &'static str {
    if risk >= 0.8 {
        "immediate"
    } else if risk >= 0.6 {
        "elevated"
    } else {
        "watch"
    }
}

/// One entry per hotspot by descending risk (same resolution as the hotspot
/// ranking, ties by rank), or a single sentinel entry.
pub fn build_response_plan(hotspots: &[Hotspot], bundle: &ContextBundle) -> ResponsePlan {
    if hotspots.is_empty() {
        return ResponsePlan {
            entries: vec![PlanEntry::NoElevatedRisk {
                message: NO_ELEVATED_RISK.to_string(),
            }],
        };
    }
    let mut ordered: Vec<&Hotspot> = hotspots.iter().collect();
    ordered.sort_by_key(|h| (std::cmp::Reverse(risk_key(h.cell.risk)), h.rank));
    let entries = ordered
        .into_iter()
        .map(|h| {
            let ctx = bundle.contexts.iter().find(|c| c.rank == h.rank);
            PlanEntry::Hotspot {
                rank: h.rank,
                center: h.cell.center,
                risk: h.cell.risk,
                priority: priority(h.cell.risk).to_string(),
                top_events: ctx.map(|c| c.top_events.clone()).unwrap_or_default(),
                prompt: ctx.map(|c| c.prompt.clone()).unwrap_or_default(),
            }
        })
        .collect();
    ResponsePlan { entries }
}

/// Highest-scoring events (ties by catalog order), title as the query and
/// description as the ground truth.
pub fn default_coherence_queries(records: &[EventRecord], labels: &[RiskLabel], n: usize) -> Vec<CoherenceQuery> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| labels[b].risk_score.total_cmp(&labels[a].risk_score).then(a.cmp(&b)));
    order
        .into_iter()
        .take(n)
        .map(|i| CoherenceQuery {
            query: records[i].event_title.clone(),
            ground_truth: records[i].event_description.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Agent {
    Prediction,
    Planning,
    Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    RiskPredictions,
    ContextBundle,
    ResponsePlan,
}

impl MessageKind {
    pub fn owner(self) -> Agent {
        match self {
            MessageKind::RiskPredictions => Agent::Prediction,
            MessageKind::ContextBundle => Agent::Planning,
            MessageKind::ResponsePlan => Agent::Execution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    /// Logical timestamp: position in the run's message log.
    pub seq: u64,
    pub sender: Agent,
    pub kind: MessageKind,
    /// Artifact carrying the payload.
    pub payload: PathBuf,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: PathBuf,
    pub training_log: Option<PathBuf>,
    pub predictions: PathBuf,
    pub hotspots: PathBuf,
    pub context_bundle: PathBuf,
    pub coherence: PathBuf,
    pub response_plan: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCounts {
    pub events: usize,
    pub sources: usize,
    pub gazetteer_points: usize,
    pub profiles: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rows_rejected: usize,
    pub records_parsed: usize,
    pub records_out_of_region: usize,
    pub records: usize,
    pub knowledge_graph: GraphCounts,
    pub proximity: GraphSummary,
    pub param_count: usize,
    pub trained: bool,
    pub best_epoch: Option<usize>,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub test_metrics: Option<Metrics>,
    pub hotspots: usize,
    pub split_warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub messages: Vec<AgentMessage>,
    pub artifacts: Artifacts,
    pub summary: RunSummary,
    pub hotspots: Vec<Hotspot>,
    pub response_plan: ResponsePlan,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    status: &'static str,
    failed_stage: Option<&'static str>,
    error: Option<String>,
    config: &'a PipelineConfig,
    written: &'a [PathBuf],
    messages: &'a [AgentMessage],
    summary: Option<&'a RunSummary>,
}

struct Recorder {
    dir: PathBuf,
    written: Vec<PathBuf>,
    messages: Vec<AgentMessage>,
}

impl Recorder {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn send(&mut self, kind: MessageKind, payload: PathBuf, summary: String) {
        self.messages.push(AgentMessage {
            seq: self.messages.len() as u64,
            sender: kind.owner(),
            kind,
            payload,
            summary,
        });
    }
}

const MANIFEST: &str = "run_manifest.json";

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn predictions_csv(records: &[EventRecord], data: &Dataset, probs: &Matrix) -> Result<Vec<u8>> {
    let mut split_of = vec![""; records.len()];
    for (name, idx) in [("train", &data.split.train), ("val", &data.split.val), ("test", &data.split.test)] {
        for &i in idx.iter() {
            split_of[i] = name;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["event_id", "split", "label", "predicted", "p_low", "p_medium", "p_high", "confidence"];
    let err = |e: csv::Error| Error::Parse(format!("predictions csv: {e}"));
    w.write_record(header).map_err(err)?;
    let argmax = probs.argmax_rows();
    for (i, r) in records.iter().enumerate() {
        let row = probs.row(i);
        let best = argmax[i];
        w.write_record([
            r.event_id.clone(),
            split_of[i].to_string(),
            data.classes[i].to_string(),
            RiskClass::from_index(best).expect("three classes").to_string(),
            row[0].to_string(),
            row[1].to_string(),
            row[2].to_string(),
            row[best].to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Parse(format!("predictions csv: {e}")))
}

/// Execute every stage in order, writing artifacts to `config.output_dir`.
/// On failure the manifest is still written, marked `incomplete`, and the
/// error names the failing stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    let mut rec = Recorder {
        dir: config.output_dir.clone(),
        written: Vec::new(),
        messages: Vec::new(),
    };
    match run_stages(config, &mut rec) {
        Ok(mut run) => {
            let manifest = Manifest {
                status: "complete",
                failed_stage: None,
                error: None,
                config,
                written: &rec.written,
                messages: &rec.messages,
                summary: Some(&run.summary),
            };
            let bytes = json_bytes(&manifest)?;
            run.artifacts.manifest = rec.write(MANIFEST, &bytes)?;
            run.messages = rec.messages;
            Ok(run)
        }
        Err(e) => {
            let manifest = Manifest {
                status: "incomplete",
                failed_stage: e.stage(),
                error: Some(e.root().to_string()),
                config,
                written: &rec.written,
                messages: &rec.messages,
                summary: None,
            };
            if let Ok(bytes) = json_bytes(&manifest) {
                // The run already failed; a manifest write error must not mask it.
                let _ = rec.write(MANIFEST, &bytes);
            }
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, rec: &mut Recorder) -> Result<PipelineRun> {
    stage("config", || config.validate())?;

    // Prediction agent.
    let ingested = stage("ingest", || ingest(&config.catalog))?;
    for d in &ingested.rejected {
        log::warn!("row {}: {}", d.row, d.reason);
    }
    let records = &ingested.records;
    let graph = stage("graph", || knowledge_graph(config, records))?;
    let (features, labels, split) = stage("features", || features_and_labels(config, records))?;
    let proximity = stage("proximity", || proximity_graph(config, records))?;
    let data = Dataset {
        classes: labels.iter().map(|l| l.class).collect(),
        features,
        labels,
        split,
        proximity,
    };

    let (model, checkpoint_path, training_log) = stage("train", || match &config.checkpoint {
        Some(path) => Ok((load_model(path)?, path.clone(), None)),
        None => {
            let model = fit(config, &data)?;
            let ck = json_bytes(&Checkpoint::new(&model.config, &model.params))?;
            let ck_path = rec.write("checkpoint.json", &ck)?;
            let mut log = Vec::new();
            let history = &model.outcome.as_ref().expect("trained").history;
            write_history_csv(history, &mut log).map_err(|e| Error::io(rec.path("training_log.csv"), e))?;
            let log_path = rec.write("training_log.csv", &log)?;
            Ok((model, ck_path, Some(log_path)))
        }
    })?;

    let (probs, predictions_path, test_metrics) = stage("predict", || {
        let probs = predict(&model, &data)?;
        let metrics = if data.split.test.is_empty() {
            None
        } else {
            Some(evaluate_subset(&probs, &data.classes, &data.split.test)?)
        };
        let path = rec.write("predictions.csv", &predictions_csv(records, &data, &probs)?)?;
        Ok((probs, path, metrics))
    })?;
    let high = predicted_classes(&probs).iter().filter(|&&c| c == RiskClass::High).count();
    rec.send(
        MessageKind::RiskPredictions,
        predictions_path.clone(),
        format!("{} events scored, {high} predicted High", records.len()),
    );

    // Planning agent.
    let points = risk_points(records, &probs);
    let (report, hotspots_path) = stage("hotspots", || {
        let report = hotspots(config, &points)?;
        let path = rec.write("hotspots.geojson", &json_bytes(&report.geojson)?)?;
        Ok((report, path))
    })?;
    let (bundle, bundle_path, coherence_path) = stage("retrieval", || {
        let bundle = context_bundle(config, &graph, records, &points, &report.hotspots)?;
        let bundle_path = rec.write("context_bundle.json", &json_bytes(&bundle)?)?;
        let queries = match &config.retrieval.coherence_batch {
            Some(p) => load_queries(p)?,
            None => default_coherence_queries(records, &data.labels, config.retrieval.default_queries),
        };
        let embedder = HashingEmbedder::new(config.knowledge_graph.embedding_dim)?;
        let coherence: BatchReport = if queries.is_empty() {
            BatchReport {
                reports: Vec::new(),
                aggregate: None,
            }
        } else {
            evaluate_batch(&graph, &embedder, &queries, config.retrieval.k, &config.retrieval.weights)?
        };
        let coherence_path = rec.write("coherence.json", &json_bytes(&coherence)?)?;
        Ok((bundle, bundle_path, coherence_path))
    })?;
    rec.send(
        MessageKind::ContextBundle,
        bundle_path.clone(),
        format!("{} hotspots with retrieval context", report.hotspots.len()),
    );

    // Execution agent.
    let (plan, plan_path) = stage("response_plan", || {
        let plan = build_response_plan(&report.hotspots, &bundle);
        let path = rec.write("response_plan.json", &json_bytes(&plan)?)?;
        Ok((plan, path))
    })?;
    rec.send(
        MessageKind::ResponsePlan,
        plan_path.clone(),
        format!("{} plan entries", plan.entries.len()),
    );

    let outcome = model.outcome.as_ref();
    let summary = RunSummary {
        rows_rejected: ingested.rejected.len(),
        records_parsed: ingested.parsed,
        records_out_of_region: ingested.out_of_region,
        records: records.len(),
        knowledge_graph: GraphCounts {
            events: graph.count_kind(crate::graph_store::NodeKind::Event),
            sources: graph.count_kind(crate::graph_store::NodeKind::Source),
            gazetteer_points: graph.count_kind(crate::graph_store::NodeKind::GazetteerPoint),
            profiles: graph.count_kind(crate::graph_store::NodeKind::LandslideProfile),
            edges: graph.edge_count(),
        },
        proximity: data.proximity.summary(),
        param_count: param_count(&model.config),
        trained: outcome.is_some(),
        best_epoch: outcome.map(|o| o.best_epoch),
        initial_train_loss: outcome.map(|o| o.initial_train_loss()),
        final_train_loss: outcome.map(|o| o.final_train_loss),
        test_metrics,
        hotspots: report.hotspots.len(),
        split_warnings: data.split.warnings.clone(),
    };

    Ok(PipelineRun {
        config: config.clone(),
        messages: Vec::new(),
        artifacts: Artifacts {
            checkpoint: checkpoint_path,
            training_log,
            predictions: predictions_path,
            hotspots: hotspots_path,
            context_bundle: bundle_path,
            coherence: coherence_path,
            response_plan: plan_path,
            manifest: rec.path(MANIFEST),
        },
        summary,
        hotspots: report.hotspots,
        response_plan: plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hotspot::HotspotCell;

    fn hotspot(rank: usize, risk: f64) -> Hotspot {
        Hotspot {
            rank,
            cell: HotspotCell {
                i: rank,
                j: 0,
                center: (30.0 + rank as f64, 80.0),
                bounds: BoundingBox::new(30.0, 31.0, 80.0, 81.0).unwrap(),
                event_count: 1,
                risk,
                event_ids: vec![format!("e{rank}")],
            },
        }
    }

    #[test]
    fn empty_plan_has_one_sentinel() {
        let plan = build_response_plan(&[], &ContextBundle::default());
        assert_eq!(plan.entries.len(), 1);
        assert!(matches!(&plan.entries[0], PlanEntry::NoElevatedRisk { message } if message == NO_ELEVATED_RISK));
    }

    #[test]
    fn plan_entries_follow_risk() {
        let hs = [hotspot(2, 0.7), hotspot(1, 0.9), hotspot(3, 0.65)];
        let plan = build_response_plan(&hs, &ContextBundle::default());
        let risks: Vec<f64> = plan
            .entries
            .iter()
            .map(|e| match e {
                PlanEntry::Hotspot { risk, .. } => *risk,
                PlanEntry::NoElevatedRisk { .. } => panic!("sentinel"),
            })
            .collect();
        assert_eq!(risks, vec![0.9, 0.7, 0.65]);
    }

    #[test]
    fn message_owners() {
        assert_eq!(MessageKind::RiskPredictions.owner(), Agent::Prediction);
        assert_eq!(MessageKind::ContextBundle.owner(), Agent::Planning);
        assert_eq!(MessageKind::ResponsePlan.owner(), Agent::Execution);
    }

    #[test]
    fn config_sections_merge_with_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 11\n[hotspot]\nrisk_threshold = 0.4\n[training]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.hotspot.risk_threshold, 0.4);
        assert_eq!(cfg.hotspot.cell_deg, DEFAULT_CELL_DEG);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.learning_rate, 0.01);
        assert!(PipelineConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = PipelineConfig::default();
        cfg.catalog.path = "data/c.csv".into();
        cfg.checkpoint = Some("/abs/ck.json".into());
        cfg.resolve_paths(Path::new("/etc/run"));
        assert_eq!(cfg.catalog.path, PathBuf::from("/etc/run/data/c.csv"));
        assert_eq!(cfg.checkpoint, Some(PathBuf::from("/abs/ck.json")));
        assert_eq!(cfg.output_dir, PathBuf::from("/etc/run/landrisk-out"));
    }

    #[test]
    fn missing_catalog_fails_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.catalog.path = dir.path().join("absent.csv");
        cfg.output_dir = dir.path().join("out");
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage(), Some("ingest"));
        assert!(matches!(err.root(), Error::Io { .. }));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(cfg.output_dir.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest["status"], "incomplete");
        assert_eq!(manifest["failed_stage"], "ingest");
    }
}
