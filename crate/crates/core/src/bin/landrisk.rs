use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use landrisk::catalog::{
    compute_stats, filter_region, parse_catalog, write_catalog_csv, catalog_to_json, BoundingBox,
    CatalogFormat,
};
use landrisk::gnn::train::write_history_csv;
use landrisk::gnn::Checkpoint;
use landrisk::graph_store::PropertyGraph;
use landrisk::orchestrator::{self as orch, PipelineConfig};
use landrisk::retrieval::coherence::{evaluate_batch, load_queries};
use landrisk::retrieval::{render_prompt, retrieve, HashingEmbedder};
use landrisk::spatial_graph::ProximityGraph;

#[derive(Parser)]
#[command(name = "landrisk", version, about = "Landslide risk pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the commands that run pipeline stages. Flags override
/// the config file, which overrides the built-in defaults.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog file (overrides `catalog.path`).
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// lat_min,lat_max,lon_min,lon_max
    #[arg(long)]
    bbox: Option<BoundingBox>,
    /// Directory for written artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.catalog {
            cfg.catalog.path = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.bbox {
            cfg.catalog.bbox = b;
        }
        if let Some(d) = &self.out_dir {
            cfg.output_dir = d.clone();
        }
        if cfg.catalog.path.as_os_str().is_empty() {
            bail!("no catalog given: pass --catalog or set catalog.path in --config");
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a catalog, report diagnostics and statistics.
    Ingest {
        path: PathBuf,
        #[arg(long)]
        bbox: Option<BoundingBox>,
        #[arg(long)]
        format: Option<CatalogFormat>,
        /// Write the kept records here (CSV or JSON by extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knowledge graph construction and statistics.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
    /// Train the classifier; writes checkpoint.json and training_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Score a checkpoint on the train, validation and test splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grid hotspot detection; trains first unless --checkpoint is given.
    Hotspots {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        cell_deg: Option<f64>,
        /// GeoJSON output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieve context for a question and print the analysis prompt.
    Query {
        text: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        /// Add one-hop graph neighbors of each hit.
        #[arg(long)]
        expand: bool,
        /// Print the retrieval result as JSON instead of the prompt.
        #[arg(long)]
        json: bool,
    },
    /// Semantic-coherence evaluation over a JSON batch of {query, ground_truth}.
    Coherence {
        #[arg(long)]
        batch: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline run.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reuse a checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphAction {
    /// Build the knowledge graph and write it as JSON.
    Build {
        #[command(flatten)]
        common: Common,
        /// Also link events closer than this many km.
        #[arg(long)]
        near_km: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Node and edge counts plus proximity-graph summary.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Read a graph written by `graph build` instead of a catalog.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        threshold_km: Option<f64>,
        /// Write the proximity edge list (`i j distance_km`).
        #[arg(long)]
        edges_out: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ingest(path: &Path, bbox: Option<BoundingBox>, format: Option<CatalogFormat>, out: Option<&Path>) -> anyhow::Result<()> {
    let format = match format.or_else(|| CatalogFormat::from_path(path)) {
        Some(f) => f,
        None => bail!("cannot infer the format of {}; pass --format", path.display()),
    };
    let parsed = parse_catalog(path, format)?;
    let bbox = bbox.unwrap_or(BoundingBox::HMA);
    let kept = filter_region(&parsed.records, &bbox)?;
    for d in &parsed.rejected {
        eprintln!("row {}: {}", d.row, d.reason);
    }
    println!("rows: {}", parsed.total_rows());
    println!("rejected: {}", parsed.rejected.len());
    println!("parsed: {}", parsed.records.len());
    println!("in region: {}", kept.len());
    print_json(&compute_stats(&kept))?;
    if let Some(out) = out {
        match CatalogFormat::from_path(out) {
            Some(CatalogFormat::Json) => {
                fs::write(out, serde_json::to_string_pretty(&catalog_to_json(&kept))?)?;
            }
            _ => {
                let f = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
                write_catalog_csv(&kept, f)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    train: Option<landrisk::gnn::Metrics>,
    val: Option<landrisk::gnn::Metrics>,
    test: Option<landrisk::gnn::Metrics>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { path, bbox, format, out } => ingest(&path, bbox, format, out.as_deref()),

        Command::Graph { action } => match action {
            GraphAction::Build { common, near_km, out } => {
                let mut cfg = common.resolve()?;
                if near_km.is_some() {
                    cfg.knowledge_graph.near_threshold_km = near_km;
                }
                let data = orch::ingest(&cfg.catalog)?;
                let g = orch::knowledge_graph(&cfg, &data.records)?;
                write_or_print(out.as_deref(), &(g.to_json()? + "\n"))
            }
            GraphAction::Stats {
                common,
                graph,
                threshold_km,
                edges_out,
            } => {
                let (g, prox) = match graph {
                    Some(path) => {
                        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                        let g = PropertyGraph::from_json(&text)?;
                        let mut points = Vec::new();
                        for &id in g.events() {
                            let n = g.node(id)?;
                            match (n.number("latitude"), n.number("longitude")) {
                                (Some(a), Some(b)) => points.push((a, b)),
                                _ => bail!("event node {id} lacks coordinates"),
                            }
                        }
                        let t = threshold_km.unwrap_or(landrisk::spatial_graph::DEFAULT_THRESHOLD_KM);
                        let prox = ProximityGraph::build(&points, t)?;
                        (g, prox)
                    }
                    None => {
                        let mut cfg = common.resolve()?;
                        if let Some(t) = threshold_km {
                            cfg.proximity.threshold_km = t;
                        }
                        let data = orch::ingest(&cfg.catalog)?;
                        (
                            orch::knowledge_graph(&cfg, &data.records)?,
                            orch::proximity_graph(&cfg, &data.records)?,
                        )
                    }
                };
                use landrisk::graph_store::{EdgeKind, NodeKind};
                println!("events: {}", g.count_kind(NodeKind::Event));
                println!("sources: {}", g.count_kind(NodeKind::Source));
                println!("gazetteer points: {}", g.count_kind(NodeKind::GazetteerPoint));
                println!("landslide profiles: {}", g.count_kind(NodeKind::LandslideProfile));
                for k in [EdgeKind::HasSource, EdgeKind::LocatedAt, EdgeKind::HasProfile, EdgeKind::Near] {
                    println!("{k:?} edges: {}", g.count_edge_kind(k));
                }
                let s = prox.summary();
                println!("proximity threshold km: {}", prox.threshold_km());
                println!("proximity edges: {}", s.edge_count);
                println!("mean degree: {:.4}", s.mean_degree);
                println!("max degree: {}", s.max_degree);
                println!("isolated: {}", s.isolated);
                println!("components: {}", s.components);
                if let Some(p) = edges_out {
                    let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    prox.write_edge_list(std::io::BufWriter::new(f))?;
                }
                Ok(())
            }
        },

        Command::Train {
            common,
            epochs,
            learning_rate,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.training.learning_rate = lr;
            }
            cfg.validate()?;
            let data = orch::ingest(&cfg.catalog)?;
            let ds = orch::dataset(&cfg, &data.records)?;
            let model = orch::fit(&cfg, &ds)?;
            let outcome = model.outcome.as_ref().expect("trained");
            ensure_dir(&cfg.output_dir)?;
            let ck_path = cfg.output_dir.join("checkpoint.json");
            Checkpoint::new(&model.config, &model.params).save(&ck_path)?;
            let log_path = cfg.output_dir.join("training_log.csv");
            write_history_csv(&outcome.history, fs::File::create(&log_path)?)?;
            let probs = orch::predict(&model, &ds)?;
            println!("parameters: {}", landrisk::gnn::param_count(&model.config));
            println!("epochs run: {}", outcome.history.len());
            println!("best epoch: {}", outcome.best_epoch);
            println!("initial train loss: {:.6}", outcome.initial_train_loss());
            println!("final train loss: {:.6}", outcome.final_train_loss);
            if !ds.split.test.is_empty() {
                let m = orch::evaluate_subset(&probs, &ds.classes, &ds.split.test)?;
                println!("test macro F1: {:.4}", m.macro_f1);
            }
            println!("checkpoint: {}", ck_path.display());
            println!("training log: {}", log_path.display());
            Ok(())
        }

        Command::Evaluate { checkpoint, common } => {
            let cfg = common.resolve()?;
            let data = orch::ingest(&cfg.catalog)?;
            let ds = orch::dataset(&cfg, &data.records)?;
            let model = orch::load_model(&checkpoint)?;
            let probs = orch::predict(&model, &ds)?;
            let score = |idx: &[usize]| -> anyhow::Result<_> {
                Ok(if idx.is_empty() {
                    None
                } else {
                    Some(orch::evaluate_subset(&probs, &ds.classes, idx)?)
                })
            };
            print_json(&EvalReport {
                train: score(&ds.split.train)?,
                val: score(&ds.split.val)?,
                test: score(&ds.split.test)?,
            })
        }

        Command::Hotspots {
            common,
            checkpoint,
            threshold,
            cell_deg,
            out,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = threshold {
                cfg.hotspot.risk_threshold = t;
            }
            if let Some(c) = cell_deg {
                cfg.hotspot.cell_deg = c;
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            cfg.validate()?;
            let data = orch::ingest(&cfg.catalog)?;
            let ds = orch::dataset(&cfg, &data.records)?;
            let model = match &cfg.checkpoint {
                Some(p) => orch::load_model(p)?,
                None => orch::fit(&cfg, &ds)?,
            };
            let probs = orch::predict(&model, &ds)?;
            let report = orch::hotspots(&cfg, &orch::risk_points(&data.records, &probs))?;
            for h in &report.hotspots {
                eprintln!(
                    "#{} cell ({}, {}) center ({:.3}, {:.3}) risk {:.4} events {}",
                    h.rank, h.cell.i, h.cell.j, h.cell.center.0, h.cell.center.1, h.cell.risk, h.cell.event_count
                );
            }
            write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&report.geojson)? + "\n"))
        }

        Command::Query {
            text,
            common,
            k,
            expand,
            json,
        } => {
            let cfg = common.resolve()?;
            let data = orch::ingest(&cfg.catalog)?;
            let g = orch::knowledge_graph(&cfg, &data.records)?;
            let embedder = HashingEmbedder::new(cfg.knowledge_graph.embedding_dim)?;
            let result = retrieve(&g, &embedder, &text, k.unwrap_or(cfg.retrieval.k), expand)?;
            if json {
                print_json(&result)
            } else {
                print!("{}", render_prompt(&text, &result, &g)?);
                Ok(())
            }
        }

        Command::Coherence { batch, common, k, out } => {
            let cfg = common.resolve()?;
            let queries = load_queries(&batch)?;
            let data = orch::ingest(&cfg.catalog)?;
            let g = orch::knowledge_graph(&cfg, &data.records)?;
            let embedder = HashingEmbedder::new(cfg.knowledge_graph.embedding_dim)?;
            let report = evaluate_batch(&g, &embedder, &queries, k.unwrap_or(cfg.retrieval.k), &cfg.retrieval.weights)?;
            write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }

        Command::Run { common, checkpoint } => {
            if common.config.is_none() && common.catalog.is_none() {
                bail!("run needs --config (or at least --catalog)");
            }
            let mut cfg = common.resolve()?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            let run = orch::run_pipeline(&cfg)?;
            for m in &run.messages {
                println!("[{}] {:?} -> {:?}: {} ({})", m.seq, m.sender, m.kind, m.summary, m.payload.display());
            }
            println!("hotspots: {}", run.summary.hotspots);
            if let Some(m) = &run.summary.test_metrics {
                println!("test macro F1: {:.4}", m.macro_f1);
            }
            println!("manifest: {}", run.artifacts.manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
