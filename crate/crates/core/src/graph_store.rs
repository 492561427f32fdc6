//! In-memory property graph for catalog knowledge.
//!
//! Four node kinds are stored: one `Event` per catalog record plus
//! deduplicated `Source`, `GazetteerPoint` and `LandslideProfile` nodes.
//! Events point at them through `HAS_SOURCE`, `LOCATED_AT` and `HAS_PROFILE`
//! edges. `NEAR` edges join events within a distance threshold and are always
//! stored in both directions with the same weight (km).
//!
//! A graph is immutable once built. [`GraphBuilder`] is the only way to
//! insert nodes and edges; the finished [`PropertyGraph`] only reads.
//! Similarity search is an exhaustive scan over embedded nodes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{self, EventRecord};
use crate::error::{Error, Result};
use crate::retrieval::embed::{cosine_slices, EmbeddingProvider};
use crate::spatial_graph::ProximityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Event,
    Source,
    GazetteerPoint,
    LandslideProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "HAS_SOURCE")]
    HasSource,
    #[serde(rename = "LOCATED_AT")]
    LocatedAt,
    #[serde(rename = "HAS_PROFILE")]
    HasProfile,
    #[serde(rename = "NEAR")]
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Integer(i64),
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Number(x) => Some(x),
            Value::Integer(i) => Some(i as f64),
            _ => None,
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Integer(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub properties: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Node {
    pub fn text(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(Value::as_text)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.properties.get(key).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Read-only property graph. Serializes to `{dim, nodes, edges}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct PropertyGraph {
    dim: Option<usize>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(skip)]
    out_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    in_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    events: Vec<NodeId>,
    #[serde(skip)]
    event_ids: HashMap<String, NodeId>,
}

#[derive(Deserialize)]
struct RawGraph {
    dim: Option<usize>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for PropertyGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        let mut b = GraphBuilder::new(raw.dim);
        for (i, node) in raw.nodes.into_iter().enumerate() {
            if node.id.index() != i {
                return Err(Error::Construction(format!(
                    "node ids must be dense and ordered; found {} at position {i}",
                    node.id
                )));
            }
            let id = b.add_node(node.kind, node.properties)?;
            if let Some(e) = node.embedding {
                b.set_embedding(id, e)?;
            }
        }
        let mut near = Vec::new();
        for e in raw.edges {
            if e.kind == EdgeKind::Near {
                near.push(e);
            } else {
                b.add_edge(e.src, e.dst, e.kind, e.weight)?;
            }
        }
        // NEAR edges arrive as directed pairs; insert each pair once.
        let mut pending: HashMap<(NodeId, NodeId), f64> = HashMap::new();
        for e in &near {
            let w = e.weight.unwrap_or(0.0);
            if let Some(back) = pending.remove(&(e.dst, e.src)) {
                if back != w {
                    return Err(Error::Construction(format!(
                        "asymmetric NEAR weights between {} and {}",
                        e.src, e.dst
                    )));
                }
                b.add_near(e.src, e.dst, w)?;
            } else {
                pending.insert((e.src, e.dst), w);
            }
        }
        if let Some(((a, c), _)) = pending.into_iter().next() {
            return Err(Error::Construction(format!(
                "NEAR edge {a} -> {c} has no reverse edge"
            )));
        }
        Ok(b.finish())
    }
}

/// Incremental construction of a [`PropertyGraph`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: PropertyGraph,
}

impl GraphBuilder {
    /// `dim` fixes the embedding dimension, `None` for an unembedded graph.
    pub fn new(dim: Option<usize>) -> Self {
        GraphBuilder {
            graph: PropertyGraph {
                dim,
                nodes: Vec::new(),
                edges: Vec::new(),
                out_edges: Vec::new(),
                in_edges: Vec::new(),
                events: Vec::new(),
                event_ids: HashMap::new(),
            },
        }
    }

    pub fn add_node(&mut self, kind: NodeKind, properties: BTreeMap<String, Value>) -> Result<NodeId> {
        let g = &mut self.graph;
        let id = NodeId(
            u32::try_from(g.nodes.len()).map_err(|_| Error::Construction("too many nodes".into()))?,
        );
        if kind == NodeKind::Event {
            if let Some(eid) = properties.get("event_id").and_then(Value::as_text) {
                if g.event_ids.insert(eid.to_string(), id).is_some() {
                    return Err(Error::Construction(format!("duplicate event_id `{eid}`")));
                }
            }
            g.events.push(id);
        }
        g.nodes.push(Node {
            id,
            kind,
            properties,
            embedding: None,
        });
        g.out_edges.push(Vec::new());
        g.in_edges.push(Vec::new());
        Ok(id)
    }

    pub fn set_embedding(&mut self, id: NodeId, embedding: Vec<f64>) -> Result<()> {
        let dim = self
            .graph
            .dim
            .ok_or_else(|| Error::Construction("graph was built without an embedding dimension".into()))?;
        if embedding.len() != dim {
            return Err(Error::Construction(format!(
                "embedding has dimension {}, store expects {dim}",
                embedding.len()
            )));
        }
        let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Construction(format!("embedding norm {norm} is not 1")));
        }
        self.graph.check(id)?;
        self.graph.nodes[id.index()].embedding = Some(embedding);
        Ok(())
    }

    /// Directed edge. Use [`GraphBuilder::add_near`] for `NEAR`.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind, weight: Option<f64>) -> Result<()> {
        if kind == EdgeKind::Near {
            return self.add_near(src, dst, weight.unwrap_or(0.0));
        }
        self.push_edge(src, dst, kind, weight)
    }

    /// Symmetric `NEAR` pair with distance `km`.
    pub fn add_near(&mut self, a: NodeId, b: NodeId, km: f64) -> Result<()> {
        if a == b {
            return Err(Error::Construction(format!("NEAR self-loop on {a}")));
        }
        self.push_edge(a, b, EdgeKind::Near, Some(km))?;
        self.push_edge(b, a, EdgeKind::Near, Some(km))
    }

    fn push_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind, weight: Option<f64>) -> Result<()> {
        let g = &mut self.graph;
        g.check(src)?;
        g.check(dst)?;
        if let Some(w) = weight {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Construction(format!("edge weight {w} must be nonnegative")));
            }
        }
        let idx = g.edges.len();
        g.edges.push(Edge {
            src,
            dst,
            kind,
            weight,
        });
        g.out_edges[src.index()].push(idx);
        g.in_edges[dst.index()].push(idx);
        Ok(())
    }

    pub fn finish(self) -> PropertyGraph {
        self.graph
    }
}

/// Options for [`build_knowledge_graph_with`].
#[derive(Default)]
pub struct KnowledgeGraphOptions<'a> {
    /// Embed each event's description with this provider.
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    /// Add `NEAR` edges between events closer than this (km).
    pub near_threshold_km: Option<f64>,
}

/// One Event node per record plus deduplicated Source, GazetteerPoint and
/// LandslideProfile nodes.
pub fn build_knowledge_graph(records: &[EventRecord]) -> Result<PropertyGraph> {
    build_knowledge_graph_with(records, &KnowledgeGraphOptions::default())
}

pub fn build_knowledge_graph_with(
    records: &[EventRecord],
    opts: &KnowledgeGraphOptions<'_>,
) -> Result<PropertyGraph> {
    let mut b = GraphBuilder::new(opts.embedder.map(|e| e.dim()));
    let mut sources: HashMap<catalog::SourceKey, NodeId> = HashMap::new();
    let mut places: HashMap<catalog::GazetteerKey, NodeId> = HashMap::new();
    let mut profiles: HashMap<catalog::ProfileKey, NodeId> = HashMap::new();
    let mut event_nodes = Vec::with_capacity(records.len());

    for r in records {
        let ev = b.add_node(NodeKind::Event, event_properties(r))?;
        if let Some(embedder) = opts.embedder {
            b.set_embedding(ev, embedder.embed(&r.event_description).into_inner())?;
        }
        event_nodes.push(ev);

        if let Some(key) = catalog::source_key(r) {
            let id = match sources.get(&key) {
                Some(&id) => id,
                None => {
                    let props = BTreeMap::from([
                        ("name".to_string(), Value::from(key.0.as_str())),
                        ("link".to_string(), Value::from(key.1.as_str())),
                    ]);
                    let id = b.add_node(NodeKind::Source, props)?;
                    sources.insert(key, id);
                    id
                }
            };
            b.add_edge(ev, id, EdgeKind::HasSource, None)?;
        }

        let key = catalog::gazetteer_key(r);
        let place = match places.get(&key) {
            Some(&id) => id,
            None => {
                let props = BTreeMap::from([
                    ("latitude".to_string(), Value::from(key.0 as f64 / 1e4)),
                    ("longitude".to_string(), Value::from(key.1 as f64 / 1e4)),
                    ("description".to_string(), Value::from(r.location_description.as_str())),
                ]);
                let id = b.add_node(NodeKind::GazetteerPoint, props)?;
                places.insert(key, id);
                id
            }
        };
        b.add_edge(ev, place, EdgeKind::LocatedAt, None)?;

        let key = catalog::profile_key(r);
        let profile = match profiles.get(&key) {
            Some(&id) => id,
            None => {
                let props = BTreeMap::from([
                    ("landslide_size".to_string(), Value::from(key.0.as_str())),
                    ("trigger".to_string(), Value::from(key.1.as_str())),
                ]);
                let id = b.add_node(NodeKind::LandslideProfile, props)?;
                profiles.insert(key, id);
                id
            }
        };
        b.add_edge(ev, profile, EdgeKind::HasProfile, None)?;
    }

    if let Some(threshold) = opts.near_threshold_km {
        let points: Vec<(f64, f64)> = records.iter().map(EventRecord::coords).collect();
        let prox = ProximityGraph::build(&points, threshold)?;
        for &(i, j, d) in prox.edges() {
            b.add_near(event_nodes[i], event_nodes[j], d)?;
        }
    }

    Ok(b.finish())
}

fn event_properties(r: &EventRecord) -> BTreeMap<String, Value> {
    let mut p = BTreeMap::new();
    p.insert("event_id".into(), Value::from(r.event_id.as_str()));
    p.insert("event_date".into(), Value::from(r.event_date.format("%Y-%m-%d").to_string()));
    p.insert("latitude".into(), Value::from(r.latitude));
    p.insert("longitude".into(), Value::from(r.longitude));
    p.insert("location_description".into(), Value::from(r.location_description.as_str()));
    p.insert("location_accuracy".into(), Value::from(r.location_accuracy.as_str()));
    p.insert("fatality_count".into(), Value::from(i64::from(r.fatality_count)));
    p.insert("injury_count".into(), Value::from(i64::from(r.injury_count)));
    p.insert("event_title".into(), Value::from(r.event_title.as_str()));
    p.insert("event_description".into(), Value::from(r.event_description.as_str()));
    p.insert("landslide_size".into(), Value::from(r.landslide_size.as_str()));
    p
}

impl PropertyGraph {
    fn check(&self, id: NodeId) -> Result<()> {
        if id.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Lookup(id.0))
        }
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.index()).ok_or(Error::Lookup(id.0))
    }

    /// Event nodes in insertion (catalog) order.
    pub fn events(&self) -> &[NodeId] {
        &self.events
    }

    pub fn event_by_id(&self, event_id: &str) -> Option<NodeId> {
        self.event_ids.get(event_id).copied()
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn count_edge_kind(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Incident edges of `id`, optionally restricted to one kind, ordered by
    /// neighbor id. A symmetric `NEAR` pair is reported once.
    pub fn neighbors(&self, id: NodeId, kind: Option<EdgeKind>) -> Result<Vec<(NodeId, &Edge)>> {
        self.check(id)?;
        let i = id.index();
        let wanted = |e: &Edge| kind.is_none_or(|k| e.kind == k);
        let mut out: Vec<(NodeId, &Edge)> = self.out_edges[i]
            .iter()
            .map(|&ei| &self.edges[ei])
            .filter(|e| wanted(e))
            .map(|e| (e.dst, e))
            .collect();
        out.extend(
            self.in_edges[i]
                .iter()
                .map(|&ei| &self.edges[ei])
                .filter(|e| e.kind != EdgeKind::Near && wanted(e))
                .map(|e| (e.src, e)),
        );
        out.sort_by_key(|(n, e)| (*n, e.kind));
        Ok(out)
    }

    /// Exhaustive cosine search over embedded nodes. Ties break by ascending id.
    pub fn top_k_similar(
        &self,
        query: &[f64],
        k: usize,
        kind: Option<NodeKind>,
    ) -> Result<Vec<(NodeId, f64)>> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        let Some(dim) = self.dim else {
            return Ok(Vec::new());
        };
        if query.len() != dim {
            return Err(Error::arg(format!(
                "query has dimension {}, store expects {dim}",
                query.len()
            )));
        }
        let mut scored = Vec::new();
        for node in &self.nodes {
            if kind.is_some_and(|k| node.kind != k) {
                continue;
            }
            if let Some(e) = &node.embedding {
                scored.push((node.id, cosine_slices(query, e)?));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn neighbors(
    graph: &PropertyGraph,
    id: NodeId,
    kind: Option<EdgeKind>,
) -> Result<Vec<(NodeId, &Edge)>> {
    graph.neighbors(id, kind)
}

pub fn top_k_similar(
    graph: &PropertyGraph,
    query: &[f64],
    k: usize,
    kind: Option<NodeKind>,
) -> Result<Vec<(NodeId, f64)>> {
    graph.top_k_similar(query, k, kind)
}
