use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::graph_store::{EdgeKind, NodeId, NodeKind, PropertyGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    VectorHit,
    GraphExpansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub node: NodeId,
    /// Cosine to the query for vector hits; expansions carry the score of
    /// the hit they were reached from.
    pub similarity: f64,
    pub provenance: Provenance,
    /// The vector hit an expansion came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub hits: Vec<RetrievalHit>,
}

impl RetrievalResult {
    pub fn vector_hits(&self) -> impl Iterator<Item = &RetrievalHit> {
        self.hits.iter().filter(|h| h.provenance == Provenance::VectorHit)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Top-`k` Event nodes by cosine to the embedded query, optionally followed by
/// the Source, GazetteerPoint and LandslideProfile neighbors of each hit.
pub fn retrieve(
    graph: &PropertyGraph,
    provider: &dyn EmbeddingProvider,
    query: &str,
    k: usize,
    expand: bool,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let q = provider.embed(query);
    let top = graph.top_k_similar(q.as_slice(), k, Some(NodeKind::Event))?;
    if top.is_empty() {
        return Err(Error::Retrieval("the graph has no embedded event nodes".into()));
    }

    let mut seen: HashSet<NodeId> = top.iter().map(|(id, _)| *id).collect();
    let mut hits: Vec<RetrievalHit> = top
        .iter()
        .map(|&(node, similarity)| RetrievalHit {
            node,
            similarity,
            provenance: Provenance::VectorHit,
            via: None,
        })
        .collect();

    if expand {
        for &(hit, similarity) in &top {
            for (nb, edge) in graph.neighbors(hit, None)? {
                if edge.kind == EdgeKind::Near || !seen.insert(nb) {
                    continue;
                }
                hits.push(RetrievalHit {
                    node: nb,
                    similarity,
                    provenance: Provenance::GraphExpansion,
                    via: Some(hit),
                });
            }
        }
    }

    Ok(RetrievalResult {
        query: query.to_string(),
        hits,
    })
}
