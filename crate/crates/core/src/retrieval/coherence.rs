//! Semantic coherence of retrieved texts against a ground-truth answer.
//!
//! With `sᵢ` the cosine between retrieved text `i` (rank order, from 1) and
//! the ground truth:
//!
//! * `avg` is the mean of `sᵢ`, `max` and `min` its extremes;
//! * `weighted = Σ wᵢ sᵢ / Σ wᵢ` with `wᵢ = 1 / log₂(i + 1)`;
//! * `diversity` is the mean pairwise cosine distance among retrieved texts;
//! * `overall` clamps a weighted sum of the similarity components to `[0, 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{cosine, Embedding, EmbeddingProvider};
use super::search::retrieve;
use crate::error::{Error, Result};
use crate::graph_store::PropertyGraph;

/// Coefficients of the `overall` composite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceWeights {
    pub weighted: f64,
    pub avg: f64,
    pub max: f64,
    pub min: f64,
}

impl Default for CoherenceWeights {
    fn default() -> Self {
        CoherenceWeights {
            weighted: 0.45,
            avg: 0.35,
            max: 0.10,
            min: 0.10,
        }
    }
}

impl CoherenceWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.weighted, self.avg, self.max, self.min];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::arg("coherence weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub avg_similarity: f64,
    pub weighted_similarity: f64,
    pub max_similarity: f64,
    pub min_similarity: f64,
    pub diversity: f64,
    pub overall: f64,
    pub k: usize,
}

/// `1 / log₂(rank + 1)` for 1-based `rank`.
pub fn rank_weight(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Report over precomputed embeddings.
pub fn report_from_embeddings(
    retrieved: &[Embedding],
    truth: &Embedding,
    weights: &CoherenceWeights,
) -> Result<CoherenceReport> {
    if retrieved.is_empty() {
        return Err(Error::arg("coherence needs at least one retrieved text"));
    }
    weights.validate()?;
    let sims = retrieved
        .iter()
        .map(|e| cosine(e, truth))
        .collect::<Result<Vec<f64>>>()?;
    let k = sims.len();
    let avg = sims.iter().sum::<f64>() / k as f64;
    let (mut wsum, mut wtot) = (0.0, 0.0);
    for (i, s) in sims.iter().enumerate() {
        let w = rank_weight(i + 1);
        wsum += w * s;
        wtot += w;
    }
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = sims.iter().copied().fold(f64::INFINITY, f64::min);
    // Averages of values in [min, max] can stray by an ulp; pin them back.
    let avg = avg.clamp(min, max);
    let weighted = (wsum / wtot).clamp(min, max);

    let mut dist = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            dist += 1.0 - cosine(&retrieved[i], &retrieved[j])?;
            pairs += 1;
        }
    }
    let diversity = if pairs == 0 { 0.0 } else { (dist / pairs as f64).clamp(0.0, 2.0) };

    let overall = (weights.weighted * weighted + weights.avg * avg + weights.max * max + weights.min * min)
        .clamp(0.0, 1.0);
    Ok(CoherenceReport {
        avg_similarity: avg,
        weighted_similarity: weighted,
        max_similarity: max,
        min_similarity: min,
        diversity,
        overall,
        k,
    })
}

pub fn coherence_with<S: AsRef<str>>(
    retrieved: &[S],
    ground_truth: &str,
    provider: &dyn EmbeddingProvider,
    weights: &CoherenceWeights,
) -> Result<CoherenceReport> {
    let embedded: Vec<Embedding> = retrieved.iter().map(|t| provider.embed(t.as_ref())).collect();
    report_from_embeddings(&embedded, &provider.embed(ground_truth), weights)
}

/// Report with the default composite weights.
pub fn coherence<S: AsRef<str>>(
    retrieved: &[S],
    ground_truth: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<CoherenceReport> {
    coherence_with(retrieved, ground_truth, provider, &CoherenceWeights::default())
}

/// One entry of a batch evaluation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceQuery {
    pub query: String,
    pub ground_truth: String,
}

pub fn load_queries(path: &Path) -> Result<Vec<CoherenceQuery>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: String,
    pub retrieved_event_ids: Vec<String>,
    pub report: CoherenceReport,
}

/// Componentwise mean over the reports of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceAggregate {
    pub queries: usize,
    pub avg_similarity: f64,
    pub weighted_similarity: f64,
    pub max_similarity: f64,
    pub min_similarity: f64,
    pub diversity: f64,
    pub overall: f64,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub reports: Vec<QueryReport>,
    pub aggregate: Option<CoherenceAggregate>,
}

pub fn aggregate(reports: &[CoherenceReport]) -> Option<CoherenceAggregate> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&CoherenceReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(CoherenceAggregate {
        queries: reports.len(),
        avg_similarity: mean(|r| r.avg_similarity),
        weighted_similarity: mean(|r| r.weighted_similarity),
        max_similarity: mean(|r| r.max_similarity),
        min_similarity: mean(|r| r.min_similarity),
        diversity: mean(|r| r.diversity),
        overall: mean(|r| r.overall),
        mean_k: mean(|r| r.k as f64),
    })
}

/// Retrieve `k` events per query and score their descriptions against the
/// query's ground truth.
pub fn evaluate_batch(
    graph: &PropertyGraph,
    provider: &dyn EmbeddingProvider,
    queries: &[CoherenceQuery],
    k: usize,
    weights: &CoherenceWeights,
) -> Result<BatchReport> {
    let mut reports = Vec::with_capacity(queries.len());
    for q in queries {
        let result = retrieve(graph, provider, &q.query, k, false)?;
        let mut texts = Vec::with_capacity(result.len());
        let mut ids = Vec::with_capacity(result.len());
        for hit in result.vector_hits() {
            let node = graph.node(hit.node)?;
            texts.push(node.text("event_description").unwrap_or_default());
            ids.push(node.text("event_id").unwrap_or_default().to_string());
        }
        reports.push(QueryReport {
            query: q.query.clone(),
            retrieved_event_ids: ids,
            report: coherence_with(&texts, &q.ground_truth, provider, weights)?,
        });
    }
    let plain: Vec<CoherenceReport> = reports.iter().map(|r| r.report).collect();
    Ok(BatchReport {
        aggregate: aggregate(&plain),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::embed::HashingEmbedder;
    use proptest::prelude::*;

    #[test]
    fn self_retrieval_is_perfect() {
        let e = HashingEmbedder::default();
        let t = "monsoon debris flow near Pokhara";
        let r = coherence(&[t], t, &e).unwrap();
        for s in [r.avg_similarity, r.weighted_similarity, r.max_similarity, r.min_similarity] {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.diversity, 0.0);
        assert!((r.overall - 1.0).abs() < 1e-12);
        assert_eq!(r.k, 1);
    }

    #[test]
    fn two_item_weighting() {
        let a = Embedding::basis(4, 0);
        let b = Embedding::basis(4, 1);
        let r = report_from_embeddings(&[a.clone(), b], &a, &CoherenceWeights::default()).unwrap();
        assert!((r.avg_similarity - 0.5).abs() < 1e-12);
        let w2 = 1.0 / 3f64.log2();
        assert!((r.weighted_similarity - 1.0 / (1.0 + w2)).abs() < 1e-9);
        assert!((r.weighted_similarity - 0.6131).abs() < 1e-3);
        assert_eq!(r.diversity, 1.0);
    }

    #[test]
    fn identical_texts_have_no_diversity() {
        let e = HashingEmbedder::default();
        let r = coherence(&["rockfall", "rockfall"], "flood", &e).unwrap();
        assert_eq!(r.diversity, 0.0);
    }

    #[test]
    fn empty_retrieval_is_an_error() {
        let e = HashingEmbedder::default();
        assert!(coherence::<&str>(&[], "x", &e).is_err());
    }

    #[test]
    fn aggregate_is_componentwise_mean() {
        let e = HashingEmbedder::default();
        let a = coherence(&["a b"], "a b", &e).unwrap();
        let b = coherence(&["c"], "d", &e).unwrap();
        let m = aggregate(&[a, b]).unwrap();
        assert!((m.overall - (a.overall + b.overall) / 2.0).abs() < 1e-15);
        assert_eq!(m.queries, 2);
        assert!(aggregate(&[]).is_none());
    }

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::normalized(v).unwrap_or_else(|_| Embedding::basis(4, 0))
    }

    proptest! {
        #[test]
        fn ordering_bounds(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
            truth in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let ret: Vec<Embedding> = raw.into_iter().map(unit).collect();
            let r = report_from_embeddings(&ret, &unit(truth), &CoherenceWeights::default()).unwrap();
            prop_assert!(r.min_similarity <= r.avg_similarity && r.avg_similarity <= r.max_similarity);
            prop_assert!(r.min_similarity <= r.weighted_similarity && r.weighted_similarity <= r.max_similarity);
            prop_assert!((0.0..=2.0).contains(&r.diversity));
            prop_assert!((0.0..=1.0).contains(&r.overall));
        }

        #[test]
        fn permutation_only_moves_weighted(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..6),
            truth in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let ret: Vec<Embedding> = raw.into_iter().map(unit).collect();
            let mut rev = ret.clone();
            rev.reverse();
            let t = unit(truth);
            let w = CoherenceWeights::default();
            let a = report_from_embeddings(&ret, &t, &w).unwrap();
            let b = report_from_embeddings(&rev, &t, &w).unwrap();
            prop_assert!((a.avg_similarity - b.avg_similarity).abs() < 1e-12);
            prop_assert_eq!(a.max_similarity, b.max_similarity);
            prop_assert_eq!(a.min_similarity, b.min_similarity);
            prop_assert!((a.diversity - b.diversity).abs() < 1e-12);
        }
    }
}
