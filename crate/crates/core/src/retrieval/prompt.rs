use std::fmt::Write;

use super::search::{Provenance, RetrievalResult};
use crate::error::{Error, Result};
use crate::graph_store::{Node, NodeKind, PropertyGraph};

/// Analysis sections every rendered prompt asks for, in order.
pub const SECTION_HEADERS: [&str; 5] = [
    "Risk Patterns",
    "Geographic Distribution",
    "Temporal Trends",
    "Trigger Mechanisms",
    "Climate Change Implications",
];

/// Marker that opens each context block.
pub const CONTEXT_MARKER: &str = "[Context ";

fn describe(out: &mut String, node: &Node) {
    let text = |k: &str| node.text(k).unwrap_or("unknown");
    match node.kind {
        NodeKind::Event => {
            let _ = writeln!(out, "Title: {}", text("event_title"));
            let _ = writeln!(out, "Date: {}", text("event_date"));
            let _ = writeln!(
                out,
                "Location: {} ({:.4}, {:.4})",
                text("location_description"),
                node.number("latitude").unwrap_or(f64::NAN),
                node.number("longitude").unwrap_or(f64::NAN),
            );
            let _ = writeln!(
                out,
                "Impact: {} fatalities, {} injuries",
                node.number("fatality_count").unwrap_or(0.0),
                node.number("injury_count").unwrap_or(0.0),
            );
            let _ = writeln!(out, "Size: {}", text("landslide_size"));
            let _ = writeln!(out, "Description: {}", text("event_description"));
        }
        NodeKind::Source => {
            let _ = writeln!(out, "Source: {} <{}>", text("name"), text("link"));
        }
        NodeKind::GazetteerPoint => {
            let _ = writeln!(
                out,
                "Place: {} ({:.4}, {:.4})",
                text("description"),
                node.number("latitude").unwrap_or(f64::NAN),
                node.number("longitude").unwrap_or(f64::NAN),
            );
        }
        NodeKind::LandslideProfile => {
            let _ = writeln!(out, "Profile: size {}, trigger {}", text("landslide_size"), text("trigger"));
        }
    }
}

/// Assemble the analysis prompt: instructions, the query, one context block
/// per retrieved node and the five section headers.
pub fn render_prompt(query: &str, retrieval: &RetrievalResult, graph: &PropertyGraph) -> Result<String> {
    if retrieval.is_empty() {
        return Err(Error::arg("cannot render a prompt from an empty retrieval"));
    }
    let mut out = String::new();
    out.push_str(
        "You are a landslide risk analyst. Using only the context below, answer the query \
         and complete every section.\n\n",
    );
    let _ = writeln!(out, "Query: {query}\n");
    out.push_str("# Context\n\n");
    for (n, hit) in retrieval.hits.iter().enumerate() {
        let node = graph.node(hit.node)?;
        let origin = match hit.provenance {
            Provenance::VectorHit => format!("vector hit, similarity {:.4}", hit.similarity),
            Provenance::GraphExpansion => match hit.via {
                Some(v) => format!("graph expansion from {v}"),
                None => "graph expansion".to_string(),
            },
        };
        let _ = writeln!(out, "{CONTEXT_MARKER}{}] {:?} {} ({origin})", n + 1, node.kind, node.id);
        describe(&mut out, node);
        out.push('\n');
    }
    out.push_str("# Analysis\n\n");
    for h in SECTION_HEADERS {
        let _ = writeln!(out, "## {h}\n");
    }
    Ok(out)
}

/// Seam for the answer model.
pub trait AnswerGenerator {
    fn generate(&self, prompt: &str) -> Result<String>;
}

/// Offline stand-in: answers with the prompt's context section verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl AnswerGenerator for EchoGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        let start = prompt.find("# Context\n").unwrap_or(0);
        let end = prompt.find("# Analysis\n").unwrap_or(prompt.len());
        Ok(prompt[start..end].trim_end().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{parse_catalog_str, CatalogFormat};
    use crate::graph_store::{build_knowledge_graph_with, KnowledgeGraphOptions};
    use crate::retrieval::embed::HashingEmbedder;
    use crate::retrieval::search::retrieve;

    const CSV: &str = "\
event_id,event_date,latitude,longitude,event_title,event_description,fatality_count,injury_count
a,2015-07-01,28.0,84.0,Slide A,mudflow buries road,3,1
b,2016-08-01,28.1,84.1,Slide B,rockfall blocks highway,0,0
c,2017-06-01,30.0,80.0,Slide C,debris flow hits village,0,2
d,2018-06-01,31.0,81.0,Slide D,bank collapse,1,0
";

    fn setup() -> PropertyGraph {
        let recs = parse_catalog_str(CSV, CatalogFormat::Csv).unwrap().records;
        let e = HashingEmbedder::default();
        build_knowledge_graph_with(
            &recs,
            &KnowledgeGraphOptions {
                embedder: Some(&e),
                near_threshold_km: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn headers_once_and_one_block_per_node() {
        let g = setup();
        let r = retrieve(&g, &HashingEmbedder::default(), "mudflow", 3, false).unwrap();
        let p = render_prompt("mudflow", &r, &g).unwrap();
        for h in SECTION_HEADERS {
            assert_eq!(p.matches(&format!("## {h}\n")).count(), 1, "{h}");
        }
        assert_eq!(p.matches(CONTEXT_MARKER).count(), 3);
        assert!(p.contains("Query: mudflow"));
        assert!(p.contains("Impact: 3 fatalities, 1 injuries"));
        assert_eq!(p, render_prompt("mudflow", &r, &g).unwrap());
    }

    #[test]
    fn expansions_get_blocks_too() {
        let g = setup();
        let r = retrieve(&g, &HashingEmbedder::default(), "rockfall", 1, true).unwrap();
        let p = render_prompt("rockfall", &r, &g).unwrap();
        assert_eq!(p.matches(CONTEXT_MARKER).count(), r.len());
        assert!(p.contains("graph expansion from"));
    }

    #[test]
    fn echo_generator_returns_context() {
        let g = setup();
        let r = retrieve(&g, &HashingEmbedder::default(), "collapse", 1, false).unwrap();
        let p = render_prompt("collapse", &r, &g).unwrap();
        let answer = EchoGenerator.generate(&p).unwrap();
        assert!(answer.starts_with("# Context"));
        assert!(answer.contains("Slide D"));
        assert!(!answer.contains("## Risk Patterns"));
    }
}
