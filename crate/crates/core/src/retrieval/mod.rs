//! Graph retrieval: embeddings, hybrid vector + graph search, prompt
//! assembly and semantic-coherence scoring.

pub mod coherence;
pub mod embed;
pub mod prompt;
pub mod search;

pub use coherence::{coherence, CoherenceReport, CoherenceWeights};
pub use embed::{cosine, embed_text, Embedding, EmbeddingProvider, HashingEmbedder};
pub use prompt::render_prompt;
pub use search::{retrieve, Provenance, RetrievalHit, RetrievalResult};
