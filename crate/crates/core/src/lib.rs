//! Zero-shot hierarchical text classification with taxonomy retrieval.
//!
//! A document is embedded and compared against every label of a leveled
//! taxonomy. The labels nearest to it at each level, together with the
//! parent-child edges between them, form a small subgraph. Its root-to-leaf
//! paths are serialized into the prompt of a level-by-level chat
//! classification loop, where each level's candidates are the children of the
//! previous prediction plus the labels retrieved at that level.

pub mod classifier;
pub mod embedding;
pub mod evaluation;
pub mod harness;
pub mod http;
pub mod llm;
pub mod prompt;
pub mod report;
pub mod retrieval;
pub mod taxonomy;
pub mod text;
