//! Evidence-grounded counter-responses to misinformation, refined with
//! element-level critiques on numbers, named entities and topic.

pub mod bench;
pub mod critics;
pub mod datagen;
pub mod eval;
pub mod extract;
pub mod feedback;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod orchestrator;
pub mod template;
