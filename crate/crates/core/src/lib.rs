pub mod analyzer;
pub mod repo_index;
pub mod retriever;
pub mod lm;
pub mod decoder;
pub mod config;
pub mod postprocess;
pub mod prompt;
pub mod corpusgen;
pub mod evalkit;
pub mod pipeline;
