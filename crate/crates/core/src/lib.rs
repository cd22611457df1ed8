pub mod domain;
pub mod ingest;
pub mod prompts;
pub mod forge;
pub mod metrics;
pub mod scoring;
pub mod flowcore;
pub mod toynet;
pub mod synergy;
