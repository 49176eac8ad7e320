pub mod coder_client;
pub mod corpus_model;
pub mod ingest;
pub mod plot;
pub mod registry;
pub mod saturation;
pub mod selection;
pub mod stats;
pub mod synth;
