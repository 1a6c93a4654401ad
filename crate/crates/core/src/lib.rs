pub mod canonical;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod registry;
pub mod results;
pub mod spec;
