//! Model problems, data generation, metrics, persistence and end-to-end
//! orchestration.

pub mod artifact;
pub mod examples;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod report;
