//! Core engine for taxonomy-driven literature reviews.
//!
//! The crate covers the developer-mode pipeline end to end:
//!
//! - [`corpus`]: ingest bibliographic exports, validate, deduplicate, merge updates
//! - [`taxonomy`]: classification dimensions and versioned prompt templates
//! - [`llm`]: provider gateway with retry/backoff, a scripted mock, response parsers
//! - [`classifier`]: repeated labeling runs, consolidation, the dimension gate
//! - [`evaluation`]: accuracy/F1, self-consistency, Jaccard, micro and sample P/R/F1
//! - [`citenet`]: reference resolution, category subgraphs, centralities
//! - [`analytics`]: frequency tables, co-occurrence matrix, cumulative series
//! - [`store`]: versioned artifact store and filtered paper queries
//! - [`pipeline`]: classify, consolidate, gate, analyze and rank in one pass
//! - [`workspace`]: artifact naming in the store and the steps shared by CLI and service
//!
//! Nothing here talks to the network unless the `http` feature is enabled and an
//! [`llm::HttpTransport`] is constructed.

pub mod analytics;
pub mod citenet;
pub mod classifier;
pub mod clock;
pub mod corpus;
pub mod evaluation;
pub mod llm;
pub mod pipeline;
pub mod store;
pub mod taxonomy;
pub mod workspace;

mod ids;

pub use clock::{Clock, FixedClock, SystemClock};
pub use ids::{LabelSet, PaperId};

/// Formats a rate as a percentage with two decimals, e.g. `0.66577 -> "66.58%"`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}
