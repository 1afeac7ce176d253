//! Mining entity name evolution from wiki list pages and articles.
//!
//! The pipeline parses curated lists of former names into [`model::EvolutionChain`]s,
//! resolves each name to an article, and searches those articles for the
//! shortest run of sentences that mentions a change completely.

pub mod corpus;
pub mod listparse;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod stats;
pub mod window;
