//! Queue-imbalance analytics for limit order books.

pub mod book;
pub mod config;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod simulator;
pub mod stats;
pub mod time;
