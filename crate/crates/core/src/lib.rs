//! Detects dollar amounts in text and re-expresses them as numerical
//! perspectives: per-capita amounts, comparisons against crowd-verified
//! reference objects, and context-ranked comparisons against a reference
//! corpus.

pub mod config;
pub mod crowdpipe;
pub mod embed;
pub mod engine;
pub mod error;
pub mod evalharness;
pub mod familiarity;
mod floatstr;
pub mod measure;
pub mod policies;
pub mod rank;
pub mod refstore;
pub mod serve;
mod tsv;

pub use error::{Error, Result};
pub use rust_decimal::Decimal;
