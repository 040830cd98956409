//! Relevance filtering over dense retrieval results.

pub mod error;
pub mod math;
pub mod vector;
pub mod judgment;
mod binio;
pub mod index;
pub mod optim;
pub mod encoder;
pub mod adapter;
pub mod data;
pub mod filter;
pub mod eval;
pub mod experiment;
pub mod config;
pub mod commands;

pub use error::{Error, Result};
