//! Semantic file-system overlay: an embedding index over a mirrored directory
//! tree, the syscalls and prompt-level APIs built on it, and a parser that
//! turns natural-language requests into confirmation-gated calls.

pub mod api;
pub mod bench;
pub mod clock;
pub mod codec;
pub mod config;
pub mod diff;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod extract;
pub mod gate;
pub mod llm;
pub mod parser;
pub mod share;
pub mod store;
pub mod supervisor;
pub mod syscalls;
pub mod versions;

pub use error::{Error, Result};
