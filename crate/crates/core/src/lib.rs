//! Algorithms behind prose-forge: a painting-to-poem generator and a
//! modern-English to Shakespearean style-transfer translator.
//!
//! Everything here is pure computation over in-memory data and only needs
//! `alloc`. File formats, checkpoints and the command line live in the
//! `prose-forge` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod decode;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod pipeline;
pub mod poemgen;
pub mod pointer;
pub mod seq2seq;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
