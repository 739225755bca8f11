//! Retrieval-augmented generation over hybrid audio/text knowledge bases.
//!
//! The pieces compose bottom-up: [`kb`] and [`store`] hold knowledge and its
//! embeddings, [`encoder`] turns instruction-templated queries into unit
//! vectors, [`retrieval`] ranks by cosine, [`projection`] trains a linear head
//! with InfoNCE, [`audio`] augments waveforms, [`rag`] builds prompts and
//! selects answers, [`eval`] scores runs. [`engine::Engine`] ties them
//! together for the CLI and the HTTP [`service`].

pub mod audio;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod eval;
pub mod kb;
pub mod projection;
pub mod rag;
pub mod retrieval;
pub mod service;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
