//! History augmentation with synthetic questions and consistency training
//! for conversational question answering.
//!
//! Pipeline: split the evaluation dialogs, train a question generator, mine
//! noun-phrase answers near each real answer, generate synthetic questions,
//! select a few per turn into an augmented history, train an extractive
//! reader on both histories with a KL consistency term, and score it with
//! F1 / HEQ-Q / HEQ-D.

pub mod answer_mining;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod qa;
pub mod qg;
pub mod rng;
pub mod selector;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
