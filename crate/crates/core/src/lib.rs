//! Keyword-conditioned abstractive summarization.
//!
//! A small GPT-style decoder is fine-tuned on `[BOS] keywords [SUM] summary
//! [EOS]` rows with a language-modelling loss on the gold summary and a
//! multiple-choice loss that picks the gold summary out of distractors.
//! Summaries are then sampled from keyword prompts. An unsupervised K-medoid
//! extractive summarizer serves as the baseline, and ROUGE scores both.

pub mod cli;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod extractive;
pub mod hash;
pub mod model;
pub mod registry;
pub mod rouge;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
