//! Corpus curation toolkit for multilingual LLM pretraining data.
//!
//! The crate covers the data side of a pretraining run end to end:
//!
//! - [`corpus`]: document model and JSONL shard I/O
//! - [`normalize`]: markup and whitespace cleanup
//! - [`ngram_lm`]: smoothed word n-gram model for perplexity and loss
//! - [`filter`]: harmful-content, PII and quality filters
//! - [`dedup`]: SimHash + embedding near-duplicate removal and decontamination
//! - [`tokenizer`]: byte-level BPE training, encoding, compression ratio
//! - [`schedule`]: staged data mixture planning and LR schedule arithmetic
//! - [`sft_clean`]: SFT pair cleaning (rules, quality gate, semantic dedup)
//! - [`contam`]: loss-differential overfitting analysis
//!
//! Numeric kernels that have no reason to be tied to one float width
//! (learning-rate curves, embeddings, cosine similarity) are generic over
//! [`num_traits::Float`]; the aliases below pin the common instantiations.

pub mod contam;
pub mod corpus;
pub mod dedup;
pub mod filter;
pub mod normalize;
pub mod schedule;
pub mod sft_clean;
pub mod synth;
pub mod ngram_lm;
pub mod text;
pub mod tokenizer;

pub use corpus::{Document, PipelineReport, Shard};
pub use ngram_lm::{NgramLM, ScoredText};

/// Float type accepted by the generic numeric kernels.
pub trait Scalar: num_traits::Float + Send + Sync + std::fmt::Debug + 'static {}

impl<T> Scalar for T where T: num_traits::Float + Send + Sync + std::fmt::Debug + 'static {}

pub type Signature64 = dedup::Signature<f64>;
pub type Signature32 = dedup::Signature<f32>;
pub type SigIndex64 = dedup::SigIndex<f64>;
pub type SigIndex32 = dedup::SigIndex<f32>;
pub type LrSchedule64 = schedule::LrSchedule<f64>;
pub type LrSchedule32 = schedule::LrSchedule<f32>;
