//! A laboratory for speculative decoding with hybrid serial/parallel drafting.
//!
//! The crate implements a complete, exactly-analyzable speculative-decoding
//! pipeline over interpolated character/word n-gram language models:
//!
//! * [`ngram`] — the target language model: an interpolated, additively
//!   smoothed n-gram with full vocabulary support, exact conditional
//!   distributions, greedy/temperature decoding, and text persistence.
//! * [`drafter`] — the draft model: a short serial autoregressive head
//!   followed by parallel skip-gram heads that predict several future
//!   positions at once from the serial output, plus purely serial and purely
//!   parallel baseline architectures.
//! * [`tree`] — draft-tree construction, budgeted candidate selection,
//!   full-tree-attention path extension, and linearization into a
//!   deduplicated verification batch.
//! * [`verify`] — lossless verification of a candidate set against the
//!   target model, both greedy (argmax-exact) and stochastic
//!   (rejection-sampling, distribution-exact).
//! * [`theory`] — the acceptance-length calculus: expected accepted length
//!   for position-wise acceptance rates, and the ordering theorem showing
//!   that shifting acceptance mass toward earlier draft positions never
//!   reduces the expectation.
//! * [`harness`] — experiment configuration, round/experiment reports, the
//!   decoding loop, a wall-clock-free cost model, and architecture
//!   comparison including per-position acceptance profiling.
//!
//! Supporting modules: [`rng`] (a small documented splittable PRNG so runs
//! are reproducible byte-for-byte), [`vocab`] (byte- and word-level
//! vocabularies and tokenization), and [`error`] (the crate-wide error
//! type).

pub mod drafter;
pub mod error;
pub(crate) mod fsio;
pub mod harness;
pub mod ngram;
pub mod rng;
pub mod theory;
pub mod tree;
pub mod verify;
pub mod vocab;

pub use error::{Error, Result};
