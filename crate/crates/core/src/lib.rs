//! Retrieval-augmented neural machine translation workbench.
//!
//! The crate contains everything needed to compare three ways of feeding
//! translation-memory fuzzy matches to a transformer:
//!
//! * `rat-cat` concatenates the source and all matches into one encoder pass,
//! * `rat-sep` encodes the source and every match independently, with a
//!   second encoder for matches,
//! * `rat-si` encodes the source once plus one joint `source ⟨sep⟩ match`
//!   pass per match, keeping only the match positions of those passes.
//!
//! Around the architectures live the supporting pieces: a tape-based
//! differentiator ([`tensor`]), a byte-pair tokenizer ([`tokenizer`]), an
//! Okapi BM25 translation-memory index ([`retriever`]), the transformer
//! ([`model`]), memory assembly ([`arch`]), optimisation ([`training`]),
//! search ([`decoding`]), BLEU and bootstrap testing ([`evaluation`]) and the
//! per-sentence latency protocol ([`bench`]).

pub mod arch;
pub mod bench;
pub mod config;
pub mod decoding;
pub mod evaluation;
pub mod exec;
pub mod model;
pub mod retriever;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod training;

mod error;

pub use error::{Error, Result};
