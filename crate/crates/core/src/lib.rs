//! Support-example selection for in-context learning.
//!
//! The pipeline filters a labeled dataset down to individually informative
//! candidates ([`filtering`]), then beam-searches over demonstration
//! permutations guided by informativeness and diversity ([`search`]). The
//! language model is reached only through a [`scoring::Scorer`].

pub mod domain;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod infoscore;
pub mod run;
pub mod scoring;
pub mod search;

pub use domain::{Dataset, Example, ExampleId, LabelId, Permutation, PromptTemplate};
pub use error::{Error, Result};
pub use scoring::{LabelProbabilities, ScoreBackend, Scorer, ScorerRequest};
