//! Deterministic polarity flipping of dependency-parsed sentences, plus the
//! pieces needed to turn the flipped sentences into unlikelihood and
//! distillation training data and to score cloze probes.
//!
//! - [`conllu`]: CoNLL-U ingestion and the word-count filter.
//! - [`pattern`]: Semgrex-style dependency-tree patterns.
//! - [`rules`]: rule files, actions, negation and rule coverage.
//! - [`pairs`]: reference-paired training examples and dataset sampling.
//! - [`objective`]: unlikelihood / KL losses and the two-phase step schedule.
//! - [`cloze`]: templated cloze queries and P@k / negated top-1 error.

pub mod cloze;
pub mod conllu;
pub mod objective;
pub mod pairs;
pub mod pattern;
pub mod rules;

pub use conllu::{parse_conllu, ParsedSentence, Token};
pub use pattern::{compile, CompiledPattern, MatchResult};
pub use rules::{negate, render, NegationOutcome, RuleSet};
