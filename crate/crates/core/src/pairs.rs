//! Reference-paired training examples.
//!
//! Three streams come out of a parsed corpus:
//!
//! - `UNLIKELIHOOD`: sentence A is the original, B its negation, and the
//!   target is the token whose probability should go down.
//! - `DISTILL`: B is a copy of A, targeting the same token, so the model
//!   keeps its original prediction there.
//! - `DISTILL_PLAIN`: a bare corpus sentence with one content token as target.
//!
//! Masking is left to the consumer: examples only carry `target_index`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conllu::{within_length_limit, ParsedSentence, DEFAULT_MAX_WORDS};
use crate::rules::{negate, render, ApplyError, NegationOutcome, RuleSet};

pub const DEFAULT_N_PER_OBJECTIVE: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Objective {
    Unlikelihood,
    Distill,
    DistillPlain,
}

impl Objective {
    pub const ALL: [Objective; 3] = [
        Objective::Unlikelihood,
        Objective::Distill,
        Objective::DistillPlain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Unlikelihood => "UNLIKELIHOOD",
            Objective::Distill => "DISTILL",
            Objective::DistillPlain => "DISTILL_PLAIN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub sentence_a: String,
    pub sentence_b: String,
    pub b_tokens: Vec<String>,
    pub target_index: usize,
    pub target_form: String,
    pub objective: Objective,
    pub rule_name: Option<String>,
    pub source_id: String,
}

#[derive(Debug, Error)]
pub enum PairError {
    #[error("sentence `{source_id}` has {words} words, over the limit of {max_words}")]
    TooLong {
        source_id: String,
        words: usize,
        max_words: usize,
    },
    #[error("no negation rule applies to sentence `{0}`")]
    NoMatch(String),
    #[error("sentence `{source_id}`: {source}")]
    Apply {
        source_id: String,
        source: ApplyError,
    },
    #[error("sentence `{0}` has no token to use as a target")]
    NoCandidate(String),
    #[error(
        "not enough eligible sentences for {objective}: need {needed}, have {available}"
    )]
    Shortfall {
        objective: &'static str,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_length(s: &ParsedSentence, max_words: usize) -> Result<(), PairError> {
    if within_length_limit(s, max_words) {
        Ok(())
    } else {
        Err(PairError::TooLong {
            source_id: s.sent_id.clone(),
            words: s.word_count(),
            max_words,
        })
    }
}

fn forms(s: &ParsedSentence) -> Vec<String> {
    s.tokens().iter().map(|t| t.form.clone()).collect()
}

fn negation(s: &ParsedSentence, rules: &RuleSet) -> Result<NegationOutcome, PairError> {
    check_length(s, DEFAULT_MAX_WORDS)?;
    match negate(rules, s) {
        Ok(Some(o)) => Ok(o),
        Ok(None) => Err(PairError::NoMatch(s.sent_id.clone())),
        Err(source) => Err(PairError::Apply {
            source_id: s.sent_id.clone(),
            source,
        }),
    }
}

fn contradictory_from(s: &ParsedSentence, o: &NegationOutcome) -> TrainingExample {
    TrainingExample {
        sentence_a: render(s.tokens()),
        sentence_b: o.render(),
        b_tokens: o.tokens.iter().map(|t| t.form.clone()).collect(),
        target_index: o.ul_index,
        target_form: o.ul_token().form.clone(),
        objective: Objective::Unlikelihood,
        rule_name: Some(o.rule_name.clone()),
        source_id: s.sent_id.clone(),
    }
}

fn copy_from(s: &ParsedSentence, o: &NegationOutcome) -> TrainingExample {
    let a = render(s.tokens());
    let target_index = o.source_ul_index - 1;
    TrainingExample {
        sentence_b: a.clone(),
        sentence_a: a,
        b_tokens: forms(s),
        target_index,
        target_form: s.tokens()[target_index].form.clone(),
        objective: Objective::Distill,
        rule_name: Some(o.rule_name.clone()),
        source_id: s.sent_id.clone(),
    }
}

/// Original sentence as A, its negation as B, the unlikelihood token as target.
pub fn build_contradictory(
    s: &ParsedSentence,
    rules: &RuleSet,
) -> Result<TrainingExample, PairError> {
    let o = negation(s, rules)?;
    Ok(contradictory_from(s, &o))
}

/// A copied to B; the target is the token `build_contradictory` would pick.
pub fn build_copy(s: &ParsedSentence, rules: &RuleSet) -> Result<TrainingExample, PairError> {
    let o = negation(s, rules)?;
    Ok(copy_from(s, &o))
}

/// Positions eligible as plain-distillation targets: content words, or any
/// non-punctuation token when the sentence has no content word.
pub fn plain_candidates(s: &ParsedSentence) -> Vec<usize> {
    let content: Vec<usize> = s
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t.upos.as_str(), "NOUN" | "PROPN" | "VERB" | "ADJ"))
        .map(|(i, _)| i)
        .collect();
    if !content.is_empty() {
        return content;
    }
    s.tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_punct())
        .map(|(i, _)| i)
        .collect()
}

/// A bare sentence as B with one uniformly drawn candidate token as target.
pub fn build_plain(s: &ParsedSentence, rng_seed: u64) -> Result<TrainingExample, PairError> {
    check_length(s, DEFAULT_MAX_WORDS)?;
    let candidates = plain_candidates(s);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let &target_index = candidates
        .choose(&mut rng)
        .ok_or_else(|| PairError::NoCandidate(s.sent_id.clone()))?;
    Ok(TrainingExample {
        sentence_a: String::new(),
        sentence_b: render(s.tokens()),
        b_tokens: forms(s),
        target_index,
        target_form: s.tokens()[target_index].form.clone(),
        objective: Objective::DistillPlain,
        rule_name: None,
        source_id: s.sent_id.clone(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Each sampled sentence yields both an unlikelihood and a copy example.
    #[default]
    Shared,
    /// Unlikelihood, copy and plain examples come from disjoint sentences.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleConfig {
    pub n_per_objective: usize,
    pub seed: u64,
    pub pool: PoolMode,
    pub max_words: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n_per_objective: DEFAULT_N_PER_OBJECTIVE,
            seed: 0,
            pool: PoolMode::Shared,
            max_words: DEFAULT_MAX_WORDS,
        }
    }
}

/// Contiguous run of example ids (0-based line numbers) for one objective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    pub objective: Objective,
    pub first_id: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_per_objective: usize,
    pub counts: BTreeMap<Objective, usize>,
    pub streams: Vec<Stream>,
    pub seed: u64,
    pub pool: PoolMode,
    pub max_words: usize,
    pub rules_sha256: String,
    pub corpus_sentences: usize,
    pub eligible_negation: usize,
    pub eligible_plain: usize,
    /// SHA-256 of the JSONL bytes.
    pub dataset_sha256: String,
}

impl Manifest {
    pub fn stream(&self, objective: Objective) -> Option<&Stream> {
        self.streams.iter().find(|s| s.objective == objective)
    }

    pub fn total(&self) -> usize {
        self.streams.iter().map(|s| s.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn to_jsonl(&self) -> String {
        jsonl(&self.examples)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.to_jsonl().as_bytes())
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes the JSONL file and its manifest sidecar.
    pub fn write_files(&self, jsonl_path: &Path, manifest_path: &Path) -> io::Result<()> {
        fs::write(jsonl_path, self.to_jsonl())?;
        fs::write(manifest_path, self.manifest_json())
    }
}

fn jsonl(examples: &[TrainingExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Reads a JSONL dataset back.
pub fn read_jsonl(text: &str) -> Result<Vec<TrainingExample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

fn take<T: Clone>(
    pool: &[T],
    n: usize,
    objective: Objective,
) -> Result<Vec<T>, PairError> {
    if pool.len() < n {
        return Err(PairError::Shortfall {
            objective: objective.as_str(),
            needed: n,
            available: pool.len(),
        });
    }
    Ok(pool[..n].to_vec())
}

/// Samples `n_per_objective` examples of each kind from `corpus`.
///
/// Sentences over the word limit are never used. Sampling is uniform without
/// replacement and fully determined by the seed. The output lists all
/// unlikelihood examples, then the copies, then the plain sentences.
pub fn sample_dataset(
    corpus: &[ParsedSentence],
    rules: &RuleSet,
    config: &SampleConfig,
) -> Result<Dataset, PairError> {
    let n = config.n_per_objective;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| within_length_limit(&corpus[i], config.max_words))
        .collect();

    // Sentences with a usable negation, kept in corpus order before shuffling.
    let mut negatable: Vec<(usize, NegationOutcome)> = eligible
        .iter()
        .filter_map(|&i| match negate(rules, &corpus[i]) {
            Ok(Some(o)) => Some((i, o)),
            _ => None,
        })
        .collect();
    let eligible_negation = negatable.len();
    negatable.shuffle(&mut rng);

    let (ul_src, copy_src) = match config.pool {
        PoolMode::Shared => {
            let picked = take(&negatable, n, Objective::Unlikelihood)?;
            (picked.clone(), picked)
        }
        PoolMode::Disjoint => {
            let ul = take(&negatable, n, Objective::Unlikelihood)?;
            let rest = &negatable[ul.len()..];
            (ul, take(rest, n, Objective::Distill)?)
        }
    };

    let used: HashSet<usize> = match config.pool {
        PoolMode::Shared => HashSet::new(),
        PoolMode::Disjoint => ul_src.iter().chain(&copy_src).map(|(i, _)| *i).collect(),
    };
    let mut plain_pool: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|i| !used.contains(i) && !plain_candidates(&corpus[*i]).is_empty())
        .collect();
    let eligible_plain = plain_pool.len();
    plain_pool.shuffle(&mut rng);
    let plain_src = take(&plain_pool, n, Objective::DistillPlain)?;

    let mut examples = Vec::with_capacity(3 * n);
    examples.extend(ul_src.iter().map(|(i, o)| contradictory_from(&corpus[*i], o)));
    examples.extend(copy_src.iter().map(|(i, o)| copy_from(&corpus[*i], o)));
    for &i in &plain_src {
        let s = &corpus[i];
        let candidates = plain_candidates(s);
        let target_index = candidates[rng.gen_range(0..candidates.len())];
        examples.push(TrainingExample {
            sentence_a: String::new(),
            sentence_b: render(s.tokens()),
            b_tokens: forms(s),
            target_index,
            target_form: s.tokens()[target_index].form.clone(),
            objective: Objective::DistillPlain,
            rule_name: None,
            source_id: s.sent_id.clone(),
        });
    }

    let streams: Vec<Stream> = Objective::ALL
        .iter()
        .enumerate()
        .map(|(k, &objective)| Stream {
            objective,
            first_id: k * n,
            count: n,
        })
        .collect();
    let dataset_sha256 = hex::encode(Sha256::digest(jsonl(&examples).as_bytes()));
    Ok(Dataset {
        examples,
        manifest: Manifest {
            n_per_objective: n,
            counts: Objective::ALL.iter().map(|&o| (o, n)).collect(),
            streams,
            seed: config.seed,
            pool: config.pool,
            max_words: config.max_words,
            rules_sha256: rules.sha256().to_string(),
            corpus_sentences: corpus.len(),
            eligible_negation,
            eligible_plain,
            dataset_sha256,
        },
    })
}
