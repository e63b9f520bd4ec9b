//! Negation rules: a pattern, an ordered list of actions and a priority
//! list for picking the unlikelihood token.
//!
//! Rule files are JSON arrays of
//! `{name, pattern, actions: [{type, ...}], ul_priority: [...]}`. Action
//! types are `move`, `replace`, `insert` and `lemmatize`.

mod apply;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conllu::{ParsedSentence, Token};
use crate::pattern::{compile, CompiledPattern, MatchResult, PatternError};

pub use apply::{apply_actions, ApplyError};

/// The rule file shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../../rules/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Before,
    After,
}

fn default_lemmatize_target() -> String {
    "A".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    /// Relocates the single captured token next to the anchor.
    Move {
        to_move: String,
        anchor: String,
        position: Position,
    },
    /// Replaces the captured token's form; an empty token deletes it.
    Replace { to_replace: String, token: String },
    /// Adds a new token next to the anchor. `rel` is the new token's UPOS.
    Insert {
        token: String,
        #[serde(default)]
        rel: String,
        anchor: String,
        position: Position,
    },
    /// Replaces the target's form with its lemma.
    Lemmatize {
        #[serde(default = "default_lemmatize_target")]
        target: String,
    },
}

impl Action {
    /// Captures this action reads.
    pub fn captures(&self) -> Vec<&str> {
        match self {
            Action::Move {
                to_move, anchor, ..
            } => vec![to_move, anchor],
            Action::Replace { to_replace, .. } => vec![to_replace],
            Action::Insert { anchor, .. } => vec![anchor],
            Action::Lemmatize { target } => vec![target],
        }
    }

    /// Captures whose surface form this action changes.
    fn rewrites(&self) -> Option<&str> {
        match self {
            Action::Replace { to_replace, .. } => Some(to_replace),
            Action::Lemmatize { target } => Some(target),
            Action::Move { .. } | Action::Insert { .. } => None,
        }
    }
}

/// On-disk form of a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub pattern: String,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub ul_priority: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct NegationRule {
    pub name: String,
    pub pattern: CompiledPattern,
    pub actions: Vec<Action>,
    pub ul_priority: Vec<String>,
}

impl NegationRule {
    pub fn from_spec(spec: RuleSpec) -> Result<Self, RuleError> {
        let pattern = compile(&spec.pattern).map_err(|source| RuleError::Pattern {
            rule: spec.name.clone(),
            source,
        })?;
        let referenced = spec
            .actions
            .iter()
            .flat_map(Action::captures)
            .chain(spec.ul_priority.iter().map(String::as_str));
        for capture in referenced {
            if !pattern.has_capture(capture) {
                return Err(RuleError::DanglingCapture {
                    rule: spec.name.clone(),
                    capture: capture.to_string(),
                });
            }
        }
        Ok(Self {
            name: spec.name,
            pattern,
            actions: spec.actions,
            ul_priority: spec.ul_priority,
        })
    }

    pub fn to_spec(&self) -> RuleSpec {
        RuleSpec {
            name: self.name.clone(),
            pattern: self.pattern.source().to_string(),
            actions: self.actions.clone(),
            ul_priority: self.ul_priority.clone(),
        }
    }

    fn rewritten_captures(&self) -> HashSet<&str> {
        self.actions.iter().filter_map(Action::rewrites).collect()
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file is not a valid rule list: {0}")]
    Schema(String),
    #[error("duplicate rule name `{0}`")]
    DuplicateName(String),
    #[error("rule `{rule}`: {source}")]
    Pattern {
        rule: String,
        #[source]
        source: PatternError,
    },
    #[error("rule `{rule}` references capture `{capture}` that its pattern does not define")]
    DanglingCapture { rule: String, capture: String },
    #[error("cannot read rule file {path}: {message}")]
    Io { path: String, message: String },
}

/// Rules in file order, immutable once loaded.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<NegationRule>,
    sha256: String,
}

impl RuleSet {
    pub fn rules(&self) -> &[NegationRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Hex SHA-256 of the bytes the set was loaded from.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    pub fn get(&self, name: &str) -> Option<&NegationRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn default_rules() -> Self {
        load_ruleset(DEFAULT_RULES).expect("shipped rule file is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RuleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        load_ruleset(&text)
    }
}

pub fn load_ruleset(rule_file: &str) -> Result<RuleSet, RuleError> {
    let specs: Vec<RuleSpec> =
        serde_json::from_str(rule_file).map_err(|e| RuleError::Schema(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(specs.len());
    for spec in specs {
        if !seen.insert(spec.name.clone()) {
            return Err(RuleError::DuplicateName(spec.name));
        }
        rules.push(NegationRule::from_spec(spec)?);
    }
    Ok(RuleSet {
        rules,
        sha256: hex::encode(Sha256::digest(rule_file.as_bytes())),
    })
}

/// A polarity-flipped sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationOutcome {
    /// Transformed tokens, renumbered, heads rewired.
    pub tokens: Vec<Token>,
    /// 0-based position of the unlikelihood token in `tokens`.
    pub ul_index: usize,
    pub rule_name: String,
    /// The match that triggered the rule, against the source sentence.
    pub source_match: MatchResult,
    /// Index of the unlikelihood token in the source sentence.
    pub source_ul_index: usize,
}

impl NegationOutcome {
    pub fn ul_token(&self) -> &Token {
        &self.tokens[self.ul_index]
    }

    pub fn render(&self) -> String {
        render(&self.tokens)
    }

    /// The transformed tokens as a sentence, e.g. to negate it again.
    pub fn to_sentence(&self, sent_id: impl Into<String>) -> ParsedSentence {
        ParsedSentence::new(sent_id, Some(self.render()), self.tokens.clone())
            .expect("actions preserve the tree")
    }
}

/// Picks the first rule (file order) whose pattern matches.
pub fn select_rule<'r>(
    rules: &'r RuleSet,
    s: &ParsedSentence,
) -> Option<(&'r NegationRule, MatchResult)> {
    rules
        .rules
        .iter()
        .find_map(|r| r.pattern.first_match(s).map(|m| (r, m)))
}

/// Unlikelihood token for `rule` on match `m`: the first bound capture in
/// `ul_priority`, then object, subject and the first noun. Tokens the rule
/// rewrites or deletes are never chosen.
pub fn select_ul_token(rule: &NegationRule, s: &ParsedSentence, m: &MatchResult) -> Option<usize> {
    let rewritten: HashSet<usize> = rule
        .rewritten_captures()
        .into_iter()
        .filter_map(|c| m.get(c))
        .collect();
    let usable = |idx: usize| !rewritten.contains(&idx);
    rule.ul_priority
        .iter()
        .map(String::as_str)
        .chain(["object", "subject"])
        .filter_map(|name| m.get(name))
        .find(|&idx| usable(idx))
        .or_else(|| {
            s.tokens()
                .iter()
                .find(|t| matches!(t.upos.as_str(), "NOUN" | "PROPN") && usable(t.index))
                .map(|t| t.index)
        })
}

/// Flips the polarity of `s` with the first matching rule.
///
/// Returns `Ok(None)` when no rule matches, or the matching rule leaves no
/// token to serve as the unlikelihood target.
pub fn negate(rules: &RuleSet, s: &ParsedSentence) -> Result<Option<NegationOutcome>, ApplyError> {
    let Some((rule, m)) = select_rule(rules, s) else {
        return Ok(None);
    };
    let Some(source_ul) = select_ul_token(rule, s, &m) else {
        return Ok(None);
    };
    let applied = apply::apply_tracking(rule, s, &m, source_ul)?;
    Ok(Some(NegationOutcome {
        tokens: applied.tokens,
        ul_index: applied.tracked.expect("unlikelihood token is never deleted"),
        rule_name: rule.name.clone(),
        source_match: m,
        source_ul_index: source_ul,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Upper-case the first character of the output.
    pub recapitalize: bool,
}

/// Joins forms, honoring each token's `space_after`.
pub fn render(tokens: &[Token]) -> String {
    render_with(tokens, RenderOptions::default())
}

pub fn render_with(tokens: &[Token], opts: RenderOptions) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        out.push_str(&t.form);
        if t.space_after && i + 1 < tokens.len() {
            out.push(' ');
        }
    }
    if opts.recapitalize {
        let mut chars = out.chars();
        if let Some(first) = chars.next() {
            return first.to_uppercase().chain(chars).collect();
        }
    }
    out
}

/// Per-rule match counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// `(rule name, sentences attributed to it)` in rule-file order.
    pub per_rule: Vec<(String, usize)>,
    pub unmatched: usize,
    /// Sentences whose winning rule failed to apply.
    pub failed: usize,
    pub total: usize,
}

impl CoverageStats {
    pub fn unmatched_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.unmatched as f64 / self.total as f64
        }
    }

    pub fn count(&self, rule: &str) -> Option<usize> {
        self.per_rule
            .iter()
            .find(|(n, _)| n == rule)
            .map(|&(_, c)| c)
    }
}

impl fmt::Display for CoverageStats {
    /// Two-column census table: rule name and number of sentences matched.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ("Rule Name", "# of Sentences Matched");
        let width = self
            .per_rule
            .iter()
            .map(|(n, _)| n.chars().count())
            .chain([header.0.len(), "unmatched".len()])
            .max()
            .unwrap_or(0);
        writeln!(f, "{:<width$} | {}", header.0, header.1)?;
        writeln!(f, "{}-+-{}", "-".repeat(width), "-".repeat(header.1.len()))?;
        for (name, count) in &self.per_rule {
            writeln!(f, "{name:<width$} | {count}")?;
        }
        if self.failed > 0 {
            writeln!(f, "{:<width$} | {}", "failed", self.failed)?;
        }
        writeln!(f, "{:<width$} | {}", "unmatched", self.unmatched)?;
        writeln!(f, "{}-+-{}", "-".repeat(width), "-".repeat(header.1.len()))?;
        writeln!(f, "{:<width$} | {}", "total", self.total)?;
        write!(
            f,
            "unmatched fraction: {}/{} = {:.4}",
            self.unmatched,
            self.total,
            self.unmatched_fraction()
        )
    }
}

/// Attributes each sentence to the rule [`negate`] selects for it.
pub fn coverage_stats<'a, I>(rules: &RuleSet, corpus: I) -> CoverageStats
where
    I: IntoIterator<Item = &'a ParsedSentence>,
{
    let mut counts = vec![0usize; rules.len()];
    let mut stats = CoverageStats {
        per_rule: Vec::new(),
        unmatched: 0,
        failed: 0,
        total: 0,
    };
    for s in corpus {
        stats.total += 1;
        match negate(rules, s) {
            Ok(Some(outcome)) => {
                let pos = rules
                    .rules
                    .iter()
                    .position(|r| r.name == outcome.rule_name)
                    .expect("outcome names a loaded rule");
                counts[pos] += 1;
            }
            Ok(None) => stats.unmatched += 1,
            Err(_) => stats.failed += 1,
        }
    }
    stats.per_rule = rules
        .rules
        .iter()
        .zip(counts)
        .map(|(r, c)| (r.name.clone(), c))
        .collect();
    stats
}
