//! Dependency-tree patterns in the Semgrex dialect used by the negation
//! rules.
//!
//! Supported syntax:
//!
//! ```text
//! node     := '{' [attr (';' attr)*] '}' ['=' name]
//! attr     := '$' | key ':' '/' regex '/'          key ∈ word lemma tag pos cpos
//! expr     := atom relation*
//! atom     := node | '(' expr ')'
//! relation := ('>' | '?>') (label | '/' regex '/') ['=' name] target
//!           | '$++' target
//! target   := node | '(' expr ')'
//! ```
//!
//! Relations following an atom all hang off that atom's head node. `$`
//! requires the token to be the tree root. Regexes match whole strings.
//! `A $++ B` means `A` and `B` share a head and `A` comes first.

mod matcher;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{ParsedSentence, Token};

pub type NodeId = usize;
pub type ScopeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("invalid regex /{source_text}/ at byte {position}: {message}")]
    Regex {
        position: usize,
        source_text: String,
        message: String,
    },
}

/// Token attribute a node constraint inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attr {
    Word,
    Lemma,
    Tag,
    Pos,
    Cpos,
}

impl Attr {
    fn from_key(key: &str) -> Option<Self> {
        Some(match key {
            "word" => Attr::Word,
            "lemma" => Attr::Lemma,
            "tag" => Attr::Tag,
            "pos" => Attr::Pos,
            "cpos" => Attr::Cpos,
            _ => return None,
        })
    }

    pub fn key(self) -> &'static str {
        match self {
            Attr::Word => "word",
            Attr::Lemma => "lemma",
            Attr::Tag => "tag",
            Attr::Pos => "pos",
            Attr::Cpos => "cpos",
        }
    }

    /// The string of `token` this attribute is matched against.
    pub fn value(self, token: &Token) -> std::borrow::Cow<'_, str> {
        match self {
            Attr::Word => token.form.as_str().into(),
            Attr::Lemma => token.lemma.as_str().into(),
            Attr::Tag => token.xpos.as_str().into(),
            Attr::Pos => token.upos.as_str().into(),
            Attr::Cpos => token.cpos().into(),
        }
    }
}

/// A whole-string regex with its source text.
#[derive(Debug, Clone)]
pub struct AnchoredRegex {
    source: String,
    regex: Regex,
}

impl AnchoredRegex {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            source: source.to_string(),
            regex: Regex::new(&format!("^(?:{source})$"))?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }
}

impl PartialEq for AnchoredRegex {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrConstraint {
    pub attr: Attr,
    pub regex: AnchoredRegex,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeConstraint {
    pub is_root: bool,
    pub attrs: Vec<AttrConstraint>,
}

impl NodeConstraint {
    pub fn matches(&self, token: &Token) -> bool {
        (!self.is_root || token.head == 0)
            && self
                .attrs
                .iter()
                .all(|c| c.regex.is_match(&c.attr.value(token)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelMatcher {
    Exact(String),
    Regex(AnchoredRegex),
}

impl RelMatcher {
    pub fn matches(&self, deprel: &str) -> bool {
        match self {
            RelMatcher::Exact(label) => label == deprel,
            RelMatcher::Regex(re) => re.is_match(deprel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternNode {
    pub constraint: NodeConstraint,
    pub name: Option<String>,
    pub scope: ScopeId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EdgeKind {
    /// `>` (required) or `?>` (optional): `to` is a dependent of `from`.
    Child {
        rel: RelMatcher,
        optional: bool,
        rel_name: Option<String>,
    },
    /// `$++`: `from` and `to` share a head and `from` precedes `to`.
    LeftSibling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn is_optional(&self) -> bool {
        matches!(self.kind, EdgeKind::Child { optional: true, .. })
    }
}

/// A region of the pattern that either binds completely or, for optional
/// scopes, is left absent when it cannot bind.
#[derive(Debug, Clone, PartialEq)]
pub struct Scope {
    /// The `?>` edge that opens this scope; `None` for the required scope.
    pub entry_edge: Option<usize>,
    /// Nodes in pattern order; the first is the scope's entry node.
    pub nodes: Vec<NodeId>,
    /// Optional edges leaving this scope, in pattern order.
    pub optional_edges: Vec<usize>,
}

/// A compiled, immutable pattern. Node 0 is the anchor.
#[derive(Debug, Clone)]
pub struct CompiledPattern {
    source: String,
    nodes: Vec<PatternNode>,
    edges: Vec<Edge>,
    scopes: Vec<Scope>,
    /// Incoming edge for every node but the anchor.
    incoming: Vec<Option<usize>>,
    capture_names: Vec<String>,
}

impl CompiledPattern {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn nodes(&self) -> &[PatternNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn scopes(&self) -> &[Scope] {
        &self.scopes
    }

    pub fn incoming_edge(&self, node: NodeId) -> Option<&Edge> {
        self.incoming[node].map(|e| &self.edges[e])
    }

    /// Distinct capture names, sorted.
    pub fn capture_names(&self) -> &[String] {
        &self.capture_names
    }

    pub fn has_capture(&self, name: &str) -> bool {
        self.capture_names.iter().any(|n| n == name)
    }

    /// Captures that are bound on every match (declared in the required
    /// scope).
    pub fn required_captures(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|n| n.scope == 0)
            .filter_map(|n| n.name.as_deref())
            .collect()
    }

    /// Every distinct match, ordered by anchor index then by capture
    /// indices in capture-name order.
    pub fn match_all(&self, sentence: &ParsedSentence) -> Vec<MatchResult> {
        let bindings = matcher::solve(self, sentence);
        collect_results(self, bindings)
    }

    pub fn first_match(&self, sentence: &ParsedSentence) -> Option<MatchResult> {
        self.match_all(sentence).into_iter().next()
    }

    pub fn is_match(&self, sentence: &ParsedSentence) -> bool {
        !matcher::solve(self, sentence).is_empty()
    }
}

impl fmt::Display for CompiledPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

pub fn compile(pattern_text: &str) -> Result<CompiledPattern, PatternError> {
    parse::Parser::new(pattern_text).parse()
}

/// Turns per-node token bindings into ordered, de-duplicated results.
///
/// Exposed so that alternative enumerators produce results in the same
/// canonical form.
pub fn collect_results(
    pattern: &CompiledPattern,
    bindings: Vec<Vec<Option<usize>>>,
) -> Vec<MatchResult> {
    let mut results: Vec<MatchResult> = bindings
        .into_iter()
        .map(|b| {
            let mut captures = BTreeMap::new();
            for (node, bound) in pattern.nodes.iter().zip(&b) {
                if let (Some(name), Some(tok)) = (&node.name, bound) {
                    captures.insert(name.clone(), *tok);
                }
            }
            MatchResult {
                anchor: b[0].expect("anchor is always bound"),
                captures,
            }
        })
        .collect();
    let key = |m: &MatchResult| {
        let caps: Vec<Option<usize>> = pattern
            .capture_names
            .iter()
            .map(|n| m.captures.get(n).copied())
            .collect();
        (m.anchor, caps)
    };
    results.sort_by_key(key);
    results.dedup();
    results
}

/// Named bindings of one match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Token bound by the pattern's anchor node.
    pub anchor: usize,
    pub captures: BTreeMap<String, usize>,
}

impl MatchResult {
    pub fn get(&self, name: &str) -> Option<usize> {
        self.captures.get(name).copied()
    }
}
