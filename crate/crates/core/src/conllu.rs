//! CoNLL-U ingestion.
//!
//! Sentences are read lazily, block by block. Multiword-token ranges (`3-4`)
//! and empty nodes (`5.1`) are skipped; only syntactic words become
//! [`Token`]s. Every yielded [`ParsedSentence`] is a validated single-rooted
//! tree.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on words accepted by the corpus filter.
pub const DEFAULT_MAX_WORDS: usize = 20;

/// Ordered morphological features (`Key1=Val1|Key2=Val2`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features(Vec<(String, String)>);

impl Features {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Parses column 6. `_` is the empty set. Duplicate keys are rejected.
    pub fn parse(field: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        if field == "_" || field.is_empty() {
            return Ok(Self(out));
        }
        for pair in field.split('|') {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("feature `{pair}` is not Key=Value"))?;
            if key.is_empty() {
                return Err(format!("feature `{pair}` has an empty name"));
            }
            if out.iter().any(|(k, _): &(String, String)| k == key) {
                return Err(format!("duplicate feature `{key}`"));
            }
            out.push((key.to_string(), value.to_string()));
        }
        Ok(Self(out))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Sets `key`, keeping its position when it already exists.
    pub fn set(&mut self, key: &str, value: &str) {
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value.to_string(),
            None => self.0.push((key.to_string(), value.to_string())),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("_");
        }
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Features {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

/// One syntactic word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Features,
    /// Governor index, 0 for the root.
    pub head: usize,
    pub deprel: String,
    pub space_after: bool,
}

impl Token {
    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT"
    }

    /// The `UPOS|FEATS` string that `cpos` constraints match against.
    pub fn cpos(&self) -> String {
        format!("{}|{}", self.upos, self.feats)
    }
}

/// Structural problems with a sentence's head graph.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("sentence has no tokens")]
    Empty,
    #[error("token {found} is out of sequence, expected {expected}")]
    OutOfSequence { expected: usize, found: usize },
    #[error("token {index} is its own head")]
    SelfHead { index: usize },
    #[error("token {index} points to nonexistent head {head}")]
    DanglingHead { index: usize, head: usize },
    #[error("no token has head 0")]
    NoRoot,
    #[error("tokens {first} and {second} are both roots")]
    MultipleRoots { first: usize, second: usize },
    #[error("token {index} is part of a head cycle")]
    Cycle { index: usize },
}

impl TreeError {
    /// Token the error is attributed to, if any.
    fn token(&self) -> Option<usize> {
        match *self {
            TreeError::Empty | TreeError::NoRoot => None,
            TreeError::OutOfSequence { found, .. } => Some(found),
            TreeError::SelfHead { index }
            | TreeError::DanglingHead { index, .. }
            | TreeError::Cycle { index } => Some(index),
            TreeError::MultipleRoots { second, .. } => Some(second),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid token index {0}")]
pub struct InvalidIndex(pub usize);

/// A dependency-parsed sentence. Construction validates the tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub sent_id: String,
    pub text: Option<String>,
    tokens: Vec<Token>,
}

impl ParsedSentence {
    pub fn new(
        sent_id: impl Into<String>,
        text: Option<String>,
        tokens: Vec<Token>,
    ) -> Result<Self, TreeError> {
        validate_tree(&tokens)?;
        Ok(Self {
            sent_id: sent_id.into(),
            text,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn root(&self) -> &Token {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .expect("validated sentence has a root")
    }

    /// Dependents of `index` in linear order; `0` yields the root.
    pub fn children_of(&self, index: usize) -> Result<Vec<usize>, InvalidIndex> {
        if index > self.tokens.len() {
            return Err(InvalidIndex(index));
        }
        Ok(self
            .tokens
            .iter()
            .filter(|t| t.head == index)
            .map(|t| t.index)
            .collect())
    }

    /// Number of non-punctuation tokens.
    pub fn word_count(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_punct()).count()
    }

    pub fn within_length_limit(&self, max_words: usize) -> bool {
        self.word_count() <= max_words
    }

    /// Serializes back to a CoNLL-U block, terminated by a blank line.
    pub fn to_conllu(&self) -> String {
        let mut out = format!("# sent_id = {}\n", self.sent_id);
        if let Some(text) = &self.text {
            out.push_str(&format!("# text = {text}\n"));
        }
        for t in &self.tokens {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t_\t{}\n",
                t.index,
                t.form,
                t.lemma,
                t.upos,
                t.xpos,
                t.feats,
                t.head,
                t.deprel,
                if t.space_after { "_" } else { "SpaceAfter=No" }
            ));
        }
        out.push('\n');
        out
    }
}

/// Free-function form of [`ParsedSentence::within_length_limit`].
pub fn within_length_limit(s: &ParsedSentence, max_words: usize) -> bool {
    s.within_length_limit(max_words)
}

fn validate_tree(tokens: &[Token]) -> Result<(), TreeError> {
    if tokens.is_empty() {
        return Err(TreeError::Empty);
    }
    let n = tokens.len();
    let mut root = None;
    for (pos, t) in tokens.iter().enumerate() {
        if t.index != pos + 1 {
            return Err(TreeError::OutOfSequence {
                expected: pos + 1,
                found: t.index,
            });
        }
        if t.head == t.index {
            return Err(TreeError::SelfHead { index: t.index });
        }
        if t.head > n {
            return Err(TreeError::DanglingHead {
                index: t.index,
                head: t.head,
            });
        }
        if t.head == 0 {
            if let Some(first) = root {
                return Err(TreeError::MultipleRoots {
                    first,
                    second: t.index,
                });
            }
            root = Some(t.index);
        }
    }
    if root.is_none() {
        return Err(TreeError::NoRoot);
    }
    // With a single root, every token must reach it within n steps.
    for t in tokens {
        let mut cur = t.index;
        let mut steps = 0;
        while cur != 0 {
            cur = tokens[cur - 1].head;
            steps += 1;
            if steps > n {
                return Err(TreeError::Cycle { index: t.index });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected 10 tab-separated columns, found {0}")]
    ColumnCount(usize),
    #[error("invalid token id `{0}`")]
    BadId(String),
    #[error("invalid head `{0}`")]
    BadHead(String),
    #[error("invalid features: {0}")]
    BadFeatures(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("read failure: {0}")]
    Io(String),
}

/// A malformed sentence block, with the 1-based line it was detected on.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub sent_id: Option<String>,
    pub kind: ParseErrorKind,
}

/// What to do when a sentence block fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Stop at the first malformed block.
    #[default]
    Abort,
    /// Drop malformed blocks and continue.
    SkipSentence,
}

/// Lazy iterator over the sentences of a CoNLL-U stream.
///
/// A malformed block yields one `Err` and the reader moves on to the next
/// block, so the caller decides whether to continue.
pub struct ConlluReader<R> {
    input: R,
    line_no: usize,
    ordinal: usize,
    done: bool,
    buf: String,
}

pub fn parse_conllu<R: BufRead>(input: R) -> ConlluReader<R> {
    ConlluReader {
        input,
        line_no: 0,
        ordinal: 0,
        done: false,
        buf: String::new(),
    }
}

/// Parses a whole string, failing on the first malformed block.
pub fn parse_str(text: &str) -> Result<Vec<ParsedSentence>, ParseError> {
    parse_conllu(text.as_bytes()).collect()
}

/// Collects a stream under the given error mode.
pub fn read_all<R: BufRead>(
    input: R,
    mode: ErrorMode,
) -> Result<(Vec<ParsedSentence>, Vec<ParseError>), ParseError> {
    let mut sentences = Vec::new();
    let mut skipped = Vec::new();
    for item in parse_conllu(input) {
        match item {
            Ok(s) => sentences.push(s),
            Err(e) => match (mode, &e.kind) {
                (_, ParseErrorKind::Io(_)) | (ErrorMode::Abort, _) => return Err(e),
                (ErrorMode::SkipSentence, _) => skipped.push(e),
            },
        }
    }
    Ok((sentences, skipped))
}

struct RawLine {
    line: usize,
    text: String,
}

impl<R: BufRead> ConlluReader<R> {
    /// Reads lines up to the next blank line. `None` at end of input.
    fn next_block(&mut self) -> Option<Result<Vec<RawLine>, ParseError>> {
        let mut block = Vec::new();
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return if block.is_empty() { None } else { Some(Ok(block)) };
                }
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() {
                        if block.is_empty() {
                            continue;
                        }
                        return Some(Ok(block));
                    }
                    block.push(RawLine {
                        line: self.line_no,
                        text: line.to_string(),
                    });
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(ParseError {
                        line: self.line_no + 1,
                        sent_id: None,
                        kind: ParseErrorKind::Io(e.to_string()),
                    }));
                }
            }
        }
    }

    fn parse_block(&mut self, block: Vec<RawLine>) -> Result<Option<ParsedSentence>, ParseError> {
        let mut sent_id = None;
        let mut text = None;
        let mut tokens: Vec<Token> = Vec::new();
        let mut lines = Vec::new();
        // (last word of range, range has SpaceAfter=No)
        let mut pending_range: Option<(usize, bool)> = None;

        let err = |line: usize, sid: &Option<String>, kind: ParseErrorKind| ParseError {
            line,
            sent_id: sid.clone(),
            kind,
        };

        for raw in &block {
            if let Some(comment) = raw.text.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "sent_id" => sent_id = Some(value.trim().to_string()),
                        "text" => text = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = raw.text.split('\t').collect();
            if cols.len() != 10 {
                return Err(err(raw.line, &sent_id, ParseErrorKind::ColumnCount(cols.len())));
            }
            let id = cols[0];
            if id.contains('.') {
                continue;
            }
            if let Some((_, end)) = id.split_once('-') {
                let end: usize = end
                    .parse()
                    .map_err(|_| err(raw.line, &sent_id, ParseErrorKind::BadId(id.to_string())))?;
                pending_range = Some((end, misc_space_after(cols[9])));
                continue;
            }
            let index: usize = id
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| err(raw.line, &sent_id, ParseErrorKind::BadId(id.to_string())))?;
            let head: usize = cols[6].parse().map_err(|_| {
                err(raw.line, &sent_id, ParseErrorKind::BadHead(cols[6].to_string()))
            })?;
            let feats = Features::parse(cols[5])
                .map_err(|m| err(raw.line, &sent_id, ParseErrorKind::BadFeatures(m)))?;
            let mut space_after = misc_space_after(cols[9]);
            if let Some((end, range_space)) = pending_range {
                if index == end {
                    space_after = space_after && range_space;
                    pending_range = None;
                }
            }
            tokens.push(Token {
                index,
                form: cols[1].to_string(),
                lemma: cols[2].to_string(),
                upos: cols[3].to_string(),
                xpos: cols[4].to_string(),
                feats,
                head,
                deprel: cols[7].to_string(),
                space_after,
            });
            lines.push(raw.line);
        }

        if tokens.is_empty() {
            // Comment-only block.
            return Ok(None);
        }
        self.ordinal += 1;
        let sent_id = sent_id.unwrap_or_else(|| format!("s{}", self.ordinal));
        let first_line = block.first().map(|r| r.line).unwrap_or(self.line_no);
        match validate_tree(&tokens) {
            Ok(()) => Ok(Some(ParsedSentence {
                sent_id,
                text,
                tokens,
            })),
            Err(e) => {
                let line = e
                    .token()
                    .and_then(|idx| tokens.iter().position(|t| t.index == idx))
                    .map(|pos| lines[pos])
                    .unwrap_or(first_line);
                Err(ParseError {
                    line,
                    sent_id: Some(sent_id),
                    kind: e.into(),
                })
            }
        }
    }
}

impl<R: BufRead> Iterator for ConlluReader<R> {
    type Item = Result<ParsedSentence, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let block = match self.next_block()? {
                Ok(b) => b,
                Err(e) => return Some(Err(e)),
            };
            match self.parse_block(block) {
                Ok(Some(s)) => return Some(Ok(s)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
        None
    }
}

fn misc_space_after(misc: &str) -> bool {
    !misc.split('|').any(|item| item == "SpaceAfter=No")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FONTS: &str = include_str!("../fixtures/appendix_c.conllu");

    fn fonts() -> ParsedSentence {
        parse_str(FONTS)
            .unwrap()
            .into_iter()
            .find(|s| s.sent_id == "table9-simple-past")
            .unwrap()
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_str("").unwrap().is_empty());
        assert!(parse_str("\n\n# just a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn appendix_c_sentence() {
        let s = fonts();
        assert_eq!(s.len(), 9);
        assert_eq!(s.root().form, "made");
        let leg = s.tokens().iter().find(|t| t.form == "leg").unwrap();
        assert_eq!(leg.deprel, "obj");
        assert_eq!(leg.head, s.root().index);
        assert_eq!(s.text.as_deref(), Some("Many fonts then made the right leg vertical."));
        assert_eq!(s.root().feats.get("Tense"), Some("Past"));
        assert!(!s.token(8).unwrap().space_after);
    }

    #[test]
    fn children_in_linear_order() {
        let s = fonts();
        // fonts(2) nsubj, then(3) advmod, leg(7) obj, vertical(8) xcomp, .(9) punct
        assert_eq!(s.children_of(4).unwrap(), vec![2, 3, 7, 8, 9]);
        assert_eq!(s.children_of(9).unwrap(), Vec::<usize>::new());
        assert_eq!(s.children_of(0).unwrap(), vec![4]);
        assert_eq!(s.children_of(10), Err(InvalidIndex(10)));
    }

    #[test]
    fn length_limit() {
        let s = fonts();
        assert_eq!(s.word_count(), 8);
        assert!(s.within_length_limit(DEFAULT_MAX_WORDS));
        assert!(s.within_length_limit(8));
        assert!(!s.within_length_limit(7));
    }

    fn flat_sentence(words: usize) -> String {
        let mut out = String::from("# sent_id = flat\n");
        for i in 1..=words {
            let head = if i == 1 { 0 } else { 1 };
            out.push_str(&format!("{i}\tw{i}\tw{i}\tNOUN\tNN\t_\t{head}\tdep\t_\t_\n"));
        }
        out.push_str(&format!("{}\t.\t.\tPUNCT\t.\t_\t1\tpunct\t_\t_\n\n", words + 1));
        out
    }

    #[test]
    fn twenty_word_boundary() {
        let s20 = &parse_str(&flat_sentence(20)).unwrap()[0];
        let s21 = &parse_str(&flat_sentence(21)).unwrap()[0];
        assert!(within_length_limit(s20, 20));
        assert!(!within_length_limit(s21, 20));
    }

    #[test]
    fn dangling_head_reports_line() {
        let text = "# sent_id = bad\n\
                    1\tHe\the\tPRON\tPRP\t_\t2\tnsubj\t_\t_\n\
                    2\tran\trun\tVERB\tVBD\t_\t0\troot\t_\t_\n\
                    3\tfast\tfast\tADV\tRB\t_\t99\tadvmod\t_\t_\n\n";
        let err = parse_str(text).unwrap_err();
        assert_eq!(err.line, 4);
        assert!(matches!(
            err.kind,
            ParseErrorKind::Tree(TreeError::DanglingHead { index: 3, head: 99 })
        ));
    }

    #[test]
    fn malformed_lines() {
        let cols = "1\tHe\the\tPRON\n\n";
        assert!(matches!(
            parse_str(cols).unwrap_err().kind,
            ParseErrorKind::ColumnCount(4)
        ));
        let head = "1\tHe\the\tPRON\tPRP\t_\tx\troot\t_\t_\n\n";
        assert!(matches!(
            parse_str(head).unwrap_err().kind,
            ParseErrorKind::BadHead(_)
        ));
        let cycle = "1\ta\ta\tX\tX\t_\t2\tdep\t_\t_\n\
                     2\tb\tb\tX\tX\t_\t1\tdep\t_\t_\n\
                     3\tc\tc\tX\tX\t_\t0\troot\t_\t_\n\n";
        let e = parse_str(cycle).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Tree(TreeError::Cycle { index: 1 })));
        assert_eq!(e.line, 1);
        let two_roots = "1\ta\ta\tX\tX\t_\t0\troot\t_\t_\n\
                         2\tb\tb\tX\tX\t_\t0\troot\t_\t_\n\n";
        let e = parse_str(two_roots).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn skip_mode_continues_after_bad_block() {
        let text = format!(
            "1\tx\tx\tX\tX\t_\t5\tdep\t_\t_\n\n{}",
            flat_sentence(3)
        );
        assert!(read_all(text.as_bytes(), ErrorMode::Abort).is_err());
        let (ok, skipped) = read_all(text.as_bytes(), ErrorMode::SkipSentence).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].line, 1);
    }

    #[test]
    fn multiword_and_empty_nodes_skipped() {
        let text = "# sent_id = mw\n\
                    # text = I don't know.\n\
                    1\tI\tI\tPRON\tPRP\t_\t4\tnsubj\t_\t_\n\
                    2-3\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    2\tdo\tdo\tAUX\tVBP\t_\t4\taux\t_\t_\n\
                    3\tn't\tnot\tPART\tRB\t_\t4\tadvmod\t_\t_\n\
                    4\tknow\tknow\tVERB\tVB\t_\t0\troot\t_\tSpaceAfter=No\n\
                    4.1\tknew\tknow\tVERB\tVBD\t_\t_\t_\t_\t_\n\
                    5\t.\t.\tPUNCT\t.\t_\t4\tpunct\t_\t_\n\n";
        let s = &parse_str(text).unwrap()[0];
        assert_eq!(s.len(), 5);
        assert_eq!(s.token(3).unwrap().form, "n't");
        assert!(s.token(3).unwrap().space_after);
        assert!(!s.token(4).unwrap().space_after);
    }

    #[test]
    fn crlf_and_features() {
        let text = "# sent_id = crlf\r\n1\tran\trun\tVERB\tVBD\tMood=Ind|Tense=Past\t0\troot\t_\t_\r\n\r\n";
        let s = &parse_str(text).unwrap()[0];
        assert_eq!(s.sent_id, "crlf");
        assert_eq!(s.token(1).unwrap().feats.to_string(), "Mood=Ind|Tense=Past");
        assert_eq!(s.token(1).unwrap().cpos(), "VERB|Mood=Ind|Tense=Past");
        let dup = "1\tran\trun\tVERB\tVBD\tTense=Past|Tense=Pres\t0\troot\t_\t_\n\n";
        assert!(matches!(
            parse_str(dup).unwrap_err().kind,
            ParseErrorKind::BadFeatures(_)
        ));
    }

    #[test]
    fn round_trip_fixture() {
        for s in parse_str(FONTS).unwrap() {
            let again = parse_str(&s.to_conllu()).unwrap();
            assert_eq!(again, vec![s]);
        }
    }
}
