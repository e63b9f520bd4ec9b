//! Shared test helpers: fixture loading, a random sentence generator and an
//! exhaustive pattern enumerator.
#![allow(dead_code)]

use std::path::PathBuf;

use negforge::conllu::{parse_str, Features, ParsedSentence, Token};
use negforge::pattern::{collect_results, CompiledPattern, EdgeKind, MatchResult};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> Vec<ParsedSentence> {
    parse_str(&std::fs::read_to_string(fixture_path(name)).unwrap()).unwrap()
}

pub fn find(name: &str, id: &str) -> ParsedSentence {
    load(name).into_iter().find(|s| s.sent_id == id).unwrap()
}

/// Scopes in the order the optional parts are resolved: the required scope,
/// then each optional edge's scope depth-first in pattern order.
fn scope_order(p: &CompiledPattern) -> Vec<usize> {
    fn visit(p: &CompiledPattern, scope: usize, out: &mut Vec<usize>) {
        out.push(scope);
        for &e in &p.scopes()[scope].optional_edges {
            visit(p, p.nodes()[p.edges()[e].to].scope, out);
        }
    }
    let mut out = Vec::new();
    visit(p, 0, &mut out);
    out
}

/// Every tuple of tokens for `nodes`: n^k candidates.
fn tuples(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = (n as u64).pow(k as u32);
    (0..total).map(move |mut code| {
        (0..k)
            .map(|_| {
                let t = (code % n as u64) as usize + 1;
                code /= n as u64;
                t
            })
            .collect()
    })
}

/// Whether the bound nodes of `b` satisfy every constraint that touches `scope`.
fn scope_ok(p: &CompiledPattern, s: &ParsedSentence, scope: usize, b: &[Option<usize>]) -> bool {
    let nodes = p.nodes();
    for &node in &p.scopes()[scope].nodes {
        let tok = s.token(b[node].unwrap()).unwrap();
        if !nodes[node].constraint.matches(tok) {
            return false;
        }
        if let Some(name) = &nodes[node].name {
            for (other, bound) in nodes.iter().zip(b) {
                if other.name.as_ref() == Some(name) && bound.is_some_and(|x| x != tok.index) {
                    return false;
                }
            }
        }
    }
    for e in p.edges() {
        if nodes[e.to].scope != scope {
            continue;
        }
        let (Some(from), Some(to)) = (b[e.from], b[e.to]) else {
            return false;
        };
        let (gov, dep) = (s.token(from).unwrap(), s.token(to).unwrap());
        let ok = match &e.kind {
            EdgeKind::Child { rel, .. } => dep.head == gov.index && rel.matches(&dep.deprel),
            EdgeKind::LeftSibling => dep.head == gov.head && dep.index > gov.index,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Exhaustive reference for `CompiledPattern::match_all`.
pub fn brute_force(p: &CompiledPattern, s: &ParsedSentence) -> Vec<MatchResult> {
    let n = s.len();
    let mut states: Vec<Vec<Option<usize>>> = vec![vec![None; p.nodes().len()]];
    for scope in scope_order(p) {
        let members = &p.scopes()[scope].nodes;
        let parent_bound = |st: &Vec<Option<usize>>| match p.scopes()[scope].entry_edge {
            None => true,
            Some(e) => st[p.edges()[e].from].is_some(),
        };
        let mut next = Vec::new();
        for st in states {
            if !parent_bound(&st) {
                next.push(st);
                continue;
            }
            let mut ext = Vec::new();
            for t in tuples(n, members.len()) {
                let mut cand = st.clone();
                for (&node, tok) in members.iter().zip(t) {
                    cand[node] = Some(tok);
                }
                if scope_ok(p, s, scope, &cand) {
                    ext.push(cand);
                }
            }
            if ext.is_empty() {
                if scope != 0 {
                    next.push(st);
                }
            } else {
                next.extend(ext);
            }
        }
        states = next;
    }
    collect_results(p, states)
}

const WORDS: &[&str] = &[
    "he", "letter", "never", "nobody", "Nobody", "no", "nothing", "nowhere", "Nowhere", "not",
    "n't", "anyone", "anything", "anywhere", "did", "had", "is", "was", "can", "made", "leg",
];
const LEMMAS: &[&str] = &["be", "have", "do", "make", "go", "he", "letter"];
const XPOS: &[&str] = &["VB", "VBD", "VBZ", "VBN", "VBP", "MD", "NN", "NNS", "NNP", "RB", "DT", "PRP"];
const UPOS: &[&str] = &["VERB", "AUX", "NOUN", "PROPN", "ADV", "DET", "PRON", "PART"];
const FEATS: &[&str] = &[
    "_",
    "Tense=Past",
    "Mood=Ind|Tense=Past|VerbForm=Fin",
    "Mood=Ind|Tense=Pres|VerbForm=Fin",
    "Mood=Ind|Number=Sing|Person=3|Tense=Pres|VerbForm=Fin",
    "Mood=Imp|VerbForm=Fin",
    "Number=Sing",
];
const DEPRELS: &[&str] = &[
    "nsubj", "nsubj:pass", "csubj", "obj", "obl", "obl:tmod", "advmod", "aux", "aux:pass", "cop",
    "det", "nmod:poss", "cc",
];

/// A random well-formed tree of `n` tokens with labels drawn from small
/// inventories that the shipped patterns look for.
pub fn random_sentence<R: Rng>(rng: &mut R, n: usize, id: usize) -> ParsedSentence {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n + 1];
    for k in 1..n {
        heads[order[k]] = order[rng.gen_range(0..k)];
    }
    let tokens = (1..=n)
        .map(|i| Token {
            index: i,
            form: WORDS.choose(rng).unwrap().to_string(),
            lemma: LEMMAS.choose(rng).unwrap().to_string(),
            upos: UPOS.choose(rng).unwrap().to_string(),
            // Roots are mostly verbs so clause patterns get a chance to fire.
            xpos: if heads[i] == 0 && rng.gen_bool(0.8) {
                ["VB", "VBD", "VBZ", "VBN"].choose(rng).unwrap().to_string()
            } else {
                XPOS.choose(rng).unwrap().to_string()
            },
            feats: Features::parse(FEATS.choose(rng).unwrap()).unwrap(),
            head: heads[i],
            deprel: if heads[i] == 0 {
                "root".to_string()
            } else {
                DEPRELS.choose(rng).unwrap().to_string()
            },
            space_after: true,
        })
        .collect();
    ParsedSentence::new(format!("random-{id}"), None, tokens).unwrap()
}
