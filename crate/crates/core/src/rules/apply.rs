use thiserror::Error;

use super::{Action, NegationRule, Position};
use crate::conllu::{Features, ParsedSentence, Token};
use crate::pattern::MatchResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("rule `{rule}`: capture `{capture}` is not bound by this match")]
    MissingCapture { rule: String, capture: String },
    #[error("rule `{rule}`: capture `{capture}` refers to a deleted token")]
    DeletedCapture { rule: String, capture: String },
}

/// Working token. `id` is the source index for original tokens and a fresh
/// number above the sentence length for inserted ones.
struct Item {
    id: usize,
    head: usize,
    token: Token,
}

pub(super) struct Applied {
    pub tokens: Vec<Token>,
    /// Final 0-based position of the tracked source token.
    pub tracked: Option<usize>,
}

/// Runs `rule`'s actions in order and returns the rewritten token sequence.
pub fn apply_actions(
    rule: &NegationRule,
    s: &ParsedSentence,
    m: &MatchResult,
) -> Result<Vec<Token>, ApplyError> {
    apply_tracking(rule, s, m, 0).map(|a| a.tokens)
}

pub(super) fn apply_tracking(
    rule: &NegationRule,
    s: &ParsedSentence,
    m: &MatchResult,
    track: usize,
) -> Result<Applied, ApplyError> {
    let mut items: Vec<Item> = s
        .tokens()
        .iter()
        .map(|t| Item {
            id: t.index,
            head: t.head,
            token: t.clone(),
        })
        .collect();
    let mut next_id = s.len() + 1;

    let locate = |items: &[Item], capture: &str| -> Result<usize, ApplyError> {
        let id = m.get(capture).ok_or_else(|| ApplyError::MissingCapture {
            rule: rule.name.clone(),
            capture: capture.to_string(),
        })?;
        items
            .iter()
            .position(|it| it.id == id)
            .ok_or_else(|| ApplyError::DeletedCapture {
                rule: rule.name.clone(),
                capture: capture.to_string(),
            })
    };

    for action in &rule.actions {
        match action {
            Action::Move {
                to_move,
                anchor,
                position,
            } => {
                let from = locate(&items, to_move)?;
                let moved = items.remove(from);
                let at = locate(&items, anchor)?;
                let at = match position {
                    Position::Before => at,
                    Position::After => at + 1,
                };
                items.insert(at, moved);
            }
            Action::Replace { to_replace, token } => {
                let at = locate(&items, to_replace)?;
                if token.is_empty() {
                    delete(&mut items, at);
                } else {
                    let tok = &mut items[at].token;
                    tok.form = match_initial_case(&tok.form, token);
                    tok.lemma = token.to_lowercase();
                }
            }
            Action::Insert {
                token,
                rel,
                anchor,
                position,
            } => {
                let at = locate(&items, anchor)?;
                // Function words pass the attachment up to their head.
                let anchor_id = match items[at].token.deprel.split(':').next() {
                    Some("aux" | "cop") if items[at].head != 0 => items[at].head,
                    _ => items[at].id,
                };
                let at = match position {
                    Position::Before => at,
                    Position::After => at + 1,
                };
                items.insert(
                    at,
                    Item {
                        id: next_id,
                        head: anchor_id,
                        token: inserted_token(token, rel),
                    },
                );
                next_id += 1;
            }
            Action::Lemmatize { target } => {
                let at = locate(&items, target)?;
                let tok = &mut items[at].token;
                tok.form = tok.lemma.clone();
                if tok.xpos.starts_with("VB") {
                    tok.xpos = "VB".into();
                    tok.feats = [("VerbForm", "Inf")].into_iter().collect();
                }
            }
        }
    }

    // Renumber and rewire heads.
    let position_of = |id: usize| items.iter().position(|it| it.id == id);
    let tokens = items
        .iter()
        .enumerate()
        .map(|(pos, it)| Token {
            index: pos + 1,
            head: if it.head == 0 {
                0
            } else {
                position_of(it.head).expect("heads point at surviving tokens") + 1
            },
            ..it.token.clone()
        })
        .collect();
    Ok(Applied {
        tokens,
        tracked: position_of(track),
    })
}

/// Removes `items[at]`. Its dependents move to its head (or, for the root,
/// to its first dependent, which becomes the root), and the preceding token
/// takes over its trailing whitespace.
fn delete(items: &mut Vec<Item>, at: usize) {
    let gone = items.remove(at);
    let mut new_head = gone.head;
    if gone.head == 0 {
        if let Some(first) = items.iter_mut().find(|it| it.head == gone.id) {
            first.head = 0;
            first.token.deprel = "root".into();
            new_head = first.id;
        }
    }
    for it in items.iter_mut() {
        if it.head == gone.id {
            it.head = new_head;
        }
    }
    if at > 0 {
        items[at - 1].token.space_after = gone.token.space_after;
    }
}

/// `replacement` with its first letter upper-cased when `original` starts
/// with an upper-case letter ("Nobody" -> "Somebody").
fn match_initial_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

fn inserted_token(form: &str, upos: &str) -> Token {
    let lower = form.to_lowercase();
    let (lemma, xpos, feats): (&str, &str, &[(&str, &str)]) = match lower.as_str() {
        "did" => (
            "do",
            "VBD",
            &[("Mood", "Ind"), ("Tense", "Past"), ("VerbForm", "Fin")],
        ),
        "does" => (
            "do",
            "VBZ",
            &[
                ("Mood", "Ind"),
                ("Number", "Sing"),
                ("Person", "3"),
                ("Tense", "Pres"),
                ("VerbForm", "Fin"),
            ],
        ),
        "do" => (
            "do",
            "VBP",
            &[("Mood", "Ind"), ("Tense", "Pres"), ("VerbForm", "Fin")],
        ),
        "not" => ("not", "RB", &[]),
        _ => (lower.as_str(), "_", &[]),
    };
    let upos = if upos.is_empty() { "X" } else { upos };
    let deprel = match upos {
        "AUX" => "aux",
        "ADV" | "PART" => "advmod",
        _ => "dep",
    };
    Token {
        index: 0,
        form: form.to_string(),
        lemma: lemma.to_string(),
        upos: upos.to_string(),
        xpos: xpos.to_string(),
        feats: feats.iter().copied().collect::<Features>(),
        head: 0,
        deprel: deprel.to_string(),
        space_after: true,
    }
}
