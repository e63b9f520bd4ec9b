//! Templated cloze probes and their scoring.
//!
//! Positive queries are scored with precision at k. Negated queries are
//! scored with top-1 error: a prediction counts as an error when its first
//! candidate is the object of the positive fact. Per-relation scores are
//! averaged without weighting.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MASK: &str = "[MASK]";
const X: &str = "[X]";
const Y: &str = "[Y]";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClozeError {
    #[error("template for `{relation}` must contain {placeholder} exactly once: {template:?}")]
    Placeholder {
        relation: String,
        placeholder: &'static str,
        template: String,
    },
    #[error("no template for relation `{0}`")]
    UnknownRelation(String),
    #[error("prediction for `{0}` has no candidates")]
    NoCandidates(String),
    #[error("prediction for `{query_id}`: log-probs increase at rank {rank}")]
    Unsorted { query_id: String, rank: usize },
    #[error("query `{query_id}` is {actual:?}, expected {expected:?}")]
    Polarity {
        query_id: String,
        expected: Polarity,
        actual: Polarity,
    },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate prediction for `{0}`")]
    DuplicatePrediction(String),
    #[error("missing predictions for {} queries: {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTemplate {
    pub relation: String,
    pub template: String,
    pub negated_template: String,
    /// Column the relation is reported under; defaults to the relation id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl RelationTemplate {
    pub fn validate(&self) -> Result<(), ClozeError> {
        for template in [&self.template, &self.negated_template] {
            for placeholder in [X, Y] {
                if template.matches(placeholder).count() != 1 {
                    return Err(ClozeError::Placeholder {
                        relation: self.relation.clone(),
                        placeholder,
                        template: template.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn group(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.relation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negated,
}

/// A subject-relation-object triple to probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: String,
    pub relation: String,
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeQuery {
    pub query_id: String,
    pub statement: String,
    pub gold_answer: String,
    pub relation: String,
    pub polarity: Polarity,
}

pub fn instantiate(
    t: &RelationTemplate,
    query_id: impl Into<String>,
    subject: &str,
    object: &str,
    polarity: Polarity,
) -> Result<ClozeQuery, ClozeError> {
    t.validate()?;
    let template = match polarity {
        Polarity::Positive => &t.template,
        Polarity::Negated => &t.negated_template,
    };
    Ok(ClozeQuery {
        query_id: query_id.into(),
        statement: template.replace(X, subject).replace(Y, MASK),
        gold_answer: object.to_string(),
        relation: t.relation.clone(),
        polarity,
    })
}

/// Both queries for every fact, ids suffixed `/pos` and `/neg`.
pub fn build_queries(
    templates: &[RelationTemplate],
    facts: &[Fact],
) -> Result<Vec<ClozeQuery>, ClozeError> {
    let by_rel: HashMap<&str, &RelationTemplate> =
        templates.iter().map(|t| (t.relation.as_str(), t)).collect();
    let mut out = Vec::with_capacity(2 * facts.len());
    for f in facts {
        let t = by_rel
            .get(f.relation.as_str())
            .ok_or_else(|| ClozeError::UnknownRelation(f.relation.clone()))?;
        for (suffix, polarity) in [("pos", Polarity::Positive), ("neg", Polarity::Negated)] {
            out.push(instantiate(
                t,
                format!("{}/{suffix}", f.id),
                &f.subject,
                &f.object,
                polarity,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    /// Best first.
    pub candidates: Vec<Candidate>,
}

impl PredictionRecord {
    /// Checks candidates are present and ranked by non-increasing log-prob.
    pub fn validate(&self) -> Result<(), ClozeError> {
        if self.candidates.is_empty() {
            return Err(ClozeError::NoCandidates(self.query_id.clone()));
        }
        if let Some(rank) = self
            .candidates
            .windows(2)
            .position(|w| w[1].logprob > w[0].logprob)
        {
            return Err(ClozeError::Unsorted {
                query_id: self.query_id.clone(),
                rank: rank + 2,
            });
        }
        Ok(())
    }
}

fn same(a: &str, b: &str, case_insensitive: bool) -> bool {
    if case_insensitive {
        a.to_lowercase() == b.to_lowercase()
    } else {
        a == b
    }
}

fn expect(q: &ClozeQuery, polarity: Polarity) -> Result<(), ClozeError> {
    if q.polarity == polarity {
        Ok(())
    } else {
        Err(ClozeError::Polarity {
            query_id: q.query_id.clone(),
            expected: polarity,
            actual: q.polarity,
        })
    }
}

/// 1 when the gold answer is among the first `k` candidates. Lists shorter
/// than `k` are scored over what is there.
pub fn p_at_k(
    pred: &PredictionRecord,
    q: &ClozeQuery,
    k: usize,
    case_insensitive: bool,
) -> Result<u8, ClozeError> {
    expect(q, Polarity::Positive)?;
    if k == 0 {
        return Err(ClozeError::ZeroK);
    }
    if pred.candidates.is_empty() {
        return Err(ClozeError::NoCandidates(pred.query_id.clone()));
    }
    Ok(pred
        .candidates
        .iter()
        .take(k)
        .any(|c| same(&c.token, &q.gold_answer, case_insensitive)) as u8)
}

/// 1 when a negated query's top candidate is the positive fact's object.
pub fn top1_error_negated(
    pred: &PredictionRecord,
    q: &ClozeQuery,
    case_insensitive: bool,
) -> Result<u8, ClozeError> {
    expect(q, Polarity::Negated)?;
    let top = pred
        .candidates
        .first()
        .ok_or_else(|| ClozeError::NoCandidates(pred.query_id.clone()))?;
    Ok(same(&top.token, &q.gold_answer, case_insensitive) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub k: usize,
    pub case_insensitive: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 1,
            case_insensitive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    /// Mean P@k over positive queries; `None` without positive queries.
    pub p_at_k: Option<f64>,
    pub positive_queries: usize,
    /// Mean top-1 error over negated queries.
    pub top1_error: Option<f64>,
    pub negated_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub per_relation: BTreeMap<String, RelationScore>,
    /// Unweighted mean over relations with positive queries.
    pub mean_p_at_k: Option<f64>,
    /// Unweighted mean over relations with negated queries.
    pub mean_top1_error: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every query, averages per relation, then across relations.
pub fn aggregate(
    preds: &[PredictionRecord],
    queries: &[ClozeQuery],
    opts: EvalOptions,
) -> Result<EvalReport, ClozeError> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds {
        if by_id.insert(p.query_id.as_str(), p).is_some() {
            return Err(ClozeError::DuplicatePrediction(p.query_id.clone()));
        }
    }
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| !by_id.contains_key(q.query_id.as_str()))
        .map(|q| q.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ClozeError::MissingPredictions(missing));
    }

    // relation -> (positive hits, positives, negated errors, negated)
    let mut tally: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for q in queries {
        let pred = by_id[q.query_id.as_str()];
        pred.validate()?;
        let t = tally.entry(q.relation.as_str()).or_default();
        match q.polarity {
            Polarity::Positive => {
                t[0] += p_at_k(pred, q, opts.k, opts.case_insensitive)? as usize;
                t[1] += 1;
            }
            Polarity::Negated => {
                t[2] += top1_error_negated(pred, q, opts.case_insensitive)? as usize;
                t[3] += 1;
            }
        }
    }
    let per_relation: BTreeMap<String, RelationScore> = tally
        .into_iter()
        .map(|(rel, [hits, pos, errs, neg])| {
            let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
            (
                rel.to_string(),
                RelationScore {
                    p_at_k: ratio(hits, pos),
                    positive_queries: pos,
                    top1_error: ratio(errs, neg),
                    negated_queries: neg,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        k: opts.k,
        mean_p_at_k: mean(per_relation.values().filter_map(|r| r.p_at_k)),
        mean_top1_error: mean(per_relation.values().filter_map(|r| r.top1_error)),
        per_relation,
    })
}

/// Text table with one row per named report and one column per relation
/// group, plus the overall mean. P@k and negated top-1 error are printed as
/// percentages in two blocks.
pub fn render_table(rows: &[(&str, &EvalReport)], templates: &[RelationTemplate]) -> String {
    let group_of: HashMap<&str, &str> = templates
        .iter()
        .map(|t| (t.relation.as_str(), t.group()))
        .collect();
    let mut groups: Vec<&str> = rows
        .iter()
        .flat_map(|(_, r)| r.per_relation.keys())
        .map(|rel| group_of.get(rel.as_str()).copied().unwrap_or(rel.as_str()))
        .collect();
    groups.sort_unstable();
    groups.dedup();

    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
    let group_mean = |r: &EvalReport, g: &str, f: fn(&RelationScore) -> Option<f64>| {
        mean(
            r.per_relation
                .iter()
                .filter(|(rel, _)| group_of.get(rel.as_str()).copied().unwrap_or(rel) == g)
                .filter_map(|(_, s)| f(s)),
        )
    };

    let k = rows.first().map_or(1, |(_, r)| r.k);
    let mut lines: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Model".to_string()];
    header.extend(groups.iter().map(|g| g.to_string()));
    header.push("Mean".into());
    for (title, f, total) in [
        (
            format!("P@{k}"),
            (|s: &RelationScore| s.p_at_k) as fn(&RelationScore) -> Option<f64>,
            (|r: &EvalReport| r.mean_p_at_k) as fn(&EvalReport) -> Option<f64>,
        ),
        (
            "Negated top-1 error".to_string(),
            |s: &RelationScore| s.top1_error,
            |r: &EvalReport| r.mean_top1_error,
        ),
    ] {
        lines.push(vec![title]);
        lines.push(header.clone());
        for (name, r) in rows {
            let mut line = vec![name.to_string()];
            line.extend(groups.iter().map(|g| cell(group_mean(r, g, f))));
            line.push(cell(total(r)));
            lines.push(line);
        }
    }

    let ncols = header.len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| {
            lines
                .iter()
                .filter(|l| l.len() == ncols)
                .map(|l| l[c].len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if line.len() == 1 {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "{}", line[0]).unwrap();
            continue;
        }
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                if c == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        writeln!(out, "{}", cells.join(" | ").trim_end()).unwrap();
    }
    out
}

/// Parses line-delimited prediction records, skipping blank lines.
pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
