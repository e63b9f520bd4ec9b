use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use negforge::cloze::{self, EvalOptions, EvalReport, Fact, RelationTemplate};
use negforge::conllu::{read_all, ErrorMode, ParsedSentence, DEFAULT_MAX_WORDS};
use negforge::objective::{self, LossRecord, DEFAULT_BATCH_SIZE};
use negforge::pairs::{sample_dataset, PoolMode, SampleConfig, DEFAULT_N_PER_OBJECTIVE};
use negforge::rules::{coverage_stats, negate, render_with, RenderOptions, RuleSet};

/// Dependency-tree negation, training-pair sampling and cloze scoring.
#[derive(Debug, Parser)]
#[command(name = "negforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate CoNLL-U input and report counts
    Ingest(IngestArgs),
    /// Print the matches of a tree pattern
    Match(MatchArgs),
    /// Negate each sentence with the first matching rule
    Negate(NegateArgs),
    /// Sample unlikelihood, copy and plain training examples
    Pairs(PairsArgs),
    /// Count how many sentences each rule handles
    Stats(StatsArgs),
    /// Evaluate losses on a file of probability records
    LossCheck(LossCheckArgs),
    /// Score cloze predictions
    EvalCloze(EvalClozeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// CoNLL-U input files (`-` reads stdin)
    #[arg(long = "in", value_name = "PATH", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Drop malformed sentences instead of stopping
    #[arg(long)]
    skip_errors: bool,
}

#[derive(Debug, Args)]
struct RulesArg {
    /// Rule file; the built-in rules are used when absent
    #[arg(long, env = "NEGFORGE_RULES", value_name = "PATH")]
    rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Word limit for the length filter (punctuation excluded)
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    max_words: usize,
    /// Write the parsed sentences back out as CoNLL-U instead of a report
    #[arg(long)]
    echo: bool,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Tree pattern
    #[arg(long)]
    pattern: String,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct NegateArgs {
    #[command(flatten)]
    rules: RulesArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Upper-case the first letter of the negated sentence
    #[arg(long)]
    recapitalize: bool,
    /// Also emit records for sentences no rule handles
    #[arg(long)]
    include_unmatched: bool,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[command(flatten)]
    rules: RulesArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Examples per objective
    #[arg(long, default_value_t = DEFAULT_N_PER_OBJECTIVE)]
    n: usize,
    /// RNG seed for sampling and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Word limit for source sentences (punctuation excluded)
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    max_words: usize,
    /// Draw unlikelihood, copy and plain examples from disjoint sentences
    #[arg(long)]
    disjoint: bool,
    /// Output JSONL path
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Manifest path [default: <out>.manifest.json]
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Also write a step schedule to this path
    #[arg(long, value_name = "PATH")]
    schedule: Option<PathBuf>,
    /// Schedule batch size
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Schedule length in epochs
    #[arg(long, default_value_t = objective::DEFAULT_EPOCHS)]
    epochs: usize,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    rules: RulesArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    /// JSON array or JSONL of `{"p_u": ..}` / `{"teacher": [..], "student": [..]}`
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Mixing weight for the combined loss
    #[arg(long, default_value_t = objective::DEFAULT_GAMMA)]
    gamma: f64,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct EvalClozeArgs {
    /// Relation templates (JSON array)
    #[arg(long, value_name = "PATH")]
    templates: PathBuf,
    /// Facts to probe (JSON array of {id, relation, subject, object})
    #[arg(long, value_name = "PATH")]
    facts: PathBuf,
    /// Prediction files, optionally labelled as NAME=PATH
    #[arg(long, value_name = "[NAME=]PATH", required = true, num_args = 1..)]
    predictions: Vec<String>,
    #[arg(short, long, default_value_t = 1)]
    k: usize,
    /// Compare answers ignoring case
    #[arg(long)]
    case_insensitive: bool,
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

/// Bad flags or missing inputs; exits 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = run(cli.command, &mut out).and_then(|()| out.flush().map_err(Into::into));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a, out),
        Command::Match(a) => match_cmd(a, out),
        Command::Negate(a) => negate_cmd(a, out),
        Command::Pairs(a) => pairs(a, out),
        Command::Stats(a) => stats(a, out),
        Command::LossCheck(a) => loss_check(a, out),
        Command::EvalCloze(a) => eval_cloze(a, out),
    }
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    if !path.exists() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(s)
}

struct Corpus {
    sentences: Vec<ParsedSentence>,
    skipped: usize,
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let mode = if args.skip_errors {
        ErrorMode::SkipSentence
    } else {
        ErrorMode::Abort
    };
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for path in &args.inputs {
        let (mut s, errs) =
            read_all(open(path)?, mode).with_context(|| format!("{}", path.display()))?;
        for e in &errs {
            eprintln!("warning: {}: skipped sentence: {e}", path.display());
        }
        skipped += errs.len();
        sentences.append(&mut s);
    }
    Ok(Corpus { sentences, skipped })
}

fn load_rules(arg: &RulesArg) -> Result<RuleSet> {
    match &arg.rules {
        None => Ok(RuleSet::default_rules()),
        Some(p) => {
            let text = read_text(p)?;
            negforge::rules::load_ruleset(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

fn json_line(out: &mut dyn Write, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

/// Left-aligned columns separated by ` | `.
fn table(out: &mut dyn Write, rows: &[Vec<String>]) -> Result<()> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        writeln!(out, "{}", line.join(" | ").trim_end())?;
    }
    Ok(())
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    if a.echo {
        for s in &corpus.sentences {
            write!(out, "{}", s.to_conllu())?;
        }
        return Ok(());
    }
    let tokens: usize = corpus.sentences.iter().map(|s| s.len()).sum();
    let words: usize = corpus.sentences.iter().map(|s| s.word_count()).sum();
    let within = corpus
        .sentences
        .iter()
        .filter(|s| s.within_length_limit(a.max_words))
        .count();
    let report = json!({
        "sentences": corpus.sentences.len(),
        "tokens": tokens,
        "words": words,
        "max_words": a.max_words,
        "within_length_limit": within,
        "skipped": corpus.skipped,
    });
    match a.format {
        Format::Json => json_line(out, &report),
        Format::Table => {
            let rows: Vec<Vec<String>> = report
                .as_object()
                .expect("object literal")
                .iter()
                .map(|(k, v)| vec![k.clone(), v.to_string()])
                .collect();
            table(out, &rows)
        }
    }
}

fn match_cmd(a: MatchArgs, out: &mut dyn Write) -> Result<()> {
    let pattern = negforge::compile(&a.pattern).map_err(|e| usage(format!("--pattern: {e}")))?;
    let corpus = load_corpus(&a.corpus)?;
    let names = pattern.capture_names().to_vec();
    let mut rows = vec![{
        let mut h = vec!["sent_id".to_string(), "anchor".to_string()];
        h.extend(names.iter().cloned());
        h
    }];
    for s in &corpus.sentences {
        for m in pattern.match_all(s) {
            let form = |i: usize| s.token(i).map(|t| t.form.clone()).unwrap_or_default();
            match a.format {
                Format::Json => {
                    let captures: serde_json::Map<String, serde_json::Value> = m
                        .captures
                        .iter()
                        .map(|(k, &i)| (k.clone(), json!({"index": i, "form": form(i)})))
                        .collect();
                    json_line(
                        out,
                        &json!({
                            "sent_id": s.sent_id,
                            "anchor": {"index": m.anchor, "form": form(m.anchor)},
                            "captures": captures,
                        }),
                    )?;
                }
                Format::Table => {
                    let mut row = vec![s.sent_id.clone(), format!("{}:{}", m.anchor, form(m.anchor))];
                    row.extend(names.iter().map(|n| {
                        m.get(n).map_or("-".to_string(), |i| format!("{i}:{}", form(i)))
                    }));
                    rows.push(row);
                }
            }
        }
    }
    if a.format == Format::Table {
        table(out, &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NegationRecord<'a> {
    sent_id: &'a str,
    original: String,
    negated: Option<String>,
    ul_token: Option<String>,
    rule: Option<String>,
}

fn negate_cmd(a: NegateArgs, out: &mut dyn Write) -> Result<()> {
    let rules = load_rules(&a.rules)?;
    let corpus = load_corpus(&a.corpus)?;
    let opts = RenderOptions {
        recapitalize: a.recapitalize,
    };
    let mut rows = vec![vec![
        "sent_id".to_string(),
        "rule".to_string(),
        "ul_token".to_string(),
        "negated".to_string(),
    ]];
    for s in &corpus.sentences {
        let outcome = negate(&rules, s).with_context(|| format!("sentence `{}`", s.sent_id))?;
        if outcome.is_none() && !a.include_unmatched {
            continue;
        }
        let rec = NegationRecord {
            sent_id: &s.sent_id,
            original: render_with(s.tokens(), RenderOptions::default()),
            negated: outcome.as_ref().map(|o| render_with(&o.tokens, opts)),
            ul_token: outcome.as_ref().map(|o| o.ul_token().form.clone()),
            rule: outcome.as_ref().map(|o| o.rule_name.clone()),
        };
        match a.format {
            Format::Json => json_line(out, &rec)?,
            Format::Table => rows.push(vec![
                rec.sent_id.to_string(),
                rec.rule.unwrap_or_else(|| "-".into()),
                rec.ul_token.unwrap_or_else(|| "-".into()),
                rec.negated.unwrap_or_else(|| "-".into()),
            ]),
        }
    }
    if a.format == Format::Table {
        table(out, &rows)?;
    }
    Ok(())
}

fn pairs(a: PairsArgs, out: &mut dyn Write) -> Result<()> {
    let rules = load_rules(&a.rules)?;
    let corpus = load_corpus(&a.corpus)?;
    let config = SampleConfig {
        n_per_objective: a.n,
        seed: a.seed,
        pool: if a.disjoint {
            PoolMode::Disjoint
        } else {
            PoolMode::Shared
        },
        max_words: a.max_words,
    };
    let dataset = sample_dataset(&corpus.sentences, &rules, &config)?;
    let manifest_path = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    dataset
        .write_files(&a.out, &manifest_path)
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.schedule {
        if a.batch_size == 0 {
            return Err(usage("--batch-size must be positive"));
        }
        let total = objective::epoch_steps(a.n, a.batch_size, a.epochs);
        let schedule = objective::make_schedule(total, a.batch_size, &dataset.manifest, a.seed)?;
        fs::write(path, serde_json::to_string(&schedule)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    json_line(
        out,
        &json!({
            "examples": dataset.examples.len(),
            "out": a.out,
            "manifest": manifest_path,
            "dataset_sha256": dataset.manifest.dataset_sha256,
        }),
    )
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let rules = load_rules(&a.rules)?;
    let corpus = load_corpus(&a.corpus)?;
    let stats = coverage_stats(&rules, &corpus.sentences);
    match a.format {
        Format::Json => json_line(
            out,
            &json!({
                "per_rule": stats.per_rule.iter().map(|(n, c)| json!({"rule": n, "matched": c})).collect::<Vec<_>>(),
                "unmatched": stats.unmatched,
                "failed": stats.failed,
                "total": stats.total,
                "unmatched_fraction": stats.unmatched_fraction(),
            }),
        ),
        Format::Table => {
            writeln!(out, "{stats}")?;
            Ok(())
        }
    }
}

fn loss_check(a: LossCheckArgs, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&a.gamma) {
        return Err(usage(format!("--gamma {} is outside [0, 1]", a.gamma)));
    }
    let text = read_text(&a.input)?;
    let records: Vec<LossRecord> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("{}", a.input.display()))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .with_context(|| format!("{}: line {}", a.input.display(), i + 1))
            })
            .collect::<Result<_>>()?
    };
    let mut ul = Vec::new();
    let mut kl = Vec::new();
    let mut rows = vec![vec!["#".to_string(), "kind".to_string(), "loss".to_string()]];
    for (i, r) in records.iter().enumerate() {
        let v = objective::evaluate_record(r).with_context(|| format!("record {}", i + 1))?;
        match v.kind {
            "ul" => ul.push(v.loss),
            _ => kl.push(v.loss),
        }
        match a.format {
            Format::Json => json_line(out, &json!({"record": i + 1, "kind": v.kind, "loss": v.loss}))?,
            Format::Table => rows.push(vec![(i + 1).to_string(), v.kind.into(), format!("{:.6}", v.loss)]),
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let combined = match (mean(&ul), mean(&kl)) {
        (Some(u), Some(k)) => Some(objective::combined_loss(u, k, a.gamma)?),
        _ => None,
    };
    match a.format {
        Format::Json => json_line(
            out,
            &json!({"mean_ul": mean(&ul), "mean_kl": mean(&kl), "gamma": a.gamma, "combined": combined}),
        ),
        Format::Table => {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            rows.push(vec!["mean".into(), "ul".into(), fmt(mean(&ul))]);
            rows.push(vec!["mean".into(), "kl".into(), fmt(mean(&kl))]);
            rows.push(vec!["mean".into(), format!("combined (gamma={})", a.gamma), fmt(combined)]);
            table(out, &rows)
        }
    }
}

fn eval_cloze(a: EvalClozeArgs, out: &mut dyn Write) -> Result<()> {
    if a.k == 0 {
        return Err(usage("-k must be at least 1"));
    }
    let templates: Vec<RelationTemplate> = serde_json::from_str(&read_text(&a.templates)?)
        .with_context(|| format!("{}", a.templates.display()))?;
    let facts: Vec<Fact> = serde_json::from_str(&read_text(&a.facts)?)
        .with_context(|| format!("{}", a.facts.display()))?;
    let queries = cloze::build_queries(&templates, &facts)?;
    let opts = EvalOptions {
        k: a.k,
        case_insensitive: a.case_insensitive,
    };
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for spec in &a.predictions {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        let preds = cloze::read_predictions(&read_text(&path)?)
            .map_err(|(line, e)| anyhow::anyhow!("{}: line {line}: {e}", path.display()))?;
        let report =
            cloze::aggregate(&preds, &queries, opts).with_context(|| format!("{}", path.display()))?;
        reports.push((name, report));
    }
    match a.format {
        Format::Json => {
            for (name, report) in &reports {
                json_line(out, &json!({"model": name, "report": report}))?;
            }
            Ok(())
        }
        Format::Table => {
            let rows: Vec<(&str, &EvalReport)> =
                reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
            write!(out, "{}", cloze::render_table(&rows, &templates))?;
            Ok(())
        }
    }
}
