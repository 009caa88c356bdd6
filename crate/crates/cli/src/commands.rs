use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ckprobe_core::fusion::gradcheck::{grad_check, Instance, DEFAULT_STEP};
use ckprobe_core::fusion::FuseOptions;
use ckprobe_core::kb::{self, Triple};
use ckprobe_core::metrics::{
    self, answers_by_subject, classify_stats, cross_grade, hits_report, overlap_at_k, result_shape_stats,
    topk_redundancy, ShapeLabel, ShapeThresholds, CROSS_GRADE_KS, DEFAULT_KS,
};
use ckprobe_core::probe::{self, default_templates, parse_templates, render_queries, run_probe, ProbeResult, RunOptions};
use ckprobe_core::rc::{
    self, annotation, bucket_curve, parse_predictions, partition_domains, similarities, ModelPredictions, RcExample,
    DEFAULT_BIN_WIDTH, DEFAULT_SAMPLE_CAP, DEFAULT_SIM_THRESHOLD,
};
use ckprobe_core::scorer::{CooccurrenceScorer, RemoteOptions, RemoteScorer, Scorer, DEFAULT_SMOOTHING};
use ckprobe_core::tokenizer::Vocab;
use ckprobe_core::Relation;

use crate::config::{require_file, ScorerKind, Settings};
use crate::output::{Artifacts, Table};

/// What a command produced: artifacts to write and lines for stdout.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub out: Option<PathBuf>,
    pub summary: Vec<String>,
    pub success: bool,
}

impl Outcome {
    fn new(artifacts: Artifacts, out: PathBuf, summary: Vec<String>) -> Self {
        Outcome {
            artifacts,
            out: Some(out),
            summary,
            success: true,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn load_vocab(settings: &Settings, art: &mut Artifacts) -> Result<Vocab> {
    let path = settings.vocab()?;
    let text = art.read_input_string(&path)?;
    Vocab::parse(&text).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn load_results(path: &Path, art: &mut Artifacts) -> Result<Vec<ProbeResult>> {
    let text = art.read_input_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn results_path(settings: &Settings, flag: &Option<PathBuf>) -> Result<PathBuf> {
    let p = settings
        .path(flag, &settings.file.results)
        .context("a results file from `probe` is required (--results)")?;
    require_file(&p, "--results")?;
    Ok(p)
}

fn of_relation(results: &[ProbeResult], relation: Relation) -> Vec<ProbeResult> {
    results.iter().filter(|r| r.relation == relation).cloned().collect()
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// ConceptNet assertion dump, plain or gzip
    #[arg(long, value_name = "PATH")]
    pub kb: Option<PathBuf>,
    /// Drop triples with a lower weight
    #[arg(long)]
    pub min_weight: Option<f64>,
}

fn load_dump(settings: &Settings, kb_flag: &Option<PathBuf>, art: &mut Artifacts) -> Result<(Vec<Triple>, kb::ParseReport)> {
    let path = settings
        .path(kb_flag, &settings.file.kb)
        .context("an assertion dump is required (--kb)")?;
    require_file(&path, "--kb")?;
    art.read_input(&path)?;
    let reader = kb::open_dump(&path).with_context(|| format!("opening {}", path.display()))?;
    kb::parse_assertions(reader).with_context(|| format!("reading {}", path.display()))
}

fn min_weight(settings: &Settings, flag: Option<f64>) -> Result<Option<f64>> {
    let w = flag.or(settings.file.min_weight);
    if let Some(w) = w {
        if !(w >= 0.0) || !w.is_finite() {
            bail!("--min-weight must be a non-negative number, got {w}");
        }
    }
    Ok(w)
}

pub fn ingest(settings: &Settings, args: &IngestArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let min_weight = min_weight(settings, args.min_weight)?;
    let mut art = Artifacts::default();
    let vocab_path = settings.path(&settings.global.vocab, &settings.file.vocab);
    let vocab = match &vocab_path {
        Some(_) => Some(load_vocab(settings, &mut art)?),
        None => None,
    };
    let (mut triples, report) = load_dump(settings, &args.kb, &mut art)?;
    if let Some(w) = min_weight {
        triples = kb::filter_min_weight(triples, w);
    }
    art.set("min_weight", min_weight);

    let mut cache = Vec::new();
    kb::write_triples(&mut cache, &triples)?;
    art.add("triples.tsv", cache);
    let stats = kb::relation_stats(&triples);
    let mut table = Table::new(&["relation", "count"]);
    for (rel, count) in &stats {
        table.row(&[rel.to_string(), count.to_string()]);
    }
    table.row(&["total".to_string(), triples.len().to_string()]);
    art.add("relation_stats.tsv", table.into_bytes());
    art.add_json("parse_report.json", &report)?;

    let mut summary = vec![format!(
        "records {}  kept {}  non-English {}  unknown relation {}  duplicates merged {}  malformed {}",
        report.records,
        report.kept,
        report.non_english,
        report.unknown_relation,
        report.duplicates_merged,
        report.malformed.len()
    )];
    if let Some(vocab) = &vocab {
        let groups = kb::build_probe_set(&triples, vocab);
        summary.push(format!("probe groups {}", groups.len()));
        art.add_jsonl("probe_groups.jsonl", &groups)?;
    }
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// ConceptNet assertion dump, plain or gzip
    #[arg(long, value_name = "PATH", conflicts_with = "triples")]
    pub kb: Option<PathBuf>,
    /// Triple cache written by `ingest`
    #[arg(long, value_name = "PATH")]
    pub triples: Option<PathBuf>,
    /// One sentence per line, for the local co-occurrence scorer
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub min_weight: Option<f64>,
    /// Queries per scheduling batch
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

pub fn probe(settings: &Settings, args: &ProbeArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let min_weight = min_weight(settings, args.min_weight)?;
    let kind = settings.scorer();
    let smoothing = args.smoothing.or(settings.file.smoothing).unwrap_or(DEFAULT_SMOOTHING);
    let corpus_path = settings.path(&args.corpus, &settings.file.corpus);
    let endpoint = settings.endpoint();
    match kind {
        ScorerKind::Local => {
            let p = corpus_path.as_ref().context("the local scorer needs --corpus")?;
            require_file(p, "--corpus")?;
        }
        ScorerKind::Remote => {
            endpoint
                .as_ref()
                .context("the remote scorer needs --endpoint or CKPROBE_ENDPOINT")?;
        }
    }
    if args.batch_size == 0 {
        bail!("--batch-size must be positive");
    }

    let mut art = Artifacts::default();
    let vocab = Arc::new(load_vocab(settings, &mut art)?);
    let mut templates = default_templates();
    if let Some(p) = settings.templates()? {
        let text = art.read_input(&p)?;
        templates.extend(parse_templates(text.as_slice()).with_context(|| format!("loading {}", p.display()))?);
    }
    let triple_cache = settings.path(&args.triples, &settings.file.triples);
    let mut triples = match (&args.kb, &triple_cache) {
        (None, Some(p)) => {
            require_file(p, "--triples")?;
            let bytes = art.read_input(p)?;
            kb::read_triples(bytes.as_slice()).with_context(|| format!("reading {}", p.display()))?
        }
        _ => load_dump(settings, &args.kb, &mut art)?.0,
    };
    if let Some(w) = min_weight {
        triples = kb::filter_min_weight(triples, w);
    }
    let groups = kb::build_probe_set(&triples, &vocab);
    let (queries, skipped) = render_queries(&groups, &templates, &vocab)?;

    art.set("scorer", kind);
    art.set("min_weight", min_weight);
    art.set("batch_size", args.batch_size);
    let scorer: Box<dyn Scorer> = match kind {
        ScorerKind::Local => {
            let path = corpus_path.expect("checked above");
            let text = art.read_input_string(&path)?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            art.set("smoothing", smoothing);
            Box::new(CooccurrenceScorer::build(&lines, vocab.clone(), smoothing)?)
        }
        ScorerKind::Remote => {
            let endpoint = endpoint.expect("checked above");
            art.set("endpoint", &endpoint);
            let remote = RemoteScorer::connect(&endpoint, &vocab, RemoteOptions::default())?;
            art.set("model", remote.info().model);
            Box::new(remote)
        }
    };

    let options = RunOptions {
        batch_size: args.batch_size,
        ..RunOptions::default()
    };
    let outcomes = run_probe(&queries, scorer.as_ref(), &vocab, &options);
    let failures = probe::failure_count(&outcomes);
    let (results, failed): (Vec<_>, Vec<_>) = outcomes.into_iter().partition(|o| o.is_ok());
    let results: Vec<ProbeResult> = results.into_iter().map(|o| o.expect("partitioned")).collect();
    let failed: Vec<probe::ProbeFailure> = failed.into_iter().map(|o| o.expect_err("partitioned")).collect();

    art.add_jsonl("results.jsonl", &results)?;
    art.add_jsonl("failures.jsonl", &failed)?;
    let mut table = Table::new(&["relation", "subject", "answers", "mask_index", "query"]);
    for q in &queries {
        table.row(&[
            q.group.relation.to_string(),
            q.group.subject.clone(),
            q.group.answers.join(","),
            q.mask_index.to_string(),
            q.sentence(),
        ]);
    }
    art.add("queries.tsv", table.into_bytes());
    let mut table = Table::new(&["relation", "subject", "answers", "reason"]);
    for s in &skipped {
        table.row(&[
            s.group.relation.to_string(),
            s.group.subject.clone(),
            s.group.answers.join(","),
            s.error.to_string(),
        ]);
    }
    art.add("skipped.tsv", table.into_bytes());

    let summary = vec![format!(
        "groups {}  queries {}  skipped {}  scored {}  failed {}",
        groups.len(),
        queries.len(),
        skipped.len(),
        results.len(),
        failures
    )];
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, Args)]
pub struct ResultsArgs {
    /// results.jsonl written by `probe`
    #[arg(long, value_name = "PATH")]
    pub results: Option<PathBuf>,
}

fn hits_artifacts(art: &mut Artifacts, results: &[ProbeResult], ks: &[usize]) -> Result<Vec<String>> {
    let report = hits_report(results, ks)?;
    let mut header = vec!["relation".to_string(), "count".to_string()];
    header.extend(ks.iter().map(|k| format!("hits@{k}")));
    let mut table = Table::new(&header);
    for r in &report.relations {
        let mut row = vec![r.relation.to_string(), r.count.to_string()];
        row.extend(r.hits.iter().copied().map(fmt_f64));
        table.row(&row);
    }
    art.add("hits_by_relation.tsv", table.into_bytes());

    header[0] = "average".into();
    let mut table = Table::new(&header);
    let mut summary = Vec::new();
    for (name, values) in [("micro", &report.micro), ("macro", &report.macro_avg)] {
        let mut row = vec![name.to_string(), report.total.to_string()];
        row.extend(values.iter().copied().map(fmt_f64));
        table.row(&row);
        let cells: Vec<String> = ks.iter().zip(values).map(|(k, v)| format!("@{k} {v:.2}")).collect();
        summary.push(format!("{name:<5} hits {}", cells.join("  ")));
    }
    art.add("hits_summary.tsv", table.into_bytes());
    art.add_json("hits.json", &report)?;
    Ok(summary)
}

pub fn metrics(settings: &Settings, args: &ResultsArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let ks = settings.ks(&DEFAULT_KS)?;
    let path = results_path(settings, &args.results)?;
    let mut art = Artifacts::default();
    let results = load_results(&path, &mut art)?;
    art.set("ks", &ks);
    let summary = hits_artifacts(&mut art, &results, &ks)?;
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- overlap, cross-grade

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[command(flatten)]
    pub results: ResultsArgs,
    #[arg(long, default_value = "Antonym")]
    pub relation_a: Relation,
    #[arg(long, default_value = "Synonym")]
    pub relation_b: Relation,
}

fn overlap_artifacts(art: &mut Artifacts, results: &[ProbeResult], args: &PairArgs, ks: &[usize]) -> Result<Vec<String>> {
    let a = of_relation(results, args.relation_a);
    let b = of_relation(results, args.relation_b);
    let mut table = Table::new(&["relation_a", "relation_b", "k", "overlap", "shared_subjects"]);
    let mut cells = Vec::new();
    for &k in ks {
        let o = overlap_at_k(&a, &b, k)?;
        table.row(&[
            args.relation_a.to_string(),
            args.relation_b.to_string(),
            k.to_string(),
            fmt_f64(o.percent),
            o.shared_subjects.to_string(),
        ]);
        cells.push(format!("@{k} {:.2}", o.percent));
    }
    art.add("overlap.tsv", table.into_bytes());
    Ok(vec![format!(
        "overlap {}/{}  {}",
        args.relation_a,
        args.relation_b,
        cells.join("  ")
    )])
}

pub fn overlap(settings: &Settings, args: &PairArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let ks = settings.ks(&DEFAULT_KS)?;
    let path = results_path(settings, &args.results.results)?;
    let mut art = Artifacts::default();
    let results = load_results(&path, &mut art)?;
    art.set("ks", &ks);
    art.set("relations", [args.relation_a, args.relation_b]);
    let summary = overlap_artifacts(&mut art, &results, args, &ks)?;
    Ok(Outcome::new(art, out, summary))
}

fn cross_grade_artifacts(
    art: &mut Artifacts,
    results: &[ProbeResult],
    args: &PairArgs,
    ks: &[usize],
) -> Result<Vec<String>> {
    let a = of_relation(results, args.relation_a);
    let b = of_relation(results, args.relation_b);
    let mut table = Table::new(&["predictions_of", "graded_against", "k", "incorrect_rate", "graded", "excluded"]);
    let mut summary = Vec::new();
    for (pred_rel, preds, gold_rel, gold) in [
        (args.relation_a, &a, args.relation_b, &b),
        (args.relation_b, &b, args.relation_a, &a),
    ] {
        let grade = cross_grade(preds, &answers_by_subject(gold), ks)?;
        let mut cells = Vec::new();
        for (k, v) in grade.ks.iter().zip(&grade.hits) {
            table.row(&[
                pred_rel.to_string(),
                gold_rel.to_string(),
                k.to_string(),
                fmt_f64(*v),
                grade.graded.to_string(),
                grade.excluded.to_string(),
            ]);
            cells.push(format!("@{k} {v:.2}"));
        }
        summary.push(format!("{pred_rel} graded by {gold_rel}  {}", cells.join("  ")));
    }
    art.add("cross_grade.tsv", table.into_bytes());
    Ok(summary)
}

pub fn cross_grade_cmd(settings: &Settings, args: &PairArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let ks = settings.ks(&CROSS_GRADE_KS)?;
    let path = results_path(settings, &args.results.results)?;
    let mut art = Artifacts::default();
    let results = load_results(&path, &mut art)?;
    art.set("ks", &ks);
    art.set("relations", [args.relation_a, args.relation_b]);
    let summary = cross_grade_artifacts(&mut art, &results, args, &ks)?;
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- shapes

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    #[command(flatten)]
    pub results: ResultsArgs,
    /// Minimum adjacent log10 drop within the top 50 for an L shape
    #[arg(long, default_value_t = metrics::DEFAULT_DROP_THRESHOLD)]
    pub drop_threshold: f64,
    /// Minimum normalized entropy for a flat shape
    #[arg(long, default_value_t = metrics::DEFAULT_ENTROPY_THRESHOLD)]
    pub entropy_threshold: f64,
}

fn shape_artifacts(art: &mut Artifacts, results: &[ProbeResult], thresholds: ShapeThresholds) -> Result<Vec<String>> {
    let mut table = Table::new(&["relation", "subject", "norm_entropy", "max_log10_drop", "shape"]);
    let mut plot = Table::new(&["relation", "subject", "rank", "log10_prob"]);
    let mut counts: BTreeMap<Relation, [usize; 3]> = BTreeMap::new();
    for r in results {
        let stats = result_shape_stats(r);
        let label = classify_stats(stats, thresholds);
        table.row(&[
            r.relation.to_string(),
            r.subject.clone(),
            fmt_f64(stats.norm_entropy),
            fmt_f64(stats.max_drop),
            label.to_string(),
        ]);
        let slot = match label {
            ShapeLabel::L => 0,
            ShapeLabel::U => 1,
            ShapeLabel::Flat => 2,
        };
        counts.entry(r.relation).or_default()[slot] += 1;
        for (rank, lp) in r.topk_logprobs.iter().enumerate() {
            plot.row(&[
                r.relation.to_string(),
                r.subject.clone(),
                (rank + 1).to_string(),
                fmt_f64(lp / std::f64::consts::LN_10),
            ]);
        }
    }
    art.add("shapes.tsv", table.into_bytes());
    art.add("plot_rank_log10.tsv", plot.into_bytes());
    let mut table = Table::new(&["relation", "L", "U", "Flat"]);
    let mut total = [0usize; 3];
    for (rel, c) in &counts {
        table.row(&[rel.to_string(), c[0].to_string(), c[1].to_string(), c[2].to_string()]);
        for i in 0..3 {
            total[i] += c[i];
        }
    }
    table.row(&["total".to_string(), total[0].to_string(), total[1].to_string(), total[2].to_string()]);
    art.add("shape_counts.tsv", table.into_bytes());
    Ok(vec![format!("shapes  L {}  U {}  Flat {}", total[0], total[1], total[2])])
}

fn thresholds(args: &ShapeArgs) -> Result<ShapeThresholds> {
    if !(args.drop_threshold > 0.0) || !(0.0..=1.0).contains(&args.entropy_threshold) {
        bail!("shape thresholds out of range: drop {} entropy {}", args.drop_threshold, args.entropy_threshold);
    }
    Ok(ShapeThresholds {
        drop: args.drop_threshold,
        entropy: args.entropy_threshold,
    })
}

pub fn shapes(settings: &Settings, args: &ShapeArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let thresholds = thresholds(args)?;
    let path = results_path(settings, &args.results.results)?;
    let mut art = Artifacts::default();
    let results = load_results(&path, &mut art)?;
    art.set("shape_thresholds", thresholds);
    let summary = shape_artifacts(&mut art, &results, thresholds)?;
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- redundancy

#[derive(Debug, Clone, Args)]
pub struct RedundancyArgs {
    #[command(flatten)]
    pub results: ResultsArgs,
    #[arg(long, default_value = "Antonym")]
    pub relation: Relation,
    /// Top-K list length per result
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Number of most frequent tokens to report
    #[arg(long, default_value_t = 10)]
    pub m: usize,
}

pub fn redundancy(settings: &Settings, args: &RedundancyArgs) -> Result<Outcome> {
    let out = settings.out()?;
    if args.m == 0 {
        bail!("--m must be positive");
    }
    let path = results_path(settings, &args.results.results)?;
    let mut art = Artifacts::default();
    let results = of_relation(&load_results(&path, &mut art)?, args.relation);
    art.set("relation", args.relation);
    art.set("k", args.k);
    art.set("m", args.m);
    let red = topk_redundancy(&results, args.k, args.m)?;
    let names: BTreeMap<u32, &str> = results
        .iter()
        .flat_map(|r| r.topk_ids.iter().copied().zip(r.topk_tokens.iter().map(String::as_str)))
        .collect();
    let token = |id: u32| names.get(&id).copied().unwrap_or("").to_string();
    let mut table = Table::new(&["rank", "token", "id", "frequency"]);
    for (i, (id, freq)) in red.tokens.iter().enumerate() {
        table.row(&[(i + 1).to_string(), token(*id), id.to_string(), freq.to_string()]);
    }
    art.add("redundancy_tokens.tsv", table.into_bytes());
    let mut header = vec!["subject".to_string()];
    header.extend(red.tokens.iter().map(|(id, _)| token(*id)));
    let mut table = Table::new(&header);
    for (r, row) in results.iter().zip(&red.presence) {
        let mut cells = vec![r.subject.clone()];
        cells.extend(row.iter().map(|p| if *p { "1" } else { "0" }.to_string()));
        table.row(&cells);
    }
    art.add("redundancy_presence.tsv", table.into_bytes());
    let top: Vec<String> = red.tokens.iter().map(|(id, f)| format!("{} {f}", token(*id))).collect();
    Ok(Outcome::new(
        art,
        out,
        vec![format!("{} most frequent in top-{}: {}", args.relation, args.k, top.join(", "))],
    ))
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long, default_value_t = metrics::DEFAULT_DROP_THRESHOLD)]
    pub drop_threshold: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ENTROPY_THRESHOLD)]
    pub entropy_threshold: f64,
}

/// Hits, overlap, cross-grading and shapes in one output directory.
pub fn report(settings: &Settings, args: &ReportArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let ks = settings.ks(&DEFAULT_KS)?;
    let thresholds = thresholds(&ShapeArgs {
        results: args.pair.results.clone(),
        drop_threshold: args.drop_threshold,
        entropy_threshold: args.entropy_threshold,
    })?;
    let path = results_path(settings, &args.pair.results.results)?;
    let mut art = Artifacts::default();
    let results = load_results(&path, &mut art)?;
    art.set("ks", &ks);
    art.set("relations", [args.pair.relation_a, args.pair.relation_b]);
    art.set("shape_thresholds", thresholds);
    let mut summary = hits_artifacts(&mut art, &results, &ks)?;
    summary.extend(overlap_artifacts(&mut art, &results, &args.pair, &ks)?);
    summary.extend(cross_grade_artifacts(&mut art, &results, &args.pair, &ks)?);
    summary.extend(shape_artifacts(&mut art, &results, thresholds)?);
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- reading comprehension

#[derive(Debug, Clone, Args)]
pub struct RcArgs {
    /// SQuAD 2.0 data file
    #[arg(long, value_name = "PATH")]
    pub squad: Option<PathBuf>,
    /// Predictions as NAME=PATH or PATH, repeatable or comma-separated
    #[arg(long = "predictions", value_name = "SPEC", value_delimiter = ',')]
    pub predictions: Vec<String>,
}

fn load_rc(settings: &Settings, args: &RcArgs, art: &mut Artifacts) -> Result<(Vec<RcExample>, Vec<ModelPredictions>)> {
    let squad = settings
        .path(&args.squad, &settings.file.squad)
        .context("a SQuAD data file is required (--squad)")?;
    require_file(&squad, "--squad")?;
    let specs = if args.predictions.is_empty() {
        settings.file.predictions.clone().unwrap_or_default()
    } else {
        args.predictions.clone()
    };
    if specs.is_empty() {
        bail!("at least one predictions file is required (--predictions)");
    }
    let mut resolved = Vec::new();
    for spec in &specs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| anyhow!("cannot name predictions file {spec}"))?
                    .to_string();
                (stem, p)
            }
        };
        require_file(&path, "--predictions")?;
        resolved.push((name, path));
    }
    let text = art.read_input_string(&squad)?;
    let examples = rc::parse_squad(&text).with_context(|| format!("parsing {}", squad.display()))?;
    let mut models = Vec::new();
    for (name, path) in resolved {
        let json = art.read_input_string(&path)?;
        models.push(parse_predictions(&name, &json, &examples)?);
    }
    art.set("models", models.iter().map(|m| m.model.clone()).collect::<Vec<_>>());
    Ok((examples, models))
}

pub fn rc_analyze(settings: &Settings, args: &RcArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let width = settings.bin_width(DEFAULT_BIN_WIDTH)?;
    let mut art = Artifacts::default();
    let (examples, models) = load_rc(settings, args, &mut art)?;
    art.set("bin_width", width);
    let sims = similarities(&examples);
    let curve = bucket_curve(&examples, &sims, &models, width)?;

    let mut table = Table::new(&["id", "split", "similarity"]);
    for (ex, s) in examples.iter().zip(&sims) {
        let split = if ex.is_impossible { "no_answer" } else { "has_answer" };
        table.row(&[ex.id.clone(), split.to_string(), fmt_f64(*s)]);
    }
    art.add("similarities.tsv", table.into_bytes());
    let mut header: Vec<String> = ["split", "bin", "lo", "hi", "count"].map(String::from).to_vec();
    header.extend(curve.models.iter().cloned());
    let mut table = Table::new(&header);
    for row in &curve.rows {
        let mut cells = vec![
            row.split.to_string(),
            row.bin.to_string(),
            fmt_f64(row.lo),
            fmt_f64(row.hi),
            row.count.to_string(),
        ];
        cells.extend(row.scores.iter().copied().map(fmt_f64));
        table.row(&cells);
    }
    art.add("bucket_curve.tsv", table.into_bytes());
    art.add_json("bucket_curve.json", &curve)?;
    let summary = vec![format!(
        "examples {}  models {}  populated bins {}  empty bins {}",
        examples.len(),
        models.len(),
        curve.rows.len(),
        curve.omitted.len()
    )];
    Ok(Outcome::new(art, out, summary))
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    /// Exactly three predictions files, strongest model first
    #[command(flatten)]
    pub rc: RcArgs,
    /// Maximum sampled questions per domain
    #[arg(long, default_value_t = DEFAULT_SAMPLE_CAP)]
    pub cap: usize,
}

pub fn partition(settings: &Settings, args: &PartitionArgs) -> Result<Outcome> {
    let out = settings.out()?;
    let threshold = settings.sim_threshold(DEFAULT_SIM_THRESHOLD)?;
    let seed = settings.seed();
    let mut art = Artifacts::default();
    let (examples, models) = load_rc(settings, &args.rc, &mut art)?;
    if models.len() != 3 {
        bail!("partition needs exactly three predictions files, strongest first; got {}", models.len());
    }
    art.set("sim_threshold", threshold);
    art.set("cap", args.cap);
    art.set("seed", seed);
    let sims = similarities(&examples);
    let part = partition_domains(&examples, &sims, &models, threshold, args.cap, seed)?;

    let mut table = Table::new(&["id", "domain"]);
    let mut rows: Vec<(String, String)> = part
        .domains
        .iter()
        .flat_map(|(d, ids)| ids.iter().map(move |id| (id.clone(), d.to_string())))
        .chain(part.unclassified.iter().map(|id| (id.clone(), "unclassified".to_string())))
        .collect();
    rows.sort();
    for (id, d) in &rows {
        table.row(&[id.as_str(), d.as_str()]);
    }
    art.add("domains.tsv", table.into_bytes());
    let mut table = Table::new(&["domain", "id"]);
    let mut sampled = Vec::new();
    for (d, ids) in &part.samples {
        for id in ids {
            table.row(&[d.to_string(), id.clone()]);
            sampled.push(id.clone());
        }
    }
    art.add("samples.tsv", table.into_bytes());
    let mut sheet = Vec::new();
    annotation::write_template(&mut sheet, &examples, &sampled)?;
    art.add("annotation_template.tsv", sheet);
    art.add_json("partition.json", &part)?;
    let counts: Vec<String> = part.domains.iter().map(|(d, ids)| format!("{d} {}", ids.len())).collect();
    let summary = vec![format!(
        "eligible {}  {}  unclassified {}",
        part.eligible,
        counts.join("  "),
        part.unclassified.len()
    )];
    Ok(Outcome::new(art, out, summary))
}

// ---------------------------------------------------------------- fusion-check

#[derive(Debug, Clone, Args)]
pub struct FusionCheckArgs {
    /// Random instances per op
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Central-difference step
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Random pool and fuse instances drawn from `seed`; the fuse half alternates scaled logits.
pub fn fusion_instances(seed: u64, per_op: usize) -> Vec<(&'static str, Instance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_op);
    for _ in 0..per_op {
        let (m, de, da) = (rng.gen_range(1..=5), rng.gen_range(1..=6), rng.gen_range(1..=6));
        out.push(("attention_pool", Instance::random_pool(&mut rng, m, de, da)));
    }
    for i in 0..per_op {
        let (n, d, t, dc, dk) = (
            rng.gen_range(1..=5),
            rng.gen_range(1..=6),
            rng.gen_range(0..=4),
            rng.gen_range(1..=6),
            rng.gen_range(1..=5),
        );
        let options = FuseOptions { scaled: i % 2 == 1 };
        out.push(("c2t_fuse", Instance::random_fuse(&mut rng, n, d, t, dc, dk, options)));
    }
    out
}

pub fn fusion_check(settings: &Settings, args: &FusionCheckArgs) -> Result<Outcome> {
    let out = settings.path(&settings.global.out, &settings.file.out);
    if out.is_some() {
        settings.out()?;
    }
    if args.instances == 0 || !(args.step > 0.0) || !(args.tolerance > 0.0) {
        bail!("--instances, --step and --tolerance must be positive");
    }
    let seed = settings.seed();
    let mut art = Artifacts::default();
    art.set("instances", args.instances);
    art.set("step", args.step);
    art.set("tolerance", args.tolerance);
    art.set("seed", seed);
    let mut table = Table::new(&["op", "instance", "entries", "max_relative_error", "worst_tensor"]);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, (op, instance)) in fusion_instances(seed, args.instances).iter().enumerate() {
        let report = grad_check(instance, args.step)?;
        table.row(&[
            op.to_string(),
            (i % args.instances).to_string(),
            report.entries.to_string(),
            format!("{:e}", report.max_relative_error),
            report.worst.to_string(),
        ]);
        let w = worst.entry(op).or_insert(0.0);
        *w = w.max(report.max_relative_error);
    }
    art.add("fusion_check.tsv", table.into_bytes());
    let overall = worst.values().copied().fold(0.0, f64::max);
    let mut summary: Vec<String> = worst
        .iter()
        .map(|(op, e)| format!("{op}: max relative gradient error {e:e} over {} instances", args.instances))
        .collect();
    let success = overall < args.tolerance;
    summary.push(format!(
        "max relative gradient error {overall:e} ({} {:e})",
        if success { "<" } else { ">=" },
        args.tolerance
    ));
    Ok(Outcome {
        artifacts: art,
        out,
        summary,
        success,
    })
}
