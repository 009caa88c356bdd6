//! Cloze-query rendering and probe execution.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kb::ProbeGroup;
use crate::metrics::{answer_rank, normalized_entropy};
use crate::relation::Relation;
use crate::scorer::{Distribution, ScoreError, Scorer};
use crate::tokenizer::{TokenId, TokenSeq, Vocab, CLS_TOKEN, MASK_TOKEN, SEP_TOKEN};

pub const SUBJ_PLACEHOLDER: &str = "[[SUBJ]]";
pub const OBJ_PLACEHOLDER: &str = "[[OBJ]]";

/// Number of top-ranked tokens kept per result.
pub const TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("template `{pattern}` must contain {placeholder} exactly once")]
    Placeholder {
        pattern: String,
        placeholder: &'static str,
    },
    #[error("template `{0}` must end with \" .\"")]
    Terminator(String),
    #[error("template file line {line}: {reason}")]
    TemplateFile { line: usize, reason: String },
    #[error("no template for relation {0}")]
    MissingTemplate(Relation),
    #[error("template for {template} cannot render a {group} group")]
    RelationMismatch { template: Relation, group: Relation },
    #[error("answer `{0}` is not a single vocabulary token")]
    MultiToken(String),
    #[error("group has no answers")]
    NoAnswers,
    #[error("subject `{0}` is one of its own answers")]
    Degenerate(String),
}

/// A cloze pattern with one `[[SUBJ]]` and one `[[OBJ]]` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    relation: Relation,
    pattern: String,
}

impl Template {
    pub fn new(relation: Relation, pattern: impl Into<String>) -> Result<Self, ProbeError> {
        let pattern = pattern.into();
        for placeholder in [SUBJ_PLACEHOLDER, OBJ_PLACEHOLDER] {
            if pattern.matches(placeholder).count() != 1 {
                return Err(ProbeError::Placeholder { pattern, placeholder });
            }
        }
        if !pattern.ends_with(" .") {
            return Err(ProbeError::Terminator(pattern));
        }
        Ok(Template { relation, pattern })
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Substitutes both placeholders with plain text.
    pub fn fill(&self, subject: &str, object: &str) -> String {
        self.pattern
            .replace(SUBJ_PLACEHOLDER, subject)
            .replace(OBJ_PLACEHOLDER, object)
    }
}

/// The built-in template for every relation.
pub fn default_templates() -> BTreeMap<Relation, Template> {
    Relation::ALL
        .iter()
        .map(|r| (*r, Template::new(*r, r.default_template()).expect("built-in templates are valid")))
        .collect()
}

/// Reads `relation<TAB>pattern` lines. Later lines override earlier ones.
pub fn parse_templates<R: Read>(reader: R) -> Result<BTreeMap<Relation, Template>, ProbeError> {
    let mut out = BTreeMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let bad = |reason: String| ProbeError::TemplateFile { line: idx + 1, reason };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, pattern) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected relation<TAB>pattern".into()))?;
        let relation = rel.parse::<Relation>().map_err(|e| bad(e.to_string()))?;
        let template = Template::new(relation, pattern).map_err(|e| bad(e.to_string()))?;
        out.insert(relation, template);
    }
    Ok(out)
}

/// A rendered cloze sentence, framed as `[CLS] ... [SEP]` with exactly one mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeQuery {
    pub group: ProbeGroup,
    #[serde(skip)]
    pub tokens: TokenSeq,
    pub mask_index: usize,
    pub answer_ids: Vec<TokenId>,
}

impl ProbeQuery {
    /// The query with the mask replaced by `id`.
    pub fn unmasked(&self, id: TokenId, vocab: &Vocab) -> TokenSeq {
        let mut seq = self.tokens.clone();
        seq.ids[self.mask_index] = id;
        seq.strings[self.mask_index] = vocab.token(id).unwrap_or_default().to_string();
        seq
    }

    pub fn sentence(&self) -> String {
        self.tokens.strings.join(" ")
    }
}

pub fn render_query(group: &ProbeGroup, template: &Template, vocab: &Vocab) -> Result<ProbeQuery, ProbeError> {
    if template.relation != group.relation {
        return Err(ProbeError::RelationMismatch {
            template: template.relation,
            group: group.relation,
        });
    }
    if group.answers.is_empty() {
        return Err(ProbeError::NoAnswers);
    }
    if group.answers.iter().any(|a| *a == group.subject) {
        return Err(ProbeError::Degenerate(group.subject.clone()));
    }
    let mut answer_ids = Vec::with_capacity(group.answers.len());
    for answer in &group.answers {
        let id = vocab
            .single_token_id(answer)
            .ok_or_else(|| ProbeError::MultiToken(answer.clone()))?;
        if !answer_ids.contains(&id) {
            answer_ids.push(id);
        }
    }

    let with_subject = template.pattern.replace(SUBJ_PLACEHOLDER, &group.subject);
    let (before, after) = with_subject
        .split_once(OBJ_PLACEHOLDER)
        .expect("validated template has an object placeholder");
    let mut tokens = TokenSeq::default();
    tokens.push(vocab.cls_id(), CLS_TOKEN.to_string());
    tokens.extend(vocab.tokenize(before));
    let mask_index = tokens.len();
    tokens.push(vocab.mask_id(), MASK_TOKEN.to_string());
    tokens.extend(vocab.tokenize(after));
    tokens.push(vocab.sep_id(), SEP_TOKEN.to_string());

    Ok(ProbeQuery {
        group: group.clone(),
        tokens,
        mask_index,
        answer_ids,
    })
}

/// Groups that could not be rendered, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedGroup {
    pub group: ProbeGroup,
    pub error: ProbeError,
}

/// Renders every group whose relation has a template. Degenerate groups are skipped and logged;
/// a group whose relation has no template is an error.
pub fn render_queries(
    groups: &[ProbeGroup],
    templates: &BTreeMap<Relation, Template>,
    vocab: &Vocab,
) -> Result<(Vec<ProbeQuery>, Vec<SkippedGroup>), ProbeError> {
    let mut queries = Vec::with_capacity(groups.len());
    let mut skipped = Vec::new();
    for group in groups {
        let template = templates
            .get(&group.relation)
            .ok_or(ProbeError::MissingTemplate(group.relation))?;
        match render_query(group, template, vocab) {
            Ok(q) => queries.push(q),
            Err(error @ ProbeError::Degenerate(_)) => {
                tracing::warn!(relation = %group.relation, subject = %group.subject, "skipping degenerate group");
                skipped.push(SkippedGroup {
                    group: group.clone(),
                    error,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((queries, skipped))
}

/// The outcome of one successfully scored query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub relation: Relation,
    pub subject: String,
    pub answers: Vec<String>,
    pub answer_ids: Vec<TokenId>,
    /// 1-based rank of the best-ranked answer.
    pub best_rank: usize,
    pub topk_ids: Vec<TokenId>,
    pub topk_tokens: Vec<String>,
    pub topk_logprobs: Vec<f64>,
    /// Entropy of the full distribution divided by ln |V|.
    pub norm_entropy: f64,
    #[serde(skip)]
    pub distribution: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub relation: Relation,
    pub subject: String,
    pub answers: Vec<String>,
    pub error: String,
}

pub type ProbeOutcome = Result<ProbeResult, ProbeFailure>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Queries per scheduling batch; batches run one after another.
    pub batch_size: usize,
    pub parallel: bool,
    pub keep_distributions: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            batch_size: 256,
            parallel: true,
            keep_distributions: false,
        }
    }
}

/// Builds a result from a scored distribution.
pub fn summarize(query: &ProbeQuery, distribution: Distribution, vocab: &Vocab, keep: bool) -> ProbeResult {
    let topk_ids = distribution.top_k(TOP_K);
    let topk_logprobs = topk_ids.iter().map(|id| distribution.logprobs()[*id as usize]).collect();
    let topk_tokens = topk_ids
        .iter()
        .map(|id| vocab.token(*id).unwrap_or_default().to_string())
        .collect();
    ProbeResult {
        relation: query.group.relation,
        subject: query.group.subject.clone(),
        answers: query.group.answers.clone(),
        answer_ids: query.answer_ids.clone(),
        best_rank: answer_rank(&distribution, &query.answer_ids),
        topk_ids,
        topk_tokens,
        topk_logprobs,
        norm_entropy: normalized_entropy(&distribution),
        distribution: keep.then_some(distribution),
    }
}

fn score_one(query: &ProbeQuery, scorer: &dyn Scorer, vocab: &Vocab, keep: bool) -> ProbeOutcome {
    let scored: Result<Distribution, ScoreError> = scorer.score_masked(&query.tokens, query.mask_index).and_then(|d| {
        if d.len() == vocab.len() {
            Ok(d)
        } else {
            Err(ScoreError::Config(format!(
                "scorer returned {} logprobs for a vocabulary of {}",
                d.len(),
                vocab.len()
            )))
        }
    });
    match scored {
        Ok(d) => Ok(summarize(query, d, vocab, keep)),
        Err(e) => {
            tracing::warn!(relation = %query.group.relation, subject = %query.group.subject, error = %e, "probe failed");
            Err(ProbeFailure {
                relation: query.group.relation,
                subject: query.group.subject.clone(),
                answers: query.group.answers.clone(),
                error: e.to_string(),
            })
        }
    }
}

/// Scores every query. Output order matches input order; a failed query is recorded and
/// the batch carries on.
pub fn run_probe(queries: &[ProbeQuery], scorer: &dyn Scorer, vocab: &Vocab, options: &RunOptions) -> Vec<ProbeOutcome> {
    let batch = options.batch_size.max(1);
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(batch) {
        if options.parallel {
            out.par_extend(
                chunk
                    .par_iter()
                    .map(|q| score_one(q, scorer, vocab, options.keep_distributions)),
            );
        } else {
            out.extend(chunk.iter().map(|q| score_one(q, scorer, vocab, options.keep_distributions)));
        }
    }
    out
}

pub fn failure_count(outcomes: &[ProbeOutcome]) -> usize {
    outcomes.iter().filter(|o| o.is_err()).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ".", "and", "are", "opposite", "children", "adults", "butter",
            "can", "be", "made", "of", "milk", "hot", "dog", "food", "is", "a", "##s",
        ])
        .unwrap()
    }

    fn group(subject: &str, relation: Relation, answers: &[&str]) -> ProbeGroup {
        ProbeGroup {
            subject: subject.into(),
            relation,
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn renders_antonym_cloze() {
        let v = vocab();
        let t = &default_templates()[&Relation::Antonym];
        let q = render_query(&group("children", Relation::Antonym, &["adults"]), t, &v).unwrap();
        assert_eq!(q.sentence(), "[CLS] children and [MASK] are opposite . [SEP]");
        assert_eq!(q.mask_index, 3);
        assert_eq!(q.answer_ids, vec![v.id("adults").unwrap()]);
    }

    #[test]
    fn renders_made_of_cloze() {
        let v = vocab();
        let t = &default_templates()[&Relation::MadeOf];
        let q = render_query(&group("butter", Relation::MadeOf, &["milk"]), t, &v).unwrap();
        assert_eq!(q.sentence(), "[CLS] butter can be made of [MASK] . [SEP]");
    }

    #[test]
    fn multi_word_subject_has_one_mask() {
        let v = vocab();
        let t = &default_templates()[&Relation::IsA];
        let q = render_query(&group("hot dog", Relation::IsA, &["food"]), t, &v).unwrap();
        assert_eq!(q.sentence(), "[CLS] hot dog is a [MASK] . [SEP]");
        assert_eq!(q.tokens.ids.iter().filter(|id| **id == v.mask_id()).count(), 1);
    }

    #[test]
    fn round_trip_with_gold_answer() {
        let v = vocab();
        let templates = default_templates();
        for (g, rel) in [
            (group("children", Relation::Antonym, &["adults"]), Relation::Antonym),
            (group("hot dog", Relation::IsA, &["food"]), Relation::IsA),
        ] {
            let t = &templates[&rel];
            let q = render_query(&g, t, &v).unwrap();
            let filled = q.unmasked(q.answer_ids[0], &v);
            let mut expected = TokenSeq::default();
            expected.push(v.cls_id(), CLS_TOKEN.into());
            expected.extend(v.tokenize(&t.fill(&g.subject, &g.answers[0])));
            expected.push(v.sep_id(), SEP_TOKEN.into());
            assert_eq!(filled, expected);
        }
    }

    #[test]
    fn template_validation() {
        assert!(matches!(
            Template::new(Relation::IsA, "[[SUBJ]] is a thing ."),
            Err(ProbeError::Placeholder { placeholder: OBJ_PLACEHOLDER, .. })
        ));
        assert!(matches!(
            Template::new(Relation::IsA, "[[SUBJ]] [[SUBJ]] [[OBJ]] ."),
            Err(ProbeError::Placeholder { placeholder: SUBJ_PLACEHOLDER, .. })
        ));
        assert!(matches!(
            Template::new(Relation::IsA, "[[SUBJ]] is a [[OBJ]]"),
            Err(ProbeError::Terminator(_))
        ));
    }

    #[test]
    fn template_file() {
        let text = "# comment\nIsA\t[[SUBJ]] is a kind of [[OBJ]] .\n";
        let t = parse_templates(text.as_bytes()).unwrap();
        assert_eq!(t[&Relation::IsA].pattern(), "[[SUBJ]] is a kind of [[OBJ]] .");
        let err = parse_templates("IsA\tno placeholders .\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ProbeError::TemplateFile { line: 1, .. }));
    }

    #[test]
    fn rejects_bad_groups() {
        let v = vocab();
        let templates = default_templates();
        let t = &templates[&Relation::Antonym];
        assert!(matches!(
            render_query(&group("children", Relation::Antonym, &["grownups"]), t, &v),
            Err(ProbeError::MultiToken(_))
        ));
        assert!(matches!(
            render_query(&group("children", Relation::IsA, &["adults"]), t, &v),
            Err(ProbeError::RelationMismatch { .. })
        ));
        let (queries, skipped) = render_queries(
            &[
                group("dog", Relation::Antonym, &["dog"]),
                group("children", Relation::Antonym, &["adults"]),
            ],
            &templates,
            &v,
        )
        .unwrap();
        assert_eq!(queries.len(), 1);
        assert_eq!(skipped.len(), 1);
    }
}
