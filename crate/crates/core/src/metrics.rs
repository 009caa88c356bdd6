//! Ranking metrics over probe results: hits@K with micro/macro averaging,
//! top-K overlap between relations, cross-grading against opposite-relation
//! answers, distribution-shape labels and top-K redundancy.
//!
//! Percentages are in `[0, 100]`. Ranks are 1-based and follow
//! [`Distribution::rank_cmp`]: descending log-probability, ties by ascending id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::probe::ProbeResult;
use crate::relation::Relation;
use crate::scorer::Distribution;
use crate::tokenizer::TokenId;

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 100];
pub const CROSS_GRADE_KS: [usize; 2] = [10, 100];
pub const DEFAULT_DROP_THRESHOLD: f64 = 1.0;
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.95;
/// Number of top-ranked tokens inspected for the adjacent-drop statistic.
pub const SHAPE_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("K = {k} exceeds the {available} ranked tokens kept per result")]
    KTooLarge { k: usize, available: usize },
    #[error("the two result sets share no subjects")]
    NoSharedSubjects,
    #[error("no results to evaluate")]
    Empty,
}

/// Neumaier-compensated sum, so means do not depend on reduction order beyond rounding.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for v in values {
        sum.add(v);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum.total() / n as f64
    }
}

/// Rank of the best-ranked answer. Panics if `answer_ids` is empty or out of range.
pub fn answer_rank(distribution: &Distribution, answer_ids: &[TokenId]) -> usize {
    let best = answer_ids
        .iter()
        .copied()
        .min_by(|a, b| distribution.rank_cmp(*a, *b))
        .expect("answer set is nonempty");
    assert!((best as usize) < distribution.len(), "answer id out of range");
    let ahead = (0..distribution.len() as TokenId)
        .filter(|t| distribution.rank_cmp(*t, best).is_lt())
        .count();
    ahead + 1
}

fn check_ks(ks: &[usize]) -> Result<(), MetricsError> {
    if ks.contains(&0) {
        Err(MetricsError::ZeroK)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: Relation,
    pub count: usize,
    /// hits@K percentages aligned with [`HitsReport::ks`].
    pub hits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsReport {
    pub ks: Vec<usize>,
    pub relations: Vec<RelationReport>,
    pub micro: Vec<f64>,
    pub macro_avg: Vec<f64>,
    pub total: usize,
}

fn hits_percent(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|r| **r <= k).count() as f64 / ranks.len() as f64
}

/// hits@K per relation plus micro (per result) and macro (per relation) averages.
pub fn hits_report(results: &[ProbeResult], ks: &[usize]) -> Result<HitsReport, MetricsError> {
    check_ks(ks)?;
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_relation: BTreeMap<Relation, Vec<usize>> = BTreeMap::new();
    for r in results {
        by_relation.entry(r.relation).or_default().push(r.best_rank);
    }
    let all_ranks: Vec<usize> = results.iter().map(|r| r.best_rank).collect();
    let relations: Vec<RelationReport> = by_relation
        .iter()
        .map(|(relation, ranks)| RelationReport {
            relation: *relation,
            count: ranks.len(),
            hits: ks.iter().map(|k| hits_percent(ranks, *k)).collect(),
        })
        .collect();
    let micro = ks.iter().map(|k| hits_percent(&all_ranks, *k)).collect();
    let macro_avg = (0..ks.len())
        .map(|i| mean(relations.iter().map(|r| r.hits[i])))
        .collect();
    Ok(HitsReport {
        ks: ks.to_vec(),
        relations,
        micro,
        macro_avg,
        total: results.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub k: usize,
    pub percent: f64,
    pub shared_subjects: usize,
}

/// Mean fraction of shared tokens between the top-K lists of two relations'
/// results on the same subjects.
pub fn overlap_at_k(a: &[ProbeResult], b: &[ProbeResult], k: usize) -> Result<Overlap, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let index_a: BTreeMap<&str, &ProbeResult> = a.iter().map(|r| (r.subject.as_str(), r)).collect();
    let index_b: HashMap<&str, &ProbeResult> = b.iter().map(|r| (r.subject.as_str(), r)).collect();
    let mut fractions = Vec::new();
    for (subject, ra) in &index_a {
        let Some(rb) = index_b.get(subject) else { continue };
        for r in [ra, rb] {
            if r.topk_ids.len() < k {
                return Err(MetricsError::KTooLarge {
                    k,
                    available: r.topk_ids.len(),
                });
            }
        }
        let top_a: BTreeSet<TokenId> = ra.topk_ids[..k].iter().copied().collect();
        let shared = rb.topk_ids[..k].iter().filter(|id| top_a.contains(id)).count();
        fractions.push(shared as f64 / k as f64);
    }
    if fractions.is_empty() {
        return Err(MetricsError::NoSharedSubjects);
    }
    Ok(Overlap {
        k,
        percent: 100.0 * mean(fractions.iter().copied()),
        shared_subjects: fractions.len(),
    })
}

/// Answer ids per subject, used as the opposite gold set when cross-grading.
pub fn answers_by_subject(results: &[ProbeResult]) -> BTreeMap<String, Vec<TokenId>> {
    results
        .iter()
        .map(|r| (r.subject.clone(), r.answer_ids.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGrade {
    pub ks: Vec<usize>,
    /// Incorrect rate: percentage of graded subjects with an opposite answer in the top K.
    pub hits: Vec<f64>,
    pub graded: usize,
    /// Subjects without opposite-relation answers.
    pub excluded: usize,
}

/// hits@K of one relation's predictions scored against another relation's answers.
/// Higher is worse. Uses the stored top-K lists, so every K must fit in them.
pub fn cross_grade(
    results: &[ProbeResult],
    opposite: &BTreeMap<String, Vec<TokenId>>,
    ks: &[usize],
) -> Result<CrossGrade, MetricsError> {
    check_ks(ks)?;
    let mut graded: Vec<&ProbeResult> = Vec::new();
    let mut excluded = 0;
    for r in results {
        match opposite.get(&r.subject) {
            Some(ans) if !ans.is_empty() => graded.push(r),
            _ => excluded += 1,
        }
    }
    if graded.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut hits = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut count = 0usize;
        for r in &graded {
            if r.topk_ids.len() < k {
                return Err(MetricsError::KTooLarge {
                    k,
                    available: r.topk_ids.len(),
                });
            }
            let answers = &opposite[&r.subject];
            if r.topk_ids[..k].iter().any(|id| answers.contains(id)) {
                count += 1;
            }
        }
        hits.push(100.0 * count as f64 / graded.len() as f64);
    }
    Ok(CrossGrade {
        ks: ks.to_vec(),
        hits,
        graded: graded.len(),
        excluded,
    })
}

/// Qualitative distribution shape: a sharp drop after a few tokens, a smooth decay, or near-flat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeLabel {
    L,
    U,
    Flat,
}

impl fmt::Display for ShapeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeLabel::L => "L",
            ShapeLabel::U => "U",
            ShapeLabel::Flat => "Flat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeThresholds {
    pub drop: f64,
    pub entropy: f64,
}

impl Default for ShapeThresholds {
    fn default() -> Self {
        ShapeThresholds {
            drop: DEFAULT_DROP_THRESHOLD,
            entropy: DEFAULT_ENTROPY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    /// H(p) / ln |V|.
    pub norm_entropy: f64,
    /// Largest log10-probability drop between adjacent ranks within the top [`SHAPE_WINDOW`].
    pub max_drop: f64,
}

/// Entropy divided by its maximum ln |V|. Invariant to shifting every logprob.
pub fn normalized_entropy(d: &Distribution) -> f64 {
    let lp = d.logprobs();
    if lp.len() < 2 {
        return 1.0;
    }
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = lp.iter().map(|l| (l - max).exp()).collect();
    let mut z = CompensatedSum::default();
    weights.iter().for_each(|w| z.add(*w));
    let z = z.total();
    let mut h = CompensatedSum::default();
    for w in &weights {
        if *w > 0.0 {
            let p = w / z;
            h.add(-p * p.ln());
        }
    }
    (h.total() / (lp.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Maximum adjacent drop in log10 probability over ranked natural-log probabilities.
pub fn max_log10_drop(ranked_logprobs: &[f64]) -> f64 {
    let window = &ranked_logprobs[..ranked_logprobs.len().min(SHAPE_WINDOW)];
    window
        .windows(2)
        .map(|w| {
            if w[0] == w[1] {
                0.0
            } else {
                (w[0] - w[1]) / std::f64::consts::LN_10
            }
        })
        .fold(0.0, f64::max)
}

pub fn shape_stats(d: &Distribution) -> ShapeStats {
    let top: Vec<f64> = d
        .top_k(SHAPE_WINDOW)
        .iter()
        .map(|id| d.logprobs()[*id as usize])
        .collect();
    ShapeStats {
        norm_entropy: normalized_entropy(d),
        max_drop: max_log10_drop(&top),
    }
}

/// Shape statistics recovered from a stored probe result.
pub fn result_shape_stats(r: &ProbeResult) -> ShapeStats {
    ShapeStats {
        norm_entropy: r.norm_entropy,
        max_drop: max_log10_drop(&r.topk_logprobs),
    }
}

pub fn classify_stats(stats: ShapeStats, thresholds: ShapeThresholds) -> ShapeLabel {
    if stats.max_drop >= thresholds.drop {
        ShapeLabel::L
    } else if stats.norm_entropy >= thresholds.entropy {
        ShapeLabel::Flat
    } else {
        ShapeLabel::U
    }
}

pub fn classify_shape(d: &Distribution, thresholds: ShapeThresholds) -> ShapeLabel {
    classify_stats(shape_stats(d), thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Redundancy {
    /// The most frequent tokens with the number of results whose top-K contains them,
    /// by descending frequency then ascending id.
    pub tokens: Vec<(TokenId, usize)>,
    /// `presence[i][j]`: result `i`'s top-K contains `tokens[j]`.
    pub presence: Vec<Vec<bool>>,
}

pub fn topk_redundancy(results: &[ProbeResult], k: usize, m: usize) -> Result<Redundancy, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut freq: BTreeMap<TokenId, usize> = BTreeMap::new();
    for r in results {
        if r.topk_ids.len() < k {
            return Err(MetricsError::KTooLarge {
                k,
                available: r.topk_ids.len(),
            });
        }
        let distinct: BTreeSet<TokenId> = r.topk_ids[..k].iter().copied().collect();
        for id in distinct {
            *freq.entry(id).or_default() += 1;
        }
    }
    let mut ranked: Vec<(TokenId, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(m);
    let presence = results
        .iter()
        .map(|r| {
            let top = &r.topk_ids[..k];
            ranked.iter().map(|(id, _)| top.contains(id)).collect()
        })
        .collect();
    Ok(Redundancy {
        tokens: ranked,
        presence,
    })
}
