use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{squad_em, RcError, RcExample};

pub const DEFAULT_BIN_WIDTH: f64 = 0.1;
pub const DEFAULT_SIM_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SAMPLE_CAP: usize = 100;

// Absorbs representation error so a similarity equal to a bin edge (0.3, 0.7, ...)
// lands in the bin that starts there.
const EDGE_EPSILON: f64 = 1e-9;

/// One model's answers keyed by question id. An empty string predicts no answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPredictions {
    pub model: String,
    pub answers: BTreeMap<String, String>,
}

impl ModelPredictions {
    pub fn answer(&self, id: &str) -> Result<&str, RcError> {
        self.answers
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| RcError::MissingPrediction {
                model: self.model.clone(),
                id: id.to_string(),
            })
    }

    fn passes(&self, example: &RcExample) -> Result<bool, RcError> {
        Ok(squad_em(self.answer(&example.id)?, &example.gold_answers) == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    HasAnswer,
    NoAnswer,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::HasAnswer => "has_answer",
            Split::NoAnswer => "no_answer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub split: Split,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// EM (has answer) or no-answer accuracy (no answer) in percent, one per model.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCurve {
    pub bin_width: f64,
    pub bins: usize,
    pub models: Vec<String>,
    pub rows: Vec<BinRow>,
    /// (split, bin) pairs with no examples.
    pub omitted: Vec<(Split, usize)>,
}

fn bin_count(width: f64) -> Result<usize, RcError> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(RcError::Config(format!("bin width must be in (0, 1], got {width}")));
    }
    Ok(((1.0 / width) - EDGE_EPSILON).ceil().max(1.0) as usize)
}

/// Bin index for a similarity in `[0, 1]`: half-open bins, the last one closed at 1.
pub fn bin_index(similarity: f64, width: f64, bins: usize) -> usize {
    let idx = (similarity / width + EDGE_EPSILON).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

/// Per-bin performance of each model, split by answerability.
pub fn bucket_curve(
    examples: &[RcExample],
    similarities: &[f64],
    models: &[ModelPredictions],
    bin_width: f64,
) -> Result<BucketCurve, RcError> {
    let bins = bin_count(bin_width)?;
    if similarities.len() != examples.len() {
        return Err(RcError::Config(format!(
            "{} similarities for {} examples",
            similarities.len(),
            examples.len()
        )));
    }
    // (split, bin) -> (count, passes per model)
    let mut cells: BTreeMap<(Split, usize), (usize, Vec<usize>)> = BTreeMap::new();
    for (ex, &sim) in examples.iter().zip(similarities) {
        let split = if ex.is_impossible { Split::NoAnswer } else { Split::HasAnswer };
        let cell = cells
            .entry((split, bin_index(sim, bin_width, bins)))
            .or_insert_with(|| (0, vec![0; models.len()]));
        cell.0 += 1;
        for (m, model) in models.iter().enumerate() {
            if model.passes(ex)? {
                cell.1[m] += 1;
            }
        }
    }
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for split in [Split::HasAnswer, Split::NoAnswer] {
        for bin in 0..bins {
            match cells.get(&(split, bin)) {
                Some((count, passes)) => rows.push(BinRow {
                    split,
                    bin,
                    lo: bin as f64 * bin_width,
                    hi: ((bin + 1) as f64 * bin_width).min(1.0),
                    count: *count,
                    scores: passes.iter().map(|p| 100.0 * *p as f64 / *count as f64).collect(),
                }),
                None => omitted.push((split, bin)),
            }
        }
    }
    Ok(BucketCurve {
        bin_width,
        bins,
        models: models.iter().map(|m| m.model.clone()).collect(),
        rows,
        omitted,
    })
}

/// Hard-question domains by which of three ranked models answer correctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    /// All three fail.
    A,
    /// Only the strongest passes.
    B,
    /// The two strongest pass, the weakest fails.
    C,
    /// All three pass.
    D,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::A, Domain::B, Domain::C, Domain::D];

    /// Domain for a (strong, mid, weak) pass pattern, `None` for the other four patterns.
    pub fn from_pattern(pattern: [bool; 3]) -> Option<Domain> {
        match pattern {
            [false, false, false] => Some(Domain::A),
            [true, false, false] => Some(Domain::B),
            [true, true, false] => Some(Domain::C),
            [true, true, true] => Some(Domain::D),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPartition {
    pub eligible: usize,
    /// Sorted ids per domain.
    pub domains: BTreeMap<Domain, Vec<String>>,
    /// Eligible ids whose pass pattern is none of A-D, sorted.
    pub unclassified: Vec<String>,
    /// Uniform samples without replacement, at most the cap per domain, sorted.
    pub samples: BTreeMap<Domain, Vec<String>>,
}

/// Splits answerable questions with similarity below `threshold` into domains A-D.
/// `models` must hold exactly three prediction sets ordered strongest to weakest; EM decides pass/fail.
pub fn partition_domains(
    examples: &[RcExample],
    similarities: &[f64],
    models: &[ModelPredictions],
    threshold: f64,
    sample_cap: usize,
    seed: u64,
) -> Result<DomainPartition, RcError> {
    if models.len() != 3 {
        return Err(RcError::Config(format!(
            "domain partitioning needs exactly three ranked models, got {}",
            models.len()
        )));
    }
    if similarities.len() != examples.len() {
        return Err(RcError::Config(format!(
            "{} similarities for {} examples",
            similarities.len(),
            examples.len()
        )));
    }
    let mut domains: BTreeMap<Domain, Vec<String>> = Domain::ALL.iter().map(|d| (*d, Vec::new())).collect();
    let mut unclassified = Vec::new();
    let mut eligible = 0;
    for (ex, &sim) in examples.iter().zip(similarities) {
        if ex.is_impossible || !(sim < threshold) {
            continue;
        }
        eligible += 1;
        let pattern = [models[0].passes(ex)?, models[1].passes(ex)?, models[2].passes(ex)?];
        match Domain::from_pattern(pattern) {
            Some(d) => domains.get_mut(&d).expect("all domains present").push(ex.id.clone()),
            None => unclassified.push(ex.id.clone()),
        }
    }
    for ids in domains.values_mut() {
        ids.sort();
    }
    unclassified.sort();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = domains
        .iter()
        .map(|(d, ids)| {
            let mut picked: Vec<String> = if ids.len() <= sample_cap {
                ids.clone()
            } else {
                rand::seq::index::sample(&mut rng, ids.len(), sample_cap)
                    .into_iter()
                    .map(|i| ids[i].clone())
                    .collect()
            };
            picked.sort();
            (*d, picked)
        })
        .collect();

    Ok(DomainPartition {
        eligible,
        domains,
        unclassified,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, golds: &[&str]) -> RcExample {
        RcExample {
            id: id.into(),
            context: String::new(),
            question: String::new(),
            gold_answers: golds.iter().map(|s| s.to_string()).collect(),
            is_impossible: golds.is_empty(),
        }
    }

    fn preds(model: &str, pairs: &[(&str, &str)]) -> ModelPredictions {
        ModelPredictions {
            model: model.into(),
            answers: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    #[test]
    fn single_bin_all_correct() {
        let examples = vec![ex("1", &["x"]), ex("2", &["y"])];
        let m = preds("m", &[("1", "x"), ("2", "y")]);
        let c = bucket_curve(&examples, &[0.05, 0.05], &[m], 0.1).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].bin, 0);
        assert_eq!(c.rows[0].scores, vec![100.0]);
        assert_eq!(c.omitted.len(), 19);
    }

    #[test]
    fn bin_edges_are_half_open() {
        assert_eq!(bin_index(0.1, 0.1, 10), 1);
        assert_eq!(bin_index(0.3, 0.1, 10), 3);
        assert_eq!(bin_index(0.7, 0.1, 10), 7);
        assert_eq!(bin_index(0.0999, 0.1, 10), 0);
        assert_eq!(bin_index(1.0, 0.1, 10), 9);
        assert_eq!(bin_count(0.1).unwrap(), 10);
        assert_eq!(bin_count(0.3).unwrap(), 4);
        assert!(bin_count(0.0).is_err());
    }

    #[test]
    fn missing_prediction_is_named() {
        let examples = vec![ex("1", &["x"]), ex("2", &[])];
        let m = preds("weak", &[("1", "x")]);
        match bucket_curve(&examples, &[0.5, 0.5], &[m], 0.1).unwrap_err() {
            RcError::MissingPrediction { model, id } => assert_eq!((model.as_str(), id.as_str()), ("weak", "2")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn pass_patterns() {
        assert_eq!(Domain::from_pattern([true, false, false]), Some(Domain::B));
        assert_eq!(Domain::from_pattern([false, false, true]), None);
        assert_eq!(Domain::from_pattern([true, true, true]), Some(Domain::D));
    }

    #[test]
    fn all_pass_goes_to_d() {
        let examples = vec![ex("1", &["x"]), ex("2", &["y"]), ex("3", &[])];
        let p = preds("m", &[("1", "x"), ("2", "y"), ("3", "")]);
        let models = vec![p.clone(), p.clone(), p];
        let part = partition_domains(&examples, &[0.1, 0.15, 0.0], &models, 0.2, 100, 7).unwrap();
        assert_eq!(part.eligible, 2);
        assert_eq!(part.domains[&Domain::D], vec!["1", "2"]);
        assert!(part.domains[&Domain::A].is_empty());
    }

    #[test]
    fn needs_three_models() {
        let examples = vec![ex("1", &["x"])];
        let p = preds("m", &[("1", "x")]);
        assert!(matches!(
            partition_domains(&examples, &[0.1], &[p.clone(), p], 0.2, 100, 0),
            Err(RcError::Config(_))
        ));
    }
}
