//! SQuAD answer normalization, exact match and token F1.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

const ASCII_PUNCTUATION: &str = r##"!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~"##;

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"))
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punc: String = lowered.chars().filter(|c| !ASCII_PUNCTUATION.contains(*c)).collect();
    let no_articles = articles().replace_all(&no_punc, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 if the prediction matches any gold answer after normalization. With no gold
/// answers the question is unanswerable and only an empty prediction matches.
pub fn squad_em(prediction: &str, gold_answers: &[String]) -> u8 {
    let pred = normalize_answer(prediction);
    let hit = if gold_answers.is_empty() {
        pred.is_empty()
    } else {
        gold_answers.iter().any(|g| normalize_answer(g) == pred)
    };
    u8::from(hit)
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let pred_toks: Vec<&str> = pred.split_whitespace().collect();
    let gold_toks: Vec<&str> = gold.split_whitespace().collect();
    if pred_toks.is_empty() || gold_toks.is_empty() {
        return if pred_toks == gold_toks { 1.0 } else { 0.0 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_toks {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_toks {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_toks.len() as f64;
    let recall = common as f64 / gold_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 of the normalized bags, maximized over gold answers.
pub fn squad_f1(prediction: &str, gold_answers: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    if gold_answers.is_empty() {
        return f1_single(&pred, "");
    }
    gold_answers
        .iter()
        .map(|g| f1_single(&pred, &normalize_answer(g)))
        .fold(0.0, f64::max)
}
