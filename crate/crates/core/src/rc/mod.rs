//! Reading-comprehension difficulty analysis over SQuAD 2.0 style data.

mod analysis;
pub mod annotation;
mod eval;
mod tfidf;

pub use analysis::{
    bucket_curve, partition_domains, BinRow, BucketCurve, Domain, DomainPartition, ModelPredictions, Split,
    DEFAULT_BIN_WIDTH, DEFAULT_SAMPLE_CAP, DEFAULT_SIM_THRESHOLD,
};
pub use eval::{normalize_answer, squad_em, squad_f1};
pub use tfidf::{similarities, tfidf_cosine, IdfTable};

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum RcError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("predictions for model `{model}`: {message}")]
    Predictions { model: String, message: String },
    #[error("model `{model}` has no prediction for question `{id}`")]
    MissingPrediction { model: String, id: String },
    #[error("configuration error: {0}")]
    Config(String),
}

/// One question with its paragraph and gold answers. `gold_answers` is empty exactly
/// when the question is unanswerable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RcExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
}

/// Parses the published SQuAD 2.0 data schema. Plausible answers of unanswerable
/// questions are ignored.
pub fn parse_squad(json: &str) -> Result<Vec<RcExample>, RcError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let file: SquadFile = serde_path_to_error::deserialize(de).map_err(|e| RcError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (ai, article) in file.data.into_iter().enumerate() {
        for (pi, paragraph) in article.paragraphs.into_iter().enumerate() {
            for (qi, qa) in paragraph.qas.into_iter().enumerate() {
                let path = format!("data[{ai}].paragraphs[{pi}].qas[{qi}]");
                let violation = |message: &str| RcError::Schema {
                    path: path.clone(),
                    message: message.to_string(),
                };
                if qa.is_impossible && !qa.answers.is_empty() {
                    return Err(violation("unanswerable question lists answers"));
                }
                if !qa.is_impossible && qa.answers.is_empty() {
                    return Err(violation("answerable question has no answers"));
                }
                if !seen.insert(qa.id.clone()) {
                    return Err(violation(&format!("duplicate question id `{}`", qa.id)));
                }
                out.push(RcExample {
                    id: qa.id,
                    context: paragraph.context.clone(),
                    question: qa.question,
                    gold_answers: qa.answers.into_iter().map(|a| a.text).collect(),
                    is_impossible: qa.is_impossible,
                });
            }
        }
    }
    Ok(out)
}

pub fn load_squad(path: impl AsRef<Path>) -> Result<Vec<RcExample>, RcError> {
    parse_squad(&std::fs::read_to_string(path)?)
}

/// Parses a `{ "question id": "answer text", ... }` predictions file. Every id must
/// belong to `examples`; an empty string predicts no answer.
pub fn parse_predictions(model: &str, json: &str, examples: &[RcExample]) -> Result<ModelPredictions, RcError> {
    let answers: BTreeMap<String, String> = serde_json::from_str(json).map_err(|e| RcError::Predictions {
        model: model.to_string(),
        message: e.to_string(),
    })?;
    let known: HashSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    if let Some(unknown) = answers.keys().find(|id| !known.contains(id.as_str())) {
        return Err(RcError::Predictions {
            model: model.to_string(),
            message: format!("unknown question id `{unknown}`"),
        });
    }
    Ok(ModelPredictions {
        model: model.to_string(),
        answers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"version": "v2.0", "data": [{"title": "T", "paragraphs": [{"context": "The Normans came from Normandy.",
        "qas": [{"id": "q1", "question": "Where did the Normans come from?", "answers": [{"text": "Normandy", "answer_start": 22}], "is_impossible": false}]}]}]}"#;

    #[test]
    fn minimal_file() {
        let ex = parse_squad(MINIMAL).unwrap();
        assert_eq!(ex.len(), 1);
        assert!(!ex[0].is_impossible);
        assert_eq!(ex[0].gold_answers, vec!["Normandy"]);
    }

    #[test]
    fn impossible_question_drops_plausible_answers() {
        let json = r#"{"data": [{"paragraphs": [{"context": "c", "qas": [{"id": "q", "question": "?", "answers": [],
            "plausible_answers": [{"text": "x", "answer_start": 0}], "is_impossible": true}]}]}]}"#;
        let ex = parse_squad(json).unwrap();
        assert!(ex[0].is_impossible);
        assert!(ex[0].gold_answers.is_empty());
    }

    #[test]
    fn schema_errors_carry_paths() {
        let json = r#"{"data": [{"paragraphs": [{"context": "c", "qas": [{"id": "q", "answers": []}]}]}]}"#;
        match parse_squad(json).unwrap_err() {
            RcError::Schema { path, .. } => assert!(path.starts_with("data[0].paragraphs[0].qas[0]"), "{path}"),
            e => panic!("{e}"),
        }
        let json = r#"{"data": [{"paragraphs": [{"context": "c", "qas": [
            {"id": "a", "question": "?", "answers": [{"text": "c"}]},
            {"id": "b", "question": "?", "answers": []}]}]}]}"#;
        match parse_squad(json).unwrap_err() {
            RcError::Schema { path, .. } => assert_eq!(path, "data[0].paragraphs[0].qas[1]"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn predictions_must_reference_known_ids() {
        let ex = parse_squad(MINIMAL).unwrap();
        assert!(parse_predictions("m", r#"{"q1": "Normandy"}"#, &ex).is_ok());
        assert!(parse_predictions("m", r#"{"q2": ""}"#, &ex).is_err());
        assert!(parse_predictions("m", r#"["q1"]"#, &ex).is_err());
    }
}
