//! Question-type labels for hard reading-comprehension questions.
//!
//! Labeling is done by people. This module writes a blank annotation sheet and reads
//! a filled one back: a TSV with `id`, `question`, `context_excerpt` and one column
//! per label, where any non-blank cell marks the label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RcError, RcExample};

/// Characters of context kept in the annotation sheet.
pub const EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    Synonymy,
    CommonSenseKnowledge,
    MultipleSentenceReasoning,
    NoSemanticVariation,
    Others,
    Typo,
}

impl QuestionType {
    pub const ALL: [QuestionType; 6] = [
        QuestionType::Synonymy,
        QuestionType::CommonSenseKnowledge,
        QuestionType::MultipleSentenceReasoning,
        QuestionType::NoSemanticVariation,
        QuestionType::Others,
        QuestionType::Typo,
    ];

    pub fn column(self) -> &'static str {
        match self {
            QuestionType::Synonymy => "synonymy",
            QuestionType::CommonSenseKnowledge => "common_sense_knowledge",
            QuestionType::MultipleSentenceReasoning => "multiple_sentence_reasoning",
            QuestionType::NoSemanticVariation => "no_semantic_variation",
            QuestionType::Others => "others",
            QuestionType::Typo => "typo",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuestionType::ALL
            .into_iter()
            .find(|q| q.column() == s)
            .ok_or_else(|| format!("unknown question type `{s}`"))
    }
}

fn cell(text: &str) -> String {
    text.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

fn header() -> String {
    let mut cols = vec!["id", "question", "context_excerpt"];
    cols.extend(QuestionType::ALL.iter().map(|q| q.column()));
    cols.join("\t")
}

/// Writes a blank sheet for the given ids, in the order given.
pub fn write_template<W: Write>(mut w: W, examples: &[RcExample], ids: &[String]) -> io::Result<()> {
    let by_id: BTreeMap<&str, &RcExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    writeln!(w, "{}", header())?;
    for id in ids {
        let Some(ex) = by_id.get(id.as_str()) else { continue };
        let excerpt: String = ex.context.chars().take(EXCERPT_CHARS).collect();
        write!(w, "{}\t{}\t{}", cell(&ex.id), cell(&ex.question), cell(&excerpt))?;
        writeln!(w, "{}", "\t".repeat(QuestionType::ALL.len()))?;
    }
    Ok(())
}

/// Reads a filled sheet into labels per question id.
pub fn read_annotations<R: Read>(reader: R) -> Result<BTreeMap<String, BTreeSet<QuestionType>>, RcError> {
    let mut lines = BufReader::new(reader).lines();
    let schema = |line: usize, message: String| RcError::Schema {
        path: format!("annotations line {line}"),
        message,
    };
    let head = lines.next().ok_or_else(|| schema(1, "missing header".into()))??;
    let columns: Vec<&str> = head.split('\t').collect();
    if columns.len() < 3 || columns[0] != "id" {
        return Err(schema(1, "header must start with `id`".into()));
    }
    let label_cols: Vec<(usize, QuestionType)> = columns
        .iter()
        .enumerate()
        .skip(3)
        .map(|(i, c)| c.parse::<QuestionType>().map(|q| (i, q)).map_err(|e| schema(1, e)))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeMap::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let labels = label_cols
            .iter()
            .filter(|(i, _)| fields.get(*i).is_some_and(|v| !v.trim().is_empty()))
            .map(|(_, q)| *q)
            .collect();
        out.insert(fields[0].to_string(), labels);
    }
    Ok(out)
}

/// Percentage of `ids` carrying each label, in [`QuestionType::ALL`] order.
/// Ids without annotations count as unlabeled.
pub fn label_portions(annotations: &BTreeMap<String, BTreeSet<QuestionType>>, ids: &[String]) -> [f64; 6] {
    let mut out = [0.0; 6];
    if ids.is_empty() {
        return out;
    }
    for (slot, q) in out.iter_mut().zip(QuestionType::ALL) {
        let n = ids
            .iter()
            .filter(|id| annotations.get(*id).is_some_and(|l| l.contains(&q)))
            .count();
        *slot = 100.0 * n as f64 / ids.len() as f64;
    }
    out
}
