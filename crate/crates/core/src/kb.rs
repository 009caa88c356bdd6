//! ConceptNet 5.6 assertion ingestion and probe-set construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::relation::Relation;
use crate::tokenizer::Vocab;

const ENGLISH_CONCEPT: &str = "/c/en/";
const RELATION_PREFIX: &str = "/r/";

/// A (subject, relation, object) assertion with its ConceptNet weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub weight: f64,
}

/// All gold objects for one (subject, relation) pair that survive the single-token filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeGroup {
    pub subject: String,
    pub relation: Relation,
    /// Sorted, deduplicated vocabulary tokens.
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub records: usize,
    pub kept: usize,
    pub non_english: usize,
    pub unknown_relation: usize,
    pub duplicates_merged: usize,
    pub malformed: Vec<SkippedLine>,
}

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    BadCacheLine { line: usize, reason: String },
}

/// Opens a plain or gzip-compressed assertion dump, sniffing the gzip magic bytes.
pub fn open_dump(path: impl AsRef<Path>) -> io::Result<Box<dyn BufRead>> {
    let mut file = BufReader::new(File::open(path)?);
    let magic = file.fill_buf()?;
    if magic.len() >= 2 && magic[0] == 0x1f && magic[1] == 0x8b {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(file))
    }
}

/// Reduces a concept URI such as `/c/en/spring/n/wn/time` to its surface form.
/// Returns `None` for non-English or empty concepts.
pub fn normalize_concept(uri: &str) -> Option<String> {
    let rest = uri.strip_prefix(ENGLISH_CONCEPT)?;
    let term = rest.split('/').next().unwrap_or("");
    let text = term.replace('_', " ").to_lowercase();
    let text = text.trim();
    if text.is_empty() {
        None
    } else {
        Some(text.to_string())
    }
}

enum LineOutcome {
    Kept(Triple),
    NonEnglish,
    UnknownRelation,
    Malformed(String),
}

fn parse_line(line: &str) -> LineOutcome {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return LineOutcome::Malformed(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let (rel_uri, start, end, meta) = (fields[1], fields[2], fields[3], fields[4]);
    if !start.starts_with(ENGLISH_CONCEPT) || !end.starts_with(ENGLISH_CONCEPT) {
        return LineOutcome::NonEnglish;
    }
    let relation = match rel_uri
        .strip_prefix(RELATION_PREFIX)
        .and_then(|name| name.trim_end_matches('/').parse::<Relation>().ok())
    {
        Some(r) => r,
        None => return LineOutcome::UnknownRelation,
    };
    let (subject, object) = match (normalize_concept(start), normalize_concept(end)) {
        (Some(s), Some(o)) => (s, o),
        _ => return LineOutcome::Malformed("empty concept".into()),
    };
    let weight = match serde_json::from_str::<serde_json::Value>(meta) {
        Ok(v) => match v.get("weight").and_then(serde_json::Value::as_f64) {
            Some(w) if w.is_finite() && w >= 0.0 => w,
            Some(w) => return LineOutcome::Malformed(format!("invalid weight {w}")),
            None => return LineOutcome::Malformed("metadata has no numeric weight".into()),
        },
        Err(e) => return LineOutcome::Malformed(format!("unparseable metadata: {e}")),
    };
    LineOutcome::Kept(Triple {
        subject,
        relation,
        object,
        weight,
    })
}

/// Parses ConceptNet assertion records. Bad lines are recorded in the report, never fatal.
/// The result is deduplicated on (relation, subject, object) keeping the maximum weight,
/// and sorted by relation name, subject and object.
pub fn parse_assertions<R: BufRead>(reader: R) -> io::Result<(Vec<Triple>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut best: HashMap<(Relation, String, String), f64> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        match parse_line(&line) {
            LineOutcome::Kept(t) => {
                match best.entry((t.relation, t.subject, t.object)) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        report.duplicates_merged += 1;
                        if t.weight > *e.get() {
                            e.insert(t.weight);
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(t.weight);
                    }
                }
            }
            LineOutcome::NonEnglish => report.non_english += 1,
            LineOutcome::UnknownRelation => report.unknown_relation += 1,
            LineOutcome::Malformed(reason) => {
                tracing::warn!(line = idx + 1, %reason, "skipping assertion");
                report.malformed.push(SkippedLine { line: idx + 1, reason });
            }
        }
    }
    let mut triples: Vec<Triple> = best
        .into_iter()
        .map(|((relation, subject, object), weight)| Triple {
            subject,
            relation,
            object,
            weight,
        })
        .collect();
    sort_triples(&mut triples);
    report.kept = triples.len();
    Ok((triples, report))
}

pub fn sort_triples(triples: &mut [Triple]) {
    triples.sort_by(|a, b| {
        (a.relation, &a.subject, &a.object).cmp(&(b.relation, &b.subject, &b.object))
    });
}

/// Formats a triple back into an assertion record that [`parse_assertions`] accepts.
pub fn to_assertion_record(t: &Triple) -> String {
    let s = format!("{ENGLISH_CONCEPT}{}", t.subject.replace(' ', "_"));
    let o = format!("{ENGLISH_CONCEPT}{}", t.object.replace(' ', "_"));
    let r = format!("{RELATION_PREFIX}{}", t.relation);
    format!(
        "/a/[{r}/,{s}/,{o}/]\t{r}\t{s}\t{o}\t{}",
        serde_json::json!({ "weight": t.weight })
    )
}

pub fn filter_min_weight(triples: Vec<Triple>, min_weight: f64) -> Vec<Triple> {
    triples.into_iter().filter(|t| t.weight >= min_weight).collect()
}

/// Writes the cache format: `relation<TAB>subject<TAB>object<TAB>weight`, one per line.
pub fn write_triples<W: Write>(mut w: W, triples: &[Triple]) -> io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}\t{}", t.relation, t.subject, t.object, t.weight)?;
    }
    Ok(())
}

pub fn read_triples<R: Read>(reader: R) -> Result<Vec<Triple>, KbError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| KbError::BadCacheLine { line: idx + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let relation = fields[0].parse::<Relation>().map_err(|e| bad(e.to_string()))?;
        let weight: f64 = fields[3].parse().map_err(|_| bad(format!("bad weight `{}`", fields[3])))?;
        if fields[1].is_empty() || fields[2].is_empty() || !(weight >= 0.0) {
            return Err(bad("empty concept or negative weight".into()));
        }
        out.push(Triple {
            subject: fields[1].to_string(),
            relation,
            object: fields[2].to_string(),
            weight,
        });
    }
    Ok(out)
}

/// Per-relation triple counts; every one of the 37 relations is present.
pub fn relation_stats(triples: &[Triple]) -> BTreeMap<Relation, usize> {
    let mut counts: BTreeMap<Relation, usize> = Relation::ALL.iter().map(|r| (*r, 0)).collect();
    for t in triples {
        *counts.entry(t.relation).or_default() += 1;
    }
    counts
}

/// Keeps triples whose object is a single vocabulary token and groups them by
/// (subject, relation). Groups are ordered by relation name, then subject.
pub fn build_probe_set(triples: &[Triple], vocab: &Vocab) -> Vec<ProbeGroup> {
    let mut groups: BTreeMap<(Relation, &str), BTreeSet<String>> = BTreeMap::new();
    for t in triples {
        if let Some(id) = vocab.single_token_id(&t.object) {
            let token = vocab.token(id).expect("id from vocab").to_string();
            groups.entry((t.relation, t.subject.as_str())).or_default().insert(token);
        }
    }
    groups
        .into_iter()
        .map(|((relation, subject), answers)| ProbeGroup {
            subject: subject.to_string(),
            relation,
            answers: answers.into_iter().collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rel: &str, start: &str, end: &str, weight: f64) -> String {
        format!("/a/[{rel}/,{start}/,{end}/]\t{rel}\t{start}\t{end}\t{{\"dataset\": \"/d/test\", \"weight\": {weight}}}")
    }

    fn parse(text: &str) -> (Vec<Triple>, ParseReport) {
        parse_assertions(text.as_bytes()).unwrap()
    }

    #[test]
    fn maps_antonym_record() {
        let (t, report) = parse(&record("/r/Antonym", "/c/en/children", "/c/en/adults", 2.0));
        assert_eq!(
            t,
            vec![Triple {
                subject: "children".into(),
                relation: Relation::Antonym,
                object: "adults".into(),
                weight: 2.0
            }]
        );
        assert_eq!(report.kept, 1);
    }

    #[test]
    fn drops_non_english_and_unknown_relations() {
        let text = [
            record("/r/IsA", "/c/fr/chien", "/c/en/dog", 1.0),
            record("/r/dbpedia/genre", "/c/en/jazz", "/c/en/music", 1.0),
            record("/r/ExternalURL", "/c/en/jazz", "/c/en/music", 1.0),
        ]
        .join("\n");
        let (t, report) = parse(&text);
        assert!(t.is_empty());
        assert_eq!(report.non_english, 1);
        assert_eq!(report.unknown_relation, 2);
        assert!(report.malformed.is_empty());
    }

    #[test]
    fn normalizes_pos_suffix_and_underscores() {
        let (t, _) = parse(&record("/r/IsA", "/c/en/Hot_Dog/n/wn/food", "/c/en/spring/n", 1.0));
        assert_eq!(t[0].subject, "hot dog");
        assert_eq!(t[0].object, "spring");
    }

    #[test]
    fn malformed_lines_are_skipped_with_line_numbers() {
        let text = [
            "only\tthree\tfields".to_string(),
            record("/r/IsA", "/c/en/dog", "/c/en/animal", 1.0),
            "/a/x\t/r/IsA\t/c/en/cat\t/c/en/animal\tnot json".to_string(),
            "/a/x\t/r/IsA\t/c/en/cat\t/c/en/animal\t{\"dataset\": \"x\"}".to_string(),
        ]
        .join("\n");
        let (t, report) = parse(&text);
        assert_eq!(t.len(), 1);
        let lines: Vec<usize> = report.malformed.iter().map(|s| s.line).collect();
        assert_eq!(lines, [1, 3, 4]);
    }

    #[test]
    fn duplicates_keep_max_weight() {
        let text = [
            record("/r/Synonym", "/c/en/move", "/c/en/shift", 1.0),
            record("/r/Synonym", "/c/en/move/v", "/c/en/shift/v", 3.5),
            record("/r/Synonym", "/c/en/move", "/c/en/shift", 2.0),
        ]
        .join("\n");
        let (t, report) = parse(&text);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].weight, 3.5);
        assert_eq!(report.duplicates_merged, 2);
    }

    #[test]
    fn stats_cover_every_relation() {
        let empty = relation_stats(&[]);
        assert_eq!(empty.len(), 37);
        assert!(empty.values().all(|c| *c == 0));

        let mk = |r| Triple {
            subject: "a".into(),
            relation: r,
            object: "b".into(),
            weight: 1.0,
        };
        let triples = vec![mk(Relation::Antonym), mk(Relation::Antonym), mk(Relation::Antonym), mk(Relation::IsA)];
        let stats = relation_stats(&triples);
        assert_eq!(stats[&Relation::Antonym], 3);
        assert_eq!(stats[&Relation::IsA], 1);
        assert_eq!(stats.values().sum::<usize>(), 4);
    }

    fn vocab() -> Vocab {
        Vocab::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "winter", "shift", "go", "ultra", "##sonic", "spring",
        ])
        .unwrap()
    }

    fn t(s: &str, r: Relation, o: &str) -> Triple {
        Triple {
            subject: s.into(),
            relation: r,
            object: o.into(),
            weight: 1.0,
        }
    }

    #[test]
    fn probe_set_filters_and_groups() {
        let triples = vec![
            t("spring", Relation::Antonym, "winter"),
            t("sound", Relation::Antonym, "ultrasonic"),
            t("move", Relation::Synonym, "shift"),
            t("move", Relation::Synonym, "go"),
            t("move", Relation::Synonym, "go"),
        ];
        let groups = build_probe_set(&triples, &vocab());
        assert_eq!(
            groups,
            vec![
                ProbeGroup {
                    subject: "spring".into(),
                    relation: Relation::Antonym,
                    answers: vec!["winter".into()]
                },
                ProbeGroup {
                    subject: "move".into(),
                    relation: Relation::Synonym,
                    answers: vec!["go".into(), "shift".into()]
                },
            ]
        );
    }

    #[test]
    fn cache_round_trip() {
        let triples = vec![t("hot dog", Relation::IsA, "food"), t("spring", Relation::Antonym, "winter")];
        let mut buf = Vec::new();
        write_triples(&mut buf, &triples).unwrap();
        assert_eq!(read_triples(buf.as_slice()).unwrap(), triples);
    }

    #[test]
    fn bad_cache_line_is_error() {
        let err = read_triples("Antonym\ta\tb\t1\nNope\ta\tb\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, KbError::BadCacheLine { line: 2, .. }));
    }
}
