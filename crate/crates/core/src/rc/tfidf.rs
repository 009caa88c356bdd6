use std::collections::{BTreeMap, HashMap, HashSet};

use super::RcExample;
use crate::tokenizer::basic_tokenize;

/// Document frequencies over a collection, with `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
#[derive(Debug, Clone)]
pub struct IdfTable {
    docs: usize,
    df: HashMap<String, usize>,
    scale: f64,
}

impl IdfTable {
    pub fn build<I, S>(documents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut docs = 0;
        for doc in documents {
            docs += 1;
            let terms: HashSet<String> = basic_tokenize(doc.as_ref()).into_iter().collect();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        IdfTable { docs, df, scale: 1.0 }
    }

    pub fn documents(&self) -> usize {
        self.docs
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs as f64;
        self.scale * (((1.0 + n) / (1.0 + self.df(term) as f64)).ln() + 1.0)
    }

    /// The same table with every idf multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        IdfTable {
            scale: self.scale * factor,
            ..self.clone()
        }
    }

    fn weights(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in basic_tokenize(text) {
            *tf.entry(t).or_default() += 1.0;
        }
        for (t, w) in tf.iter_mut() {
            *w *= self.idf(t);
        }
        tf
    }
}

/// Cosine similarity of raw-tf × idf unigram vectors; 0 when either vector is zero.
pub fn tfidf_cosine(a: &str, b: &str, idf: &IdfTable) -> f64 {
    let wa = idf.weights(a);
    let wb = idf.weights(b);
    let norm = |w: &BTreeMap<String, f64>| w.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(&wa), norm(&wb));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = wa
        .iter()
        .filter_map(|(t, x)| wb.get(t).map(|y| x * y))
        .sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Context/question similarity for every example. The idf collection holds each
/// distinct context once plus every question.
pub fn similarities(examples: &[RcExample]) -> Vec<f64> {
    let mut seen = HashSet::new();
    let contexts = examples
        .iter()
        .map(|e| e.context.as_str())
        .filter(|c| seen.insert(*c));
    let docs: Vec<&str> = contexts.chain(examples.iter().map(|e| e.question.as_str())).collect();
    let idf = IdfTable::build(&docs);
    examples
        .iter()
        .map(|e| tfidf_cosine(&e.context, &e.question, &idf))
        .collect()
}
