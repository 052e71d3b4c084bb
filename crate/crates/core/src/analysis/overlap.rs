use std::collections::{BTreeSet, HashSet};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("stopwords.txt");

/// Words removed before comparing vocabularies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    /// The English list shipped with the crate (`stopwords.txt`).
    pub fn bundled() -> Self {
        Self::parse(BUNDLED)
    }

    pub fn none() -> Self {
        StopWords(HashSet::new())
    }

    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        StopWords(
            words
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
        )
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(raw: &str) -> Self {
        Self::new(
            raw.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercased words (maximal alphanumeric runs) minus stopwords.
pub fn word_set(corpus: &Corpus, stopwords: &StopWords) -> BTreeSet<String> {
    corpus
        .texts()
        .flat_map(|t| t.split(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !stopwords.contains(w))
        .collect()
}

/// `|A ∩ B| / |A ∪ B|` over the two word sets.
pub fn vocab_overlap(a: &Corpus, b: &Corpus, stopwords: &StopWords) -> Result<f64> {
    overlap_of_sets(&word_set(a, stopwords), &word_set(b, stopwords)).ok_or_else(|| {
        Error::Corpus(format!(
            "{:?} and {:?} have no words left after stopword removal",
            a.name(),
            b.name()
        ))
    })
}

fn overlap_of_sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Option<f64> {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Pairwise overlaps; entry `[i][j]` compares corpora `i` and `j`.
pub fn overlap_matrix(corpora: &[&Corpus], stopwords: &StopWords) -> Result<Vec<Vec<f64>>> {
    let sets: Vec<_> = corpora.iter().map(|c| word_set(c, stopwords)).collect();
    let mut m = vec![vec![0.0; sets.len()]; sets.len()];
    for i in 0..sets.len() {
        for j in i..sets.len() {
            let v = overlap_of_sets(&sets[i], &sets[j]).ok_or_else(|| {
                Error::Corpus(format!(
                    "{:?} has no words after stopword removal",
                    corpora[i].name()
                ))
            })?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}
