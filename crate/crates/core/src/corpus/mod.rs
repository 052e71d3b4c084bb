//! Intent datasets in a canonical schema, plus filtering, subsampling and
//! few-shot episode sampling.

mod episode;
mod io;

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

pub use episode::{eligible_classes, sample_episode, Episode, EpisodeSpec};
pub use io::{load_corpus, parse_corpus, save_corpus};

/// One text sample. `label` is absent for unlabeled data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub domain: String,
}

impl Utterance {
    pub fn labeled(
        text: impl Into<String>,
        label: impl Into<String>,
        domain: impl Into<String>,
    ) -> Self {
        Utterance {
            text: text.into(),
            label: Some(label.into()),
            domain: domain.into(),
        }
    }

    pub fn unlabeled(text: impl Into<String>, domain: impl Into<String>) -> Self {
        Utterance {
            text: text.into(),
            label: None,
            domain: domain.into(),
        }
    }
}

/// Table-2 style dataset counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_domains: usize,
    pub n_intents: usize,
    pub n_utterances: usize,
}

/// An ordered, immutable collection of utterances with vocabularies built in
/// first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    utterances: Vec<Utterance>,
    label_vocab: Vec<String>,
    domain_vocab: Vec<String>,
    labeled: bool,
    // label id per utterance (labeled corpora only)
    label_ids: Vec<usize>,
    by_label: Vec<Vec<usize>>,
}

impl Corpus {
    /// Validates the utterances and builds vocabularies.
    ///
    /// For unlabeled corpora any labels that happen to be present are kept on
    /// the utterances but do not enter the label vocabulary.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>, labeled: bool) -> Result<Self> {
        let name = name.into();
        let mut label_vocab: Vec<String> = Vec::new();
        let mut label_index: HashMap<String, usize> = HashMap::new();
        let mut domain_vocab: Vec<String> = Vec::new();
        let mut seen_domains: HashSet<String> = HashSet::new();
        let mut label_ids = Vec::new();

        for (i, u) in utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(Error::Corpus(format!(
                    "{name}: utterance {i} has empty text"
                )));
            }
            if seen_domains.insert(u.domain.clone()) {
                domain_vocab.push(u.domain.clone());
            }
            if labeled {
                let label = u
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Corpus(format!("{name}: utterance {i} has no label")))?;
                let next = label_vocab.len();
                let id = *label_index.entry(label.clone()).or_insert_with(|| {
                    label_vocab.push(label.clone());
                    next
                });
                label_ids.push(id);
            }
        }

        let mut by_label = vec![Vec::new(); label_vocab.len()];
        for (i, &id) in label_ids.iter().enumerate() {
            by_label[id].push(i);
        }

        Ok(Corpus {
            name,
            utterances,
            label_vocab,
            domain_vocab,
            labeled,
            label_ids,
            by_label,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    pub fn domain_vocab(&self) -> &[String] {
        &self.domain_vocab
    }

    pub fn n_labels(&self) -> usize {
        self.label_vocab.len()
    }

    /// Label id of utterance `i`. Panics on unlabeled corpora.
    pub fn label_id(&self, i: usize) -> usize {
        self.label_ids[i]
    }

    pub fn label_ids(&self) -> &[usize] {
        &self.label_ids
    }

    /// Utterance indices per label id, in corpus order.
    pub fn indices_by_label(&self) -> &[Vec<usize>] {
        &self.by_label
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.text.as_str())
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            n_domains: self.domain_vocab.len(),
            n_intents: self.label_vocab.len(),
            n_utterances: self.utterances.len(),
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same texts and domains with labels dropped, e.g. to feed a labeled
    /// dataset into MLM training.
    pub fn strip_labels(&self) -> Corpus {
        let utterances = self
            .utterances
            .iter()
            .map(|u| Utterance::unlabeled(u.text.clone(), u.domain.clone()))
            .collect();
        Corpus::new(self.name.clone(), utterances, false).expect("source corpus already validated")
    }

    fn retain_indices(&self, keep: &[usize]) -> Corpus {
        let utterances = keep.iter().map(|&i| self.utterances[i].clone()).collect();
        Corpus::new(self.name.clone(), utterances, self.labeled).expect("subset of a valid corpus")
    }
}

/// Removes every utterance whose domain is in `exclude`.
pub fn filter_domains<S: AsRef<str>>(corpus: &Corpus, exclude: &[S]) -> Corpus {
    let exclude: HashSet<&str> = exclude.iter().map(|s| s.as_ref()).collect();
    for name in &exclude {
        if !corpus.domain_vocab.iter().any(|d| d == name) {
            log::warn!("{}: excluded domain {name:?} not present", corpus.name);
        }
    }
    let keep: Vec<usize> = (0..corpus.len())
        .filter(|&i| !exclude.contains(corpus.utterances[i].domain.as_str()))
        .collect();
    let out = corpus.retain_indices(&keep);
    if out.is_empty() && !corpus.is_empty() {
        log::warn!("{}: domain filter removed every utterance", corpus.name);
    }
    out
}

/// Restricts the corpus to `n_domains` domains drawn uniformly without
/// replacement, keeping at most `per_class` utterances per intent.
///
/// Unlabeled corpora are capped per domain instead of per intent.
pub fn subsample(corpus: &Corpus, n_domains: usize, per_class: usize, seed: u64) -> Result<Corpus> {
    let available = corpus.domain_vocab.len();
    if n_domains > available {
        return Err(Error::Corpus(format!(
            "{}: requested {n_domains} domains but only {available} available",
            corpus.name
        )));
    }
    let mut rng = stream_rng(seed, Purpose::Subsample, 0);
    let chosen: BTreeSet<&str> = corpus
        .domain_vocab
        .choose_multiple(&mut rng, n_domains)
        .map(|s| s.as_str())
        .collect();

    // group members by class (or by domain when unlabeled), corpus order
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut group_of: HashMap<String, usize> = HashMap::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        if !chosen.contains(u.domain.as_str()) {
            continue;
        }
        let key = if corpus.labeled {
            corpus.label_vocab[corpus.label_ids[i]].clone()
        } else {
            u.domain.clone()
        };
        let g = *group_of.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }

    let mut keep = Vec::new();
    for (_, members) in &mut groups {
        if members.len() > per_class {
            members.shuffle(&mut rng);
            members.truncate(per_class);
        }
        keep.extend_from_slice(members);
    }
    keep.sort_unstable();
    Ok(corpus.retain_indices(&keep))
}

/// Uniform sample of `size` utterances without replacement, in corpus order.
pub fn sample_pool(corpus: &Corpus, size: usize, seed: u64) -> Result<Corpus> {
    if size > corpus.len() {
        return Err(Error::Corpus(format!(
            "{}: pool size {size} exceeds corpus size {}",
            corpus.name,
            corpus.len()
        )));
    }
    if size == corpus.len() {
        return Ok(corpus.clone());
    }
    let mut rng = stream_rng(seed, Purpose::Pool, size as u64);
    let mut keep = rand::seq::index::sample(&mut rng, corpus.len(), size).into_vec();
    keep.sort_unstable();
    Ok(corpus.retain_indices(&keep))
}
