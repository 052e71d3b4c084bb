use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

/// C-way K-shot task configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub n_episodes: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    /// 5-way 2-shot.
    fn default() -> Self {
        EpisodeSpec::new(5, 2)
    }
}

impl EpisodeSpec {
    /// 500 tasks, 5 queries per class.
    pub fn new(ways: usize, shots: usize) -> Self {
        EpisodeSpec {
            ways,
            shots,
            queries: 5,
            n_episodes: 500,
            seed: 0,
        }
    }

    pub fn with_episodes(mut self, n: usize) -> Self {
        self.n_episodes = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_queries(mut self, q: usize) -> Self {
        self.queries = q;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 || self.shots < 1 || self.queries < 1 || self.n_episodes < 1 {
            return Err(Error::Config(format!(
                "episode spec needs ways >= 2, shots >= 1, queries >= 1, n_episodes >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// A sampled task. Support and query hold corpus utterance indices grouped by
/// episode class, in the order of `class_names`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub class_names: Vec<String>,
    pub class_ids: Vec<usize>,
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.class_names.len()
    }
}

/// Label ids that have at least `shots + queries` utterances.
pub fn eligible_classes(corpus: &Corpus, spec: &EpisodeSpec) -> Vec<usize> {
    let need = spec.shots + spec.queries;
    corpus
        .indices_by_label()
        .iter()
        .enumerate()
        .filter(|(_, members)| members.len() >= need)
        .map(|(id, _)| id)
        .collect()
}

/// Samples episode `episode_index`. The result depends only on
/// `(corpus, spec, episode_index)`.
pub fn sample_episode(
    corpus: &Corpus,
    spec: &EpisodeSpec,
    episode_index: usize,
) -> Result<Episode> {
    spec.validate()?;
    if !corpus.is_labeled() {
        return Err(Error::Sampling(format!("{} is unlabeled", corpus.name())));
    }
    let eligible = eligible_classes(corpus, spec);
    if eligible.len() < spec.ways {
        return Err(Error::Sampling(format!(
            "{}: {} classes have >= {} utterances, need {}",
            corpus.name(),
            eligible.len(),
            spec.shots + spec.queries,
            spec.ways
        )));
    }
    let mut rng = stream_rng(spec.seed, Purpose::Episode, episode_index as u64);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), spec.ways)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.shuffle(&mut rng);

    let need = spec.shots + spec.queries;
    let mut support = Vec::with_capacity(spec.ways);
    let mut query = Vec::with_capacity(spec.ways);
    for &class in &picked {
        let members = &corpus.indices_by_label()[class];
        let chosen: Vec<usize> = index::sample(&mut rng, members.len(), need)
            .into_iter()
            .map(|i| members[i])
            .collect();
        support.push(chosen[..spec.shots].to_vec());
        query.push(chosen[spec.shots..].to_vec());
    }
    Ok(Episode {
        class_names: picked
            .iter()
            .map(|&c| corpus.label_vocab()[c].clone())
            .collect(),
        class_ids: picked,
        support,
        query,
    })
}
