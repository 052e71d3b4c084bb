//! Synthetic multi-domain intent corpora with cross-domain structure.
//!
//! Every intent is an (action, concept) pair. Actions and their synonyms are
//! shared by all domains; concepts belong to one domain and come with a set
//! of synonyms and a set of descriptor words that co-occur with them. The
//! held-out target domain uses concept words that never occur in the source
//! domains, so telling its concepts apart from labeled source data alone is
//! hard, while unlabeled target text reveals which of its words go together.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub source_domains: usize,
    pub actions: usize,
    pub action_synonyms: usize,
    pub concepts_per_domain: usize,
    pub concept_synonyms: usize,
    pub descriptors_per_concept: usize,
    pub filler_words: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Labeled utterances per intent in every domain.
    pub per_intent: usize,
    /// Extra unlabeled utterances per target intent.
    pub unlabeled_per_intent: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            source_domains: 6,
            actions: 4,
            action_synonyms: 3,
            concepts_per_domain: 5,
            concept_synonyms: 4,
            descriptors_per_concept: 4,
            filler_words: 30,
            min_fillers: 1,
            max_fillers: 4,
            per_intent: 20,
            unlabeled_per_intent: 40,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn intents_per_domain(&self) -> usize {
        self.actions * self.concepts_per_domain
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.source_domains,
            self.actions,
            self.action_synonyms,
            self.concepts_per_domain,
            self.concept_synonyms,
            self.descriptors_per_concept,
            self.filler_words,
            self.per_intent,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "synthetic counts must be >= 1: {self:?}"
            )));
        }
        if self.min_fillers > self.max_fillers {
            return Err(Error::Config("min_fillers exceeds max_fillers".into()));
        }
        Ok(())
    }
}

/// Source, validation and target splits drawn from one generator.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    /// Labeled utterances from the source domains.
    pub source: Corpus,
    /// Labeled utterances from a separate domain, for early stopping.
    pub validation: Corpus,
    /// Unlabeled utterances from the target domain.
    pub target_unlabeled: Corpus,
    /// Labeled target utterances used for evaluation.
    pub target_test: Corpus,
}

impl SyntheticSuite {
    pub fn all_texts(&self) -> impl Iterator<Item = &str> {
        self.source
            .texts()
            .chain(self.validation.texts())
            .chain(self.target_unlabeled.texts())
            .chain(self.target_test.texts())
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    fillers: Vec<String>,
}

impl Generator<'_> {
    fn utterance(
        &self,
        domain: &str,
        action: usize,
        concept: usize,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let cfg = self.cfg;
        let act = format!("act{action}v{}", rng.random_range(0..cfg.action_synonyms));
        let con = format!(
            "{domain}c{concept}s{}",
            rng.random_range(0..cfg.concept_synonyms)
        );
        let desc = format!(
            "{domain}c{concept}x{}",
            rng.random_range(0..cfg.descriptors_per_concept)
        );
        let mut words = vec![act];
        if rng.random_bool(0.5) {
            words.push(con);
            words.push(desc);
        } else {
            words.push(desc);
            words.push(con);
        }
        let n_fill = rng.random_range(cfg.min_fillers..=cfg.max_fillers);
        for _ in 0..n_fill {
            let w = self.fillers.choose(rng).expect("filler_words >= 1").clone();
            let at = rng.random_range(0..=words.len());
            words.insert(at, w);
        }
        words.join(" ")
    }

    fn domain(&self, domain: &str, per_intent: usize, rng: &mut ChaCha8Rng) -> Vec<Utterance> {
        let mut out = Vec::new();
        for a in 0..self.cfg.actions {
            for c in 0..self.cfg.concepts_per_domain {
                let label = format!("{domain}_act{a}_c{c}");
                for _ in 0..per_intent {
                    out.push(Utterance::labeled(
                        self.utterance(domain, a, c, rng),
                        label.clone(),
                        domain,
                    ));
                }
            }
        }
        out.shuffle(rng);
        out
    }
}

/// Domain names are `src0..`, `val` and `tgt`; word forms are opaque tokens
/// such as `act2v1` (action 2, synonym 1) or `tgtc3x0` (target concept 3,
/// descriptor 0). Deterministic in `cfg.seed`.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticSuite> {
    cfg.validate()?;
    let g = Generator {
        cfg,
        fillers: (0..cfg.filler_words).map(|i| format!("w{i}")).collect(),
    };
    let mut source = Vec::new();
    for d in 0..cfg.source_domains {
        let mut rng = stream_rng(cfg.seed, Purpose::Synthetic, d as u64);
        source.extend(g.domain(&format!("src{d}"), cfg.per_intent, &mut rng));
    }
    let base = cfg.source_domains as u64;
    let validation = g.domain(
        "val",
        cfg.per_intent,
        &mut stream_rng(cfg.seed, Purpose::Synthetic, base),
    );
    let test = g.domain(
        "tgt",
        cfg.per_intent,
        &mut stream_rng(cfg.seed, Purpose::Synthetic, base + 1),
    );
    let pool = g.domain(
        "tgt",
        cfg.unlabeled_per_intent,
        &mut stream_rng(cfg.seed, Purpose::Synthetic, base + 2),
    );
    let unlabeled: Vec<Utterance> = pool
        .into_iter()
        .map(|u| Utterance::unlabeled(u.text, u.domain))
        .collect();
    Ok(SyntheticSuite {
        source: Corpus::new("synthetic-source", source, true)?,
        validation: Corpus::new("synthetic-val", validation, true)?,
        target_unlabeled: Corpus::new("synthetic-target-unlabeled", unlabeled, false)?,
        target_test: Corpus::new("synthetic-target", test, true)?,
    })
}
