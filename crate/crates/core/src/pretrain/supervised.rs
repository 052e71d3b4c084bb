use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::objective::{ce_loss, LabeledBatch};
use super::optim::Adam;
use super::{
    check_batch_size, check_finite, epoch_order, mean, tokenize_corpus, EpochRecord, StepRecord,
    TrainReport,
};
use crate::corpus::{eligible_classes, Corpus, EpisodeSpec};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::fewshot::{evaluate, ClassifierKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Episodes scored on the validation corpus after every epoch.
    pub validation: EpisodeSpec,
    pub classifier: ClassifierKind,
}

impl Default for SupervisedTrainConfig {
    fn default() -> Self {
        SupervisedTrainConfig {
            learning_rate: 2e-5,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            validation: EpisodeSpec::new(5, 2).with_episodes(100),
            classifier: ClassifierKind::default(),
        }
    }
}

impl SupervisedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_batch_size(self.batch_size, self.learning_rate)?;
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        self.validation.validate()?;
        self.classifier.validate()
    }
}

/// Patience-based stopping on a score that should go up.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch's score; returns `true` if it is a new strict best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let improved = match self.best {
            None => !score.is_nan(),
            Some((_, b)) => score > b,
        };
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }
}

/// Scores the encoder at the end of an epoch.
pub trait Validator {
    fn score(&mut self, state: &EncoderState, epoch: usize) -> Result<f64>;
}

impl<F: FnMut(&EncoderState, usize) -> Result<f64>> Validator for F {
    fn score(&mut self, state: &EncoderState, epoch: usize) -> Result<f64> {
        self(state, epoch)
    }
}

/// Mean few-shot accuracy on a fixed set of validation episodes.
pub struct EpisodicValidator<'a> {
    corpus: &'a Corpus,
    spec: EpisodeSpec,
    classifier: ClassifierKind,
}

impl<'a> EpisodicValidator<'a> {
    pub fn new(corpus: &'a Corpus, spec: EpisodeSpec, classifier: ClassifierKind) -> Result<Self> {
        spec.validate()?;
        if !corpus.is_labeled() {
            return Err(Error::Corpus(format!(
                "validation corpus {:?} is unlabeled",
                corpus.name()
            )));
        }
        let eligible = eligible_classes(corpus, &spec).len();
        if eligible < spec.ways {
            return Err(Error::Sampling(format!(
                "validation corpus {:?} has {eligible} classes with >= {} utterances, {}-way episodes need {}",
                corpus.name(),
                spec.shots + spec.queries,
                spec.ways,
                spec.ways
            )));
        }
        Ok(EpisodicValidator {
            corpus,
            spec,
            classifier,
        })
    }
}

impl Validator for EpisodicValidator<'_> {
    fn score(&mut self, state: &EncoderState, _epoch: usize) -> Result<f64> {
        Ok(evaluate(state, self.corpus, &self.spec, self.classifier)?.mean_accuracy)
    }
}

/// Cross-entropy training on `source` with episodic early stopping on `val`.
/// Returns the parameters of the best validation epoch.
pub fn supervised_pretrain(
    state: EncoderState,
    source: &Corpus,
    val: &Corpus,
    cfg: &SupervisedTrainConfig,
) -> Result<(EncoderState, TrainReport)> {
    if source.utterances() == val.utterances() {
        return Err(Error::Config(format!(
            "validation corpus {:?} is identical to the source corpus",
            val.name()
        )));
    }
    let mut validator = EpisodicValidator::new(val, cfg.validation, cfg.classifier)?;
    supervised_pretrain_with(state, source, &mut validator, cfg)
}

pub fn supervised_pretrain_with<V: Validator + ?Sized>(
    mut state: EncoderState,
    source: &Corpus,
    validator: &mut V,
    cfg: &SupervisedTrainConfig,
) -> Result<(EncoderState, TrainReport)> {
    cfg.validate()?;
    prepare_source(&mut state, source, cfg.seed)?;
    let start = Instant::now();
    let seqs = tokenize_corpus(&state, source);
    let labels = source.label_ids();
    let mut opt = Adam::new(&state.params, cfg.learning_rate);
    let mut report = TrainReport::new("supervised");
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = None;

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(seqs.len(), cfg.seed, epoch as u64);
        let first_step = report.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = LabeledBatch {
                sequences: chunk.iter().map(|&i| seqs[i].clone()).collect(),
                labels: chunk.iter().map(|&i| labels[i]).collect(),
            };
            let step = report.steps.len();
            let lg = ce_loss(&state, &batch)?;
            check_finite(lg.loss, "cross-entropy", step)?;
            opt.step(&mut state.params, &lg.grads);
            report.steps.push(StepRecord {
                step,
                epoch,
                ce: Some(lg.loss),
                mlm: None,
                total: lg.loss,
            });
        }
        let acc = validator.score(&state, epoch)?;
        if stopper.observe(epoch, acc) {
            best_params = Some(state.params.clone());
        }
        let epoch_loss = mean(report.steps[first_step..].iter().map(|s| s.total));
        log::info!("supervised epoch {epoch}: loss {epoch_loss:.5}, val acc {acc:.4}");
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss,
            mean_ce: Some(epoch_loss),
            mean_mlm: None,
            val_accuracy: Some(acc),
        });
        report.stopped_epoch = epoch;
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(p) = best_params {
        state.params = p;
    }
    report.best_epoch = stopper.best_epoch();
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((state, report))
}

/// Checks the source corpus and makes sure the classification head matches
/// its label vocabulary.
pub(super) fn prepare_source(state: &mut EncoderState, source: &Corpus, seed: u64) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Corpus(format!(
            "source corpus {:?} is empty",
            source.name()
        )));
    }
    if !source.is_labeled() {
        return Err(Error::Corpus(format!(
            "source corpus {:?} is unlabeled",
            source.name()
        )));
    }
    let head_matches = state.params.cls_head.is_some() && state.labels == source.label_vocab();
    if !head_matches {
        state.reset_cls_head(source.label_vocab(), seed);
    }
    Ok(())
}
