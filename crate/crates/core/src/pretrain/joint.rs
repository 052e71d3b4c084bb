use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::masking::{mask_batch, MaskingPolicy};
use super::objective::{joint_loss, mlm_loss, LabeledBatch};
use super::optim::Adam;
use super::supervised::{prepare_source, supervised_pretrain, SupervisedTrainConfig};
use super::{
    check_batch_size, check_finite, epoch_order, mean, tokenize_corpus, EpochRecord, StepRecord,
    TrainReport,
};
use crate::corpus::Corpus;
use crate::encoder::{EncoderState, TokenBatch, TokenId};
use crate::error::{Error, Result};
use crate::seeding::mix;

const TARGET_SALT: u64 = 0x7461_7267;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointTrainConfig {
    /// Weight of the masked-LM term.
    pub lambda: f64,
    pub epochs: usize,
    pub masking: MaskingPolicy,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        JointTrainConfig {
            lambda: 1.0,
            epochs: 10,
            masking: MaskingPolicy::default(),
            learning_rate: 2e-5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl JointTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_batch_size(self.batch_size, self.learning_rate)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.masking.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmTrainConfig {
    pub epochs: usize,
    pub masking: MaskingPolicy,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlmTrainConfig {
    fn default() -> Self {
        MlmTrainConfig {
            epochs: 10,
            masking: MaskingPolicy::default(),
            learning_rate: 2e-5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_batch_size(self.batch_size, self.learning_rate)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.masking.validate()
    }
}

/// Endless reshuffled passes over a corpus.
struct Cycler<'a> {
    seqs: &'a [Vec<TokenId>],
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Cycler<'a> {
    fn new(seqs: &'a [Vec<TokenId>], seed: u64) -> Self {
        Cycler {
            seqs,
            seed,
            pass: 0,
            order: epoch_order(seqs.len(), seed, 0),
            pos: 0,
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n.min(self.seqs.len()) {
            if self.pos == self.order.len() {
                self.pass += 1;
                self.order = epoch_order(self.seqs.len(), self.seed, self.pass);
                self.pos = 0;
            }
            out.push(self.seqs[self.order[self.pos]].clone());
            self.pos += 1;
        }
        out
    }
}

fn masked(
    state: &EncoderState,
    seqs: &[Vec<TokenId>],
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<super::MaskedBatch> {
    let specials = state.tokenizer.specials();
    let batch = TokenBatch::from_sequences(seqs, specials.pad, 0);
    mask_batch(&batch, specials, state.config.vocab_size, policy, seed)
}

/// Minimizes `L_ce + λ·L_mlm` for exactly `cfg.epochs` passes over `source`.
/// Each step pairs one source batch with one target batch; the target side
/// cycles through reshuffled passes of its own. Labels on `target` are ignored.
pub fn joint_pretrain(
    mut state: EncoderState,
    source: &Corpus,
    target: &Corpus,
    cfg: &JointTrainConfig,
) -> Result<(EncoderState, TrainReport)> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::Corpus(format!(
            "target corpus {:?} is empty",
            target.name()
        )));
    }
    prepare_source(&mut state, source, cfg.seed)?;
    state.ensure_mlm_head(cfg.seed);
    let start = Instant::now();
    let seqs = tokenize_corpus(&state, source);
    let labels = source.label_ids();
    let target_seqs = tokenize_corpus(&state, target);
    let mut targets = Cycler::new(&target_seqs, mix(cfg.seed, TARGET_SALT));
    let mut opt = Adam::new(&state.params, cfg.learning_rate);
    let mut report = TrainReport::new("joint");

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(seqs.len(), cfg.seed, epoch as u64);
        let first_step = report.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps.len();
            let batch = LabeledBatch {
                sequences: chunk.iter().map(|&i| seqs[i].clone()).collect(),
                labels: chunk.iter().map(|&i| labels[i]).collect(),
            };
            let tb = masked(
                &state,
                &targets.next_batch(cfg.batch_size),
                &cfg.masking,
                mix(cfg.seed, step as u64),
            )?;
            let jl = joint_loss(&state, &batch, &tb, cfg.lambda)?;
            check_finite(jl.total, "joint loss", step)?;
            opt.step(&mut state.params, &jl.grads);
            report.steps.push(StepRecord {
                step,
                epoch,
                ce: Some(jl.ce),
                mlm: Some(jl.mlm),
                total: jl.total,
            });
        }
        let steps = &report.steps[first_step..];
        let rec = EpochRecord {
            epoch,
            mean_loss: mean(steps.iter().map(|s| s.total)),
            mean_ce: Some(mean(steps.iter().filter_map(|s| s.ce))),
            mean_mlm: Some(mean(steps.iter().filter_map(|s| s.mlm))),
            val_accuracy: None,
        };
        log::info!("joint epoch {epoch}: loss {:.5}", rec.mean_loss);
        report.epochs.push(rec);
        report.stopped_epoch = epoch;
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((state, report))
}

/// Masked-LM only, `cfg.epochs` passes over `corpus`.
pub fn mlm_pretrain(
    mut state: EncoderState,
    corpus: &Corpus,
    cfg: &MlmTrainConfig,
) -> Result<(EncoderState, TrainReport)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Corpus(format!(
            "MLM corpus {:?} is empty",
            corpus.name()
        )));
    }
    state.ensure_mlm_head(cfg.seed);
    let start = Instant::now();
    let seqs = tokenize_corpus(&state, corpus);
    let mut opt = Adam::new(&state.params, cfg.learning_rate);
    let mut report = TrainReport::new("mlm");
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(seqs.len(), cfg.seed, epoch as u64);
        let first_step = report.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps.len();
            let batch: Vec<Vec<TokenId>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let tb = masked(&state, &batch, &cfg.masking, mix(cfg.seed, step as u64))?;
            let lg = mlm_loss(&state, &tb)?;
            check_finite(lg.loss, "MLM loss", step)?;
            opt.step(&mut state.params, &lg.grads);
            report.steps.push(StepRecord {
                step,
                epoch,
                ce: None,
                mlm: Some(lg.loss),
                total: lg.loss,
            });
        }
        let loss = mean(report.steps[first_step..].iter().map(|s| s.total));
        log::info!("mlm epoch {epoch}: loss {loss:.5}");
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss,
            mean_ce: None,
            mean_mlm: Some(loss),
            val_accuracy: None,
        });
        report.stopped_epoch = epoch;
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((state, report))
}

/// One phase of a sequential schedule.
#[derive(Debug, Clone)]
pub enum Stage<'a> {
    Supervised {
        source: &'a Corpus,
        val: &'a Corpus,
        config: SupervisedTrainConfig,
    },
    Mlm {
        corpus: &'a Corpus,
        config: MlmTrainConfig,
    },
}

/// Runs the stages in order, each starting from the previous parameters.
pub fn two_stage_pretrain(
    mut state: EncoderState,
    stages: &[Stage<'_>],
) -> Result<(EncoderState, Vec<TrainReport>)> {
    let mut reports = Vec::with_capacity(stages.len());
    for stage in stages {
        let (next, report) = match stage {
            Stage::Supervised {
                source,
                val,
                config,
            } => supervised_pretrain(state, source, val, config)?,
            Stage::Mlm { corpus, config } => mlm_pretrain(state, corpus, config)?,
        };
        state = next;
        reports.push(report);
    }
    Ok((state, reports))
}
