//! Supervised, masked-LM, joint and staged pre-training of the encoder.

mod joint;
mod masking;
mod objective;
mod optim;
mod supervised;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::{EncoderState, TokenId};
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

pub use joint::{
    joint_pretrain, mlm_pretrain, two_stage_pretrain, JointTrainConfig, MlmTrainConfig, Stage,
};
pub use masking::{mask_batch, Corruption, MaskedBatch, MaskingPolicy};
pub use objective::{ce_loss, joint_loss, mlm_loss, JointLoss, LabeledBatch, LossGrad};
pub use optim::Adam;
pub use supervised::{
    supervised_pretrain, supervised_pretrain_with, EarlyStopping, EpisodicValidator,
    SupervisedTrainConfig, Validator,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub ce: Option<f64>,
    pub mlm: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ce: Option<f64>,
    pub mean_mlm: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (supervised mode).
    pub best_epoch: Option<usize>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    fn new(mode: &str) -> Self {
        TrainReport {
            mode: mode.to_string(),
            epochs: Vec::new(),
            steps: Vec::new(),
            stopped_epoch: 0,
            best_epoch: None,
            wall_time_secs: 0.0,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// One JSON record per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.epochs {
            let line = serde_json::to_string(e)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!("mode: {}\nepochs run: {}\n", self.mode, self.stopped_epoch);
        if let Some(b) = self.best_epoch {
            s.push_str(&format!("best epoch: {b}\n"));
        }
        for e in &self.epochs {
            s.push_str(&format!("epoch {:>3}  loss {:.6}", e.epoch, e.mean_loss));
            if let Some(ce) = e.mean_ce {
                s.push_str(&format!("  ce {ce:.6}"));
            }
            if let Some(mlm) = e.mean_mlm {
                s.push_str(&format!("  mlm {mlm:.6}"));
            }
            if let Some(acc) = e.val_accuracy {
                s.push_str(&format!("  val {:.2}%", acc * 100.0));
            }
            s.push('\n');
        }
        s.push_str(&format!("wall time: {:.1}s\n", self.wall_time_secs));
        s
    }
}

/// Shuffled example order for one pass. Shared by every trainer so runs with
/// the same seed see the same source batches.
pub(crate) fn epoch_order(n: usize, seed: u64, pass: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Purpose::Shuffle, pass));
    order
}

pub(crate) fn tokenize_corpus(state: &EncoderState, corpus: &Corpus) -> Vec<Vec<TokenId>> {
    corpus
        .utterances()
        .par_iter()
        .map(|u| state.tokenize(&u.text))
        .collect()
}

pub(crate) fn check_finite(value: f64, what: &str, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {value} at step {step}")))
    }
}

pub(crate) fn check_batch_size(batch_size: usize, lr: f64) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
