use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{SpecialTokens, TokenBatch, TokenId};
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

/// Which tokens get selected for prediction and how they are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingPolicy {
    pub mask_rate: f64,
    pub replace_mask_frac: f64,
    pub replace_random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    /// 15% selection, 80/10/10 mask/random/keep.
    fn default() -> Self {
        MaskingPolicy {
            mask_rate: 0.15,
            replace_mask_frac: 0.8,
            replace_random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            self.replace_mask_frac,
            self.replace_random_frac,
            self.keep_frac,
        ];
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "mask_rate must be in (0, 1), got {}",
                self.mask_rate
            )));
        }
        if fracs.iter().any(|f| f.is_nan() || *f < 0.0)
            || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "corruption fractions must be >= 0 and sum to 1: {fracs:?}"
            )));
        }
        Ok(())
    }
}

/// What a selected position was turned into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub corrupted: TokenBatch,
    /// Original ids at the selected positions.
    pub targets: Vec<TokenId>,
    /// `(row, column)` of each selected position.
    pub positions: Vec<(usize, usize)>,
    pub corruption: Vec<Corruption>,
}

impl MaskedBatch {
    pub fn n_masked(&self) -> usize {
        self.positions.len()
    }
}

/// Selects each maskable token independently with probability `mask_rate`
/// and corrupts it according to the policy split. CLS, SEP, PAD and MASK
/// positions are never selected. Random replacements are drawn uniformly
/// from the non-special vocabulary.
pub fn mask_batch(
    batch: &TokenBatch,
    specials: SpecialTokens,
    vocab_size: usize,
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<MaskedBatch> {
    policy.validate()?;
    let regular: Vec<TokenId> = (0..vocab_size as TokenId)
        .filter(|&t| !specials.contains(t))
        .collect();
    let mut rng = stream_rng(seed, Purpose::Masking, 0);
    let mut corrupted = batch.clone();
    let mut targets = Vec::new();
    let mut positions = Vec::new();
    let mut corruption = Vec::new();
    for ((r, c), &id) in batch.ids.indexed_iter() {
        let maskable = batch.valid[[r, c]]
            && id != specials.cls
            && id != specials.sep
            && id != specials.pad
            && id != specials.mask;
        if !maskable || !rng.random_bool(policy.mask_rate) {
            continue;
        }
        let u: f64 = rng.random();
        let kind = if u < policy.replace_mask_frac {
            Corruption::Mask
        } else if u < policy.replace_mask_frac + policy.replace_random_frac && !regular.is_empty() {
            Corruption::Random
        } else {
            Corruption::Keep
        };
        corrupted.ids[[r, c]] = match kind {
            Corruption::Mask => specials.mask,
            Corruption::Random => regular[rng.random_range(0..regular.len())],
            Corruption::Keep => id,
        };
        targets.push(id);
        positions.push((r, c));
        corruption.push(kind);
    }
    Ok(MaskedBatch {
        corrupted,
        targets,
        positions,
        corruption,
    })
}
