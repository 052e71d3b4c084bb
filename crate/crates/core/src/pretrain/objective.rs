//! Batch losses with analytic gradients.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::masking::MaskedBatch;
use crate::encoder::model::{self, cls_logits, mlm_head_backward, mlm_head_forward};
use crate::encoder::{EncoderState, Parameters, TokenId};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax};

/// Sequences are per-example token ids without padding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    pub sequences: Vec<Vec<TokenId>>,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Scalar loss together with its gradient w.r.t. every parameter.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Parameters,
}

// Fixed-size chunks keep the summation order independent of the thread pool.
const CHUNK: usize = 4;

fn accumulate<T, F>(state: &EncoderState, items: &[T], per_item: F) -> Result<LossGrad>
where
    T: Sync,
    F: Fn(&T, &mut Parameters) -> Result<f64> + Sync,
{
    let partial: Vec<(f64, Parameters)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = state.params.zeros_like();
            let mut loss = 0.0;
            for item in chunk {
                loss += per_item(item, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = partial.into_iter();
    let (mut loss, mut grads) = match iter.next() {
        Some(first) => first,
        None => (0.0, state.params.zeros_like()),
    };
    for (l, g) in iter {
        loss += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok(LossGrad { loss, grads })
}

/// Mean cross-entropy of the classification head over the batch.
pub fn ce_loss(state: &EncoderState, batch: &LabeledBatch) -> Result<LossGrad> {
    let head = state
        .params
        .cls_head
        .as_ref()
        .ok_or(Error::MissingHead("classification"))?;
    if batch.sequences.len() != batch.labels.len() {
        return Err(Error::Shape("sequences and labels differ in length".into()));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= head.out_dim()) {
        return Err(Error::Shape(format!(
            "label {y} outside a {}-way head",
            head.out_dim()
        )));
    }
    if batch.is_empty() {
        return Ok(LossGrad {
            loss: 0.0,
            grads: state.params.zeros_like(),
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let items: Vec<(&Vec<TokenId>, usize)> = batch
        .sequences
        .iter()
        .zip(batch.labels.iter().copied())
        .collect();
    let mut out = accumulate(state, &items, |(ids, y), g| {
        let (hidden, cache) = model::forward(&state.config, &state.params, ids, None)?;
        let pooled = hidden.row(0);
        let logits = cls_logits(head, pooled);
        let loss = log_sum_exp(logits.view()) - logits[*y];
        let mut dlogits = softmax(logits.view());
        dlogits[*y] -= 1.0;
        dlogits *= scale;
        let gh = g.cls_head.as_mut().expect("grads mirror params");
        gh.weight += &outer(&dlogits, &pooled.to_owned());
        gh.bias += &dlogits;
        let mut d_hidden = Array2::zeros(hidden.raw_dim());
        d_hidden.row_mut(0).assign(&head.weight.t().dot(&dlogits));
        model::backward(&state.config, &state.params, &cache, d_hidden, g);
        Ok(loss)
    })?;
    out.loss *= scale;
    Ok(out)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Mean cross-entropy of recovering the original ids at every selected
/// position in the batch. Defined as 0 when nothing was selected.
pub fn mlm_loss(state: &EncoderState, masked: &MaskedBatch) -> Result<LossGrad> {
    let head = state
        .params
        .mlm_head
        .as_ref()
        .ok_or(Error::MissingHead("MLM"))?;
    let total = masked.positions.len();
    if total == 0 {
        return Ok(LossGrad {
            loss: 0.0,
            grads: state.params.zeros_like(),
        });
    }
    // group selected positions by row
    let mut per_row: Vec<(usize, Vec<usize>, Vec<TokenId>)> = Vec::new();
    for (&(r, c), &t) in masked.positions.iter().zip(&masked.targets) {
        match per_row.last_mut() {
            Some((row, cols, ts)) if *row == r => {
                cols.push(c);
                ts.push(t);
            }
            _ => per_row.push((r, vec![c], vec![t])),
        }
    }
    let scale = 1.0 / total as f64;
    let mut out = accumulate(state, &per_row, |(r, cols, targets), g| {
        let ids = masked.corrupted.sequence(*r);
        let (hidden, cache) = model::forward(&state.config, &state.params, &ids, None)?;
        if let Some(&c) = cols.iter().find(|&&c| c >= ids.len()) {
            return Err(Error::Shape(format!(
                "masked position {c} beyond length {}",
                ids.len()
            )));
        }
        let rows = hidden.select(Axis(0), cols);
        let (logits, mcache) = mlm_head_forward(&state.config, &state.params, head, rows);
        let mut loss = 0.0;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            loss += log_sum_exp(row) - row[t as usize];
            let mut d = softmax(row);
            d[t as usize] -= 1.0;
            dlogits.row_mut(i).assign(&(d * scale));
        }
        let d_rows = mlm_head_backward(&state.params, head, &mcache, &dlogits, g);
        let mut d_hidden = Array2::zeros(hidden.raw_dim());
        for (i, &c) in cols.iter().enumerate() {
            let mut row = d_hidden.row_mut(c);
            row += &d_rows.row(i);
        }
        model::backward(&state.config, &state.params, &cache, d_hidden, g);
        Ok(loss)
    })?;
    out.loss *= scale;
    Ok(out)
}

/// Components of `L_ce + λ·L_mlm` for one source batch and one masked
/// target batch.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub ce: f64,
    pub mlm: f64,
    pub total: f64,
    pub grads: Parameters,
}

pub fn joint_loss(
    state: &EncoderState,
    source: &LabeledBatch,
    target: &MaskedBatch,
    lambda: f64,
) -> Result<JointLoss> {
    let ce = ce_loss(state, source)?;
    let mlm = mlm_loss(state, target)?;
    let mut grads = ce.grads;
    grads.add_scaled(&mlm.grads, lambda);
    Ok(JointLoss {
        ce: ce.loss,
        mlm: mlm.loss,
        total: ce.loss + lambda * mlm.loss,
        grads,
    })
}
