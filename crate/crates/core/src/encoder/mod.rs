//! Text encoder: tokenizer, transformer stack, classification and MLM heads.

mod checkpoint;
pub mod model;
mod params;
mod pretrained;
mod tokenizer;

use std::collections::BTreeMap;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::softmax;
use crate::seeding::{stream_rng, Purpose};

pub use checkpoint::{read_tensor_file, RawTensor};
pub use params::{
    Embeddings, EncoderConfig, EncoderLayer, LayerNorm, Linear, MlmHead, MlmTransform, Parameters,
};
pub use pretrained::{bert_config_from_json, import_bert};
pub use tokenizer::{basic_split, SpecialTokens, TokenId, Tokenizer, TokenizerKind};

/// Padded id matrix with a validity mask (`false` = padding).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Array2<TokenId>,
    pub valid: Array2<bool>,
}

impl TokenBatch {
    /// Right-pads every sequence to the longest one (or `min_len`).
    pub fn from_sequences(seqs: &[Vec<TokenId>], pad: TokenId, min_len: usize) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0).max(min_len);
        let mut ids = Array2::from_elem((seqs.len(), width), pad);
        let mut valid = Array2::from_elem((seqs.len(), width), false);
        for (i, s) in seqs.iter().enumerate() {
            for (j, &t) in s.iter().enumerate() {
                ids[[i, j]] = t;
                valid[[i, j]] = true;
            }
        }
        TokenBatch { ids, valid }
    }

    pub fn rows(&self) -> usize {
        self.ids.nrows()
    }

    /// Non-padding ids of row `i`.
    pub fn sequence(&self, i: usize) -> Vec<TokenId> {
        self.ids
            .row(i)
            .iter()
            .zip(self.valid.row(i))
            .filter(|(_, &v)| v)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Encoder parameters φ, attached heads, tokenizer and the label names the
/// classification head was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub params: Parameters,
    pub labels: Vec<String>,
}

impl EncoderState {
    /// Fresh encoder without heads. Deterministic in `seed`.
    pub fn init(config: EncoderConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} differs from tokenizer vocabulary {}",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        if tokenizer.max_length() > config.max_length {
            return Err(Error::Config(format!(
                "tokenizer max_length {} exceeds position table {}",
                tokenizer.max_length(),
                config.max_length
            )));
        }
        let mut rng = stream_rng(seed, Purpose::Init, 0);
        let params = Parameters::init(&config, &mut rng);
        Ok(EncoderState {
            config,
            tokenizer,
            params,
            labels: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path.as_ref())
    }

    /// Our own checkpoint file, or a directory holding a BERT-style
    /// `config.json`, `vocab.txt` and `model.safetensors`.
    pub fn load_pretrained(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            import_bert(path)
        } else {
            Self::load(path)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(self, path.as_ref(), &BTreeMap::new())
    }

    /// Like [`save`](Self::save), with extra string entries in the file
    /// metadata. Reserved keys take precedence.
    pub fn save_with_metadata(
        &self,
        path: impl AsRef<Path>,
        extra: &BTreeMap<String, String>,
    ) -> Result<()> {
        checkpoint::save(self, path.as_ref(), extra)
    }

    /// Replaces the classification head with a fresh `N × d` one.
    pub fn reset_cls_head(&mut self, labels: &[String], seed: u64) {
        let mut rng = stream_rng(seed, Purpose::HeadInit, 0);
        self.params.cls_head = Some(Linear::init(
            labels.len(),
            self.config.hidden,
            self.config.init_std,
            &mut rng,
        ));
        self.labels = labels.to_vec();
    }

    /// Attaches an MLM head unless one exists.
    pub fn ensure_mlm_head(&mut self, seed: u64) {
        if self.params.mlm_head.is_none() {
            let mut rng = stream_rng(seed, Purpose::HeadInit, 1);
            self.params.mlm_head = Some(Parameters::new_mlm_head(&self.config, &mut rng));
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.tokenizer.tokenize(text)
    }

    /// Pooled CLS vectors `[B, d]` and per-token hidden states.
    pub fn encode(&self, batch: &TokenBatch) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let rows: Vec<Array2<f64>> = (0..batch.rows())
            .into_par_iter()
            .map(|i| {
                let ids = batch.ids.row(i).to_vec();
                let valid = batch.valid.row(i).to_vec();
                model::forward(&self.config, &self.params, &ids, Some(&valid)).map(|(h, _)| h)
            })
            .collect::<Result<_>>()?;
        let mut pooled = Array2::zeros((rows.len(), self.config.hidden));
        for (i, h) in rows.iter().enumerate() {
            pooled.row_mut(i).assign(&h.row(0));
        }
        Ok((pooled, rows))
    }

    /// Pooled features for raw texts, one row per text.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = texts
            .par_iter()
            .map(|t| {
                let ids = self.tokenizer.tokenize(t);
                model::forward(&self.config, &self.params, &ids, None)
                    .map(|(h, _)| h.row(0).to_owned())
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.config.hidden));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }

    /// `softmax(W h + b)` over the current label set.
    pub fn classify(&self, pooled: ArrayView1<f64>) -> Result<Array1<f64>> {
        let head = self
            .params
            .cls_head
            .as_ref()
            .ok_or(Error::MissingHead("classification"))?;
        if pooled.len() != head.in_dim() {
            return Err(Error::Shape(format!(
                "pooled dim {} vs head input {}",
                pooled.len(),
                head.in_dim()
            )));
        }
        Ok(softmax(model::cls_logits(head, pooled).view()))
    }

    /// One vocabulary logit row per masked position of a single sequence.
    pub fn mlm_logits(&self, hidden: &Array2<f64>, positions: &[usize]) -> Result<Array2<f64>> {
        let head = self
            .params
            .mlm_head
            .as_ref()
            .ok_or(Error::MissingHead("MLM"))?;
        if let Some(&p) = positions.iter().find(|&&p| p >= hidden.nrows()) {
            return Err(Error::Shape(format!(
                "masked position {p} beyond length {}",
                hidden.nrows()
            )));
        }
        if positions.is_empty() {
            return Ok(Array2::zeros((0, self.config.vocab_size)));
        }
        let rows = hidden.select(Axis(0), positions);
        Ok(model::mlm_head_forward(&self.config, &self.params, head, rows).0)
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    pub fn freeze(self) -> FrozenEncoder {
        FrozenEncoder(Arc::new(self))
    }
}

/// Read-only, shareable encoder used for feature extraction.
#[derive(Debug, Clone)]
pub struct FrozenEncoder(Arc<EncoderState>);

impl FrozenEncoder {
    /// Copies the parameters out for further training.
    pub fn thaw(&self) -> EncoderState {
        (*self.0).clone()
    }
}

impl Deref for FrozenEncoder {
    type Target = EncoderState;

    fn deref(&self) -> &EncoderState {
        &self.0
    }
}
