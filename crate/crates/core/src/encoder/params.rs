//! Parameter containers. The same types hold gradients and optimizer moments.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_length: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    /// Dense + GELU + LayerNorm before the tied MLM decoder, as in BERT.
    #[serde(default)]
    pub mlm_transform: bool,
    /// Std of the normal weight initializer.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_eps() -> f64 {
    1e-12
}

fn default_init_std() -> f64 {
    0.02
}

impl EncoderConfig {
    /// BERT-base: d=768, 12 layers, 12 heads.
    pub fn base(vocab_size: usize) -> Self {
        EncoderConfig {
            hidden: 768,
            layers: 12,
            heads: 12,
            ffn: 3072,
            vocab_size,
            max_length: 512,
            layer_norm_eps: 1e-12,
            mlm_transform: true,
            init_std: 0.02,
        }
    }

    pub fn tiny(vocab_size: usize) -> Self {
        EncoderConfig {
            hidden: 32,
            layers: 2,
            heads: 4,
            ffn: 64,
            vocab_size,
            max_length: 32,
            layer_norm_eps: 1e-12,
            mlm_transform: false,
            init_std: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.hidden,
            self.layers,
            self.heads,
            self.ffn,
            self.vocab_size,
            self.max_length,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "encoder counts must be >= 1: {self:?}"
            )));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if [self.layer_norm_eps, self.init_std]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::Config(
                "layer_norm_eps and init_std must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `y = x Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Linear {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn init<R: Rng>(out: usize, inp: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: normal_matrix(out, inp, std, rng),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    /// `[vocab, d]`; also the MLM decoder matrix.
    pub token: Array2<f64>,
    /// `[max_length, d]`
    pub position: Array2<f64>,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmTransform {
    pub dense: Linear,
    pub norm: LayerNorm,
}

/// Decoder is tied to the token embeddings; only the optional transform and
/// the output bias live here.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub transform: Option<MlmTransform>,
    pub bias: Array1<f64>,
}

/// Encoder parameters plus whichever heads are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub embeddings: Embeddings,
    pub layers: Vec<EncoderLayer>,
    pub cls_head: Option<Linear>,
    pub mlm_head: Option<MlmHead>,
}

pub(crate) fn normal_matrix<R: Rng>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std is positive");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl Parameters {
    /// Scaled-normal weights, zero biases, unit LayerNorm gains. No heads.
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.hidden;
        let std = cfg.init_std;
        let embeddings = Embeddings {
            token: normal_matrix(cfg.vocab_size, d, std, rng),
            position: normal_matrix(cfg.max_length, d, std, rng),
            norm: LayerNorm::new(d),
        };
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer {
                query: Linear::init(d, d, std, rng),
                key: Linear::init(d, d, std, rng),
                value: Linear::init(d, d, std, rng),
                output: Linear::init(d, d, std, rng),
                attn_norm: LayerNorm::new(d),
                ffn_in: Linear::init(cfg.ffn, d, std, rng),
                ffn_out: Linear::init(d, cfg.ffn, std, rng),
                ffn_norm: LayerNorm::new(d),
            })
            .collect();
        Parameters {
            embeddings,
            layers,
            cls_head: None,
            mlm_head: None,
        }
    }

    pub fn new_mlm_head<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> MlmHead {
        MlmHead {
            transform: cfg.mlm_transform.then(|| MlmTransform {
                dense: Linear::init(cfg.hidden, cfg.hidden, cfg.init_std, rng),
                norm: LayerNorm::new(cfg.hidden),
            }),
            bias: Array1::zeros(cfg.vocab_size),
        }
    }

    /// All-zero parameters with the given heads attached.
    pub fn zeros(cfg: &EncoderConfig, cls_labels: Option<usize>, mlm: bool) -> Self {
        let d = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer {
                query: Linear::zeros(d, d),
                key: Linear::zeros(d, d),
                value: Linear::zeros(d, d),
                output: Linear::zeros(d, d),
                attn_norm: LayerNorm::zeros(d),
                ffn_in: Linear::zeros(cfg.ffn, d),
                ffn_out: Linear::zeros(d, cfg.ffn),
                ffn_norm: LayerNorm::zeros(d),
            })
            .collect();
        Parameters {
            embeddings: Embeddings {
                token: Array2::zeros((cfg.vocab_size, d)),
                position: Array2::zeros((cfg.max_length, d)),
                norm: LayerNorm::zeros(d),
            },
            layers,
            cls_head: cls_labels.map(|n| Linear::zeros(n, d)),
            mlm_head: mlm.then(|| MlmHead {
                transform: cfg.mlm_transform.then(|| MlmTransform {
                    dense: Linear::zeros(d, d),
                    norm: LayerNorm::zeros(d),
                }),
                bias: Array1::zeros(cfg.vocab_size),
            }),
        }
    }

    /// Same structure, all zeros. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let zl = |l: &Linear| Linear::zeros(l.out_dim(), l.in_dim());
        let zn = |n: &LayerNorm| LayerNorm::zeros(n.gamma.len());
        Parameters {
            embeddings: Embeddings {
                token: z2(&self.embeddings.token),
                position: z2(&self.embeddings.position),
                norm: zn(&self.embeddings.norm),
            },
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    query: zl(&l.query),
                    key: zl(&l.key),
                    value: zl(&l.value),
                    output: zl(&l.output),
                    attn_norm: zn(&l.attn_norm),
                    ffn_in: zl(&l.ffn_in),
                    ffn_out: zl(&l.ffn_out),
                    ffn_norm: zn(&l.ffn_norm),
                })
                .collect(),
            cls_head: self.cls_head.as_ref().map(zl),
            mlm_head: self.mlm_head.as_ref().map(|h| MlmHead {
                transform: h.transform.as_ref().map(|t| MlmTransform {
                    dense: zl(&t.dense),
                    norm: zn(&t.norm),
                }),
                bias: Array1::zeros(h.bias.len()),
            }),
        }
    }

    /// Named views of every tensor in a fixed traversal order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        let e = &self.embeddings;
        out.push(("embeddings.token".to_string(), e.token.view().into_dyn()));
        out.push((
            "embeddings.position".to_string(),
            e.position.view().into_dyn(),
        ));
        push_norm(&mut out, "embeddings.norm", &e.norm);
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push_linear(&mut out, &format!("{p}.query"), &l.query);
            push_linear(&mut out, &format!("{p}.key"), &l.key);
            push_linear(&mut out, &format!("{p}.value"), &l.value);
            push_linear(&mut out, &format!("{p}.output"), &l.output);
            push_norm(&mut out, &format!("{p}.attn_norm"), &l.attn_norm);
            push_linear(&mut out, &format!("{p}.ffn_in"), &l.ffn_in);
            push_linear(&mut out, &format!("{p}.ffn_out"), &l.ffn_out);
            push_norm(&mut out, &format!("{p}.ffn_norm"), &l.ffn_norm);
        }
        if let Some(h) = &self.cls_head {
            push_linear(&mut out, "cls_head", h);
        }
        if let Some(h) = &self.mlm_head {
            if let Some(t) = &h.transform {
                push_linear(&mut out, "mlm_head.transform.dense", &t.dense);
                push_norm(&mut out, "mlm_head.transform.norm", &t.norm);
            }
            out.push(("mlm_head.bias".to_string(), h.bias.view().into_dyn()));
        }
        out
    }

    /// Mutable views, same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        let e = &mut self.embeddings;
        out.push(e.token.view_mut().into_dyn());
        out.push(e.position.view_mut().into_dyn());
        out.push(e.norm.gamma.view_mut().into_dyn());
        out.push(e.norm.beta.view_mut().into_dyn());
        for l in &mut self.layers {
            for lin in [&mut l.query, &mut l.key, &mut l.value, &mut l.output] {
                out.push(lin.weight.view_mut().into_dyn());
                out.push(lin.bias.view_mut().into_dyn());
            }
            out.push(l.attn_norm.gamma.view_mut().into_dyn());
            out.push(l.attn_norm.beta.view_mut().into_dyn());
            for lin in [&mut l.ffn_in, &mut l.ffn_out] {
                out.push(lin.weight.view_mut().into_dyn());
                out.push(lin.bias.view_mut().into_dyn());
            }
            out.push(l.ffn_norm.gamma.view_mut().into_dyn());
            out.push(l.ffn_norm.beta.view_mut().into_dyn());
        }
        if let Some(h) = &mut self.cls_head {
            out.push(h.weight.view_mut().into_dyn());
            out.push(h.bias.view_mut().into_dyn());
        }
        if let Some(h) = &mut self.mlm_head {
            if let Some(t) = &mut h.transform {
                out.push(t.dense.weight.view_mut().into_dyn());
                out.push(t.dense.bias.view_mut().into_dyn());
                out.push(t.norm.gamma.view_mut().into_dyn());
                out.push(t.norm.beta.view_mut().into_dyn());
            }
            out.push(h.bias.view_mut().into_dyn());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`. Structures must match.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src = other.tensors();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "parameter structure mismatch");
        for (mut d, (_, s)) in dst.into_iter().zip(src) {
            d.scaled_add(scale, &s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and raw parameter bits.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.tensors() {
            h.update(name.as_bytes());
            for s in t.shape() {
                h.update((*s as u64).to_le_bytes());
            }
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn push_linear<'a>(out: &mut Vec<(String, ArrayViewD<'a, f64>)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), l.weight.view().into_dyn()));
    out.push((format!("{prefix}.bias"), l.bias.view().into_dyn()));
}

fn push_norm<'a>(out: &mut Vec<(String, ArrayViewD<'a, f64>)>, prefix: &str, n: &'a LayerNorm) {
    out.push((format!("{prefix}.gamma"), n.gamma.view().into_dyn()));
    out.push((format!("{prefix}.beta"), n.beta.view().into_dyn()));
}
