//! Post-LN transformer encoder with hand-written backward pass.
//!
//! Everything works on one sequence at a time (`[len, d]` matrices). Batches
//! are handled by the callers, which sum per-sequence gradients in a fixed
//! order so results do not depend on the thread count.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{EncoderConfig, EncoderLayer, LayerNorm, Linear, MlmHead, Parameters};
use super::tokenizer::TokenId;
use crate::error::{Error, Result};
use crate::math::{gelu, gelu_grad};

pub(crate) fn linear(x: &ArrayView2<f64>, l: &Linear) -> Array2<f64> {
    let mut y = x.dot(&l.weight.t());
    y += &l.bias;
    y
}

/// Accumulates parameter grads into `g` and returns `dL/dx`.
pub(crate) fn linear_backward(
    dy: &Array2<f64>,
    x: &ArrayView2<f64>,
    l: &Linear,
    g: &mut Linear,
) -> Array2<f64> {
    g.weight += &dy.t().dot(x);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight)
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, ln: &LayerNorm, eps: f64) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + eps).sqrt();
        row *= *inv;
    }
    let y = &xhat * &ln.gamma + &ln.beta;
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LayerNorm,
    c: &NormCache,
    g: &mut LayerNorm,
) -> Array2<f64> {
    g.gamma += &(dy * &c.xhat).sum_axis(Axis(0));
    g.beta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * &ln.gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.dot(&xh);
        let inv = c.inv_std[i];
        let mut out = dx.row_mut(i);
        for j in 0..dh.len() {
            out[j] = inv / d * (d * dh[j] - sum_dh - xh[j] * sum_dh_xh);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_norm: NormCache,
    mid: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ffn_norm: NormCache,
}

/// Intermediate values needed by [`backward`].
#[derive(Debug, Clone)]
pub struct SequenceCache {
    ids: Vec<TokenId>,
    emb_norm: NormCache,
    layers: Vec<LayerCache>,
}

fn check_ids(cfg: &EncoderConfig, ids: &[TokenId]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if ids.len() > cfg.max_length {
        return Err(Error::Shape(format!(
            "sequence length {} exceeds max_length {}",
            ids.len(),
            cfg.max_length
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Runs the encoder on one sequence. `valid[j] == false` marks position `j`
/// as padding: it is never attended to.
pub fn forward(
    cfg: &EncoderConfig,
    params: &Parameters,
    ids: &[TokenId],
    valid: Option<&[bool]>,
) -> Result<(Array2<f64>, SequenceCache)> {
    check_ids(cfg, ids)?;
    if let Some(v) = valid {
        if v.len() != ids.len() {
            return Err(Error::Shape(
                "pad mask length differs from sequence length".into(),
            ));
        }
    }
    let len = ids.len();
    let emb = &params.embeddings;
    let mut x = emb.position.slice(s![..len, ..]).to_owned();
    for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
        row += &emb.token.row(id as usize);
    }
    let (mut h, emb_norm) = layer_norm(&x, &emb.norm, cfg.layer_norm_eps);

    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, cache) = layer_forward(cfg, layer, h, valid);
        caches.push(cache);
        h = out;
    }
    Ok((
        h,
        SequenceCache {
            ids: ids.to_vec(),
            emb_norm,
            layers: caches,
        },
    ))
}

fn layer_forward(
    cfg: &EncoderConfig,
    layer: &EncoderLayer,
    input: Array2<f64>,
    valid: Option<&[bool]>,
) -> (Array2<f64>, LayerCache) {
    let len = input.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let xv = input.view();
    let q = linear(&xv, &layer.query);
    let k = linear(&xv, &layer.key);
    let v = linear(&xv, &layer.value);

    let mut ctx = Array2::zeros((len, cfg.hidden));
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        for mut row in scores.rows_mut() {
            if let Some(valid) = valid {
                for (s, &ok) in row.iter_mut().zip(valid) {
                    if !ok {
                        *s = f64::NEG_INFINITY;
                    }
                }
            }
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let attn_out = linear(&ctx.view(), &layer.output);
    let (mid, attn_norm) = layer_norm(&(&input + &attn_out), &layer.attn_norm, cfg.layer_norm_eps);

    let pre_act = linear(&mid.view(), &layer.ffn_in);
    let act = pre_act.mapv(gelu);
    let ffn = linear(&act.view(), &layer.ffn_out);
    let (out, ffn_norm) = layer_norm(&(&mid + &ffn), &layer.ffn_norm, cfg.layer_norm_eps);
    (
        out,
        LayerCache {
            input,
            q,
            k,
            v,
            probs,
            ctx,
            attn_norm,
            mid,
            pre_act,
            act,
            ffn_norm,
        },
    )
}

fn layer_backward(
    cfg: &EncoderConfig,
    layer: &EncoderLayer,
    c: &LayerCache,
    d_out: &Array2<f64>,
    g: &mut EncoderLayer,
) -> Array2<f64> {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // out = LN(mid + ffn(mid))
    let d_res2 = layer_norm_backward(d_out, &layer.ffn_norm, &c.ffn_norm, &mut g.ffn_norm);
    let d_act = linear_backward(&d_res2, &c.act.view(), &layer.ffn_out, &mut g.ffn_out);
    let d_pre = &d_act * &c.pre_act.mapv(gelu_grad);
    let mut d_mid = linear_backward(&d_pre, &c.mid.view(), &layer.ffn_in, &mut g.ffn_in);
    d_mid += &d_res2;

    // mid = LN(input + attn(input))
    let d_res1 = layer_norm_backward(&d_mid, &layer.attn_norm, &c.attn_norm, &mut g.attn_norm);
    let d_ctx = linear_backward(&d_res1, &c.ctx.view(), &layer.output, &mut g.output);

    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &c.probs[h];
        let d_ctx_h = d_ctx.slice(cols);
        let dp = d_ctx_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
        // softmax backward, row-wise
        let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut ds = p * &(&dp - &row_dot);
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let x = c.input.view();
    let mut d_in = d_res1;
    d_in += &linear_backward(&dq, &x, &layer.query, &mut g.query);
    d_in += &linear_backward(&dk, &x, &layer.key, &mut g.key);
    d_in += &linear_backward(&dv, &x, &layer.value, &mut g.value);
    d_in
}

/// Backpropagates `d_hidden` (gradient w.r.t. the encoder output) into the
/// encoder parameters of `grads`.
pub fn backward(
    cfg: &EncoderConfig,
    params: &Parameters,
    cache: &SequenceCache,
    d_hidden: Array2<f64>,
    grads: &mut Parameters,
) {
    let mut d = d_hidden;
    for ((layer, c), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        d = layer_backward(cfg, layer, c, &d, g);
    }
    let ge = &mut grads.embeddings;
    let dx = layer_norm_backward(&d, &params.embeddings.norm, &cache.emb_norm, &mut ge.norm);
    let len = cache.ids.len();
    let mut pos = ge.position.slice_mut(s![..len, ..]);
    pos += &dx;
    for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
        let mut t = ge.token.row_mut(id as usize);
        t += &row;
    }
}

/// `W h + b` for the classification head.
pub fn cls_logits(head: &Linear, pooled: ArrayView1<f64>) -> Array1<f64> {
    head.weight.dot(&pooled) + &head.bias
}

#[derive(Debug, Clone)]
pub struct MlmCache {
    rows: Array2<f64>,
    pre_act: Option<Array2<f64>>,
    norm: Option<NormCache>,
    decoded_in: Array2<f64>,
}

/// Vocabulary logits for the given hidden-state rows through the (tied) MLM
/// head.
pub fn mlm_head_forward(
    cfg: &EncoderConfig,
    params: &Parameters,
    head: &MlmHead,
    rows: Array2<f64>,
) -> (Array2<f64>, MlmCache) {
    let (pre_act, norm, decoded_in) = match &head.transform {
        Some(t) => {
            let pre = linear(&rows.view(), &t.dense);
            let (y, nc) = layer_norm(&pre.mapv(gelu), &t.norm, cfg.layer_norm_eps);
            (Some(pre), Some(nc), y)
        }
        None => (None, None, rows.clone()),
    };
    let mut logits = decoded_in.dot(&params.embeddings.token.t());
    logits += &head.bias;
    (
        logits,
        MlmCache {
            rows,
            pre_act,
            norm,
            decoded_in,
        },
    )
}

/// Returns the gradient w.r.t. the input rows; parameter grads go to `grads`.
pub fn mlm_head_backward(
    params: &Parameters,
    head: &MlmHead,
    cache: &MlmCache,
    d_logits: &Array2<f64>,
    grads: &mut Parameters,
) -> Array2<f64> {
    let gh = grads
        .mlm_head
        .as_mut()
        .expect("grad structure mirrors params");
    gh.bias += &d_logits.sum_axis(Axis(0));
    grads.embeddings.token += &d_logits.t().dot(&cache.decoded_in);
    let d_dec = d_logits.dot(&params.embeddings.token);
    match (&head.transform, gh.transform.as_mut()) {
        (Some(t), Some(gt)) => {
            let d_act =
                layer_norm_backward(&d_dec, &t.norm, cache.norm.as_ref().unwrap(), &mut gt.norm);
            let d_pre = &d_act * &cache.pre_act.as_ref().unwrap().mapv(gelu_grad);
            linear_backward(&d_pre, &cache.rows.view(), &t.dense, &mut gt.dense)
        }
        _ => d_dec,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (EncoderConfig, Parameters) {
        let cfg = EncoderConfig {
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 12,
            vocab_size: 20,
            max_length: 40,
            layer_norm_eps: 1e-12,
            mlm_transform: false,
            init_std: 0.3,
        };
        let p = Parameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        (cfg, p)
    }

    #[test]
    fn padding_invariance() {
        let (cfg, p) = small();
        let ids = [2u32, 7, 9, 11, 3];
        let pad = |n: usize| {
            let mut v = ids.to_vec();
            v.resize(n, 0);
            let mask: Vec<bool> = (0..n).map(|i| i < ids.len()).collect();
            (v, mask)
        };
        let (a, am) = pad(16);
        let (b, bm) = pad(32);
        let (ha, _) = forward(&cfg, &p, &a, Some(&am)).unwrap();
        let (hb, _) = forward(&cfg, &p, &b, Some(&bm)).unwrap();
        let (hc, _) = forward(&cfg, &p, &ids, None).unwrap();
        for j in 0..cfg.hidden {
            assert!((ha[[0, j]] - hb[[0, j]]).abs() < 1e-5);
            assert!((ha[[0, j]] - hc[[0, j]]).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let (cfg, p) = small();
        assert!(matches!(
            forward(&cfg, &p, &[2, 25, 3], None),
            Err(Error::TokenOutOfRange { id: 25, .. })
        ));
    }

    /// Straight-line single-layer, single-head reimplementation at d=4 using
    /// plain loops over `Vec<f64>`.
    #[test]
    fn matches_hand_computation_d4() {
        let cfg = EncoderConfig {
            hidden: 4,
            layers: 1,
            heads: 1,
            ffn: 3,
            vocab_size: 6,
            max_length: 4,
            layer_norm_eps: 1e-12,
            mlm_transform: false,
            init_std: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = Parameters::init(&cfg, &mut rng);
        // non-trivial gains and biases
        p.layers[0].attn_norm.gamma = ndarray::array![1.1, 0.9, 1.2, 0.8];
        p.layers[0].ffn_in.bias = ndarray::array![0.1, -0.2, 0.3];
        p.layers[0].query.bias = ndarray::array![0.05, 0.0, -0.05, 0.1];
        let ids = [2u32, 4, 5];
        let (hidden, _) = forward(&cfg, &p, &ids, None).unwrap();

        let mat = |a: &Array2<f64>| -> Vec<Vec<f64>> {
            a.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        let lin = |x: &[f64], l: &Linear| -> Vec<f64> {
            let w = mat(&l.weight);
            (0..w.len())
                .map(|o| w[o].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + l.bias[o])
                .collect()
        };
        let ln = |x: &[f64], n: &LayerNorm| -> Vec<f64> {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
            x.iter()
                .enumerate()
                .map(|(j, v)| (v - m) / (var + 1e-12).sqrt() * n.gamma[j] + n.beta[j])
                .collect()
        };
        let tok = mat(&p.embeddings.token);
        let pos = mat(&p.embeddings.position);
        let h0: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let x: Vec<f64> = (0..4).map(|j| tok[id as usize][j] + pos[i][j]).collect();
                ln(&x, &p.embeddings.norm)
            })
            .collect();
        let l = &p.layers[0];
        let q: Vec<Vec<f64>> = h0.iter().map(|x| lin(x, &l.query)).collect();
        let k: Vec<Vec<f64>> = h0.iter().map(|x| lin(x, &l.key)).collect();
        let v: Vec<Vec<f64>> = h0.iter().map(|x| lin(x, &l.value)).collect();
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / 2.0)
                .collect();
            let probs = softmax(ndarray::Array1::from(scores).view());
            let ctx: Vec<f64> = (0..4)
                .map(|c| (0..3).map(|j| probs[j] * v[j][c]).sum())
                .collect();
            let attn = lin(&ctx, &l.output);
            let r1: Vec<f64> = (0..4).map(|c| h0[i][c] + attn[c]).collect();
            let mid = ln(&r1, &l.attn_norm);
            let f: Vec<f64> = lin(&mid, &l.ffn_in).into_iter().map(gelu).collect();
            let f2 = lin(&f, &l.ffn_out);
            let r2: Vec<f64> = (0..4).map(|c| mid[c] + f2[c]).collect();
            let out = ln(&r2, &l.ffn_norm);
            for c in 0..4 {
                assert!((out[c] - hidden[[i, c]]).abs() < 1e-12, "row {i} col {c}");
            }
        }
    }

    #[test]
    fn identity_mlm_head_returns_hidden_rows() {
        let cfg = EncoderConfig {
            hidden: 4,
            layers: 1,
            heads: 1,
            ffn: 4,
            vocab_size: 4,
            max_length: 8,
            layer_norm_eps: 1e-12,
            mlm_transform: false,
            init_std: 0.1,
        };
        let mut p = Parameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        p.embeddings.token = Array2::eye(4);
        let head = Parameters::new_mlm_head(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let rows = ndarray::array![[0.5, -1.0, 2.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
        let (logits, _) = mlm_head_forward(&cfg, &p, &head, rows.clone());
        assert_eq!(logits, rows);
    }
}
