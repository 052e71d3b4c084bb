//! Import of BERT-style checkpoints (`config.json`, `vocab.txt`,
//! `model.safetensors`) as published on the HuggingFace hub.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::checkpoint::{fill_parameters, read_tensor_file, RawTensor};
use super::params::{EncoderConfig, Parameters};
use super::tokenizer::Tokenizer;
use super::EncoderState;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct BertJson {
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    vocab_size: usize,
    max_position_embeddings: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f64,
    #[serde(default = "default_act")]
    hidden_act: String,
    #[serde(default = "default_range")]
    initializer_range: f64,
}

fn default_eps() -> f64 {
    1e-12
}
fn default_act() -> String {
    "gelu".into()
}
fn default_range() -> f64 {
    0.02
}

/// Maps a BERT `config.json` onto [`EncoderConfig`].
pub fn bert_config_from_json(raw: &str) -> Result<EncoderConfig> {
    let b: BertJson = serde_json::from_str(raw)?;
    if b.hidden_act != "gelu" {
        return Err(Error::Config(format!(
            "unsupported activation {:?}",
            b.hidden_act
        )));
    }
    let cfg = EncoderConfig {
        hidden: b.hidden_size,
        layers: b.num_hidden_layers,
        heads: b.num_attention_heads,
        ffn: b.intermediate_size,
        vocab_size: b.vocab_size,
        max_length: b.max_position_embeddings,
        layer_norm_eps: b.layer_norm_eps,
        mlm_transform: true,
        init_std: b.initializer_range,
    };
    cfg.validate()?;
    Ok(cfg)
}

// our name -> BERT name (without the optional `bert.` prefix)
fn bert_name(ours: &str) -> Option<String> {
    let map_norm = |s: &str| s.replace(".gamma", ".weight").replace(".beta", ".bias");
    if let Some(rest) = ours.strip_prefix("layers.") {
        let (idx, tail) = rest.split_once('.')?;
        let p = format!("encoder.layer.{idx}");
        let mapped = match tail {
            t if t.starts_with("query.") => format!("{p}.attention.self.{t}"),
            t if t.starts_with("key.") => format!("{p}.attention.self.{t}"),
            t if t.starts_with("value.") => format!("{p}.attention.self.{t}"),
            t if t.starts_with("output.") => format!("{p}.attention.output.dense.{}", &t[7..]),
            t if t.starts_with("attn_norm.") => {
                map_norm(&format!("{p}.attention.output.LayerNorm.{}", &t[10..]))
            }
            t if t.starts_with("ffn_in.") => format!("{p}.intermediate.dense.{}", &t[7..]),
            t if t.starts_with("ffn_out.") => format!("{p}.output.dense.{}", &t[8..]),
            t if t.starts_with("ffn_norm.") => {
                map_norm(&format!("{p}.output.LayerNorm.{}", &t[9..]))
            }
            _ => return None,
        };
        return Some(mapped);
    }
    Some(match ours {
        "embeddings.token" => "embeddings.word_embeddings.weight".into(),
        "embeddings.position" => "embeddings.position_embeddings.weight".into(),
        "embeddings.norm.gamma" => "embeddings.LayerNorm.weight".into(),
        "embeddings.norm.beta" => "embeddings.LayerNorm.bias".into(),
        "mlm_head.transform.dense.weight" => "cls.predictions.transform.dense.weight".into(),
        "mlm_head.transform.dense.bias" => "cls.predictions.transform.dense.bias".into(),
        "mlm_head.transform.norm.gamma" => "cls.predictions.transform.LayerNorm.weight".into(),
        "mlm_head.transform.norm.beta" => "cls.predictions.transform.LayerNorm.bias".into(),
        "mlm_head.bias" => "cls.predictions.bias".into(),
        _ => return None,
    })
}

fn take(tensors: &mut HashMap<String, RawTensor>, name: &str) -> Option<RawTensor> {
    // older exports use gamma/beta and may or may not carry the `bert.` prefix
    let candidates = [
        name.to_string(),
        format!("bert.{name}"),
        name.replace("LayerNorm.weight", "LayerNorm.gamma")
            .replace("LayerNorm.bias", "LayerNorm.beta"),
        format!("bert.{name}")
            .replace("LayerNorm.weight", "LayerNorm.gamma")
            .replace("LayerNorm.bias", "LayerNorm.beta"),
    ];
    candidates.iter().find_map(|c| tensors.remove(c))
}

/// Loads a BERT checkpoint directory. Token-type embedding row 0 is folded
/// into the position table (single-segment inputs); the pooler is dropped
/// since features are the raw CLS hidden state. The MLM head is attached when
/// the checkpoint carries `cls.predictions.*`.
pub fn import_bert(dir: &Path) -> Result<EncoderState> {
    let cfg_path = dir.join("config.json");
    let raw = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = bert_config_from_json(&raw)?;
    let tokenizer =
        Tokenizer::load_wordpiece(dir.join("vocab.txt"), config.max_length.min(128), true)?;
    if tokenizer.vocab_size() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocab.txt has {} entries, config says {}",
            tokenizer.vocab_size(),
            config.vocab_size
        )));
    }
    let weights = dir.join("model.safetensors");
    let (_, mut bert) = read_tensor_file(&weights)?;

    let has_mlm = bert.contains_key("cls.predictions.bias");
    let mut params = Parameters::zeros(&config, None, has_mlm);
    let mut renamed = HashMap::new();
    for (name, _) in params.tensors() {
        let source = bert_name(&name)
            .ok_or_else(|| Error::Checkpoint(format!("no BERT name for {name}")))?;
        let t = take(&mut bert, &source)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing {source}", weights.display())))?;
        renamed.insert(name, t);
    }
    if let Some(tt) = take(&mut bert, "embeddings.token_type_embeddings.weight") {
        let pos = renamed
            .get_mut("embeddings.position")
            .expect("mapped above");
        let d = config.hidden;
        for row in pos.data.chunks_mut(d) {
            for (v, t) in row.iter_mut().zip(&tt.data[..d]) {
                *v += t;
            }
        }
    }
    fill_parameters(&mut params, &mut renamed, &weights)?;
    Ok(EncoderState {
        config,
        tokenizer,
        params,
        labels: Vec::new(),
    })
}
