//! Checkpoint container.
//!
//! Layout: little-endian `u64` header length, a JSON header mapping tensor
//! names to `{dtype, shape, data_offsets}` plus a `__metadata__` string map,
//! then the raw tensor bytes. This is the safetensors layout, so files written
//! here open in standard tooling and BERT weights published in that format can
//! be read back with [`read_tensor_file`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{EncoderConfig, Parameters};
use super::tokenizer::Tokenizer;
use super::EncoderState;
use crate::error::{Error, Result};

const FORMAT: &str = "intentkit-checkpoint";
const FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// A tensor decoded to `f64`, in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub(crate) fn write_tensor_file(
    path: &Path,
    metadata: &BTreeMap<String, String>,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<()> {
    let mut header = serde_json::Map::new();
    header.insert("__metadata__".into(), serde_json::to_value(metadata)?);
    let mut offset = 0;
    for (name, shape, data) in tensors {
        let end = offset + data.len() * 8;
        header.insert(
            name.clone(),
            serde_json::to_value(TensorInfo {
                dtype: "F64".into(),
                shape: shape.clone(),
                data_offsets: [offset, end],
            })?,
        );
        offset = end;
    }
    let mut header_bytes = serde_json::to_vec(&header)?;
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, _, data) in tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads every tensor of a safetensors-layout file, converting F64, F32, F16
/// and BF16 to `f64`.
pub fn read_tensor_file(
    path: &Path,
) -> Result<(BTreeMap<String, String>, HashMap<String, RawTensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header length out of range"))?;
    let header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..body_start])?;
    let body = &bytes[body_start..];

    let mut metadata = BTreeMap::new();
    let mut tensors = HashMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            metadata = serde_json::from_value(value)?;
            continue;
        }
        let info: TensorInfo = serde_json::from_value(value)?;
        let [start, end] = info.data_offsets;
        let raw = body
            .get(start..end)
            .ok_or_else(|| bad(&format!("tensor {name} out of bounds")))?;
        let count: usize = info.shape.iter().product();
        let data = decode(&info.dtype, raw)
            .ok_or_else(|| bad(&format!("unsupported dtype {} for {name}", info.dtype)))?;
        if data.len() != count {
            return Err(bad(&format!(
                "tensor {name} has {} values for shape {:?}",
                data.len(),
                info.shape
            )));
        }
        tensors.insert(
            name,
            RawTensor {
                shape: info.shape,
                data,
            },
        );
    }
    Ok((metadata, tensors))
}

fn decode(dtype: &str, raw: &[u8]) -> Option<Vec<f64>> {
    Some(match dtype {
        "F64" => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        "F32" => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        "BF16" => raw
            .chunks_exact(2)
            .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16) as f64)
            .collect(),
        "F16" => raw
            .chunks_exact(2)
            .map(|c| half_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        _ => return None,
    })
}

fn half_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    }
}

pub(crate) fn save(
    state: &EncoderState,
    path: &Path,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut meta = extra.clone();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("config".to_string(), serde_json::to_string(&state.config)?);
    meta.insert(
        "tokenizer".to_string(),
        serde_json::to_string(&state.tokenizer)?,
    );
    meta.insert("labels".to_string(), serde_json::to_string(&state.labels)?);
    meta.insert(
        "mlm_head".to_string(),
        state.params.mlm_head.is_some().to_string(),
    );
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = state
        .params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec(), t.iter().copied().collect()))
        .collect();
    write_tensor_file(path, &meta, &tensors)
}

pub(crate) fn load(path: &Path) -> Result<EncoderState> {
    let (meta, mut tensors) = read_tensor_file(path)?;
    let field = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Checkpoint(format!("{}: metadata lacks `{k}`", path.display())))
    };
    if field("format")? != FORMAT {
        return Err(Error::Checkpoint(format!(
            "{} is not an intentkit checkpoint",
            path.display()
        )));
    }
    let config: EncoderConfig = serde_json::from_str(field("config")?)?;
    config.validate()?;
    let tokenizer: Tokenizer = serde_json::from_str(field("tokenizer")?)?;
    let labels: Vec<String> = serde_json::from_str(field("labels")?)?;
    let has_mlm = field("mlm_head")? == "true";
    let cls = tensors.get("cls_head.weight").map(|t| t.shape[0]);

    let mut params = Parameters::zeros(&config, cls, has_mlm);
    fill_parameters(&mut params, &mut tensors, path)?;
    if !tensors.is_empty() {
        let mut extra: Vec<_> = tensors.keys().cloned().collect();
        extra.sort();
        return Err(Error::Checkpoint(format!(
            "{}: unexpected tensors {extra:?}",
            path.display()
        )));
    }
    if tokenizer.vocab_size() != config.vocab_size {
        return Err(Error::Checkpoint(
            "tokenizer and config vocab sizes differ".into(),
        ));
    }
    Ok(EncoderState {
        config,
        tokenizer,
        params,
        labels,
    })
}

/// Moves tensors out of `tensors` into `params`, checking shapes.
pub(crate) fn fill_parameters(
    params: &mut Parameters,
    tensors: &mut HashMap<String, RawTensor>,
    origin: &Path,
) -> Result<()> {
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, mut dst) in names.into_iter().zip(params.tensors_mut()) {
        let src = tensors.remove(&name).ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing tensor {name}", origin.display()))
        })?;
        if src.shape != dst.shape() {
            return Err(Error::Shape(format!(
                "{}: tensor {name} has shape {:?}, config expects {:?}",
                origin.display(),
                src.shape,
                dst.shape()
            )));
        }
        for (d, s) in dst.iter_mut().zip(src.data) {
            *d = s;
        }
    }
    Ok(())
}
