use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fewshot::FeatureExtractor;
use crate::seeding::{stream_rng, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub rows: usize,
    pub dim: usize,
    /// Sampled classes with the number of rows actually written for each.
    pub classes: Vec<(String, usize)>,
}

/// Pooled features of `per_class` utterances from each of `n_classes`
/// randomly chosen classes. Classes with fewer utterances contribute all of
/// them. Writes a whitespace-separated matrix (one row per utterance) and a
/// tab-separated index `row, label, corpus_index, text` with a header line.
#[allow(clippy::too_many_arguments)]
pub fn export_embeddings<F: FeatureExtractor + ?Sized>(
    encoder: &F,
    corpus: &Corpus,
    n_classes: usize,
    per_class: usize,
    seed: u64,
    matrix_path: &Path,
    labels_path: &Path,
) -> Result<ExportReport> {
    if !corpus.is_labeled() {
        return Err(Error::Corpus(format!("{:?} is unlabeled", corpus.name())));
    }
    if corpus.n_labels() < n_classes {
        return Err(Error::Sampling(format!(
            "{:?} has {} classes, {n_classes} requested",
            corpus.name(),
            corpus.n_labels()
        )));
    }
    let mut rng = stream_rng(seed, Purpose::Export, 0);
    let mut classes = index::sample(&mut rng, corpus.n_labels(), n_classes).into_vec();
    classes.sort_unstable();

    let mut rows: Vec<(usize, usize)> = Vec::new();
    let mut counts = Vec::new();
    for &c in &classes {
        let members = &corpus.indices_by_label()[c];
        let take = per_class.min(members.len());
        if take < per_class {
            log::warn!(
                "class {:?} has {} utterances, fewer than {per_class}",
                corpus.label_vocab()[c],
                members.len()
            );
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        rows.extend(picked.into_iter().map(|u| (c, u)));
        counts.push((corpus.label_vocab()[c].clone(), take));
    }

    let texts: Vec<&str> = rows
        .iter()
        .map(|&(_, u)| corpus.utterances()[u].text.as_str())
        .collect();
    let features = encoder.embed(&texts)?;

    let create = |p: &Path| {
        std::fs::File::create(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    let mut m = create(matrix_path)?;
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(m, "{}", line.join(" ")).map_err(|e| Error::io(matrix_path, e))?;
    }
    m.flush().map_err(|e| Error::io(matrix_path, e))?;

    let mut l = create(labels_path)?;
    let io = |e| Error::io(labels_path, e);
    writeln!(l, "row\tlabel\tcorpus_index\ttext").map_err(io)?;
    for (r, &(c, u)) in rows.iter().enumerate() {
        let text = corpus.utterances()[u].text.replace(['\t', '\n', '\r'], " ");
        writeln!(l, "{r}\t{}\t{u}\t{text}", corpus.label_vocab()[c]).map_err(io)?;
    }
    l.flush().map_err(io)?;

    Ok(ExportReport {
        rows: rows.len(),
        dim: features.ncols(),
        classes: counts,
    })
}
