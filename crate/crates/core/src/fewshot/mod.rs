//! Episodic evaluation of a frozen encoder: fit a light classifier on the
//! support features of each C-way K-shot task and score its queries.

mod logistic;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_episode, Corpus, Episode, EpisodeSpec};
use crate::encoder::{EncoderState, FrozenEncoder};
use crate::error::{Error, Result};
use crate::math::mean_std;

/// Anything that maps texts to fixed-width feature rows.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Array2<f64>>;
}

impl FeatureExtractor for EncoderState {
    fn dim(&self) -> usize {
        self.config.hidden
    }

    fn embed(&self, texts: &[&str]) -> Result<Array2<f64>> {
        self.embed_texts(texts)
    }
}

impl FeatureExtractor for FrozenEncoder {
    fn dim(&self) -> usize {
        self.config.hidden
    }

    fn embed(&self, texts: &[&str]) -> Result<Array2<f64>> {
        self.embed_texts(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Multinomial, L2 penalty `(regularization/2)·‖W‖²` on summed CE.
    LogisticRegression { regularization: f64 },
    /// Euclidean nearest class mean; ties go to the lowest class index.
    NearestCentroid,
}

impl Default for ClassifierKind {
    fn default() -> Self {
        ClassifierKind::LogisticRegression {
            regularization: 1.0,
        }
    }
}

impl ClassifierKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierKind::LogisticRegression { regularization }
                if regularization.is_nan() || *regularization < 0.0 =>
            {
                Err(Error::Config(format!(
                    "logistic regularization must be >= 0, got {regularization}"
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::LogisticRegression { regularization } => {
                write!(f, "logistic(reg={regularization})")
            }
            ClassifierKind::NearestCentroid => write!(f, "nearest_centroid"),
        }
    }
}

/// A classifier fit on one episode's support set.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeClassifier {
    Centroid {
        centroids: Array2<f64>,
    },
    Logistic {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
}

impl EpisodeClassifier {
    pub fn dim(&self) -> usize {
        match self {
            EpisodeClassifier::Centroid { centroids } => centroids.ncols(),
            EpisodeClassifier::Logistic { weight, .. } => weight.ncols(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            EpisodeClassifier::Centroid { centroids } => centroids.nrows(),
            EpisodeClassifier::Logistic { weight, .. } => weight.nrows(),
        }
    }

    /// One class index per query row.
    pub fn predict(&self, queries: ArrayView2<f64>) -> Result<Vec<usize>> {
        if queries.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "query dim {} vs classifier dim {}",
                queries.ncols(),
                self.dim()
            )));
        }
        Ok(queries
            .rows()
            .into_iter()
            .map(|q| self.predict_one(q))
            .collect())
    }

    fn predict_one(&self, q: ArrayView1<f64>) -> usize {
        match self {
            EpisodeClassifier::Centroid { centroids } => {
                let mut best = (0, f64::INFINITY);
                for (c, row) in centroids.rows().into_iter().enumerate() {
                    let d: f64 = row
                        .iter()
                        .zip(q.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            }
            EpisodeClassifier::Logistic { weight, bias } => {
                let scores = weight.dot(&q) + bias;
                crate::math::argmax(scores.view())
            }
        }
    }
}

/// Fits on support rows `features` with class indices `labels` in
/// `0..n_classes`. Every class needs at least one row.
pub fn fit_episode_classifier(
    features: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
    kind: ClassifierKind,
) -> Result<EpisodeClassifier> {
    kind.validate()?;
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::Shape(format!("label {y} outside {n_classes} classes")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!("class {c} has no support examples")));
    }
    Ok(match kind {
        ClassifierKind::NearestCentroid => {
            let mut centroids = Array2::zeros((n_classes, features.ncols()));
            for (row, &y) in features.rows().into_iter().zip(labels) {
                let mut c = centroids.row_mut(y);
                c += &row;
            }
            for (mut c, &n) in centroids.rows_mut().into_iter().zip(&counts) {
                c /= n as f64;
            }
            EpisodeClassifier::Centroid { centroids }
        }
        ClassifierKind::LogisticRegression { regularization } => {
            let (weight, bias) = logistic::fit(
                features,
                labels,
                n_classes,
                regularization,
                Default::default(),
            );
            EpisodeClassifier::Logistic { weight, bias }
        }
    })
}

pub fn predict(classifier: &EpisodeClassifier, queries: ArrayView2<f64>) -> Result<Vec<usize>> {
    classifier.predict(queries)
}

/// Mean ± std of query accuracy over sampled episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_accuracy: f64,
    /// Population standard deviation over episodes.
    pub std_accuracy: f64,
    pub n_episodes: usize,
    pub spec: EpisodeSpec,
    pub classifier: ClassifierKind,
    pub per_episode: Vec<f64>,
}

impl EvalSummary {
    pub fn from_accuracies(
        per_episode: Vec<f64>,
        spec: EpisodeSpec,
        classifier: ClassifierKind,
    ) -> Self {
        let (mean, std) = mean_std(&per_episode);
        EvalSummary {
            mean_accuracy: mean,
            std_accuracy: std,
            n_episodes: per_episode.len(),
            spec,
            classifier,
            per_episode,
        }
    }

    /// `"82.4 ± 8.3"`: percentages with one decimal.
    pub fn cell(&self) -> String {
        format!(
            "{:.1} ± {:.1}",
            self.mean_accuracy * 100.0,
            self.std_accuracy * 100.0
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// L2-normalize features before fitting.
    pub normalize: bool,
}

/// Support/query features of one episode laid out for fitting.
fn episode_arrays(
    episode: &Episode,
    features: &Array2<f64>,
    row_of: &HashMap<usize, usize>,
) -> (Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>) {
    let gather = |groups: &[Vec<usize>]| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, members) in groups.iter().enumerate() {
            for &u in members {
                rows.push(row_of[&u]);
                labels.push(c);
            }
        }
        (features.select(Axis(0), &rows), labels)
    };
    let (sx, sy) = gather(&episode.support);
    let (qx, qy) = gather(&episode.query);
    (sx, sy, qx, qy)
}

pub fn evaluate<F: FeatureExtractor + ?Sized>(
    extractor: &F,
    corpus: &Corpus,
    spec: &EpisodeSpec,
    kind: ClassifierKind,
) -> Result<EvalSummary> {
    evaluate_with(extractor, corpus, spec, kind, EvalOptions::default())
}

/// Samples `spec.n_episodes` episodes, embeds every utterance they touch once,
/// and fits/scores each episode independently.
pub fn evaluate_with<F: FeatureExtractor + ?Sized>(
    extractor: &F,
    corpus: &Corpus,
    spec: &EpisodeSpec,
    kind: ClassifierKind,
    opts: EvalOptions,
) -> Result<EvalSummary> {
    kind.validate()?;
    let episodes: Vec<Episode> = (0..spec.n_episodes)
        .into_par_iter()
        .map(|i| sample_episode(corpus, spec, i))
        .collect::<Result<_>>()?;

    let needed: BTreeSet<usize> = episodes
        .iter()
        .flat_map(|e| e.support.iter().chain(&e.query).flatten().copied())
        .collect();
    let needed: Vec<usize> = needed.into_iter().collect();
    let texts: Vec<&str> = needed
        .iter()
        .map(|&i| corpus.utterances()[i].text.as_str())
        .collect();
    let mut features = extractor.embed(&texts)?;
    if features.nrows() != texts.len() || features.ncols() != extractor.dim() {
        return Err(Error::Shape(format!(
            "extractor returned {:?} for {} texts of dim {}",
            features.dim(),
            texts.len(),
            extractor.dim()
        )));
    }
    if opts.normalize {
        for mut row in features.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
    }
    let row_of: HashMap<usize, usize> = needed.iter().enumerate().map(|(r, &u)| (u, r)).collect();

    let per_episode: Vec<f64> = episodes
        .par_iter()
        .map(|e| {
            let (sx, sy, qx, qy) = episode_arrays(e, &features, &row_of);
            let clf = fit_episode_classifier(sx.view(), &sy, e.ways(), kind)?;
            let pred = clf.predict(qx.view())?;
            let correct = pred.iter().zip(&qy).filter(|(p, y)| p == y).count();
            Ok(correct as f64 / qy.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(EvalSummary::from_accuracies(per_episode, *spec, kind))
}
