//! Shape descriptors, similarity measures, ranking and retrieval metrics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{LearnError, Network, NetworkParams, PreparedSample};

/// Default descriptor length.
pub const DEFAULT_DIM: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("reducer has not been fitted")]
    Unfitted,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("cosine similarity is undefined for a zero-norm descriptor")]
    ZeroNorm,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("descriptor `{0}` has no label")]
    MissingLabel(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("non-finite descriptor `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub id: String,
    pub label: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Cosine,
    Euclidean,
    Kl,
    Bhattacharyya,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Cosine, Metric::Euclidean, Metric::Kl, Metric::Bhattacharyya];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Kl => "kl",
            Metric::Bhattacharyya => "bhattacharyya",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RetrievalError::UnknownMetric(s.into()))
    }
}

/// Linear reduction of concatenated features to a fixed length, fitted by PCA
/// on a gallery.
///
/// When the feature length does not exceed the target length the reducer is
/// the identity followed by zero padding. Otherwise it keeps the leading
/// principal directions (at most `gallery − 1` of them are informative) and
/// pads the rest with zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReducer {
    pub dim: usize,
    pub fit: Option<PcaFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    pub input_dim: usize,
    pub mean: Vec<f64>,
    /// Unit-norm principal directions, largest variance first; empty for the
    /// identity case.
    pub components: Vec<Vec<f64>>,
    pub identity: bool,
}

impl PcaReducer {
    pub fn unfitted(dim: usize) -> Self {
        Self { dim, fit: None }
    }

    pub fn fit(features: &[Vec<f64>], dim: usize) -> Result<Self, RetrievalError> {
        let first = features.first().ok_or(RetrievalError::EmptyGallery)?;
        let f = first.len();
        if let Some(bad) = features.iter().find(|v| v.len() != f) {
            return Err(RetrievalError::Dimension(f, bad.len()));
        }
        if f <= dim {
            return Ok(Self {
                dim,
                fit: Some(PcaFit {
                    input_dim: f,
                    mean: Vec::new(),
                    components: Vec::new(),
                    identity: true,
                }),
            });
        }
        let g = features.len();
        let mut mean = vec![0.0; f];
        for v in features {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / g as f64;
            }
        }
        let centered: Vec<Vec<f64>> = features.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
        let gram = DMatrix::from_fn(g, g, |i, j| dot(&centered[i], &centered[j]));
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
        let tol = top * 1e-12 * g as f64;
        let mut components = Vec::new();
        for &k in order.iter().take(dim) {
            let lambda = eig.eigenvalues[k];
            if lambda <= tol || lambda <= 0.0 {
                break;
            }
            let u = eig.eigenvectors.column(k);
            let mut v = vec![0.0; f];
            for (i, c) in centered.iter().enumerate() {
                for (vj, x) in v.iter_mut().zip(c) {
                    *vj += u[i] * x;
                }
            }
            let norm = dot(&v, &v).sqrt();
            // Sign convention: the largest-magnitude entry is positive.
            let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            let s = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
            for x in &mut v {
                *x *= s;
            }
            components.push(v);
        }
        Ok(Self {
            dim,
            fit: Some(PcaFit {
                input_dim: f,
                mean,
                components,
                identity: false,
            }),
        })
    }

    pub fn is_fitted(&self) -> bool {
        self.fit.is_some()
    }

    pub fn reduce(&self, features: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        let fit = self.fit.as_ref().ok_or(RetrievalError::Unfitted)?;
        if features.len() != fit.input_dim {
            return Err(RetrievalError::Dimension(fit.input_dim, features.len()));
        }
        let mut out = vec![0.0; self.dim];
        if fit.identity {
            out[..features.len()].copy_from_slice(features);
        } else {
            let centered: Vec<f64> = features.iter().zip(&fit.mean).map(|(x, m)| x - m).collect();
            for (o, c) in out.iter_mut().zip(&fit.components) {
                *o = dot(&centered, c);
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer-2 features of a prepared sample, reduced to a descriptor.
pub fn descriptor(
    network: &Network,
    params: &NetworkParams,
    sample: &PreparedSample,
    reducer: &PcaReducer,
    id: impl Into<String>,
) -> Result<Descriptor, RetrievalError> {
    if !reducer.is_fitted() {
        return Err(RetrievalError::Unfitted);
    }
    let features = network.features(params, sample)?;
    let id = id.into();
    let values = reducer.reduce(&features)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RetrievalError::NonFinite(id));
    }
    Ok(Descriptor {
        id,
        label: Some(sample.label),
        values,
    })
}

/// Descriptors for a batch of samples under an already fitted reducer.
pub fn describe_batch(
    network: &Network,
    params: &NetworkParams,
    samples: &[PreparedSample],
    ids: &[String],
    reducer: &PcaReducer,
) -> Result<Vec<Descriptor>, RetrievalError> {
    if !reducer.is_fitted() {
        return Err(RetrievalError::Unfitted);
    }
    let features = network.features_batch(params, samples)?;
    reduce_all(&features, samples, ids, reducer)
}

/// Fits the reducer on the gallery's features and returns it with the
/// gallery descriptors.
pub fn build_gallery(
    network: &Network,
    params: &NetworkParams,
    samples: &[PreparedSample],
    ids: &[String],
    dim: usize,
) -> Result<(PcaReducer, Vec<Descriptor>), RetrievalError> {
    let features = network.features_batch(params, samples)?;
    let reducer = PcaReducer::fit(&features, dim)?;
    let descriptors = reduce_all(&features, samples, ids, &reducer)?;
    Ok((reducer, descriptors))
}

fn reduce_all(features: &[Vec<f64>], samples: &[PreparedSample], ids: &[String], reducer: &PcaReducer) -> Result<Vec<Descriptor>, RetrievalError> {
    if ids.len() != samples.len() {
        return Err(RetrievalError::Dimension(samples.len(), ids.len()));
    }
    features
        .iter()
        .zip(samples)
        .zip(ids)
        .map(|((f, s), id)| {
            let values = reducer.reduce(f)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::NonFinite(id.clone()));
            }
            Ok(Descriptor {
                id: id.clone(),
                label: Some(s.label),
                values,
            })
        })
        .collect()
}

/// The same descriptors relabelled by position, so each entry is relevant
/// only to itself.
pub fn identity_labelled(descriptors: &[Descriptor]) -> Vec<Descriptor> {
    descriptors
        .iter()
        .enumerate()
        .map(|(i, d)| Descriptor {
            label: Some(i),
            ..d.clone()
        })
        .collect()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Similarity score, larger meaning more similar under every metric.
pub fn similarity(a: &Descriptor, b: &Descriptor, metric: Metric) -> Result<f64, RetrievalError> {
    similarity_values(&a.values, &b.values, metric)
}

pub fn similarity_values(a: &[f64], b: &[f64], metric: Metric) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::Dimension(a.len(), b.len()));
    }
    Ok(match metric {
        Metric::Cosine => {
            let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
            if na == 0.0 || nb == 0.0 {
                return Err(RetrievalError::ZeroNorm);
            }
            (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
        }
        Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Kl => {
            let (lp, lq) = (log_softmax(a), log_softmax(b));
            -lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum::<f64>()
        }
        Metric::Bhattacharyya => {
            let (lp, lq) = (log_softmax(a), log_softmax(b));
            let bc: f64 = lp.iter().zip(&lq).map(|(p, q)| (0.5 * (p + q)).exp()).sum();
            bc.min(1.0).ln()
        }
    })
}

/// Gallery indices with scores, best first; ties keep gallery order.
pub fn rank(query: &Descriptor, gallery: &[Descriptor], metric: Metric) -> Result<Vec<(usize, f64)>, RetrievalError> {
    if gallery.is_empty() {
        return Err(RetrievalError::EmptyGallery);
    }
    let mut scored = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| similarity(query, g, metric).map(|s| (i, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: Metric,
    pub nn_accuracy: f64,
    pub map: f64,
    /// Queries that had at least one relevant gallery item.
    pub scored_queries: usize,
}

/// Nearest-neighbour accuracy and mean average precision.
///
/// With `exclude_self`, gallery entries sharing the query's id are removed
/// from its ranking. Queries without any relevant entry are skipped.
pub fn evaluate(queries: &[Descriptor], gallery: &[Descriptor], metric: Metric, exclude_self: bool) -> Result<Evaluation, RetrievalError> {
    let label = |d: &Descriptor| d.label.ok_or_else(|| RetrievalError::MissingLabel(d.id.clone()));
    let (mut hits, mut ap_sum, mut scored) = (0usize, 0.0, 0usize);
    for q in queries {
        let ql = label(q)?;
        let ranking = rank(q, gallery, metric)?;
        let mut relevant_seen = 0usize;
        let mut precision_sum = 0.0;
        let mut position = 0usize;
        let mut first = None;
        for (i, _) in ranking {
            let g = &gallery[i];
            if exclude_self && g.id == q.id {
                continue;
            }
            position += 1;
            let rel = label(g)? == ql;
            first.get_or_insert(rel);
            if rel {
                relevant_seen += 1;
                precision_sum += relevant_seen as f64 / position as f64;
            }
        }
        if relevant_seen == 0 {
            continue;
        }
        scored += 1;
        hits += usize::from(first == Some(true));
        ap_sum += precision_sum / relevant_seen as f64;
    }
    let denom = scored.max(1) as f64;
    Ok(Evaluation {
        metric,
        nn_accuracy: hits as f64 / denom,
        map: ap_sum / denom,
        scored_queries: scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(id: &str, label: usize, values: Vec<f64>) -> Descriptor {
        Descriptor {
            id: id.into(),
            label: Some(label),
            values,
        }
    }

    #[test]
    fn cosine_extremes() {
        let a = d("a", 0, vec![1.0, -2.0, 0.5]);
        let neg = d("b", 0, a.values.iter().map(|v| -v).collect());
        assert!((similarity(&a, &a, Metric::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert!((similarity(&a, &neg, Metric::Cosine).unwrap() + 1.0).abs() < 1e-15);
        let z = d("z", 0, vec![0.0; 3]);
        assert_eq!(similarity(&a, &z, Metric::Cosine), Err(RetrievalError::ZeroNorm));
    }

    #[test]
    fn divergences_vanish_on_identical_inputs() {
        let a = d("a", 0, vec![0.3, 1.2, -0.7, 2.0]);
        assert!(similarity(&a, &a, Metric::Kl).unwrap().abs() < 1e-15);
        assert!(similarity(&a, &a, Metric::Bhattacharyya).unwrap().abs() < 1e-15);
        assert_eq!(similarity(&a, &a, Metric::Euclidean).unwrap(), 0.0);
        let b = d("b", 0, vec![1.0, 0.0, 0.0, 0.0]);
        for m in Metric::ALL {
            assert!(similarity(&a, &b, m).unwrap() <= similarity(&a, &a, m).unwrap());
        }
    }

    #[test]
    fn one_hot_gallery_retrieves_matches() {
        let gallery: Vec<Descriptor> = (0..5)
            .map(|i| {
                let mut v = vec![0.0; 5];
                v[i] = 1.0;
                d(&format!("g{i}"), i, v)
            })
            .collect();
        for (i, q) in gallery.iter().enumerate() {
            let r = rank(q, &gallery, Metric::Cosine).unwrap();
            assert_eq!(r[0], (i, 1.0));
        }
        let e = evaluate(&gallery, &gallery, Metric::Cosine, false).unwrap();
        assert_eq!((e.nn_accuracy, e.map), (1.0, 1.0));
    }

    #[test]
    fn ties_keep_gallery_order() {
        let q = d("q", 0, vec![1.0, 0.0]);
        let gallery = vec![d("a", 0, vec![0.0, 1.0]), d("b", 0, vec![1.0, 0.0]), d("c", 0, vec![0.0, 2.0])];
        let r = rank(&q, &gallery, Metric::Cosine).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn map_with_self_exclusion() {
        let gallery = vec![
            d("a", 0, vec![1.0, 0.0]),
            d("b", 0, vec![0.9, 0.1]),
            d("c", 1, vec![0.0, 1.0]),
            d("e", 1, vec![0.6, 0.4]),
        ];
        let e = evaluate(&gallery, &gallery, Metric::Cosine, true).unwrap();
        // a: [b] first → AP 1. b: [a] first → 1. c: [e] → 1. e: [b, a, c] → 1/3.
        assert!((e.map - (1.0 + 1.0 + 1.0 + 1.0 / 3.0) / 4.0).abs() < 1e-12);
        assert_eq!(e.nn_accuracy, 0.75);
    }

    #[test]
    fn pca_identity_and_projection() {
        let feats = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let r = PcaReducer::fit(&feats, 4).unwrap();
        assert_eq!(r.reduce(&feats[0]).unwrap(), vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(PcaReducer::unfitted(4).reduce(&feats[0]), Err(RetrievalError::Unfitted));

        let feats: Vec<Vec<f64>> = (0..6).map(|i| (0..10).map(|j| ((i * 3 + j * 7) % 11) as f64).collect()).collect();
        let r = PcaReducer::fit(&feats, 3).unwrap();
        let fit = r.fit.as_ref().unwrap();
        assert_eq!(fit.components.len(), 3);
        for (a, ca) in fit.components.iter().enumerate() {
            for (b, cb) in fit.components.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot(ca, cb) - want).abs() < 1e-10);
            }
        }
        assert_eq!(r.reduce(&feats[2]).unwrap().len(), 3);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("manhattan".parse::<Metric>().is_err());
    }
}
