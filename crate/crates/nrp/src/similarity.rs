//! Embedding construction and the kNN hidden-class evaluator.
//!
//! Two representations: the last hidden layer of a trained model (forward
//! pass only, L2 metric) and per-sample parameter gradients (cosine metric,
//! the prior gradient-similarity baseline).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    LastHidden,
    Gradient,
    SourceSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedPoint {
    PreActivation,
    PostActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    /// `1 - cosine_similarity`.
    CosineDistance,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" | "cosine_distance" => Ok(Metric::CosineDistance),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric {other:?} (expected l2 or cosine)"
            ))),
        }
    }
}

/// A set of embedded inputs: one row per input, `dim()` columns.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub vectors: Matrix,
    pub source: SourceTag,
    /// Content hash of the model that produced these vectors, if any.
    pub model_fingerprint: Option<String>,
}

impl EmbeddingSet {
    pub fn new(vectors: Matrix, source: SourceTag) -> Result<Self> {
        if vectors.cols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension is 0".into()));
        }
        if !vectors.is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite embedding values".into(),
            ));
        }
        Ok(EmbeddingSet {
            vectors,
            source,
            model_fingerprint: None,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Which metric this representation is meant to be queried with.
    pub fn recommended_metric(&self) -> Metric {
        match self.source {
            SourceTag::Gradient => Metric::CosineDistance,
            _ => Metric::L2,
        }
    }
}

/// Last-hidden-layer embedding (inference mode, deterministic).
/// `PreActivation` (the default elsewhere) takes the raw output of the last
/// hidden dense layer; `PostActivation` takes the value fed into the output
/// layer.
pub fn embed_last_hidden(model: &Model, x: &Matrix, point: EmbedPoint) -> Result<EmbeddingSet> {
    let stop = match point {
        EmbedPoint::PreActivation => model.last_hidden + 1,
        EmbedPoint::PostActivation => model.layers.len() - 1,
    };
    let vectors = model.forward_infer_until(x, stop)?;
    EmbeddingSet::new(vectors, SourceTag::LastHidden)
}

/// Per-sample flat parameter gradients of the scalar logit, one row per
/// input, in canonical parameter order. Rows are computed in parallel.
pub fn embed_gradients(model: &Model, x: &Matrix) -> Result<EmbeddingSet> {
    if x.cols() != model.input_width() {
        return Err(Error::ShapeMismatch {
            op: "embed_gradients",
            left: x.shape(),
            right: (model.input_width(), 0),
        });
    }
    let n = x.rows();
    let rows: Vec<Result<Vec<f64>>> =
        crate::map_indexed(n, |i| model.per_sample_gradient(&x.row_matrix(i)));
    let dim = model.param_count();
    let mut data = Vec::with_capacity(n * dim);
    for row in rows {
        data.extend_from_slice(&row?);
    }
    EmbeddingSet::new(Matrix::from_vec(n, dim, data)?, SourceTag::Gradient)
}

/// Cosine similarity in [-1, 1]. Errors on zero vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

fn distance(metric: Metric, u: &[f64], v: &[f64]) -> Result<f64> {
    match metric {
        Metric::L2 => Ok(u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        Metric::CosineDistance => Ok(1.0 - cosine_similarity(u, v)?),
    }
}

/// Neighbors of one query: indices into the training set, ascending distance.
#[derive(Debug, Clone)]
pub struct NeighborResult {
    pub query: usize,
    pub neighbors: Vec<usize>,
    pub distances: Vec<f64>,
    pub predicted: usize,
}

/// Brute-force exact kNN with majority vote. Ties are deterministic: exact
/// distance ties prefer the lower training-row index, vote ties the lower
/// class index. Queries are evaluated in parallel.
pub fn knn_predict(
    train: &EmbeddingSet,
    train_labels: &[usize],
    queries: &EmbeddingSet,
    k: usize,
    metric: Metric,
) -> Result<Vec<NeighborResult>> {
    if train.dim() != queries.dim() {
        return Err(Error::ShapeMismatch {
            op: "knn_predict",
            left: (train.len(), train.dim()),
            right: (queries.len(), queries.dim()),
        });
    }
    if train_labels.len() != train.len() {
        return Err(Error::InvalidArgument(format!(
            "{} training rows but {} labels",
            train.len(),
            train_labels.len()
        )));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} invalid for {} training rows",
            train.len()
        )));
    }
    let results: Vec<Result<NeighborResult>> = crate::map_indexed(queries.len(), |q| {
        let qrow = queries.vectors.row(q);
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(train.len());
        for t in 0..train.len() {
            scored.push((distance(metric, qrow, train.vectors.row(t))?, t));
        }
        scored.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        scored.truncate(k);
        let mut votes: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
        for &(_, t) in &scored {
            *votes.entry(train_labels[t]).or_insert(0) += 1;
        }
        // BTreeMap iteration is ascending by class, so max_by on strict
        // greater-than keeps the lowest class on ties.
        let predicted = votes
            .iter()
            .fold((usize::MAX, 0usize), |best, (&cls, &n)| {
                if n > best.1 {
                    (cls, n)
                } else {
                    best
                }
            })
            .0;
        Ok(NeighborResult {
            query: q,
            neighbors: scored.iter().map(|&(_, t)| t).collect(),
            distances: scored.iter().map(|&(d, _)| d).collect(),
            predicted,
        })
    });
    results.into_iter().collect()
}

/// Convenience: predicted labels only.
pub fn knn_predict_labels(
    train: &EmbeddingSet,
    train_labels: &[usize],
    queries: &EmbeddingSet,
    k: usize,
    metric: Metric,
) -> Result<Vec<usize>> {
    Ok(knn_predict(train, train_labels, queries, k, metric)?
        .into_iter()
        .map(|r| r.predicted)
        .collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(
            "accuracy needs equal-length non-empty inputs".into(),
        ));
    }
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Micro-averaged F1 over all classes. For single-label multi-class
/// prediction this equals accuracy; both are reported for table parity.
pub fn f1_micro(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(
            "f1_micro needs equal-length non-empty inputs".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let classes: std::collections::BTreeSet<usize> =
        pred.iter().chain(truth).copied().collect();
    for &c in &classes {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64))
}
