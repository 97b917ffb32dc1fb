//! Independent oracles shared by the integration suites. Everything here is
//! deliberately written from scratch with naive loops so that agreement with
//! the library is evidence, not tautology.

use nrp::linalg::Matrix;
use nrp::nn::{Activation, Layer, Model};
use nrp::similarity::Metric;

/// Print one verdict line for a named criterion, then enforce it.
pub fn check(name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[{name}] {status}: {detail}");
    assert!(pass, "[{name}] FAIL: {detail}");
}

/// Central finite-difference gradient of `loss` at `params`.
pub fn finite_difference_gradient<F>(params: &[f64], h: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = loss(&work);
        work[i] = orig - h;
        let down = loss(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative gradient error, with unit floor on the denominator so
/// near-zero entries are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut m = a.as_slice().to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (m[q * n + q] - m[p * n + p]) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

fn oracle_distance(metric: Metric, u: &[f64], v: &[f64]) -> f64 {
    match metric {
        Metric::L2 => u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Metric::CosineDistance => {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            1.0 - dot / (nu * nv)
        }
    }
}

/// Quadratic kNN oracle with the same tie rules the library documents:
/// distance ties prefer the lower training index, vote ties the lower class.
pub fn knn_oracle(
    train: &Matrix,
    train_labels: &[usize],
    queries: &Matrix,
    k: usize,
    metric: Metric,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(queries.rows());
    for q in 0..queries.rows() {
        let mut scored: Vec<(f64, usize)> = (0..train.rows())
            .map(|t| (oracle_distance(metric, queries.row(q), train.row(t)), t))
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut counts = std::collections::BTreeMap::new();
        for &(_, t) in scored.iter().take(k) {
            *counts.entry(train_labels[t]).or_insert(0usize) += 1;
        }
        let mut best_class = usize::MAX;
        let mut best_votes = 0usize;
        for (&cls, &n) in &counts {
            if n > best_votes {
                best_votes = n;
                best_class = cls;
            }
        }
        out.push(best_class);
    }
    out
}

/// Brute-force Tomek filter oracle: standardize columns, find each row's
/// nearest neighbor (squared L2, lowest index on ties), and drop the
/// majority-class member of every mutual opposite-label pair. Returns the
/// kept row indices.
pub fn tomek_oracle(features: &Matrix, binary_labels: &[u8]) -> Vec<usize> {
    let (n, d) = features.shape();
    let mut z = vec![0.0; n * d];
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64;
        let var: f64 = (0..n)
            .map(|i| (features.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            z[i * d + j] = if std > 0.0 {
                (features.get(i, j) - mean) / std
            } else {
                0.0
            };
        }
    }
    let mut nn = vec![usize::MAX; n];
    for i in 0..n {
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let dist: f64 = (0..d)
                .map(|c| (z[i * d + c] - z[j * d + c]).powi(2))
                .sum();
            if dist < best_d {
                best_d = dist;
                nn[i] = j;
            }
        }
    }
    let ones = binary_labels.iter().filter(|&&b| b == 1).count();
    let majority: u8 = if ones * 2 > n { 1 } else { 0 };
    let mut remove = vec![false; n];
    for i in 0..n {
        let j = nn[i];
        if j > i && nn[j] == i && binary_labels[i] != binary_labels[j] {
            if binary_labels[i] == majority {
                remove[i] = true;
            } else {
                remove[j] = true;
            }
        }
    }
    (0..n).filter(|&i| !remove[i]).collect()
}

/// Straight-line inference reimplementation: plain loops over the layer
/// list, no shared kernels. Returns the full forward output.
pub fn naive_forward(model: &Model, x: &Matrix) -> Matrix {
    let (n, _) = x.shape();
    let mut cur: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    for layer in &model.layers {
        match layer {
            Layer::Dense(d) => {
                let (in_w, out_w) = (d.in_width(), d.out_width());
                cur = cur
                    .iter()
                    .map(|row| {
                        (0..out_w)
                            .map(|j| {
                                let mut acc = d.bias[j];
                                for i in 0..in_w {
                                    acc += row[i] * d.weights.get(i, j);
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect();
            }
            Layer::Activation(Activation::Tanh) => {
                for row in cur.iter_mut() {
                    for v in row.iter_mut() {
                        *v = v.tanh();
                    }
                }
            }
            Layer::Activation(Activation::Identity) => {}
            Layer::BatchNorm(bn) => {
                for row in cur.iter_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let xhat = (*v - bn.running_mean[j])
                            / (bn.running_var[j] + bn.epsilon).sqrt();
                        *v = bn.gamma[j] * xhat + bn.beta[j];
                    }
                }
            }
            Layer::ModifiedBatchNorm(bn) => {
                for row in cur.iter_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let xhat = (*v - bn.running_mean[j])
                            / (bn.running_var[j] + bn.epsilon).sqrt();
                        *v = bn.gamma * xhat;
                    }
                }
            }
            // Inference-time dropout is the identity.
            Layer::Dropout(_) => {}
        }
    }
    Matrix::from_rows(&cur).unwrap()
}
