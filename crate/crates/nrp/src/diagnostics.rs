//! Checks that the representation behaves like a random projection:
//! Johnson-Lindenstrauss sizing and distortion, neuron-correlation reports,
//! and orthogonality residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, pearson_correlation_matrix, semi_orthogonal_init, Matrix, RngState};
use crate::nn::{Layer, Model};
use crate::similarity::EmbeddingSet;

/// Inputs to the JL lower bound `k >= C * ln(n) / eps^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JlBoundQuery {
    pub n: usize,
    pub eps: f64,
    pub c: f64,
}

/// Minimum embedding width by the JL bound (natural log) and its ceiling.
pub fn jl_min_width(q: &JlBoundQuery) -> Result<(f64, usize)> {
    if q.n < 2 {
        return Err(Error::InvalidArgument("jl_min_width requires n >= 2".into()));
    }
    if !(0.0..1.0).contains(&q.eps) || q.eps == 0.0 {
        return Err(Error::InvalidArgument("eps must be in (0, 1)".into()));
    }
    if q.c <= 0.0 {
        return Err(Error::InvalidArgument("C must be > 0".into()));
    }
    let bound = q.c * (q.n as f64).ln() / (q.eps * q.eps);
    Ok((bound, bound.ceil() as usize))
}

/// Pairwise neuron correlations of an embedding set plus a histogram over
/// [-1, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Upper-triangle correlations, row-major pair order; k*(k-1)/2 values.
    pub correlations: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub mean_abs: f64,
    pub max_abs: f64,
}

impl CorrelationReport {
    /// CSV rows `bin_left,bin_right,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, count) in self.bin_counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                count
            ));
        }
        out
    }
}

/// Default histogram bin count, sized to the granularity of a correlation
/// distribution plot.
pub const DEFAULT_CORRELATION_BINS: usize = 81;

pub fn correlation_report(embeddings: &EmbeddingSet, bins: usize) -> Result<CorrelationReport> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let corr = pearson_correlation_matrix(&embeddings.vectors)?;
    let k = corr.rows();
    let mut correlations = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            correlations.push(corr.get(i, j));
        }
    }
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| -1.0 + 2.0 * i as f64 / bins as f64)
        .collect();
    let mut bin_counts = vec![0usize; bins];
    for &c in &correlations {
        let idx = (((c + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        bin_counts[idx] += 1;
    }
    let mean_abs = if correlations.is_empty() {
        0.0
    } else {
        correlations.iter().map(|c| c.abs()).sum::<f64>() / correlations.len() as f64
    };
    let max_abs = correlations.iter().map(|c| c.abs()).fold(0.0, f64::max);
    Ok(CorrelationReport {
        correlations,
        bin_edges,
        bin_counts,
        mean_abs,
        max_abs,
    })
}

/// Frobenius residual `||W^T W - I||_F` for every dense layer, model order.
pub fn orthogonality_residual(model: &Model) -> Vec<f64> {
    model
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Dense(d) => {
                let gram = matmul(&d.weights.transpose(), &d.weights).ok()?;
                let resid = gram.sub(&Matrix::identity(d.weights.cols())).ok()?;
                Some(resid.frobenius_norm())
            }
            _ => None,
        })
        .collect()
}

/// Empirical JL distortion check. For each trial draws a random
/// semi-orthogonal `d x k` map scaled by `sqrt(d/k)` (isometric in
/// expectation) and returns the fraction of point pairs violating the
/// `(1 +- eps)` distance band at `eps = sqrt(ln(n) / k)`. Zero-distance
/// pairs are excluded. Trials run in parallel on child seeds.
pub fn jl_distortion_check(
    x: &Matrix,
    k: usize,
    trials: usize,
    rng: &RngState,
) -> Result<Vec<f64>> {
    let (n, d) = x.shape();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "projection width {k} must be in 1..={d}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    let eps = ((n as f64).ln() / k as f64).sqrt();
    let scale = (d as f64 / k as f64).sqrt();

    // Source-space pairwise distances, computed once.
    let mut src_dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            src_dist[i * n + j] = dist;
        }
    }

    let fractions: Vec<Result<f64>> = crate::map_indexed(trials, |t| {
        let mut trial_rng = rng.child(t as u64);
        let w = semi_orthogonal_init(d, k, &mut trial_rng)?.scale(scale);
        let projected = matmul(x, &w)?;
        let mut violations = 0usize;
        let mut counted = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let orig = src_dist[i * n + j];
                if orig == 0.0 {
                    continue;
                }
                counted += 1;
                let proj: f64 = projected
                    .row(i)
                    .iter()
                    .zip(projected.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if proj < (1.0 - eps) * orig || proj > (1.0 + eps) * orig {
                    violations += 1;
                }
            }
        }
        Ok(if counted == 0 {
            0.0
        } else {
            violations as f64 / counted as f64
        })
    });
    fractions.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, Variant};
    use crate::similarity::SourceTag;

    #[test]
    fn jl_bound_paper_arithmetic() {
        let (b, ceil) = jl_min_width(&JlBoundQuery {
            n: 60_000,
            eps: 0.6,
            c: 1.0,
        })
        .unwrap();
        assert!((b - 30.6).abs() < 0.1, "bound {b}");
        assert_eq!(ceil, 31);
        let (b2, ceil2) = jl_min_width(&JlBoundQuery {
            n: 75_132,
            eps: 0.9,
            c: 1.0,
        })
        .unwrap();
        assert!((b2 - 13.86).abs() < 0.1, "bound {b2}");
        assert_eq!(ceil2, 14);
    }

    #[test]
    fn jl_bound_eps_scaling() {
        let q = JlBoundQuery {
            n: 1000,
            eps: 0.5,
            c: 1.0,
        };
        let (b, _) = jl_min_width(&q).unwrap();
        let (b2, _) = jl_min_width(&JlBoundQuery {
            eps: q.eps / std::f64::consts::SQRT_2,
            ..q
        })
        .unwrap();
        assert!((b2 - 2.0 * b).abs() < 1e-9);
    }

    #[test]
    fn jl_bound_monotonicity() {
        let base = jl_min_width(&JlBoundQuery {
            n: 500,
            eps: 0.5,
            c: 1.0,
        })
        .unwrap()
        .0;
        let more_points = jl_min_width(&JlBoundQuery {
            n: 5000,
            eps: 0.5,
            c: 1.0,
        })
        .unwrap()
        .0;
        let looser_eps = jl_min_width(&JlBoundQuery {
            n: 500,
            eps: 0.8,
            c: 1.0,
        })
        .unwrap()
        .0;
        assert!(more_points > base);
        assert!(looser_eps < base);
    }

    #[test]
    fn correlation_report_identical_columns() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, 5.0, 5.0]).unwrap();
        let emb = EmbeddingSet::new(m, SourceTag::SourceSpace).unwrap();
        let report = correlation_report(&emb, 10).unwrap();
        assert_eq!(report.max_abs, 1.0);
        assert_eq!(report.correlations.len(), 1);
    }

    #[test]
    fn correlation_report_isotropic_gaussian() {
        let mut rng = RngState::new(6);
        let m = rng.gaussian_matrix(10_000, 32);
        let emb = EmbeddingSet::new(m, SourceTag::SourceSpace).unwrap();
        let report = correlation_report(&emb, DEFAULT_CORRELATION_BINS).unwrap();
        assert_eq!(report.correlations.len(), 496);
        assert!(report.mean_abs < 0.05, "mean |corr| {}", report.mean_abs);
    }

    #[test]
    fn correlation_report_affine_invariant() {
        let mut rng = RngState::new(12);
        let m = rng.gaussian_matrix(500, 4);
        let emb = EmbeddingSet::new(m.clone(), SourceTag::SourceSpace).unwrap();
        let r1 = correlation_report(&emb, 20).unwrap();
        let mut scaled = m;
        for row in 0..scaled.rows() {
            for col in 0..scaled.cols() {
                let v = scaled.get(row, col);
                scaled.set(row, col, 3.5 * v + (col as f64 + 1.0));
            }
        }
        let emb2 = EmbeddingSet::new(scaled, SourceTag::SourceSpace).unwrap();
        let r2 = correlation_report(&emb2, 20).unwrap();
        for (a, b) in r1.correlations.iter().zip(&r2.correlations) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_fresh_orthogonal_near_zero() {
        let mut rng = RngState::new(3);
        let model =
            Model::new(Variant::C, &ModelConfig::new(16, vec![12, 8]), &mut rng).unwrap();
        let residuals = orthogonality_residual(&model);
        assert_eq!(residuals.len(), 3);
        for r in residuals {
            assert!(r < 1e-10, "residual {r}");
        }
    }

    #[test]
    fn residual_scaled_identity() {
        use crate::nn::{DenseLayer, Layer};
        let model = Model::from_layers(
            vec![
                Layer::Dense(DenseLayer {
                    weights: Matrix::identity(2).scale(2.0),
                    bias: vec![0.0; 2],
                }),
                Layer::Dense(DenseLayer {
                    weights: Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap(),
                    bias: vec![0.0],
                }),
            ],
            Variant::A,
            vec![],
            0,
        )
        .unwrap();
        let residuals = orthogonality_residual(&model);
        assert!((residuals[0] - 3.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn residual_zero_iff_orthonormal() {
        let mut rng = RngState::new(4);
        let w = semi_orthogonal_init(10, 6, &mut rng).unwrap();
        let gram = matmul(&w.transpose(), &w).unwrap();
        let resid = gram.sub(&Matrix::identity(6)).unwrap().frobenius_norm();
        assert!(resid < 1e-10);
        let w2 = w.scale(1.001);
        let gram2 = matmul(&w2.transpose(), &w2).unwrap();
        let resid2 = gram2.sub(&Matrix::identity(6)).unwrap().frobenius_norm();
        assert!(resid2 > 1e-10);
    }

    #[test]
    fn square_projection_is_isometry() {
        let mut rng = RngState::new(5);
        let x = rng.gaussian_matrix(20, 16);
        let fractions = jl_distortion_check(&x, 16, 3, &RngState::new(7)).unwrap();
        for f in fractions {
            assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn duplicated_points_excluded() {
        let mut base = RngState::new(8);
        let row = base.gaussian_matrix(1, 8);
        let mut data = row.as_slice().to_vec();
        data.extend_from_slice(row.as_slice());
        let x = Matrix::from_vec(2, 8, data).unwrap();
        // Only pair has zero distance; fraction must be 0, not NaN.
        let fractions = jl_distortion_check(&x, 4, 2, &RngState::new(9)).unwrap();
        for f in fractions {
            assert_eq!(f, 0.0);
        }
    }
}
