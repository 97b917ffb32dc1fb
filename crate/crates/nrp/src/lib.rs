//! Input-similarity toolkit built around a binary classifier whose last hidden
//! layer is engineered to behave like a random orthogonal projection.
//!
//! The pipeline: train a feed-forward network (variants A/B/C differing in
//! regularization) on a binary task obtained by grouping fine-grained labels,
//! then embed inputs either through the last hidden layer (forward pass only,
//! L2 metric) or through per-sample parameter gradients (cosine metric), and
//! recover the hidden fine-grained classes with a kNN classifier.
//!
//! Modules map onto the stages:
//!
//! - [`linalg`]: dense row-major matrices, seeded RNG, orthogonal init,
//!   standardization, correlation.
//! - [`nn`]: layers (dense / tanh / batch-norm / scalar-scale batch-norm /
//!   dropout), forward/backward, per-sample gradients.
//! - [`train`]: BCE loss, orthogonality penalty, Adam, the epoch loop.
//! - [`similarity`]: embeddings, cosine/L2 metrics, brute-force kNN,
//!   accuracy / micro-F1.
//! - [`diagnostics`]: Johnson-Lindenstrauss sizing and distortion checks,
//!   neuron-correlation reports, orthogonality residuals.
//! - [`data`]: IDX and CSV ingestion, label grouping, stratified splits,
//!   Tomek-link under-sampling, synthetic generators.
//! - [`persist`]: on-disk model and embedding formats with content hashes.
//! - [`report`]: experiment report rows mirroring the comparison table.
//!
//! The `parallel` feature (default on) runs the data-parallel inner loops
//! (batch matmul, per-sample gradients, kNN queries, distortion trials) on a
//! rayon pool; without it everything falls back to sequential code with
//! identical results. Reductions use a fixed per-row summation order, so the
//! two modes are bit-identical.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod persist;
pub mod report;
pub mod similarity;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, RngState};
pub use nn::{Model, Variant};

/// Iterate `f(i)` for `i in 0..n`, writing each result into `out[i]`.
///
/// Parallel over `i` when the `parallel` feature is enabled; the closure must
/// be independent per index.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Run `f` on disjoint row chunks of `data` (each `width` wide), in parallel
/// when enabled. `f(chunk_start_row, chunk)` may mutate its chunk only.
pub(crate) fn for_each_row_chunk<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(width > 0 && data.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, chunk) in data.chunks_mut(width).enumerate() {
            f(i, chunk);
        }
    }
}
