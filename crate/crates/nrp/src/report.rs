//! Experiment report: one row per evaluated representation, mirroring the
//! comparison-table layout (binary accuracy, kNN subclass accuracy and
//! micro-F1, kNN binary accuracy, timings, representation dimension).

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    /// e.g. "A (gradient)", "A (h_last)", "B (h_last)", "C (h_last)",
    /// "source space".
    pub representation: String,
    /// Binary validation accuracy of the trained model, when one exists.
    pub model_binary_accuracy: Option<f64>,
    pub knn_subclass_accuracy: f64,
    pub knn_subclass_f1_micro: f64,
    pub knn_binary_accuracy: f64,
    pub vectorization_seconds: f64,
    pub knn_prediction_seconds: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    /// Mean absolute neuron correlation of the last hidden layer, per
    /// trained variant.
    pub mean_abs_correlation: std::collections::BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(seed: u64) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            rows: Vec::new(),
            mean_abs_correlation: Default::default(),
        }
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "representation",
            "model acc",
            "knn subclass acc",
            "knn subclass F1",
            "knn binary acc",
            "vec time (s)",
            "knn time (s)",
            "dim",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            rows.push(vec![
                r.representation.clone(),
                r.model_binary_accuracy
                    .map_or("-".into(), |v| format!("{v:.4}")),
                format!("{:.4}", r.knn_subclass_accuracy),
                format!("{:.4}", r.knn_subclass_f1_micro),
                format!("{:.4}", r.knn_binary_accuracy),
                format!("{:.2}", r.vectorization_seconds),
                format!("{:.2}", r.knn_prediction_seconds),
                r.dimension.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                out.push_str(&format!("{:width$}  ", cell, width = widths[c]));
            }
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len()));
                out.push('\n');
            }
        }
        out
    }
}
