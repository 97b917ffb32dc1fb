//! Dataset ingestion (IDX, CSV), label grouping, stratified splits,
//! Tomek-link under-sampling, and synthetic dataset generators.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{
    apply_standardization, standardize_columns, ColumnStats, Matrix, RngState,
};

/// Feature matrix plus fine-grained ("hidden") labels and the binary labels
/// derived from them via a grouping map. Hidden labels are what the kNN
/// evaluation tries to recover; the network only ever sees the binary ones.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub hidden_labels: Vec<usize>,
    pub binary_labels: Vec<u8>,
    pub grouping: BTreeMap<usize, u8>,
    /// Standardization statistics fitted on this dataset's features, when a
    /// preprocessing step recorded them (reused on test data, never refit).
    pub stats: Option<ColumnStats>,
}

impl LabeledDataset {
    /// Build a dataset with binary labels derived from `grouping`.
    pub fn new(
        features: Matrix,
        hidden_labels: Vec<usize>,
        grouping: BTreeMap<usize, u8>,
    ) -> Result<Self> {
        if features.rows() != hidden_labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                hidden_labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite feature values after ingestion".into(),
            ));
        }
        let binary_labels = derive_binary(&hidden_labels, &grouping)?;
        Ok(LabeledDataset {
            features,
            hidden_labels,
            binary_labels,
            grouping,
            stats: None,
        })
    }

    /// Dataset without a meaningful binary task yet: every hidden class maps
    /// to group 0 until [`group_labels`] installs a real map.
    pub fn ungrouped(features: Matrix, hidden_labels: Vec<usize>) -> Result<Self> {
        let classes: BTreeSet<usize> = hidden_labels.iter().copied().collect();
        let grouping = classes.into_iter().map(|c| (c, 0u8)).collect();
        LabeledDataset::new(features, hidden_labels, grouping)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by index, preserving labels and fitted statistics.
    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            hidden_labels: idx.iter().map(|&i| self.hidden_labels[i]).collect(),
            binary_labels: idx.iter().map(|&i| self.binary_labels[i]).collect(),
            grouping: self.grouping.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Standardize features in place, recording the fitted statistics.
    pub fn standardize(&mut self) -> Result<()> {
        let (z, stats) = standardize_columns(&self.features)?;
        self.features = z;
        self.stats = Some(stats);
        Ok(())
    }

    /// Apply previously fitted statistics (train-set statistics on test data).
    pub fn apply_stats(&mut self, stats: &ColumnStats) -> Result<()> {
        self.features = apply_standardization(&self.features, stats)?;
        self.stats = Some(stats.clone());
        Ok(())
    }
}

fn derive_binary(hidden: &[usize], grouping: &BTreeMap<usize, u8>) -> Result<Vec<u8>> {
    hidden
        .iter()
        .map(|c| {
            grouping.get(c).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("hidden class {c} missing from grouping map"))
            })
        })
        .collect()
}

/// Install a grouping map, repopulating the binary labels. Hidden labels are
/// untouched. Every class present must be mapped and the map image must be
/// within {0, 1}.
pub fn group_labels(
    dataset: &LabeledDataset,
    grouping: BTreeMap<usize, u8>,
) -> Result<LabeledDataset> {
    if grouping.values().any(|&g| g > 1) {
        return Err(Error::InvalidArgument(
            "grouping map image must be {0, 1}".into(),
        ));
    }
    let binary_labels = derive_binary(&dataset.hidden_labels, &grouping)?;
    Ok(LabeledDataset {
        features: dataset.features.clone(),
        hidden_labels: dataset.hidden_labels.clone(),
        binary_labels,
        grouping,
        stats: dataset.stats.clone(),
    })
}

/// Digits {0,2,4,6,8} -> 0, {1,3,5,7,9} -> 1.
pub fn even_odd_map() -> BTreeMap<usize, u8> {
    (0..10).map(|d| (d, (d % 2) as u8)).collect()
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

/// Parsed IDX payload: image files become an `n x (rows*cols)` matrix scaled
/// to [0, 1]; label files become one integer per sample.
#[derive(Debug, Clone)]
pub enum IdxFile {
    Images(Matrix),
    Labels(Vec<u8>),
}

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Parse an IDX file (big-endian header, unsigned-byte payload).
pub fn parse_idx(path: &Path) -> Result<IdxFile> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let fail = |offset: u64, message: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let read_u32 = |off: usize| -> Result<u32> {
        let chunk: [u8; 4] = bytes
            .get(off..off + 4)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| fail(off as u64, "truncated header".into()))?;
        Ok(u32::from_be_bytes(chunk))
    };
    let magic = read_u32(0)?;
    match magic {
        IDX_MAGIC_LABELS => {
            let n = read_u32(4)? as usize;
            let payload = bytes
                .get(8..8 + n)
                .ok_or_else(|| fail(bytes.len() as u64, format!("truncated payload: expected {n} label bytes")))?;
            Ok(IdxFile::Labels(payload.to_vec()))
        }
        IDX_MAGIC_IMAGES => {
            let n = read_u32(4)? as usize;
            let rows = read_u32(8)? as usize;
            let cols = read_u32(12)? as usize;
            let len = n * rows * cols;
            let payload = bytes.get(16..16 + len).ok_or_else(|| {
                fail(
                    bytes.len() as u64,
                    format!("truncated payload: expected {len} pixel bytes"),
                )
            })?;
            let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(IdxFile::Images(Matrix::from_vec(n, rows * cols, data)?))
        }
        other => Err(fail(0, format!("bad magic 0x{other:08x}"))),
    }
}

/// Write images in IDX layout; `side * side` must equal the feature width and
/// values are clamped to [0, 1] then quantized to bytes.
pub fn write_idx_images(path: &Path, images: &Matrix, side: usize) -> Result<()> {
    if side * side != images.cols() {
        return Err(Error::InvalidArgument(format!(
            "side {side} does not square to width {}",
            images.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.rows() * images.cols());
    out.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(images.rows() as u32).to_be_bytes());
    out.extend_from_slice(&(side as u32).to_be_bytes());
    out.extend_from_slice(&(side as u32).to_be_bytes());
    for &v in images.as_slice() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Load an IDX image/label pair into an ungrouped dataset.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let x = match parse_idx(images)? {
        IdxFile::Images(m) => m,
        IdxFile::Labels(_) => {
            return Err(Error::InvalidArgument(format!(
                "{} is a label file, expected images",
                images.display()
            )))
        }
    };
    let y = match parse_idx(labels)? {
        IdxFile::Labels(l) => l,
        IdxFile::Images(_) => {
            return Err(Error::InvalidArgument(format!(
                "{} is an image file, expected labels",
                labels.display()
            )))
        }
    };
    LabeledDataset::ungrouped(x, y.into_iter().map(|v| v as usize).collect())
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Per-column treatment for CSV ingestion. Columns not named are numeric.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Categorical columns, each optionally with a fixed level list. With a
    /// fixed list, values outside it are an error; otherwise levels are
    /// discovered from the data and sorted.
    pub categorical: BTreeMap<String, Option<Vec<String>>>,
    /// Replace missing numeric cells with the column mean instead of failing.
    pub impute_missing: bool,
}

/// Load a rectangular CSV with a header row. The label column becomes the
/// hidden class (distinct values sorted, then indexed); numeric columns pass
/// through; categorical columns are one-hot encoded.
pub fn load_csv(path: &Path, label_column: &str, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("label column {label_column:?} not in header"))
        })?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                row: i + 1,
                column: String::new(),
                message: format!(
                    "ragged row: {} fields, header has {}",
                    record.len(),
                    headers.len()
                ),
            });
        }
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }

    // Hidden classes: distinct label values, sorted for determinism.
    let mut label_values: Vec<String> = rows.iter().map(|r| r[label_idx].clone()).collect();
    label_values.sort();
    label_values.dedup();
    let label_map: BTreeMap<&str, usize> = label_values
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let hidden_labels: Vec<usize> = rows.iter().map(|r| label_map[r[label_idx].as_str()]).collect();

    // Column-by-column feature encoding.
    let mut feature_cols: Vec<Vec<f64>> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        if let Some(levels_spec) = schema.categorical.get(name) {
            let levels: Vec<String> = match levels_spec {
                Some(fixed) => fixed.clone(),
                None => {
                    let mut seen: Vec<String> = rows.iter().map(|r| r[c].clone()).collect();
                    seen.sort();
                    seen.dedup();
                    seen
                }
            };
            let index: BTreeMap<&str, usize> = levels
                .iter()
                .enumerate()
                .map(|(i, v)| (v.as_str(), i))
                .collect();
            let mut onehot = vec![vec![0.0; rows.len()]; levels.len()];
            for (r, row) in rows.iter().enumerate() {
                let value = row[c].as_str();
                if value.is_empty() {
                    return Err(Error::Csv {
                        row: r + 1,
                        column: name.clone(),
                        message: "missing categorical value".into(),
                    });
                }
                let &li = index.get(value).ok_or_else(|| Error::Csv {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("unknown category {value:?}"),
                })?;
                onehot[li][r] = 1.0;
            }
            feature_cols.extend(onehot);
        } else {
            let mut col = Vec::with_capacity(rows.len());
            let mut missing: Vec<usize> = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                let cell = row[c].as_str();
                if cell.is_empty() {
                    if schema.impute_missing {
                        missing.push(r);
                        col.push(f64::NAN);
                        continue;
                    }
                    return Err(Error::Csv {
                        row: r + 1,
                        column: name.clone(),
                        message: "missing value (imputation disabled)".into(),
                    });
                }
                let v: f64 = cell.parse().map_err(|_| Error::Csv {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("not a number: {cell:?}"),
                })?;
                col.push(v);
            }
            if !missing.is_empty() {
                let present: Vec<f64> =
                    col.iter().copied().filter(|v| v.is_finite()).collect();
                let mean = if present.is_empty() {
                    0.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                };
                for &r in &missing {
                    col[r] = mean;
                }
            }
            feature_cols.push(col);
        }
    }

    let n = rows.len();
    let d = feature_cols.len();
    let mut data = vec![0.0; n * d];
    for (j, col) in feature_cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * d + j] = v;
        }
    }
    LabeledDataset::ungrouped(Matrix::from_vec(n, d, data)?, hidden_labels)
}

// ---------------------------------------------------------------------------
// Splits and under-sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StratifyOn {
    Hidden,
    Binary,
}

/// Seed-deterministic stratified split; `test_fraction` of each stratum goes
/// to the second dataset. Disjoint and exhaustive.
pub fn split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
    stratify_on: StratifyOn,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::InvalidArgument(
            "test fraction must be in (0, 1)".into(),
        ));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.len() {
        let key = match stratify_on {
            StratifyOn::Hidden => dataset.hidden_labels[i],
            StratifyOn::Binary => dataset.binary_labels[i] as usize,
        };
        strata.entry(key).or_default().push(i);
    }
    let mut rng = RngState::new(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut members) in strata {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "stratum {class} has fewer than 2 members"
            )));
        }
        rng.shuffle(&mut members);
        let n_test = ((members.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.select(&train_idx), dataset.select(&test_idx)))
}

/// Remove Tomek links: mutual nearest neighbors (L2 on standardized
/// features) with opposite binary labels. Only the majority-class member of
/// each link is dropped, in a single pass over the original dataset.
pub fn tomek_links_filter(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "tomek_links_filter needs at least 2 rows".into(),
        ));
    }
    let (z, _) = standardize_columns(&dataset.features)?;
    // Nearest neighbor per row; ties resolved toward the lowest index.
    let nn: Vec<usize> = crate::map_indexed(n, |i| {
        let ri = z.row(i);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d: f64 = ri
                .iter()
                .zip(z.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    });
    let ones = dataset.binary_labels.iter().filter(|&&b| b == 1).count();
    let majority: u8 = if ones * 2 > n { 1 } else { 0 };
    let mut remove = vec![false; n];
    for i in 0..n {
        let j = nn[i];
        if j > i && nn[j] == i && dataset.binary_labels[i] != dataset.binary_labels[j] {
            if dataset.binary_labels[i] == majority {
                remove[i] = true;
            } else {
                remove[j] = true;
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !remove[i]).collect();
    Ok(dataset.select(&keep))
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Synthetic 28x28 "digit" images built from three seeded ingredients: a
/// shared base pattern, a parity pattern added for odd digits and subtracted
/// for even ones, and a detail pattern shared by each digit pair {2k, 2k+1}.
/// The pair detail carries no information about parity, so a parity-trained
/// classifier has no incentive to preserve it; recovering the digit from an
/// embedding therefore requires a representation that keeps more than the
/// training task needs. Samples add random intensity, a small spatial
/// jitter, and per-pixel Gaussian noise, clamped to [0, 1]. Returned
/// ungrouped (hidden label = digit); pair with [`even_odd_map`] for the
/// binary task.
pub fn synthetic_digits(n: usize, seed: u64, noise: f64) -> Result<LabeledDataset> {
    const SIDE: usize = 28;
    const D: usize = SIDE * SIDE;
    const BASE_AMP: f64 = 0.4;
    const PARITY_AMP: f64 = 0.25;
    const DETAIL_AMP: f64 = 0.45;

    // Max-normalized sum of `count` Gaussian blobs at seeded positions.
    fn blob_pattern(rng: &mut RngState, count: usize) -> Vec<f64> {
        let mut img = vec![0.0f64; D];
        for _ in 0..count {
            let cx = 4.0 + rng.uniform() * 20.0;
            let cy = 4.0 + rng.uniform() * 20.0;
            let s = 2.5 + rng.uniform() * 2.0;
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    img[y * SIDE + x] += (-0.5 * (dx * dx + dy * dy) / (s * s)).exp();
                }
            }
        }
        let max = img.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
        for v in img.iter_mut() {
            *v /= max;
        }
        img
    }

    let mut proto_rng = RngState::new(seed).child(1);
    let base = blob_pattern(&mut proto_rng, 3);
    let parity = blob_pattern(&mut proto_rng, 3);
    let details: Vec<Vec<f64>> = (0..5).map(|_| blob_pattern(&mut proto_rng, 4)).collect();
    let mut prototypes = Vec::with_capacity(10);
    for digit in 0..10 {
        let sign = if digit % 2 == 0 { -1.0 } else { 1.0 };
        let detail = &details[digit / 2];
        let img: Vec<f64> = (0..D)
            .map(|i| BASE_AMP * base[i] + sign * PARITY_AMP * parity[i] + DETAIL_AMP * detail[i])
            .collect();
        prototypes.push(img);
    }

    let mut rng = RngState::new(seed).child(2);
    let mut data = Vec::with_capacity(n * D);
    let mut hidden = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        let proto = &prototypes[class];
        let intensity = 0.9 + 0.2 * rng.uniform();
        // Shift the prototype by up to +-1 pixel in each direction.
        let sx = (rng.uniform() * 3.0) as isize - 1;
        let sy = (rng.uniform() * 3.0) as isize - 1;
        for y in 0..SIDE as isize {
            for x in 0..SIDE as isize {
                let src_x = x - sx;
                let src_y = y - sy;
                let base = if (0..SIDE as isize).contains(&src_x)
                    && (0..SIDE as isize).contains(&src_y)
                {
                    proto[(src_y as usize) * SIDE + src_x as usize]
                } else {
                    0.0
                };
                let v = base * intensity + noise * rng.gaussian();
                data.push(v.clamp(0.0, 1.0));
            }
        }
        hidden.push(class);
    }
    LabeledDataset::ungrouped(Matrix::from_vec(n, D, data)?, hidden)
}

/// Synthetic tabular data mimicking a sick/healthy protocol: 4 Gaussian
/// subclasses in `dims` dimensions where only the first few dimensions carry
/// class signal and the rest are noise. Subclasses 1-3 group to binary 1
/// ("sick"), subclass 0 to binary 0 ("healthy"). `overlap` scales the
/// within-class spread of the informative dimensions.
pub fn synthetic_tabular(n: usize, dims: usize, seed: u64, overlap: f64) -> Result<LabeledDataset> {
    const INFORMATIVE: usize = 6;
    if dims < INFORMATIVE {
        return Err(Error::InvalidArgument(format!(
            "need at least {INFORMATIVE} dimensions"
        )));
    }
    // Subclass means in the informative subspace.
    let means: [[f64; INFORMATIVE]; 4] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [2.0, 0.0, 1.0, 0.0, 0.5, 0.0],
        [0.0, 2.0, 1.0, 0.5, 0.0, 0.0],
        [1.0, 1.0, -1.5, 0.0, 0.0, 0.5],
    ];
    let mut rng = RngState::new(seed).child(3);
    let mut data = Vec::with_capacity(n * dims);
    let mut hidden = Vec::with_capacity(n);
    for i in 0..n {
        // Healthy is half the data, each sick subclass a sixth.
        let class = match i % 6 {
            0 | 1 | 2 => 0,
            3 => 1,
            4 => 2,
            _ => 3,
        };
        for j in 0..dims {
            let v = if j < INFORMATIVE {
                means[class][j] + overlap * rng.gaussian()
            } else {
                rng.gaussian()
            };
            data.push(v);
        }
        hidden.push(class);
    }
    let grouping = [(0usize, 0u8), (1, 1), (2, 1), (3, 1)].into_iter().collect();
    LabeledDataset::new(Matrix::from_vec(n, dims, data)?, hidden, grouping)
}

/// Reproducibility record for a prepared dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grouping: BTreeMap<usize, u8>,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub preprocessing: Vec<String>,
}
