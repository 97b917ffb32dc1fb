//! Loss, regularizers, Adam, learning-rate schedule, and the epoch loop.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix, RngState};
use crate::nn::{Gradients, Layer, LayerGrad, Model};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied every `lr_decay_every` optimizer steps;
    /// `lr_decay_every == 0` means a constant rate.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub validation_split: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.001,
            lr_decay_factor: 1.0,
            lr_decay_every: 0,
            validation_split: 0.1,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch_size must be >= 2 (batch statistics)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::InvalidArgument(
                "validation_split must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-model regularization: orthogonality penalty on flagged dense layers,
/// L2 on weights and/or biases. Layer indices in `ortho_exempt` refer to
/// positions in the model's layer list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub ortho_lambda: f64,
    pub l2_weights: f64,
    pub l2_bias: f64,
    pub ortho_exempt: BTreeSet<usize>,
}

impl RegularizationSpec {
    /// Variant A default: plain L2 on weights and biases.
    pub fn l2_only(lambda: f64) -> Self {
        RegularizationSpec {
            ortho_lambda: 0.0,
            l2_weights: lambda,
            l2_bias: lambda,
            ..Default::default()
        }
    }

    /// Variant B/C default: orthogonality penalty plus L2 on biases.
    pub fn orthogonal(ortho_lambda: f64, l2_bias: f64) -> Self {
        RegularizationSpec {
            ortho_lambda,
            l2_weights: 0.0,
            l2_bias,
            ..Default::default()
        }
    }

    pub fn exempt(mut self, layer_index: usize) -> Self {
        self.ortho_exempt.insert(layer_index);
        self
    }
}

/// One row per completed epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Frobenius residual of `W^T W - I` per dense layer, model order.
    pub ortho_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// CSV with one row per epoch and one residual column per dense layer.
    pub fn to_csv(&self) -> String {
        let n_layers = self.epochs.first().map_or(0, |e| e.ortho_residuals.len());
        let mut out = String::from("epoch,train_loss,val_loss,val_acc");
        for i in 0..n_layers {
            out.push_str(&format!(",ortho_residual_layer_{i}"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            ));
            for r in &e.ortho_residuals {
                out.push_str(&format!(",{r}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean binary cross-entropy over logits, in the stable log-sum-exp form,
/// with its gradient `(sigmoid(z) - y) / n`.
pub fn bce_with_logits(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() || logits.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "bce_with_logits",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), 1);
    for (i, (&y, &z)) in labels.iter().zip(logits.as_slice()).enumerate() {
        let yf = y as f64;
        // max(z,0) - z*y + ln(1 + exp(-|z|))
        loss += z.max(0.0) - z * yf + (-z.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-z).exp());
        dlogits.as_mut_slice()[i] = (sig - yf) / n;
    }
    Ok((loss / n, dlogits))
}

/// `(lambda/2) * ||W^T W - I||_F^2` and its gradient `2 lambda W (W^T W - I)`.
pub fn orthogonality_penalty(weights: &Matrix, lambda: f64) -> Result<(f64, Matrix)> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let gram = matmul(&weights.transpose(), weights)?;
    let resid = gram.sub(&Matrix::identity(weights.cols()))?;
    let value = 0.5 * lambda * resid.frobenius_norm().powi(2);
    let grad = matmul(weights, &resid)?.scale(2.0 * lambda);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One Adam step with bias correction, in place.
pub fn adam_update(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam state holds {} parameters, got params {} / grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Learning rate at optimizer step `step` (0-based).
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    if config.lr_decay_every == 0 {
        config.learning_rate
    } else {
        config.learning_rate
            * config
                .lr_decay_factor
                .powi((step / config.lr_decay_every) as i32)
    }
}

/// Total loss = BCE + orthogonality penalties + L2 terms; used by training
/// and by the finite-difference checks.
pub fn total_loss_and_grads(
    model: &mut Model,
    batch: &Matrix,
    labels: &[u8],
    regs: &RegularizationSpec,
    rng: &mut RngState,
) -> Result<(f64, Vec<f64>)> {
    let (logits, trace) = model.forward_train(batch, rng)?;
    let (bce, dlogits) = bce_with_logits(&logits, labels)?;
    let mut grads = model.backward(&trace, &dlogits)?;
    let reg = apply_regularization(model, &mut grads, regs)?;
    Ok((bce + reg, grads.flatten()))
}

/// Add regularizer gradients into `grads`; returns the penalty value.
fn apply_regularization(
    model: &Model,
    grads: &mut Gradients,
    regs: &RegularizationSpec,
) -> Result<f64> {
    let mut penalty = 0.0;
    for (idx, (layer, grad)) in model.layers.iter().zip(grads.layers.iter_mut()).enumerate() {
        let Layer::Dense(d) = layer else { continue };
        let LayerGrad::Dense { dweights, dbias } = grad else {
            continue;
        };
        if regs.ortho_lambda > 0.0
            && model.ortho_regularized.contains(&idx)
            && !regs.ortho_exempt.contains(&idx)
        {
            let (value, grad_w) = orthogonality_penalty(&d.weights, regs.ortho_lambda)?;
            penalty += value;
            *dweights = dweights.add(&grad_w)?;
        }
        if regs.l2_weights > 0.0 {
            penalty += 0.5 * regs.l2_weights * d.weights.frobenius_norm().powi(2);
            *dweights = dweights.add(&d.weights.scale(regs.l2_weights))?;
        }
        if regs.l2_bias > 0.0 {
            penalty += 0.5 * regs.l2_bias * d.bias.iter().map(|b| b * b).sum::<f64>();
            for (g, &b) in dbias.iter_mut().zip(&d.bias) {
                *g += regs.l2_bias * b;
            }
        }
    }
    Ok(penalty)
}

fn ortho_residuals(model: &Model) -> Vec<f64> {
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

/// Mini-batch training loop. Holds out the validation split first, shuffles
/// per epoch with the config seed, drops trailing batches smaller than 2,
/// and aborts with a divergence error on any non-finite loss. Deterministic
/// for a fixed seed.
pub fn train(
    model: &mut Model,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    regs: &RegularizationSpec,
) -> Result<History> {
    config.validate()?;
    if dataset.features.cols() != model.input_width() {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: dataset.features.shape(),
            right: (model.input_width(), 0),
        });
    }
    let n = dataset.features.rows();
    let mut rng = RngState::new(config.seed);
    let mut dropout_rng = RngState::new(config.seed).child(0xd0);

    // Validation holdout before any training.
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_val = ((n as f64) * config.validation_split).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    if train_idx.len() < 2 {
        return Err(Error::InvalidArgument(
            "fewer than 2 training rows after validation split".into(),
        ));
    }
    let val_x = dataset.features.select_rows(&val_idx);
    let val_y: Vec<u8> = val_idx.iter().map(|&i| dataset.binary_labels[i]).collect();

    let mut adam = AdamState::new(model.param_count());
    let mut history = History::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        if config.shuffle {
            rng.shuffle(&mut train_idx);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bx = dataset.features.select_rows(chunk);
            let by: Vec<u8> = chunk.iter().map(|&i| dataset.binary_labels[i]).collect();
            let (loss, flat_grads) =
                total_loss_and_grads(model, &bx, &by, regs, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            let mut params = model.flat_params();
            adam_update(&mut adam, &mut params, &flat_grads, lr_at(step, config))?;
            model.set_flat_params(&params)?;
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let logits = model.logits(&val_x)?;
            let (loss, _) = bce_with_logits(&logits, &val_y)?;
            let correct = logits
                .as_slice()
                .iter()
                .zip(&val_y)
                .filter(|&(&z, &y)| (z > 0.0) == (y == 1))
                .count();
            (loss, correct as f64 / val_y.len() as f64)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_loss,
            val_accuracy,
            ortho_residuals: ortho_residuals(model),
        });
    }
    Ok(history)
}
