//! Layers, model variants, forward/backward passes, and per-sample
//! parameter gradients.
//!
//! A [`Model`] is an ordered layer sequence ending in a dense layer of output
//! width 1 (a scalar logit). Three fixed templates exist:
//!
//! - variant A: `Dense -> tanh` blocks, Glorot-uniform init, no normalization;
//! - variant B: `Dense -> BatchNorm -> tanh -> Dropout` blocks, orthogonal
//!   init (standard batch-norm: per-unit scale and shift, before activation);
//! - variant C: `Dense -> tanh -> ScalarBatchNorm -> Dropout` blocks,
//!   orthogonal init (scalar-scale batch-norm: one shared trainable scale per
//!   layer, no shift, applied after activation).
//!
//! Canonical parameter order, used everywhere a model is flattened (gradient
//! embeddings, Adam state, `weights.bin`): layer index ascending; within a
//! dense layer weights row-major then bias; within standard batch-norm gamma
//! then beta; scalar batch-norm contributes its single gamma. Running
//! statistics are not trainable parameters and live in the manifest instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::A => write!(f, "A"),
            Variant::B => write!(f, "B"),
            Variant::C => write!(f, "C"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected A, B, or C)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn in_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weights.cols()
    }
}

/// Standard batch-normalization: per-unit scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormLayer {
    pub fn new(width: usize, epsilon: f64, momentum: f64) -> Self {
        BatchNormLayer {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            epsilon,
            momentum,
        }
    }
}

/// Batch-normalization with a single trainable scale shared by all units of
/// the layer and no shift term. Train-mode outputs have exact zero column
/// means and variance `gamma^2 * sigma^2 / (sigma^2 + epsilon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedBatchNorm {
    pub gamma: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl ModifiedBatchNorm {
    pub fn new(width: usize, epsilon: f64, momentum: f64) -> Self {
        ModifiedBatchNorm {
            gamma: 1.0,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            epsilon,
            momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLayer {
    pub keep_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Activation(Activation),
    BatchNorm(BatchNormLayer),
    ModifiedBatchNorm(ModifiedBatchNorm),
    Dropout(DropoutLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Activation(Activation::Tanh) => "tanh",
            Layer::Activation(Activation::Identity) => "identity",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::ModifiedBatchNorm(_) => "scalar_batch_norm",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// Trainable parameter count of this layer.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.rows() * d.weights.cols() + d.bias.len(),
            Layer::BatchNorm(bn) => bn.gamma.len() + bn.beta.len(),
            Layer::ModifiedBatchNorm(_) => 1,
            _ => 0,
        }
    }
}

/// Hyperparameters shared by the variant templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    /// Dropout keep probability for variants B and C.
    pub keep_prob: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl ModelConfig {
    pub fn new(input_width: usize, hidden_widths: Vec<usize>) -> Self {
        ModelConfig {
            input_width,
            hidden_widths,
            keep_prob: 0.9,
            epsilon: 1e-5,
            momentum: 0.99,
        }
    }

    pub fn with_keep_prob(mut self, p: f64) -> Self {
        self.keep_prob = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub variant: Variant,
    /// Layer indices of dense layers that carry the orthogonality penalty.
    pub ortho_regularized: Vec<usize>,
    /// Layer index of the last hidden dense layer; its pre-activation output
    /// is the embedding.
    pub last_hidden: usize,
    input_width: usize,
}

impl Model {
    /// Build one of the fixed variant templates.
    pub fn new(variant: Variant, config: &ModelConfig, rng: &mut RngState) -> Result<Model> {
        if config.input_width == 0 || config.hidden_widths.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs input_width >= 1 and at least one hidden layer".into(),
            ));
        }
        if !(config.keep_prob > 0.0 && config.keep_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_prob must be in (0, 1], got {}",
                config.keep_prob
            )));
        }
        let mut layers = Vec::new();
        let mut ortho = Vec::new();
        let mut last_hidden = 0;
        let mut in_w = config.input_width;
        for &out_w in &config.hidden_widths {
            let dense = match variant {
                Variant::A => glorot_dense(in_w, out_w, rng),
                Variant::B | Variant::C => orthogonal_dense(in_w, out_w, rng)?,
            };
            last_hidden = layers.len();
            if variant != Variant::A {
                ortho.push(layers.len());
            }
            layers.push(Layer::Dense(dense));
            match variant {
                Variant::A => {
                    layers.push(Layer::Activation(Activation::Tanh));
                }
                Variant::B => {
                    layers.push(Layer::BatchNorm(BatchNormLayer::new(
                        out_w,
                        config.epsilon,
                        config.momentum,
                    )));
                    layers.push(Layer::Activation(Activation::Tanh));
                    layers.push(Layer::Dropout(DropoutLayer {
                        keep_prob: config.keep_prob,
                    }));
                }
                Variant::C => {
                    layers.push(Layer::Activation(Activation::Tanh));
                    layers.push(Layer::ModifiedBatchNorm(ModifiedBatchNorm::new(
                        out_w,
                        config.epsilon,
                        config.momentum,
                    )));
                    layers.push(Layer::Dropout(DropoutLayer {
                        keep_prob: config.keep_prob,
                    }));
                }
            }
            in_w = out_w;
        }
        let out_dense = match variant {
            Variant::A => glorot_dense(in_w, 1, rng),
            Variant::B | Variant::C => orthogonal_dense(in_w, 1, rng)?,
        };
        if variant != Variant::A {
            ortho.push(layers.len());
        }
        layers.push(Layer::Dense(out_dense));
        Ok(Model {
            layers,
            variant,
            ortho_regularized: ortho,
            last_hidden,
            input_width: config.input_width,
        })
    }

    /// Assemble a model from explicit parts (used by persistence and tests).
    pub fn from_layers(
        layers: Vec<Layer>,
        variant: Variant,
        ortho_regularized: Vec<usize>,
        last_hidden: usize,
    ) -> Result<Model> {
        let input_width = layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.in_width()),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument("model has no dense layer".into()))?;
        let model = Model {
            layers,
            variant,
            ortho_regularized,
            last_hidden,
            input_width,
        };
        match model.layers.last() {
            Some(Layer::Dense(d)) if d.out_width() == 1 => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "final layer must be dense with output width 1".into(),
                ))
            }
        }
        Ok(model)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// Width of the last hidden layer (the embedding dimension).
    pub fn last_hidden_width(&self) -> usize {
        match &self.layers[self.last_hidden] {
            Layer::Dense(d) => d.out_width(),
            _ => unreachable!("last_hidden must index a dense layer"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All trainable parameters in canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.extend_from_slice(d.weights.as_slice());
                    out.extend_from_slice(&d.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.extend_from_slice(&bn.gamma);
                    out.extend_from_slice(&bn.beta);
                }
                Layer::ModifiedBatchNorm(bn) => out.push(bn.gamma),
                _ => {}
            }
        }
        out
    }

    /// Overwrite all trainable parameters from a canonical-order flat slice.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let nw = d.weights.rows() * d.weights.cols();
                    d.weights
                        .as_mut_slice()
                        .copy_from_slice(&params[pos..pos + nw]);
                    pos += nw;
                    let nb = d.bias.len();
                    d.bias.copy_from_slice(&params[pos..pos + nb]);
                    pos += nb;
                }
                Layer::BatchNorm(bn) => {
                    let n = bn.gamma.len();
                    bn.gamma.copy_from_slice(&params[pos..pos + n]);
                    pos += n;
                    bn.beta.copy_from_slice(&params[pos..pos + n]);
                    pos += n;
                }
                Layer::ModifiedBatchNorm(bn) => {
                    bn.gamma = params[pos];
                    pos += 1;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Training-mode forward pass. Batch statistics are used by the
    /// normalization layers and running statistics are updated in place;
    /// dropout draws fresh masks from `rng`.
    pub fn forward_train(
        &mut self,
        batch: &Matrix,
        rng: &mut RngState,
    ) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(batch)?;
        if batch.rows() < 2 {
            return Err(Error::InvalidArgument(
                "training-mode forward needs at least 2 rows (batch statistics)".into(),
            ));
        }
        let mut cur = batch.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (next, trace) = match layer {
                Layer::Dense(d) => {
                    let out = dense_forward(d, &cur)?;
                    (out, LayerTrace::Dense { input: cur })
                }
                Layer::Activation(a) => {
                    let out = activation_forward(*a, &cur);
                    let cache = match a {
                        Activation::Tanh => Some(out.clone()),
                        Activation::Identity => None,
                    };
                    (out, LayerTrace::Activation { output: cache })
                }
                Layer::BatchNorm(bn) => {
                    let (out, cache) = bn_forward_train(bn, &cur);
                    (out, LayerTrace::Norm(cache))
                }
                Layer::ModifiedBatchNorm(bn) => {
                    let (out, cache) = mbn_forward_train(bn, &cur);
                    (out, LayerTrace::Norm(cache))
                }
                Layer::Dropout(d) => {
                    let (out, mask) = dropout_forward(&cur, d.keep_prob, Mode::Train, Some(rng))?;
                    (out, LayerTrace::Dropout { mask })
                }
            };
            traces.push(trace);
            cur = next;
        }
        Ok((
            cur,
            ForwardTrace {
                mode: Mode::Train,
                layers: traces,
                layer_count: self.layers.len(),
            },
        ))
    }

    /// Inference-mode forward pass: dropout is the identity and the
    /// normalization layers use running statistics. Deterministic.
    pub fn forward_infer(&self, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(batch)?;
        let mut cur = batch.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, trace) = infer_layer(layer, cur)?;
            traces.push(trace);
            cur = next;
        }
        Ok((
            cur,
            ForwardTrace {
                mode: Mode::Infer,
                layers: traces,
                layer_count: self.layers.len(),
            },
        ))
    }

    /// Inference-mode logits without trace bookkeeping.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_infer(batch)?.0)
    }

    /// Inference-mode forward through layers `0..stop` (exclusive).
    pub fn forward_infer_until(&self, batch: &Matrix, stop: usize) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut cur = batch.clone();
        for layer in &self.layers[..stop] {
            cur = infer_layer(layer, cur)?.0;
        }
        Ok(cur)
    }

    /// Backward pass through a trace produced by this model. Returns one
    /// gradient record per layer, shaped like the parameters. Normalization
    /// backward treats batch mean/variance as functions of the batch.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Result<Gradients> {
        if trace.layer_count != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward trace does not match this model".into(),
            ));
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut dcur = dlogits.clone();
        for (layer, ltrace) in self.layers.iter().zip(&trace.layers).rev() {
            let (dnext, grad) = match (layer, ltrace) {
                (Layer::Dense(d), LayerTrace::Dense { input }) => {
                    let dw = matmul(&input.transpose(), &dcur)?;
                    let mut db = vec![0.0; d.bias.len()];
                    for r in 0..dcur.rows() {
                        for (b, &g) in db.iter_mut().zip(dcur.row(r)) {
                            *b += g;
                        }
                    }
                    let dx = matmul(&dcur, &d.weights.transpose())?;
                    (dx, LayerGrad::Dense { dweights: dw, dbias: db })
                }
                (Layer::Activation(a), LayerTrace::Activation { output }) => {
                    let dx = activation_backward(*a, output.as_ref(), &dcur);
                    (dx, LayerGrad::None)
                }
                (Layer::BatchNorm(bn), LayerTrace::Norm(cache)) => {
                    let (dx, dgamma, dbeta) = bn_backward(bn, cache, &dcur, trace.mode);
                    (dx, LayerGrad::BatchNorm { dgamma, dbeta })
                }
                (Layer::ModifiedBatchNorm(bn), LayerTrace::Norm(cache)) => {
                    let (dx, dgamma) = mbn_backward(bn, cache, &dcur, trace.mode);
                    (dx, LayerGrad::ModifiedBatchNorm { dgamma })
                }
                (Layer::Dropout(_), LayerTrace::Dropout { mask }) => {
                    let dx = match mask {
                        Some(m) => hadamard(&dcur, m),
                        None => dcur.clone(),
                    };
                    (dx, LayerGrad::None)
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "forward trace does not match this model".into(),
                    ))
                }
            };
            grads.push(grad);
            dcur = dnext;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Flat gradient of the scalar logit `f(x)` with respect to every
    /// trainable parameter, in canonical order. Uses inference semantics
    /// (no dropout, running statistics), so it is deterministic.
    pub fn per_sample_gradient(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() != 1 {
            return Err(Error::InvalidArgument(
                "per_sample_gradient takes a single row".into(),
            ));
        }
        let (_, trace) = self.forward_infer(x)?;
        let seed = Matrix::from_vec(1, 1, vec![1.0])?;
        let grads = self.backward(&trace, &seed)?;
        Ok(grads.flatten())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_width {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: batch.shape(),
                right: (self.input_width, 0),
            });
        }
        Ok(())
    }
}

fn infer_layer(layer: &Layer, cur: Matrix) -> Result<(Matrix, LayerTrace)> {
    Ok(match layer {
        Layer::Dense(d) => {
            let out = dense_forward(d, &cur)?;
            (out, LayerTrace::Dense { input: cur })
        }
        Layer::Activation(a) => {
            let out = activation_forward(*a, &cur);
            let cache = match a {
                Activation::Tanh => Some(out.clone()),
                Activation::Identity => None,
            };
            (out, LayerTrace::Activation { output: cache })
        }
        Layer::BatchNorm(bn) => {
            let (out, cache) = bn_forward_infer_cached(bn, &cur);
            (out, LayerTrace::Norm(cache))
        }
        Layer::ModifiedBatchNorm(bn) => {
            let (out, cache) = mbn_forward_infer_cached(bn, &cur);
            (out, LayerTrace::Norm(cache))
        }
        Layer::Dropout(_) => (cur, LayerTrace::Dropout { mask: None }),
    })
}

fn dense_forward(d: &DenseLayer, x: &Matrix) -> Result<Matrix> {
    let mut out = matmul(x, &d.weights)?;
    let w = d.bias.len();
    crate::for_each_row_chunk(out.as_mut_slice(), w, |_, row| {
        for (v, b) in row.iter_mut().zip(&d.bias) {
            *v += b;
        }
    });
    Ok(out)
}

fn activation_forward(a: Activation, x: &Matrix) -> Matrix {
    match a {
        Activation::Identity => x.clone(),
        Activation::Tanh => {
            let mut out = x.clone();
            for v in out.as_mut_slice() {
                *v = v.tanh();
            }
            out
        }
    }
}

fn activation_backward(a: Activation, output: Option<&Matrix>, dy: &Matrix) -> Matrix {
    match a {
        Activation::Identity => dy.clone(),
        Activation::Tanh => {
            let y = output.expect("tanh trace must cache its output");
            let mut out = dy.clone();
            for (d, &yv) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= 1.0 - yv * yv;
            }
            out
        }
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (x, &y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
    out
}

/// Cache shared by both normalization flavors.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// Normalized values (x - mu) / sqrt(var + eps).
    xhat: Matrix,
    inv_std: Vec<f64>,
}

fn batch_mean_var(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let dv = v - m;
            *s += dv * dv;
        }
    }
    for s in var.iter_mut() {
        *s /= n as f64;
    }
    (mean, var)
}

fn normalize(x: &Matrix, mean: &[f64], var: &[f64], eps: f64) -> (Matrix, Vec<f64>) {
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let d = x.cols();
    crate::for_each_row_chunk(xhat.as_mut_slice(), d, |_, row| {
        for ((v, &m), &s) in row.iter_mut().zip(mean).zip(&inv_std) {
            *v = (*v - m) * s;
        }
    });
    (xhat, inv_std)
}

fn update_running(running_mean: &mut [f64], running_var: &mut [f64], mean: &[f64], var: &[f64], momentum: f64) {
    for (r, &m) in running_mean.iter_mut().zip(mean) {
        *r = momentum * *r + (1.0 - momentum) * m;
    }
    for (r, &v) in running_var.iter_mut().zip(var) {
        *r = momentum * *r + (1.0 - momentum) * v;
    }
}

fn bn_forward_train(bn: &mut BatchNormLayer, x: &Matrix) -> (Matrix, NormCache) {
    let (mean, var) = batch_mean_var(x);
    let (xhat, inv_std) = normalize(x, &mean, &var, bn.epsilon);
    update_running(&mut bn.running_mean, &mut bn.running_var, &mean, &var, bn.momentum);
    let mut out = xhat.clone();
    let d = x.cols();
    crate::for_each_row_chunk(out.as_mut_slice(), d, |_, row| {
        for ((v, &g), &b) in row.iter_mut().zip(&bn.gamma).zip(&bn.beta) {
            *v = *v * g + b;
        }
    });
    (out, NormCache { xhat, inv_std })
}

fn bn_forward_infer_cached(bn: &BatchNormLayer, x: &Matrix) -> (Matrix, NormCache) {
    let (xhat, inv_std) = normalize(x, &bn.running_mean, &bn.running_var, bn.epsilon);
    let mut out = xhat.clone();
    let d = x.cols();
    crate::for_each_row_chunk(out.as_mut_slice(), d, |_, row| {
        for ((v, &g), &b) in row.iter_mut().zip(&bn.gamma).zip(&bn.beta) {
            *v = *v * g + b;
        }
    });
    (out, NormCache { xhat, inv_std })
}

fn bn_backward(
    bn: &BatchNormLayer,
    cache: &NormCache,
    dy: &Matrix,
    mode: Mode,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, d) = dy.shape();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xr = cache.xhat.row(r);
        for j in 0..d {
            dgamma[j] += dyr[j] * xr[j];
            dbeta[j] += dyr[j];
        }
    }
    let mut dx = dy.clone();
    match mode {
        // Running statistics are constants: the map is affine per column.
        Mode::Infer => {
            crate::for_each_row_chunk(dx.as_mut_slice(), d, |_, row| {
                for ((v, &g), &s) in row.iter_mut().zip(&bn.gamma).zip(&cache.inv_std) {
                    *v *= g * s;
                }
            });
        }
        // Full derivative through the batch mean and variance.
        Mode::Train => {
            let nf = n as f64;
            crate::for_each_row_chunk(dx.as_mut_slice(), d, |r, row| {
                let xr = cache.xhat.row(r);
                for j in 0..d {
                    row[j] = bn.gamma[j] * cache.inv_std[j]
                        * (row[j] - dbeta[j] / nf - xr[j] * dgamma[j] / nf);
                }
            });
        }
    }
    (dx, dgamma, dbeta)
}

fn mbn_forward_train(bn: &mut ModifiedBatchNorm, x: &Matrix) -> (Matrix, NormCache) {
    let (mean, var) = batch_mean_var(x);
    let (xhat, inv_std) = normalize(x, &mean, &var, bn.epsilon);
    update_running(&mut bn.running_mean, &mut bn.running_var, &mean, &var, bn.momentum);
    let out = xhat.scale(bn.gamma);
    (out, NormCache { xhat, inv_std })
}

fn mbn_forward_infer_cached(bn: &ModifiedBatchNorm, x: &Matrix) -> (Matrix, NormCache) {
    let (xhat, inv_std) = normalize(x, &bn.running_mean, &bn.running_var, bn.epsilon);
    let out = xhat.scale(bn.gamma);
    (out, NormCache { xhat, inv_std })
}

fn mbn_backward(
    bn: &ModifiedBatchNorm,
    cache: &NormCache,
    dy: &Matrix,
    mode: Mode,
) -> (Matrix, f64) {
    let (n, d) = dy.shape();
    // Per-column sums feed both dgamma and the train-mode dx correction.
    let mut col_dg = vec![0.0; d];
    let mut col_db = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xr = cache.xhat.row(r);
        for j in 0..d {
            col_dg[j] += dyr[j] * xr[j];
            col_db[j] += dyr[j];
        }
    }
    let dgamma: f64 = col_dg.iter().sum();
    let mut dx = dy.clone();
    match mode {
        Mode::Infer => {
            crate::for_each_row_chunk(dx.as_mut_slice(), d, |_, row| {
                for (v, &s) in row.iter_mut().zip(&cache.inv_std) {
                    *v *= bn.gamma * s;
                }
            });
        }
        Mode::Train => {
            let nf = n as f64;
            crate::for_each_row_chunk(dx.as_mut_slice(), d, |r, row| {
                let xr = cache.xhat.row(r);
                for j in 0..d {
                    row[j] = bn.gamma * cache.inv_std[j]
                        * (row[j] - col_db[j] / nf - xr[j] * col_dg[j] / nf);
                }
            });
        }
    }
    (dx, dgamma)
}

/// Standalone scalar-scale batch-norm forward (the model forward goes through
/// the same kernels). Train mode requires at least 2 rows and updates running
/// statistics; infer mode applies them.
pub fn mbn_forward(
    values: &Matrix,
    bn: &mut ModifiedBatchNorm,
    mode: Mode,
) -> Result<Matrix> {
    match mode {
        Mode::Train => {
            if values.rows() < 2 {
                return Err(Error::InvalidArgument(
                    "train-mode batch norm needs at least 2 rows".into(),
                ));
            }
            Ok(mbn_forward_train(bn, values).0)
        }
        Mode::Infer => Ok(mbn_forward_infer_cached(bn, values).0),
    }
}

/// Inverted dropout. Train mode keeps each entry with probability `p` and
/// rescales kept entries by `1/p`; infer mode is the identity. The returned
/// mask holds the applied factors (0 or 1/p) and is `None` in infer mode.
pub fn dropout_forward(
    values: &Matrix,
    p: f64,
    mode: Mode,
    rng: Option<&mut RngState>,
) -> Result<(Matrix, Option<Matrix>)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must be in (0, 1], got {p}"
        )));
    }
    match mode {
        Mode::Infer => Ok((values.clone(), None)),
        Mode::Train if p == 1.0 => Ok((values.clone(), None)),
        Mode::Train => {
            let rng = rng.ok_or_else(|| {
                Error::InvalidArgument("train-mode dropout needs an RNG".into())
            })?;
            let inv = 1.0 / p;
            let mut mask = Matrix::zeros(values.rows(), values.cols());
            for v in mask.as_mut_slice() {
                *v = if rng.uniform() < p { inv } else { 0.0 };
            }
            Ok((hadamard(values, &mask), Some(mask)))
        }
    }
}

/// Per-layer caches from a forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    layers: Vec<LayerTrace>,
    layer_count: usize,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone)]
enum LayerTrace {
    Dense { input: Matrix },
    Activation { output: Option<Matrix> },
    Norm(NormCache),
    Dropout { mask: Option<Matrix> },
}

#[derive(Debug, Clone)]
pub enum LayerGrad {
    Dense { dweights: Matrix, dbias: Vec<f64> },
    BatchNorm { dgamma: Vec<f64>, dbeta: Vec<f64> },
    ModifiedBatchNorm { dgamma: f64 },
    None,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Canonical-order flat gradient vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Dense { dweights, dbias } => {
                    out.extend_from_slice(dweights.as_slice());
                    out.extend_from_slice(dbias);
                }
                LayerGrad::BatchNorm { dgamma, dbeta } => {
                    out.extend_from_slice(dgamma);
                    out.extend_from_slice(dbeta);
                }
                LayerGrad::ModifiedBatchNorm { dgamma } => out.push(*dgamma),
                LayerGrad::None => {}
            }
        }
        out
    }
}

fn glorot_dense(in_w: usize, out_w: usize, rng: &mut RngState) -> DenseLayer {
    let limit = (6.0 / (in_w + out_w) as f64).sqrt();
    let mut weights = Matrix::zeros(in_w, out_w);
    for v in weights.as_mut_slice() {
        *v = (rng.uniform() * 2.0 - 1.0) * limit;
    }
    DenseLayer {
        weights,
        bias: vec![0.0; out_w],
    }
}

fn orthogonal_dense(in_w: usize, out_w: usize, rng: &mut RngState) -> Result<DenseLayer> {
    Ok(DenseLayer {
        weights: crate::linalg::semi_orthogonal_init(in_w, out_w, rng)?,
        bias: vec![0.0; out_w],
    })
}
