//! A small convolutional network trained with plain SGD: conv, ReLU,
//! 2x2 max-pool, flatten, and dense layers, with a softmax cross-entropy
//! head and exact reverse-mode gradients. The penultimate dense layer
//! (post-ReLU) doubles as a feature extractor for the SVM head.
//!
//! All math is in double precision, which is what makes the 1e-4
//! finite-difference gradient bound achievable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::BinaryTarget;
use crate::rng::{seeded_rng, shuffle};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("ShapeError: {0}")]
    Shape(String),
    #[error("DataError: {0}")]
    Data(String),
    #[error("DivergenceError: {0}")]
    Divergence(String),
}

/// Dense row-major tensor. Convolutional stages use shape `[c, h, w]`,
/// flat stages use `[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/value mismatch");
        Tensor { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Extracted feature vector; entries are non-negative because the
/// extraction point sits after a ReLU.
pub type FeatureVector = Vec<f64>;

/// Weights indexed as `[out][in][ky][kx]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Weights indexed as `[out][in]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool,
    Flatten,
    Dense(DenseLayer),
}

/// Ordered layer stack. `feature_layer_index` designates the penultimate
/// dense layer; features are read after the ReLU that follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub layers: Vec<Layer>,
    pub feature_layer_index: usize,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 12,
            batch_size: 16,
            seed: 0,
            weight_decay: 1e-4,
        }
    }
}

/// Per-layer parameter gradients; non-parameter layers hold empty vectors.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    fn zeros_like(model: &CnnModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => LayerGrads {
                    weights: vec![0.0; c.weights.len()],
                    bias: vec![0.0; c.bias.len()],
                },
                Layer::Dense(d) => LayerGrads {
                    weights: vec![0.0; d.weights.len()],
                    bias: vec![0.0; d.bias.len()],
                },
                _ => LayerGrads { weights: Vec::new(), bias: Vec::new() },
            })
            .collect();
        Gradients { layers }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl CnnModel {
    /// Checks that the designated feature layer is a dense layer followed
    /// by a ReLU, with at least the head after it.
    pub fn validate_feature_layer(&self) -> Result<(), CnnError> {
        let idx = self.feature_layer_index;
        if idx + 2 > self.layers.len() {
            return Err(CnnError::Shape(format!(
                "feature layer index {idx} out of range for {} layers",
                self.layers.len()
            )));
        }
        match (&self.layers[idx], &self.layers[idx + 1]) {
            (Layer::Dense(_), Layer::Relu) => Ok(()),
            _ => Err(CnnError::Shape(
                "feature layer must be a dense layer followed by a ReLU".into(),
            )),
        }
    }

    /// Feature dimension read off the designated dense layer.
    pub fn feature_dim(&self) -> usize {
        match &self.layers[self.feature_layer_index] {
            Layer::Dense(d) => d.out_dim,
            _ => 0,
        }
    }
}

/// Builds the default architecture for square inputs of the given
/// resolution: two conv/pool stages with growing filter sizes (3x3 then
/// 5x5), a dense feature layer, and a two-logit head. He-style
/// initialization from the seed; biases start at zero.
pub fn default_model(resolution: usize, feature_dim: usize, seed: u64) -> CnnModel {
    assert!(resolution >= 4, "resolution too small for two pooling stages");
    assert!(feature_dim >= 1);
    let mut rng = seeded_rng(seed);
    let half = resolution.div_ceil(2);
    let quarter = half.div_ceil(2);
    let flat = 16 * quarter * quarter;
    let layers = vec![
        Layer::Conv(conv_init(8, 1, 3, 1, 1, &mut rng)),
        Layer::Relu,
        Layer::MaxPool,
        Layer::Conv(conv_init(16, 8, 5, 1, 2, &mut rng)),
        Layer::Relu,
        Layer::MaxPool,
        Layer::Flatten,
        Layer::Dense(dense_init(feature_dim, flat, &mut rng)),
        Layer::Relu,
        Layer::Dense(dense_init(2, feature_dim, &mut rng)),
    ];
    CnnModel { layers, feature_layer_index: 7 }
}

fn conv_init(
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> ConvLayer {
    let fan_in = in_channels * kernel * kernel;
    let scale = (2.0 / fan_in as f64).sqrt();
    let weights = (0..out_channels * fan_in)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    ConvLayer {
        out_channels,
        in_channels,
        kernel,
        stride,
        padding,
        weights,
        bias: vec![0.0; out_channels],
    }
}

fn dense_init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    let scale = (2.0 / in_dim as f64).sqrt();
    let weights = (0..out_dim * in_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    DenseLayer { out_dim, in_dim, weights, bias: vec![0.0; out_dim] }
}

/// Cross-correlation with zero padding. Output spatial size is
/// `floor((H + 2p - k) / s) + 1`.
pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor, CnnError> {
    let [c, h, w] = spatial_shape(input)?;
    if c != layer.in_channels {
        return Err(CnnError::Shape(format!(
            "conv expects {} input channels, got {c}",
            layer.in_channels
        )));
    }
    let k = layer.kernel;
    let (s, p) = (layer.stride, layer.padding);
    if h + 2 * p < k || w + 2 * p < k {
        return Err(CnnError::Shape(format!(
            "padded input {h}x{w} (pad {p}) smaller than kernel {k}"
        )));
    }
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(vec![layer.out_channels, oh, ow]);
    for o in 0..layer.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.bias[o];
                for ci in 0..c {
                    for i in 0..k {
                        let iy = (y * s + i) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let ix = (x * s + j) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = layer.weights[((o * c + ci) * k + i) * k + j];
                            acc += wv * input.values[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out.values[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    Ok(out)
}

/// 2x2 max-pool with stride 2. Odd dimensions replicate the last
/// row/column; ties pick the first element in row-major window order.
/// Returns the pooled tensor and, per output element, the linear input
/// index the maximum came from (for gradient routing).
pub fn maxpool_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>), CnnError> {
    let [c, h, w] = spatial_shape(input)?;
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let iy = (2 * y + dy).min(h - 1);
                        let ix = (2 * x + dx).min(w - 1);
                        let idx = (ci * h + iy) * w + ix;
                        if input.values[idx] > best {
                            best = input.values[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.values[(ci * oh + y) * ow + x] = best;
                argmax[(ci * oh + y) * ow + x] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// `out = W * in + b` over the flattened input.
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor, CnnError> {
    if input.len() != layer.in_dim {
        return Err(CnnError::Shape(format!(
            "dense expects {} inputs, got {}",
            layer.in_dim,
            input.len()
        )));
    }
    let mut out = Tensor::zeros(vec![layer.out_dim]);
    for o in 0..layer.out_dim {
        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc = layer.bias[o];
        for (wv, xv) in row.iter().zip(&input.values) {
            acc += wv * xv;
        }
        out.values[o] = acc;
    }
    Ok(out)
}

/// Elementwise `max(0, v)`.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        values: input.values.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Numerically stable softmax cross-entropy over two logits. Returns the
/// loss and the gradient with respect to the logits (`p - onehot`).
pub fn softmax_cross_entropy(logits: &Tensor, target: BinaryTarget) -> (f64, Tensor) {
    assert_eq!(logits.len(), 2, "binary head expects two logits");
    let m = logits.values[0].max(logits.values[1]);
    let e0 = (logits.values[0] - m).exp();
    let e1 = (logits.values[1] - m).exp();
    let denom = e0 + e1;
    let p = [e0 / denom, e1 / denom];
    let t = target.index();
    let loss = denom.ln() - (logits.values[t] - m);
    let mut grad = Tensor::new(vec![2], vec![p[0], p[1]]);
    grad.values[t] -= 1.0;
    (loss, grad)
}

struct ForwardTrace {
    /// `acts[i]` is the tensor fed into layer `i`; the last entry is the
    /// final output (logits).
    acts: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

fn forward_trace(model: &CnnModel, input: &Tensor) -> Result<ForwardTrace, CnnError> {
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    let mut pool_argmax = Vec::with_capacity(model.layers.len());
    let mut cur = input.clone();
    for layer in &model.layers {
        acts.push(cur.clone());
        let mut argmax = None;
        cur = match layer {
            Layer::Conv(c) => conv2d_forward(&cur, c)?,
            Layer::Relu => relu(&cur),
            Layer::MaxPool => {
                let (t, a) = maxpool_forward(&cur)?;
                argmax = Some(a);
                t
            }
            Layer::Flatten => Tensor::new(vec![cur.len()], cur.values.clone()),
            Layer::Dense(d) => dense_forward(&cur, d)?,
        };
        pool_argmax.push(argmax);
    }
    acts.push(cur);
    Ok(ForwardTrace { acts, pool_argmax })
}

/// Full forward pass to the two logits.
pub fn logits(model: &CnnModel, input: &Tensor) -> Result<Tensor, CnnError> {
    let mut cur = input.clone();
    for layer in &model.layers {
        cur = match layer {
            Layer::Conv(c) => conv2d_forward(&cur, c)?,
            Layer::Relu => relu(&cur),
            Layer::MaxPool => maxpool_forward(&cur)?.0,
            Layer::Flatten => Tensor::new(vec![cur.len()], cur.values.clone()),
            Layer::Dense(d) => dense_forward(&cur, d)?,
        };
    }
    Ok(cur)
}

fn forward_loss(model: &CnnModel, input: &Tensor, target: BinaryTarget) -> Result<f64, CnnError> {
    Ok(softmax_cross_entropy(&logits(model, input)?, target).0)
}

/// Forward pass truncated just after the ReLU that follows the feature
/// layer. Entries are non-negative by construction.
pub fn extract_features(model: &CnnModel, input: &Tensor) -> Result<FeatureVector, CnnError> {
    model.validate_feature_layer()?;
    let mut cur = input.clone();
    for layer in &model.layers[..=model.feature_layer_index + 1] {
        cur = match layer {
            Layer::Conv(c) => conv2d_forward(&cur, c)?,
            Layer::Relu => relu(&cur),
            Layer::MaxPool => maxpool_forward(&cur)?.0,
            Layer::Flatten => Tensor::new(vec![cur.len()], cur.values.clone()),
            Layer::Dense(d) => dense_forward(&cur, d)?,
        };
    }
    Ok(cur.values)
}

/// Reverse-mode gradients for every conv and dense parameter, plus the
/// sample loss. ReLU gates by the forward sign; max-pool routes each
/// output gradient to its recorded argmax.
pub fn backward_pass(
    model: &CnnModel,
    input: &Tensor,
    target: BinaryTarget,
) -> Result<(f64, Gradients), CnnError> {
    let trace = forward_trace(model, input)?;
    let (loss, grad_logits) = softmax_cross_entropy(trace.acts.last().unwrap(), target);
    let mut grads = Gradients::zeros_like(model);
    let mut d = grad_logits;
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let x = &trace.acts[li];
        d = match layer {
            Layer::Dense(dense) => {
                let g = &mut grads.layers[li];
                let mut dx = Tensor::zeros(x.shape.clone());
                for o in 0..dense.out_dim {
                    let go = d.values[o];
                    g.bias[o] += go;
                    let row = o * dense.in_dim;
                    for i in 0..dense.in_dim {
                        g.weights[row + i] += go * x.values[i];
                        dx.values[i] += go * dense.weights[row + i];
                    }
                }
                dx
            }
            Layer::Flatten => Tensor::new(x.shape.clone(), d.values.clone()),
            Layer::Relu => {
                let mut dx = d.clone();
                dx.shape = x.shape.clone();
                for (g, &v) in dx.values.iter_mut().zip(&x.values) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                dx
            }
            Layer::MaxPool => {
                let argmax = trace.pool_argmax[li].as_ref().unwrap();
                let mut dx = Tensor::zeros(x.shape.clone());
                for (out_idx, &src) in argmax.iter().enumerate() {
                    dx.values[src] += d.values[out_idx];
                }
                dx
            }
            Layer::Conv(conv) => {
                let [c, h, w] = spatial_shape(x)?;
                let k = conv.kernel;
                let (s, p) = (conv.stride, conv.padding);
                let oh = d.shape[1];
                let ow = d.shape[2];
                let g = &mut grads.layers[li];
                let mut dx = Tensor::zeros(x.shape.clone());
                for o in 0..conv.out_channels {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let go = d.values[(o * oh + y) * ow + xo];
                            g.bias[o] += go;
                            for ci in 0..c {
                                for i in 0..k {
                                    let iy = (y * s + i) as isize - p as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for j in 0..k {
                                        let ix = (xo * s + j) as isize - p as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let widx = ((o * c + ci) * k + i) * k + j;
                                        let xidx = (ci * h + iy as usize) * w + ix as usize;
                                        g.weights[widx] += go * x.values[xidx];
                                        dx.values[xidx] += go * conv.weights[widx];
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
        };
    }
    Ok((loss, grads))
}

/// Mini-batch SGD over seeded shuffles. Weight decay applies to weights
/// only, never biases. Returns the trained model and the per-epoch mean
/// sample loss (evaluated as each sample is visited).
pub fn train_cnn(
    model: CnnModel,
    data: &[(Tensor, BinaryTarget)],
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<f64>), CnnError> {
    if data.is_empty() {
        return Err(CnnError::Data("no training samples".into()));
    }
    let has_pos = data.iter().any(|(_, t)| *t == BinaryTarget::Positive);
    let has_neg = data.iter().any(|(_, t)| *t == BinaryTarget::Negative);
    if !has_pos || !has_neg {
        return Err(CnnError::Data("training data contains a single class".into()));
    }
    let mut model = model;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut acc = Gradients::zeros_like(&model);
            for &i in batch {
                let (loss, g) = backward_pass(&model, &data[i].0, data[i].1)?;
                if !loss.is_finite() {
                    return Err(CnnError::Divergence(format!(
                        "non-finite loss on sample {i}"
                    )));
                }
                epoch_loss += loss;
                acc.add_assign(&g);
            }
            apply_sgd_step(&mut model, &acc, cfg, batch.len());
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(CnnError::Divergence("non-finite epoch loss".into()));
        }
        history.push(mean);
    }
    Ok((model, history))
}

fn apply_sgd_step(model: &mut CnnModel, grads: &Gradients, cfg: &TrainConfig, batch_len: usize) {
    let scale = 1.0 / batch_len as f64;
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        let (weights, bias) = match layer {
            Layer::Conv(c) => (&mut c.weights, &mut c.bias),
            Layer::Dense(d) => (&mut d.weights, &mut d.bias),
            _ => continue,
        };
        for (w, dw) in weights.iter_mut().zip(&g.weights) {
            *w -= lr * (dw * scale + wd * *w);
        }
        for (b, db) in bias.iter_mut().zip(&g.bias) {
            *b -= lr * db * scale;
        }
    }
}

/// Compares every analytic parameter gradient against central finite
/// differences and returns the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(model: &CnnModel, sample: &Tensor, target: BinaryTarget, epsilon: f64) -> f64 {
    let (_, analytic) = backward_pass(model, sample, target).expect("consistent shapes");
    let mut work = model.clone();
    let mut worst = 0.0f64;
    for li in 0..work.layers.len() {
        let (n_w, n_b) = match &work.layers[li] {
            Layer::Conv(c) => (c.weights.len(), c.bias.len()),
            Layer::Dense(d) => (d.weights.len(), d.bias.len()),
            _ => (0, 0),
        };
        for which in 0..2 {
            let count = if which == 0 { n_w } else { n_b };
            for idx in 0..count {
                let orig = *param_mut(&mut work, li, which, idx);
                *param_mut(&mut work, li, which, idx) = orig + epsilon;
                let up = forward_loss(&work, sample, target).expect("consistent shapes");
                *param_mut(&mut work, li, which, idx) = orig - epsilon;
                let dn = forward_loss(&work, sample, target).expect("consistent shapes");
                *param_mut(&mut work, li, which, idx) = orig;
                let numeric = (up - dn) / (2.0 * epsilon);
                let a = if which == 0 {
                    analytic.layers[li].weights[idx]
                } else {
                    analytic.layers[li].bias[idx]
                };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn param_mut(model: &mut CnnModel, li: usize, which: usize, idx: usize) -> &mut f64 {
    match &mut model.layers[li] {
        Layer::Conv(c) => {
            if which == 0 {
                &mut c.weights[idx]
            } else {
                &mut c.bias[idx]
            }
        }
        Layer::Dense(d) => {
            if which == 0 {
                &mut d.weights[idx]
            } else {
                &mut d.bias[idx]
            }
        }
        _ => unreachable!("layer has no parameters"),
    }
}

fn spatial_shape(t: &Tensor) -> Result<[usize; 3], CnnError> {
    match t.shape.as_slice() {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(CnnError::Shape(format!("expected [c, h, w] tensor, got {other:?}"))),
    }
}
