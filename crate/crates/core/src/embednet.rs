//! Multi-layer embedding network `F(x; θ)` with exact forward and backward
//! passes over row-major batches.
//!
//! Layers are affine maps, ReLU and batch normalization. Forward passes are
//! pure: batch statistics computed in train mode are returned in the
//! [`ForwardTrace`] and folded into the running estimates separately with
//! [`EmbeddingNet::absorb_batch_stats`].

use std::fmt;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{purpose, SeededStream};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Affine { in_dim: usize, out_dim: usize },
    Relu,
    BatchNorm { dim: usize, epsilon: f64 },
}

impl LayerSpec {
    /// Compact textual form used in checkpoints: `affine:784:256`, `relu`,
    /// `batch_norm:256:1e-5`.
    pub fn encode(&self) -> String {
        match *self {
            LayerSpec::Affine { in_dim, out_dim } => format!("affine:{in_dim}:{out_dim}"),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::BatchNorm { dim, epsilon } => format!("batch_norm:{dim}:{epsilon:e}"),
        }
    }

    pub fn decode(s: &str) -> Result<LayerSpec> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Format(format!("unrecognized layer spec `{s}`"));
        match parts.as_slice() {
            ["affine", a, b] => Ok(LayerSpec::Affine {
                in_dim: a.parse().map_err(|_| bad())?,
                out_dim: b.parse().map_err(|_| bad())?,
            }),
            ["relu"] => Ok(LayerSpec::Relu),
            ["batch_norm", d, e] => Ok(LayerSpec::BatchNorm {
                dim: d.parse().map_err(|_| bad())?,
                epsilon: e.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Where batch normalization sits relative to the ReLU in hidden blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormOrder {
    #[default]
    BatchNormThenRelu,
    ReluThenBatchNorm,
}

/// Hidden blocks `affine → {batch_norm, relu}` followed by a final affine
/// projection to `embed_dim` with no activation.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], embed_dim: usize, batch_norm: bool, order: NormOrder) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::Affine { in_dim: prev, out_dim: h });
        let bn = LayerSpec::BatchNorm { dim: h, epsilon: BN_EPSILON };
        match (batch_norm, order) {
            (false, _) => specs.push(LayerSpec::Relu),
            (true, NormOrder::BatchNormThenRelu) => specs.extend([bn, LayerSpec::Relu]),
            (true, NormOrder::ReluThenBatchNorm) => specs.extend([LayerSpec::Relu, bn]),
        }
        prev = h;
    }
    specs.push(LayerSpec::Affine { in_dim: prev, out_dim: embed_dim });
    specs
}

/// Checks that dimensions chain and returns `(input_dim, output_dim)`.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<(usize, usize)> {
    let first = match specs.first() {
        Some(LayerSpec::Affine { in_dim, .. }) => *in_dim,
        _ => return Err(Error::Spec("network must start with an affine layer".into())),
    };
    if matches!(specs.last(), Some(LayerSpec::Relu)) {
        return Err(Error::Spec("network must end with an affine or batch_norm layer".into()));
    }
    let mut width = first;
    for (i, spec) in specs.iter().enumerate() {
        match *spec {
            LayerSpec::Affine { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Spec(format!("layer {i}: affine dimensions must be positive")));
                }
                if in_dim != width {
                    return Err(Error::Spec(format!("layer {i}: expects width {in_dim}, receives {width}")));
                }
                width = out_dim;
            }
            LayerSpec::BatchNorm { dim, epsilon } => {
                if dim != width {
                    return Err(Error::Spec(format!("layer {i}: batch_norm over {dim} features, receives {width}")));
                }
                if !(epsilon > 0.0) {
                    return Err(Error::Spec(format!("layer {i}: batch_norm epsilon must be positive")));
                }
            }
            LayerSpec::Relu => {}
        }
    }
    Ok((first, width))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = x Wᵀ + b` with `W` stored `out_dim × in_dim`.
    Affine { weight: Matrix, bias: Vec<f64> },
    Relu,
    BatchNorm { scale: Vec<f64>, offset: Vec<f64>, running_mean: Vec<f64>, running_var: Vec<f64>, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Names one trainable tensor, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId {
    pub layer: usize,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Scale,
    Offset,
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TensorKind::Weight => "affine weight",
            TensorKind::Bias => "affine bias",
            TensorKind::Scale => "batch_norm scale",
            TensorKind::Offset => "batch_norm offset",
        };
        write!(f, "layer {} {}", self.layer, kind)
    }
}

/// The network's parameters: one entry per layer spec, including the
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
}

/// Gradients shaped like the trainable tensors of an [`EmbeddingNet`], in
/// [`EmbeddingNet::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &EmbeddingNet) -> Self {
        ParamGrads { tensors: net.trainable().iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Affine { input: Matrix },
    Relu { output: Matrix },
    BatchNorm { normalized: Matrix, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
}

/// Per-layer activations and batch statistics from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    batch: usize,
    caches: Vec<LayerCache>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn layer_count(&self) -> usize {
        self.caches.len()
    }
}

impl EmbeddingNet {
    /// He-normal weights (`N(0, 2/fan_in)`), zero biases, unit batch-norm
    /// scale, zero offset, running statistics `(0, 1)`.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut stream = SeededStream::new(seed, purpose::INIT);
        let layers = specs
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Affine { in_dim, out_dim } => {
                    let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
                    let w = (0..in_dim * out_dim).map(|_| normal.sample(stream.rng())).collect();
                    Layer::Affine { weight: Matrix::from_vec(out_dim, in_dim, w).expect("shape"), bias: vec![0.0; out_dim] }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::BatchNorm { dim, epsilon } => Layer::BatchNorm {
                    scale: vec![1.0; dim],
                    offset: vec![0.0; dim],
                    running_mean: vec![0.0; dim],
                    running_var: vec![1.0; dim],
                    epsilon,
                },
            })
            .collect();
        Ok(EmbeddingNet { specs: specs.to_vec(), layers })
    }

    /// Assembles a network from explicit layers, checking them against `specs`.
    pub fn from_layers(specs: Vec<LayerSpec>, layers: Vec<Layer>) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.len() != layers.len() {
            return Err(Error::consistency(format!("{} specs but {} layers", specs.len(), layers.len())));
        }
        for (i, (spec, layer)) in specs.iter().zip(&layers).enumerate() {
            let ok = match (spec, layer) {
                (LayerSpec::Affine { in_dim, out_dim }, Layer::Affine { weight, bias }) => {
                    weight.rows() == *out_dim && weight.cols() == *in_dim && bias.len() == *out_dim
                }
                (LayerSpec::Relu, Layer::Relu) => true,
                (
                    LayerSpec::BatchNorm { dim, epsilon },
                    Layer::BatchNorm { scale, offset, running_mean, running_var, epsilon: e },
                ) => [scale, offset, running_mean, running_var].iter().all(|v| v.len() == *dim) && e == epsilon,
                _ => false,
            };
            if !ok {
                return Err(Error::consistency(format!("layer {i} does not match its spec {}", spec.encode())));
            }
        }
        Ok(EmbeddingNet { specs, layers })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        match self.specs[0] {
            LayerSpec::Affine { in_dim, .. } => in_dim,
            _ => unreachable!("validated"),
        }
    }

    pub fn output_dim(&self) -> usize {
        validate_specs(&self.specs).expect("validated").1
    }

    pub fn has_batch_norm(&self) -> bool {
        self.specs.iter().any(|s| matches!(s, LayerSpec::BatchNorm { .. }))
    }

    /// Trainable tensors in canonical order: per affine layer weight then
    /// bias, per batch-norm layer scale then offset.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Affine { weight, bias } => out.extend([weight.as_slice(), bias.as_slice()]),
                Layer::BatchNorm { scale, offset, .. } => out.extend([scale.as_slice(), offset.as_slice()]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Affine { weight, bias } => out.extend([weight.as_mut_slice(), bias.as_mut_slice()]),
                Layer::BatchNorm { scale, offset, .. } => out.extend([scale.as_mut_slice(), offset.as_mut_slice()]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Affine { .. } => out.extend([TensorKind::Weight, TensorKind::Bias].map(|kind| TensorId { layer: i, kind })),
                Layer::BatchNorm { .. } => out.extend([TensorKind::Scale, TensorKind::Offset].map(|kind| TensorId { layer: i, kind })),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Affine { weight, bias } => weight.is_finite() && bias.iter().all(|v| v.is_finite()),
            Layer::Relu => true,
            Layer::BatchNorm { scale, offset, running_mean, running_var, .. } => {
                [scale, offset, running_mean, running_var].iter().all(|v| v.iter().all(|x| x.is_finite()))
            }
        })
    }

    /// Embeds a `b × d` batch. Train mode normalizes with batch statistics
    /// (and needs `b ≥ 2` if the net has batch norm); eval mode uses the
    /// running estimates and is a deterministic function of its inputs.
    pub fn forward(&self, input: &Matrix, mode: Mode) -> Result<(Matrix, ForwardTrace)> {
        if input.cols() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        if !input.is_finite() {
            return Err(Error::numeric("non-finite network input"));
        }
        let b = input.rows();
        if mode == Mode::Train && self.has_batch_norm() && b < 2 {
            return Err(Error::Mode(format!("train-mode batch_norm needs at least 2 rows, got {b}")));
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            match layer {
                Layer::Affine { weight, bias } => {
                    let mut y = x.matmul_transposed(weight);
                    for r in 0..b {
                        for (v, bj) in y.row_mut(r).iter_mut().zip(bias) {
                            *v += bj;
                        }
                    }
                    caches.push(LayerCache::Affine { input: x });
                    x = y;
                }
                Layer::Relu => {
                    for v in x.as_mut_slice() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    caches.push(LayerCache::Relu { output: x.clone() });
                }
                Layer::BatchNorm { scale, offset, running_mean, running_var, epsilon } => {
                    let f = x.cols();
                    let (mean, var) = match mode {
                        Mode::Train => column_moments(&x),
                        Mode::Eval => (running_mean.clone(), running_var.clone()),
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                    let mut normalized = Matrix::zeros(b, f);
                    for r in 0..b {
                        let xr = x.row(r);
                        let nr = normalized.row_mut(r);
                        for j in 0..f {
                            nr[j] = (xr[j] - mean[j]) * inv_std[j];
                        }
                    }
                    let mut y = Matrix::zeros(b, f);
                    for r in 0..b {
                        let nr = normalized.row(r);
                        let yr = y.row_mut(r);
                        for j in 0..f {
                            yr[j] = scale[j] * nr[j] + offset[j];
                        }
                    }
                    caches.push(LayerCache::BatchNorm { normalized, inv_std, mean, var });
                    x = y;
                }
            }
        }
        if !x.is_finite() {
            return Err(Error::numeric("network produced a non-finite embedding"));
        }
        Ok((x, ForwardTrace { mode, batch: b, caches }))
    }

    /// Convenience eval-mode forward.
    pub fn embed(&self, input: &Matrix) -> Result<Matrix> {
        self.forward(input, Mode::Eval).map(|(e, _)| e)
    }

    /// Updates running statistics with the batch moments of a train-mode
    /// trace: `r ← (1 − m)·r + m·batch`, using the unbiased batch variance.
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace, momentum: f64) -> Result<()> {
        self.check_trace(trace)?;
        if trace.mode != Mode::Train {
            return Ok(());
        }
        let correction = trace.batch as f64 / (trace.batch as f64 - 1.0);
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (Layer::BatchNorm { running_mean, running_var, .. }, LayerCache::BatchNorm { mean, var, .. }) = (layer, cache) {
                for j in 0..mean.len() {
                    running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
                    running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * correction;
                }
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::consistency(format!(
                "trace has {} layers, network has {}",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate() {
            let ok = match (layer, cache) {
                (Layer::Affine { weight, .. }, LayerCache::Affine { input }) => input.cols() == weight.cols(),
                (Layer::Relu, LayerCache::Relu { .. }) => true,
                (Layer::BatchNorm { scale, .. }, LayerCache::BatchNorm { inv_std, .. }) => inv_std.len() == scale.len(),
                _ => false,
            };
            if !ok {
                return Err(Error::consistency(format!("trace layer {i} does not match the network")));
            }
        }
        Ok(())
    }

    /// Back-propagates `∂L/∂embeddings` (`b × D`) through a train-mode trace.
    /// Returns parameter gradients and `∂L/∂input`.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<(ParamGrads, Matrix)> {
        self.check_trace(trace)?;
        if trace.mode != Mode::Train {
            return Err(Error::Mode("backward needs a train-mode trace".into()));
        }
        if grad_output.rows() != trace.batch || grad_output.cols() != self.output_dim() {
            return Err(Error::consistency(format!(
                "output gradient is {}x{}, expected {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                trace.batch,
                self.output_dim()
            )));
        }

        let b = trace.batch;
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_output.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Affine { weight, bias }, LayerCache::Affine { input }) => {
                    let mut gw = vec![0.0; weight.rows() * weight.cols()];
                    g.transposed_matmul_into(input, &mut gw);
                    let mut gb = vec![0.0; bias.len()];
                    for r in 0..b {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    per_layer[i] = vec![gw, gb];
                    g = g.matmul(weight);
                }
                (Layer::Relu, LayerCache::Relu { output }) => {
                    for (gv, &o) in g.as_mut_slice().iter_mut().zip(output.as_slice()) {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                (Layer::BatchNorm { scale, .. }, LayerCache::BatchNorm { normalized, inv_std, .. }) => {
                    let f = scale.len();
                    let mut g_scale = vec![0.0; f];
                    let mut g_offset = vec![0.0; f];
                    for r in 0..b {
                        let gr = g.row(r);
                        let nr = normalized.row(r);
                        for j in 0..f {
                            g_scale[j] += gr[j] * nr[j];
                            g_offset[j] += gr[j];
                        }
                    }
                    // dx = (γ/σ)·(dy − mean(dy) − x̂·mean(dy·x̂))
                    let bf = b as f64;
                    for r in 0..b {
                        let nr = normalized.row(r);
                        let gr = g.row_mut(r);
                        for j in 0..f {
                            gr[j] = scale[j] * inv_std[j] * (gr[j] - g_offset[j] / bf - nr[j] * g_scale[j] / bf);
                        }
                    }
                    per_layer[i] = vec![g_scale, g_offset];
                }
                _ => unreachable!("trace checked"),
            }
        }
        Ok((ParamGrads { tensors: per_layer.into_iter().flatten().collect() }, g))
    }
}

/// Per-column mean and biased variance.
fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (b, f) = (x.rows(), x.cols());
    let mut mean = vec![0.0; f];
    for r in 0..b {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; f];
    for r in 0..b {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= b as f64);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: usize, cols: usize, seed: f64) -> Matrix {
        let data = (0..rows * cols).map(|i| ((i as f64 + 1.0) * seed).sin() * 2.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [LayerSpec::Affine { in_dim: 4, out_dim: 2 }];
        assert_eq!(EmbeddingNet::init(&specs, 7).unwrap(), EmbeddingNet::init(&specs, 7).unwrap());
        assert_ne!(EmbeddingNet::init(&specs, 7).unwrap(), EmbeddingNet::init(&specs, 8).unwrap());
    }

    #[test]
    fn incompatible_specs_are_rejected() {
        let specs = [LayerSpec::Affine { in_dim: 4, out_dim: 3 }, LayerSpec::Affine { in_dim: 2, out_dim: 2 }];
        assert!(matches!(EmbeddingNet::init(&specs, 0), Err(Error::Spec(_))));
        assert!(matches!(EmbeddingNet::init(&[LayerSpec::Relu], 0), Err(Error::Spec(_))));
        let trailing = [LayerSpec::Affine { in_dim: 2, out_dim: 2 }, LayerSpec::Relu];
        assert!(matches!(EmbeddingNet::init(&trailing, 0), Err(Error::Spec(_))));
    }

    #[test]
    fn trailing_batch_norm_sets_output_dim() {
        let mut specs = mlp_specs(4, &[6], 3, true, NormOrder::default());
        specs.push(LayerSpec::BatchNorm { dim: 3, epsilon: BN_EPSILON });
        let net = EmbeddingNet::init(&specs, 0).unwrap();
        assert_eq!(net.output_dim(), 3);
        let (out, _) = net.forward(&Matrix::identity(4), Mode::Train).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..4).map(|r| out.get(r, c)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_propagates_bias_chain() {
        let specs = mlp_specs(5, &[8, 6], 3, false, NormOrder::default());
        let net = EmbeddingNet::init(&specs, 3).unwrap();
        let (out, _) = net.forward(&Matrix::zeros(4, 5), Mode::Eval).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn he_scaling_of_weight_variance() {
        let specs = [LayerSpec::Affine { in_dim: 100, out_dim: 100 }];
        let net = EmbeddingNet::init(&specs, 5).unwrap();
        let w = net.trainable()[0];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (w.len() as f64 - 1.0);
        assert!((var / 0.02 - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let specs = vec![LayerSpec::Affine { in_dim: 3, out_dim: 3 }];
        let layers = vec![Layer::Affine { weight: Matrix::identity(3), bias: vec![0.0; 3] }];
        let net = EmbeddingNet::from_layers(specs, layers).unwrap();
        let x = batch(4, 3, 0.3);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_clamps_negative_rows() {
        let specs = vec![LayerSpec::Affine { in_dim: 2, out_dim: 2 }, LayerSpec::Relu, LayerSpec::Affine { in_dim: 2, out_dim: 2 }];
        let layers = vec![
            Layer::Affine { weight: Matrix::identity(2), bias: vec![-10.0, -10.0] },
            Layer::Relu,
            Layer::Affine { weight: Matrix::identity(2), bias: vec![0.0, 0.0] },
        ];
        let net = EmbeddingNet::from_layers(specs, layers).unwrap();
        let (y, _) = net.forward(&batch(3, 2, 0.7), Mode::Eval).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_batch_norm_matches_scale_and_offset() {
        let specs = vec![
            LayerSpec::Affine { in_dim: 3, out_dim: 3 },
            LayerSpec::BatchNorm { dim: 3, epsilon: BN_EPSILON },
            LayerSpec::Affine { in_dim: 3, out_dim: 3 },
        ];
        let scale = vec![0.5, 2.0, 1.5];
        let offset = vec![-1.0, 0.25, 3.0];
        let layers = vec![
            Layer::Affine { weight: Matrix::identity(3), bias: vec![0.0; 3] },
            Layer::BatchNorm {
                scale: scale.clone(),
                offset: offset.clone(),
                running_mean: vec![0.0; 3],
                running_var: vec![1.0; 3],
                epsilon: BN_EPSILON,
            },
            Layer::Affine { weight: Matrix::identity(3), bias: vec![0.0; 3] },
        ];
        let net = EmbeddingNet::from_layers(specs, layers).unwrap();
        // Wide inputs keep the epsilon's shrinkage of the variance below 1e-6.
        let mut x = batch(64, 3, 1.3);
        x.as_mut_slice().iter_mut().for_each(|v| *v *= 100.0);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        let (mean, var) = column_moments(&y);
        for j in 0..3 {
            assert!((mean[j] - offset[j]).abs() < 1e-6);
            assert!((var[j] - scale[j] * scale[j]).abs() < 1e-6, "{} vs {}", var[j], scale[j] * scale[j]);
        }
    }

    #[test]
    fn single_row_train_batch_norm_is_mode_error() {
        let specs = mlp_specs(3, &[4], 2, true, NormOrder::default());
        let net = EmbeddingNet::init(&specs, 1).unwrap();
        assert!(matches!(net.forward(&batch(1, 3, 0.2), Mode::Train), Err(Error::Mode(_))));
        assert!(net.forward(&batch(1, 3, 0.2), Mode::Eval).is_ok());
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let net = EmbeddingNet::init(&[LayerSpec::Affine { in_dim: 2, out_dim: 2 }], 1).unwrap();
        let x = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(net.forward(&x, Mode::Eval), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let specs = mlp_specs(4, &[6, 5], 3, true, NormOrder::default());
        let net = EmbeddingNet::init(&specs, 2).unwrap();
        let (_, trace) = net.forward(&batch(8, 4, 0.9), Mode::Train).unwrap();
        let (grads, gin) = net.backward(&trace, &Matrix::zeros(8, 3)).unwrap();
        assert!(grads.is_zero());
        assert!(gin.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_get_duplicated_input_gradients_without_batch_norm() {
        let specs = mlp_specs(3, &[5], 2, false, NormOrder::default());
        let net = EmbeddingNet::init(&specs, 4).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| batch(1, 3, 0.4 + i as f64).row(0).to_vec()).collect();
        rows.push(rows[1].clone());
        let x = Matrix::from_rows(&rows).unwrap();
        let (y, trace) = net.forward(&x, Mode::Train).unwrap();
        let (_, gin) = net.backward(&trace, &y).unwrap();
        assert_eq!(gin.row(1), gin.row(4));
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let a = EmbeddingNet::init(&mlp_specs(3, &[4], 2, false, NormOrder::default()), 1).unwrap();
        let b = EmbeddingNet::init(&mlp_specs(3, &[4, 4], 2, false, NormOrder::default()), 1).unwrap();
        let (_, trace) = a.forward(&batch(4, 3, 0.1), Mode::Train).unwrap();
        assert!(matches!(b.backward(&trace, &Matrix::zeros(4, 2)), Err(Error::Consistency(_))));
        let (_, eval_trace) = a.forward(&batch(4, 3, 0.1), Mode::Eval).unwrap();
        assert!(matches!(a.backward(&eval_trace, &Matrix::zeros(4, 2)), Err(Error::Mode(_))));
    }

    #[test]
    fn eval_forward_is_bitwise_repeatable() {
        let net = EmbeddingNet::init(&mlp_specs(6, &[7, 5], 3, true, NormOrder::default()), 9).unwrap();
        let x = batch(10, 6, 0.77);
        assert_eq!(net.embed(&x).unwrap(), net.embed(&x).unwrap());
    }

    #[test]
    fn spec_encoding_roundtrip() {
        for spec in mlp_specs(784, &[256, 128], 32, true, NormOrder::ReluThenBatchNorm) {
            assert_eq!(LayerSpec::decode(&spec.encode()).unwrap(), spec);
        }
        assert!(LayerSpec::decode("conv:3").is_err());
    }
}
