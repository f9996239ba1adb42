//! Feed-forward encoder with rectifier hidden layers and a logistic output,
//! plus the linear classifier head that reads the continuous embeddings.
//!
//! Gradients are derived by hand; [`gradient_check`] compares any analytic
//! gradient against central finite differences.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::matrix::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("activation cache does not belong to these parameters")]
    StaleCache,
    #[error("embedding entry {value} at ({row}, {col}) is outside (0, 1)")]
    EmbeddingOutOfRange { row: usize, col: usize, value: f64 },
    #[error("invalid layer stack: {0}")]
    InvalidLayers(String),
    #[error("loss evaluator returned different results for identical parameters")]
    NonDeterministicLoss,
}

fn shape_check(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch {
            context,
            expected,
            found,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            biases: vec![0.0; outputs],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut RngState) -> Self {
        let limit = libm::sqrt(6.0 / (inputs + outputs) as f64);
        Self {
            weights: Matrix::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit)),
            biases: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `x · Wᵀ + b`.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        for b in 0..x.rows() {
            let xr = x.row(b);
            let or = out.row_mut(b);
            for (o, slot) in or.iter_mut().enumerate() {
                *slot = dot(self.weights.row(o), xr) + self.biases[o];
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Largest double below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, clamped so the result is strictly inside (0, 1).
#[inline]
pub fn logistic(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// Encoder weights: rectifier hidden layers and a logistic output layer of width K.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<DenseLayer>,
}

impl EncoderParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::InvalidLayers("no layers".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.biases.len() != layer.outputs() {
                return Err(ModelError::InvalidLayers(alloc::format!(
                    "layer {l} has {} biases for {} outputs",
                    layer.biases.len(),
                    layer.outputs()
                )));
            }
            if layer.inputs() == 0 || layer.outputs() == 0 {
                return Err(ModelError::InvalidLayers(alloc::format!("layer {l} is empty")));
            }
            if l > 0 && layers[l - 1].outputs() != layer.inputs() {
                return Err(ModelError::InvalidLayers(alloc::format!(
                    "layer {l} expects {} inputs but layer {} produces {}",
                    layer.inputs(),
                    l - 1,
                    layers[l - 1].outputs()
                )));
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(ModelError::NonFiniteInput("encoder parameters"));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized stack with widths `dims = [D, h1, .., K]`.
    pub fn init(dims: &[usize], rng: &mut RngState) -> Result<Self, ModelError> {
        if dims.len() < 2 {
            return Err(ModelError::InvalidLayers("need at least input and output widths".into()));
        }
        Self::new(dims.windows(2).map(|w| DenseLayer::glorot(w[0], w[1], rng)).collect())
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn code_length(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths `[D, h1, .., K]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::outputs));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    /// Parameters in layer order, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        shape_check("flat encoder parameters", (self.num_params(), 1), (flat.len(), 1))?;
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    /// FNV-1a over shapes and parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for l in &self.layers {
            h.write_u64(l.inputs() as u64);
            h.write_u64(l.outputs() as u64);
            for v in l.weights.as_slice().iter().chain(&l.biases) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `C × K`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl ClassifierParams {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self, ModelError> {
        shape_check("classifier biases", (weights.rows(), 1), (biases.len(), 1))?;
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::NonFiniteInput("classifier parameters"));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(classes: usize, code_length: usize) -> Self {
        Self {
            weights: Matrix::zeros(classes, code_length),
            biases: vec![0.0; classes],
        }
    }

    pub fn init(classes: usize, code_length: usize, rng: &mut RngState) -> Self {
        let l = DenseLayer::glorot(code_length, classes, rng);
        Self {
            weights: l.weights,
            biases: l.biases,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn code_length(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.biases.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.weights.as_slice().to_vec();
        out.extend_from_slice(&self.biases);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        shape_check("flat classifier parameters", (self.num_params(), 1), (flat.len(), 1))?;
        let nw = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.biases.copy_from_slice(&flat[nw..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.biases.iter().all(|b| b.is_finite())
    }
}

/// Encoder outputs for one batch; every entry lies strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    values: Matrix,
    ids: Vec<u64>,
}

impl EmbeddingBatch {
    pub fn new(values: Matrix, ids: Vec<u64>) -> Result<Self, ModelError> {
        shape_check("embedding ids", (values.rows(), 1), (ids.len(), 1))?;
        if values.rows() == 0 {
            return Err(ModelError::ShapeMismatch {
                context: "embedding batch",
                expected: (1, values.cols()),
                found: (0, values.cols()),
            });
        }
        for i in 0..values.rows() {
            for (j, &v) in values.row(i).iter().enumerate() {
                if !(v > 0.0 && v < 1.0) {
                    return Err(ModelError::EmbeddingOutOfRange { row: i, col: j, value: v });
                }
            }
        }
        Ok(Self { values, ids })
    }

    /// Ids `0..B`.
    pub fn from_values(values: Matrix) -> Result<Self, ModelError> {
        let ids = (0..values.rows() as u64).collect();
        Self::new(values, ids)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self, ModelError> {
        shape_check("embedding ids", (self.values.rows(), 1), (ids.len(), 1))?;
        self.ids = ids;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.values.rows()
    }

    pub fn code_length(&self) -> usize {
        self.values.cols()
    }
}

/// Everything [`encoder_backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    output: Matrix,
    fingerprint: u64,
}

pub fn encoder_forward(p: &EncoderParams, x: &Matrix) -> Result<(EmbeddingBatch, ForwardCache), ModelError> {
    shape_check("encoder input", (x.rows(), p.input_dim()), x.shape())?;
    if x.rows() == 0 {
        return Err(ModelError::ShapeMismatch {
            context: "encoder input",
            expected: (1, p.input_dim()),
            found: x.shape(),
        });
    }
    if !x.is_finite() {
        return Err(ModelError::NonFiniteInput("encoder input"));
    }
    let last = p.layers.len() - 1;
    let mut inputs = Vec::with_capacity(p.layers.len());
    let mut pre = Vec::with_capacity(p.layers.len());
    let mut h = x.clone();
    for (l, layer) in p.layers.iter().enumerate() {
        let a = layer.affine(&h);
        let act = if l == last {
            Matrix::from_vec(a.rows(), a.cols(), a.as_slice().iter().map(|&v| logistic(v)).collect())
        } else {
            Matrix::from_vec(a.rows(), a.cols(), a.as_slice().iter().map(|&v| relu(v)).collect())
        }
        .expect("same shape");
        inputs.push(core::mem::replace(&mut h, act));
        pre.push(a);
    }
    let batch = EmbeddingBatch::from_values(h.clone())?;
    Ok((
        batch,
        ForwardCache {
            inputs,
            pre,
            output: h,
            fingerprint: p.fingerprint(),
        },
    ))
}

/// Backpropagates `grad_z = ∂L/∂z` to the encoder parameters.
pub fn encoder_backward(p: &EncoderParams, cache: &ForwardCache, grad_z: &Matrix) -> Result<EncoderParams, ModelError> {
    if cache.fingerprint != p.fingerprint() || cache.inputs.len() != p.layers.len() {
        return Err(ModelError::StaleCache);
    }
    shape_check("embedding gradient", cache.output.shape(), grad_z.shape())?;

    let batch = grad_z.rows();
    // delta = ∂L/∂(pre-activation) of the current layer.
    let mut delta = Matrix::from_fn(batch, p.code_length(), |b, k| {
        let s = cache.output.get(b, k);
        grad_z.get(b, k) * s * (1.0 - s)
    });
    let mut grads = p.zeros_like();
    for l in (0..p.layers.len()).rev() {
        let layer = &p.layers[l];
        let input = &cache.inputs[l];
        let g = &mut grads.layers[l];
        for b in 0..batch {
            let xr = input.row(b);
            for o in 0..layer.outputs() {
                let d = delta.get(b, o);
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                for (w, &x) in g.weights.row_mut(o).iter_mut().zip(xr) {
                    *w += d * x;
                }
            }
        }
        if l == 0 {
            break;
        }
        let below = &cache.pre[l - 1];
        let mut next = Matrix::zeros(batch, layer.inputs());
        for b in 0..batch {
            let nr = next.row_mut(b);
            for o in 0..layer.outputs() {
                let d = delta.get(b, o);
                if d == 0.0 {
                    continue;
                }
                for (n, &w) in nr.iter_mut().zip(layer.weights.row(o)) {
                    *n += d * w;
                }
            }
            for (n, &a) in nr.iter_mut().zip(below.row(b)) {
                if a <= 0.0 {
                    *n = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}

/// Logits `z · Wᵀ + b`, one row per embedding.
pub fn classifier_forward(c: &ClassifierParams, z: &EmbeddingBatch) -> Result<Matrix, ModelError> {
    shape_check(
        "classifier input",
        (z.batch_size(), c.code_length()),
        z.values().shape(),
    )?;
    let mut logits = Matrix::zeros(z.batch_size(), c.classes());
    for b in 0..z.batch_size() {
        let zr = z.values().row(b);
        for (j, slot) in logits.row_mut(b).iter_mut().enumerate() {
            *slot = dot(c.weights.row(j), zr) + c.biases[j];
        }
    }
    Ok(logits)
}

/// Returns the classifier parameter gradients and `∂L/∂z`.
pub fn classifier_backward(
    c: &ClassifierParams,
    z: &EmbeddingBatch,
    grad_logits: &Matrix,
) -> Result<(ClassifierParams, Matrix), ModelError> {
    shape_check("logit gradient", (z.batch_size(), c.classes()), grad_logits.shape())?;
    shape_check(
        "classifier input",
        (z.batch_size(), c.code_length()),
        z.values().shape(),
    )?;
    let mut g = ClassifierParams::zeros(c.classes(), c.code_length());
    let mut grad_z = Matrix::zeros(z.batch_size(), c.code_length());
    for b in 0..z.batch_size() {
        let zr = z.values().row(b);
        for j in 0..c.classes() {
            let d = grad_logits.get(b, j);
            g.biases[j] += d;
            for (w, &x) in g.weights.row_mut(j).iter_mut().zip(zr) {
                *w += d * x;
            }
            for (gz, &w) in grad_z.row_mut(b).iter_mut().zip(c.weights.row(j)) {
                *gz += d * w;
            }
        }
    }
    Ok((g, grad_z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared in absolute terms.
    pub abs_floor: f64,
    /// Above this many coordinates a random subsample of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss` with central finite
/// differences. `loss` maps a flat parameter vector to `(value, gradient)`.
pub fn gradient_check<F>(mut loss: F, params: &[f64], cfg: &GradCheckConfig) -> Result<GradCheckReport, ModelError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (v0, grad) = loss(params);
    let (v1, grad1) = loss(params);
    if v0.to_bits() != v1.to_bits() || grad != grad1 {
        return Err(ModelError::NonDeterministicLoss);
    }
    shape_check("analytic gradient", (params.len(), 1), (grad.len(), 1))?;

    let coords: Vec<usize> = if params.len() > cfg.max_coords {
        let mut rng = RngState::new(cfg.seed);
        let mut picked = rand::seq::index::sample(&mut rng, params.len(), cfg.max_coords).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..params.len()).collect()
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: coords.len(),
        passed: true,
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + cfg.step;
        let up = loss(&probe).0;
        probe[i] = orig - cfg.step;
        let down = loss(&probe).0;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel = (analytic - numeric).abs() / denom;
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coord = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
