//! Training objective: distance matching, empirical KL to a Beta target, and
//! cross-entropy on the continuous codes.
//!
//! `total = w_sim·sim + λ1·kl + λ2·cls`, where `w_sim` is 1 except in
//! ablation runs that drop the similarity term.
//!
//! Conventions shared by the gradients:
//! - `sign(0) = 0` for every absolute value.
//! - The embedding scale `τ_z` is a function of `z` and is differentiated through
//!   unless it sits on its floor.
//! - Nearest-neighbor assignments in the KL term are treated as locally constant.

use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::model::{classifier_backward, classifier_forward, ClassifierParams, EmbeddingBatch, ModelError};

/// Lower clamp on nearest-neighbor distances before taking logarithms.
pub const KL_DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("batch of {0} is too small; need at least 2")]
    BatchTooSmall(usize),
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn shape_check(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<(), LossError> {
    if expected == found {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch {
            context,
            expected,
            found,
        })
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimLossConfig {
    pub gamma: f64,
    pub rho: f64,
    pub tau_floor: f64,
}

impl Default for SimLossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            rho: 2.0,
            tau_floor: 1e-8,
        }
    }
}

impl SimLossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.gamma > 0.0) {
            return Err(LossError::InvalidConfig("gamma must be positive"));
        }
        if !(self.rho >= 0.0) {
            return Err(LossError::InvalidConfig("rho must be non-negative"));
        }
        if !(self.tau_floor > 0.0) {
            return Err(LossError::InvalidConfig("tau_floor must be positive"));
        }
        Ok(())
    }
}

/// `γ^ρ / (γ + d)^ρ`: 1 at `d = 0`, slowly decaying with distance.
pub fn pair_weight(d: f64, cfg: &SimLossConfig) -> f64 {
    libm::pow(cfg.gamma / (cfg.gamma + d), cfg.rho)
}

/// Mean of the off-diagonal entries, clamped below by `floor`.
pub fn batch_scale(distances: &Matrix, floor: f64) -> Result<f64, LossError> {
    let b = distances.rows();
    shape_check("batch distances", (b, b), distances.shape())?;
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    Ok(off_diagonal_mean(distances).max(floor))
}

fn off_diagonal_mean(m: &Matrix) -> f64 {
    let b = m.rows();
    let mut sum = 0.0;
    for i in 0..b {
        for (j, v) in m.row(i).iter().enumerate() {
            if i != j {
                sum += v;
            }
        }
    }
    sum / (b * (b - 1)) as f64
}

/// Pairwise Manhattan distances between rows.
pub fn manhattan_distances(z: &Matrix) -> Matrix {
    let b = z.rows();
    let mut out = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(x, y)| (x - y).abs()).sum();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// Distance-matching loss on an embedding batch.
pub fn sim_loss(z: &EmbeddingBatch, d: &Matrix, cfg: &SimLossConfig) -> Result<(f64, Matrix), LossError> {
    sim_loss_values(z.values(), d, cfg)
}

/// [`sim_loss`] on a raw matrix, without the (0, 1) range requirement.
///
/// `(1/B²) Σ_{b,b'} | ‖z_b − z_b'‖₁/τ_z − d_bb'/τ_y | · w(d_bb')`, summed over
/// all ordered pairs including the (zero) diagonal.
pub fn sim_loss_values(z: &Matrix, d: &Matrix, cfg: &SimLossConfig) -> Result<(f64, Matrix), LossError> {
    cfg.validate()?;
    let b = z.rows();
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    shape_check("semantic distances", (b, b), d.shape())?;

    let dz = manhattan_distances(z);
    let mean_z = off_diagonal_mean(&dz);
    let tau_z = mean_z.max(cfg.tau_floor);
    let tau_y = batch_scale(d, cfg.tau_floor)?;
    let norm = 1.0 / (b * b) as f64;

    // coef[i][j] = s_ij · w_ij, so ∂L/∂dz_ij (τ_z held fixed) = norm · coef / τ_z.
    let mut coef = Matrix::zeros(b, b);
    let mut value = 0.0;
    let mut d_tau = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let w = pair_weight(d.get(i, j), cfg);
            let r = dz.get(i, j) / tau_z - d.get(i, j) / tau_y;
            value += r.abs() * w;
            let c = sign(r) * w;
            coef.set(i, j, c);
            d_tau -= c * dz.get(i, j) / (tau_z * tau_z);
        }
    }
    value *= norm;
    d_tau *= norm;

    // τ_z = mean of off-diagonal dz, so each off-diagonal dz_ij gets d_tau / (B(B−1)).
    let via_tau = if mean_z > cfg.tau_floor {
        d_tau / (b * (b - 1)) as f64
    } else {
        0.0
    };

    let k = z.cols();
    let mut grad = Matrix::zeros(b, k);
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            // dz_ij appears as (i, j) and (j, i).
            let g = norm * (coef.get(i, j) + coef.get(j, i)) / tau_z + 2.0 * via_tau;
            if g == 0.0 {
                continue;
            }
            let (zi, zj) = (z.row(i), z.row(j));
            let gi = grad.row_mut(i);
            for c in 0..k {
                gi[c] += g * sign(zi[c] - zj[c]);
            }
        }
    }
    Ok((value, grad))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Index and distance of the nearest row of `set` to `point`, skipping `skip`.
fn nearest(point: &[f64], set: &Matrix, skip: Option<usize>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..set.rows() {
        if Some(j) == skip {
            continue;
        }
        let dist = euclidean(point, set.row(j));
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Empirical KL divergence from the embedding distribution to the target
/// sample, built from nearest-neighbor distances:
/// `(1/B) Σ_b [ln ν(z_b; target) − ln ν(z_b; z∖z_b)]`.
pub fn kl_loss(z: &EmbeddingBatch, target: &Matrix) -> Result<(f64, Matrix), LossError> {
    kl_loss_values(z.values(), target)
}

/// [`kl_loss`] on a raw matrix.
pub fn kl_loss_values(z: &Matrix, target: &Matrix) -> Result<(f64, Matrix), LossError> {
    let (b, k) = z.shape();
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    if target.rows() == 0 {
        return Err(LossError::ShapeMismatch {
            context: "target sample",
            expected: (1, k),
            found: target.shape(),
        });
    }
    shape_check("target sample", (target.rows(), k), target.shape())?;

    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, k);
    for i in 0..b {
        let zi = z.row(i);
        let (t, nu_t) = nearest(zi, target, None);
        let (s, nu_s) = nearest(zi, z, Some(i));
        value += libm::log(nu_t.max(KL_DISTANCE_EPS)) - libm::log(nu_s.max(KL_DISTANCE_EPS));

        // ∂ ln‖u − v‖ / ∂u = (u − v) / ‖u − v‖².
        if nu_t > KL_DISTANCE_EPS {
            let scale = inv_b / (nu_t * nu_t);
            let tr = target.row(t);
            for c in 0..k {
                let v = scale * (zi[c] - tr[c]);
                grad.row_mut(i)[c] += v;
            }
        }
        if nu_s > KL_DISTANCE_EPS {
            let scale = inv_b / (nu_s * nu_s);
            for c in 0..k {
                let v = scale * (z.get(i, c) - z.get(s, c));
                grad.row_mut(i)[c] -= v;
                grad.row_mut(s)[c] += v;
            }
        }
    }
    Ok((value * inv_b, grad))
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cls_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix), LossError> {
    let (b, classes) = logits.shape();
    shape_check("labels", (b, 1), (labels.len(), 1))?;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    if b == 0 {
        return Ok((0.0, Matrix::zeros(0, classes)));
    }
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, classes);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&l| libm::exp(l - max)).sum();
        let log_denom = libm::log(denom);
        value -= row[label] - max - log_denom;
        let g = grad.row_mut(i);
        for (j, &l) in row.iter().enumerate() {
            g[j] = libm::exp(l - max - log_denom) * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((value * inv_b, grad))
}

/// Which supervision the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Weakly supervised: only label distances, no classification term.
    Shrewd,
    /// Fully supervised: adds the classification term.
    Shred,
}

impl Variant {
    pub fn from_cls_weight(lambda_cls: f64) -> Self {
        if lambda_cls > 0.0 {
            Variant::Shred
        } else {
            Variant::Shrewd
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Shrewd => "shrewd",
            Variant::Shred => "shred",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shrewd" | "SHREWD" => Ok(Variant::Shrewd),
            "shred" | "SHRED" => Ok(Variant::Shred),
            _ => Err(LossError::InvalidConfig("variant must be `shrewd` or `shred`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sim: f64,
    /// λ1.
    pub kl: f64,
    /// λ2.
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sim: 1.0,
            kl: 1.0,
            cls: 1.0,
        }
    }
}

impl LossWeights {
    pub fn variant(&self) -> Variant {
        Variant::from_cls_weight(self.cls)
    }
}

/// Everything [`total_loss`] reads for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub z: &'a EmbeddingBatch,
    /// `B × B` semantic distances between the batch labels.
    pub distances: &'a Matrix,
    /// Class index of each row of `z`.
    pub labels: &'a [usize],
    pub classifier: &'a ClassifierParams,
    /// `B' × K` sample from the Beta target.
    pub target: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub sim: f64,
    pub kl: f64,
    pub cls: f64,
    pub weights: LossWeights,
    pub variant: Variant,
    pub grad_z: Matrix,
    pub grad_classifier: ClassifierParams,
}

pub fn total_loss(inputs: &LossInputs<'_>, weights: &LossWeights, cfg: &SimLossConfig) -> Result<LossValue, LossError> {
    let z = inputs.z;
    let (sim, g_sim) = sim_loss(z, inputs.distances, cfg)?;
    let (kl, g_kl) = kl_loss(z, inputs.target)?;
    let logits = classifier_forward(inputs.classifier, z)?;
    let (cls, g_logits) = cls_loss(&logits, inputs.labels)?;
    let (mut grad_classifier, g_cls) = classifier_backward(inputs.classifier, z, &g_logits)?;

    for v in grad_classifier
        .weights
        .as_mut_slice()
        .iter_mut()
        .chain(grad_classifier.biases.iter_mut())
    {
        *v *= weights.cls;
    }
    let grad: Vec<f64> = g_sim
        .as_slice()
        .iter()
        .zip(g_kl.as_slice())
        .zip(g_cls.as_slice())
        .map(|((s, k), c)| weights.sim * s + weights.kl * k + weights.cls * c)
        .collect();
    let grad_z = Matrix::from_vec(z.batch_size(), z.code_length(), grad).expect("same shape");

    Ok(LossValue {
        total: weights.sim * sim + weights.kl * kl + weights.cls * cls,
        sim,
        kl,
        cls,
        weights: *weights,
        variant: weights.variant(),
        grad_z,
        grad_classifier,
    })
}
