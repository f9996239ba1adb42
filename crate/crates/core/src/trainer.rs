//! Seeded minibatch training with Adam.
//!
//! Each step draws the next slice of a shuffled epoch, encodes it, draws a
//! fresh `B × K` Beta target sample, evaluates the combined loss and applies
//! one Adam update to the encoder and classifier jointly. Everything random
//! comes from independent streams split off the configured seed, so a run is
//! bit-for-bit reproducible.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::data::{beta_sample, Dataset};
use crate::hierarchy::Taxonomy;
use crate::losses::{total_loss, LossInputs, LossWeights, SimLossConfig, Variant};
use crate::matrix::Matrix;
use crate::model::{encoder_backward, encoder_forward, ClassifierParams, EmbeddingBatch, EncoderParams, ModelError};
use crate::rng::RngState;
use crate::Error;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_TARGET: u64 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter and gradient lengths differ: {params} vs {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("dataset of {samples} samples is smaller than the batch size {batch}")]
    DatasetTooSmall { samples: usize, batch: usize },
    #[error("loss diverged at step {step}: total={total} sim={sim} kl={kl} cls={cls}")]
    DivergedLoss {
        step: u64,
        total: f64,
        sim: f64,
        kl: f64,
        cls: f64,
    },
    #[error("parameters became non-finite after step {step}")]
    NonFiniteParams { step: u64 },
    #[error("encoder produced non-finite embeddings at step {step}")]
    NonFiniteEmbeddings { step: u64 },
}

impl TrainError {
    /// Whether the error reports numerical divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            TrainError::DivergedLoss { .. } | TrainError::NonFiniteParams { .. } | TrainError::NonFiniteEmbeddings { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            first: alloc::vec![0.0; n],
            second: alloc::vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step: u64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || moments.first.len() != params.len() || moments.second.len() != params.len() {
        return Err(TrainError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    if step == 0 {
        return Err(TrainError::InvalidConfig("adam step index starts at 1".into()));
    }
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub code_length: usize,
    pub hidden: Vec<usize>,
    /// Weight of the similarity term; 1 except in ablations.
    pub lambda_sim: f64,
    /// λ1, weight of the KL term.
    pub lambda_kl: f64,
    /// λ2, weight of the classification term.
    pub lambda_cls: f64,
    pub sim: SimLossConfig,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            code_length: 16,
            hidden: alloc::vec![256, 128],
            lambda_sim: 1.0,
            lambda_kl: 1.0,
            lambda_cls: 1.0,
            sim: SimLossConfig::default(),
            beta_alpha: 0.1,
            beta_beta: 0.1,
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 50,
            seed: 0,
            variant: Variant::Shred,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            sim: self.lambda_sim,
            kl: self.lambda_kl,
            cls: self.lambda_cls,
        }
    }

    /// Switches variant; SHREWD forces `λ2 = 0`.
    pub fn set_variant(&mut self, variant: Variant) {
        self.variant = variant;
        if variant == Variant::Shrewd {
            self.lambda_cls = 0.0;
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.code_length == 0 {
            return bad("code_length must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        for (name, v) in [
            ("learning_rate", self.adam.learning_rate),
            ("adam_eps", self.adam.eps),
            ("beta_alpha", self.beta_alpha),
            ("beta_beta", self.beta_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidConfig(alloc::format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        for (name, v) in [
            ("lambda_sim", self.lambda_sim),
            ("lambda_kl", self.lambda_kl),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidConfig(alloc::format!("{name} must be non-negative")));
            }
        }
        self.sim
            .validate()
            .map_err(|e| TrainError::InvalidConfig(alloc::format!("{e}")))?;
        if Variant::from_cls_weight(self.lambda_cls) != self.variant {
            return Err(TrainError::InvalidConfig(alloc::format!(
                "variant {} is inconsistent with lambda_cls = {}",
                self.variant.as_str(),
                self.lambda_cls
            )));
        }
        Ok(())
    }

    /// Encoder widths `[D, hidden.., K]`.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = alloc::vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.code_length);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub sim: f64,
    pub kl: f64,
    pub cls: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: Option<f64>,
    /// SHA-256 (hex) of the final encoder and classifier parameters.
    pub params_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub log: TrainLog,
}

/// SHA-256 over the little-endian bytes of every parameter, encoder first.
pub fn params_digest(encoder: &EncoderParams, classifier: &ClassifierParams) -> String {
    let mut h = Sha256::new();
    for v in encoder.to_flat().iter().chain(classifier.to_flat().iter()) {
        h.update(v.to_le_bytes());
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize().iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset, taxonomy: &Taxonomy) -> Result<TrainedModel, Error> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(TrainError::DatasetTooSmall {
            samples: dataset.len(),
            batch: cfg.batch_size,
        }
        .into());
    }
    let root = RngState::new(cfg.seed);
    let mut init_rng = root.split(STREAM_INIT);
    let mut shuffle_rng = root.split(STREAM_SHUFFLE);
    let mut target_rng = root.split(STREAM_TARGET);

    let mut encoder = EncoderParams::init(&cfg.dims(dataset.dim()), &mut init_rng)?;
    let mut classifier = ClassifierParams::init(dataset.num_classes(), cfg.code_length, &mut init_rng);

    let class_distances = taxonomy.distance_matrix(dataset.classes())?;
    let classes = dataset.class_indices();
    let weights = cfg.weights();
    let n_enc = encoder.num_params();
    let mut flat = encoder.to_flat();
    flat.extend(classifier.to_flat());
    let mut moments = AdamMoments::zeros(flat.len());

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::new();
    let mut step = 0u64;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks_exact(cfg.batch_size) {
            step += 1;
            let x = dataset.features().select_rows(batch);
            let (z, cache) = encoder_forward(&encoder, &x).map_err(|e| match e {
                ModelError::EmbeddingOutOfRange { .. } => Error::from(TrainError::NonFiniteEmbeddings { step }),
                e => e.into(),
            })?;
            let z = z.with_ids(batch.iter().map(|&i| i as u64).collect())?;
            let batch_classes: Vec<usize> = batch.iter().map(|&i| classes[i]).collect();
            let distances = class_distances.gather(&batch_classes);
            let target = beta_sample(cfg.beta_alpha, cfg.beta_beta, cfg.batch_size, cfg.code_length, &mut target_rng)?;

            let loss = total_loss(
                &LossInputs {
                    z: &z,
                    distances: &distances,
                    labels: &batch_classes,
                    classifier: &classifier,
                    target: &target,
                },
                &weights,
                &cfg.sim,
            )?;
            if !(loss.total.is_finite() && loss.grad_z.is_finite()) {
                return Err(TrainError::DivergedLoss {
                    step,
                    total: loss.total,
                    sim: loss.sim,
                    kl: loss.kl,
                    cls: loss.cls,
                }
                .into());
            }
            records.push(StepRecord {
                step,
                sim: loss.sim,
                kl: loss.kl,
                cls: loss.cls,
                total: loss.total,
            });

            let mut grads = encoder_backward(&encoder, &cache, &loss.grad_z)?.to_flat();
            grads.extend(loss.grad_classifier.to_flat());
            adam_step(&mut flat, &grads, &mut moments, step, &cfg.adam)?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteParams { step }.into());
            }
            encoder.set_flat(&flat[..n_enc])?;
            classifier.set_flat(&flat[n_enc..])?;
        }
    }

    let params_digest = params_digest(&encoder, &classifier);
    Ok(TrainedModel {
        encoder,
        classifier,
        log: TrainLog {
            records,
            wall_time_secs: None,
            params_digest,
        },
    })
}

/// Encodes every row of `features` in chunks of `chunk` rows.
pub fn encode(encoder: &EncoderParams, features: &Matrix, chunk: usize) -> Result<EmbeddingBatch, Error> {
    let chunk = chunk.max(1);
    let mut values = Vec::with_capacity(features.rows() * encoder.code_length());
    let rows: Vec<usize> = (0..features.rows()).collect();
    for part in rows.chunks(chunk) {
        let (z, _) = encoder_forward(encoder, &features.select_rows(part))?;
        values.extend_from_slice(z.values().as_slice());
    }
    let m = Matrix::from_vec(features.rows(), encoder.code_length(), values).expect("sized by chunks");
    Ok(EmbeddingBatch::from_values(m)?)
}
