//! Datasets, hierarchical synthetic data and Beta target samples.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, StandardNormal};

use crate::hierarchy::{HierarchyError, NodeId, Taxonomy};
use crate::matrix::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("Beta shape parameters must be positive, got alpha={alpha} beta={beta}")]
    InvalidShapeParam { alpha: f64, beta: f64 },
    #[error("taxonomy has no leaves")]
    EmptyTaxonomy,
    #[error("invalid synthetic data parameter: {0}")]
    InvalidConfig(&'static str),
    #[error("shape mismatch: {features} feature rows but {labels} labels")]
    ShapeMismatch { features: usize, labels: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("non-finite feature at row {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Labeled feature rows. Every label is a leaf of the companion taxonomy,
/// and class indices follow [`Taxonomy::leaves`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<NodeId>,
    classes: Vec<NodeId>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<NodeId>, taxonomy: &Taxonomy) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::ShapeMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        for &l in &labels {
            taxonomy.class_index(l)?;
        }
        if let Some(row) = (0..features.rows()).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(DataError::NonFinite(row));
        }
        Ok(Self {
            features,
            labels,
            classes: taxonomy.leaves().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Leaf node id per row.
    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    /// Label universe (all leaves, in class-index order).
    pub fn classes(&self) -> &[NodeId] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class index per row.
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| self.classes.binary_search(l).expect("validated leaf"))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }
}

/// `rows × cols` i.i.d. Beta(α, β) draws, each strictly inside (0, 1).
///
/// Uses Cheng's rejection samplers, which stay exact for shape parameters
/// below one. Draws that round to 0 or 1 in double precision are nudged to the
/// nearest representable interior value.
pub fn beta_sample(alpha: f64, beta: f64, rows: usize, cols: usize, rng: &mut RngState) -> Result<Matrix, DataError> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(DataError::InvalidShapeParam { alpha, beta });
    }
    let dist = Beta::new(alpha, beta).map_err(|_| DataError::InvalidShapeParam { alpha, beta })?;
    let upper = 1.0 - f64::EPSILON / 2.0;
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        rng.sample(dist).clamp(f64::MIN_POSITIVE, upper)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub dim: usize,
    /// Std-dev of each parent-to-child mean step.
    pub diffusion: f64,
    /// Std-dev of samples around their leaf mean.
    pub noise: f64,
}

/// Per-node means: the root sits at the origin and each child is its parent
/// plus an isotropic Gaussian step. Indexed by node id.
pub fn hierarchical_means(t: &Taxonomy, dim: usize, diffusion: f64, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut means = vec![Vec::new(); t.len()];
    means[t.root() as usize] = vec![0.0; dim];
    let mut queue = vec![t.root()];
    let mut head = 0;
    while head < queue.len() {
        let n = queue[head];
        head += 1;
        for &c in &t.nodes()[n as usize].children {
            let parent = &means[n as usize];
            let child: Vec<f64> = parent
                .iter()
                .map(|&m| m + diffusion * rng.sample::<f64, _>(StandardNormal))
                .collect();
            means[c as usize] = child;
            queue.push(c);
        }
    }
    means
}

/// Hierarchical Gaussian diffusion dataset: `per_class` rows for every leaf,
/// grouped by class in leaf order. Feature values are rounded to single
/// precision so the dataset survives the on-disk `f32` format unchanged.
pub fn generate_synthetic(t: &Taxonomy, cfg: &SyntheticConfig, rng: &mut RngState) -> Result<Dataset, DataError> {
    if t.leaves().is_empty() {
        return Err(DataError::EmptyTaxonomy);
    }
    if cfg.per_class == 0 {
        return Err(DataError::InvalidConfig("per_class must be at least 1"));
    }
    if cfg.dim == 0 {
        return Err(DataError::InvalidConfig("dim must be at least 1"));
    }
    if !(cfg.diffusion > 0.0 && cfg.diffusion.is_finite()) {
        return Err(DataError::InvalidConfig("diffusion must be positive"));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(DataError::InvalidConfig("noise must be non-negative"));
    }

    let means = hierarchical_means(t, cfg.dim, cfg.diffusion, rng);
    let n = cfg.per_class * t.leaves().len();
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for &leaf in t.leaves() {
        let mean = &means[leaf as usize];
        for _ in 0..cfg.per_class {
            for &m in mean {
                let v = m + cfg.noise * rng.sample::<f64, _>(StandardNormal);
                data.push(v as f32 as f64);
            }
            labels.push(leaf);
        }
    }
    let features = Matrix::from_vec(n, cfg.dim, data).expect("sized above");
    Dataset::new(features, labels, t)
}
