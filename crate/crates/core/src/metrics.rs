//! Retrieval scores: mAP with same-class relevance, and hierarchical precision.
//!
//! Graded relevance between a query label and an item label is
//! `1 - semantic_distance`. For a ranking of the database (query removed):
//!
//! - `HP@k` = sum of relevance over the top `k` retrieved items, divided by
//!   the largest sum any `k` database items could reach. A zero best sum
//!   counts as a perfect score.
//! - `AHP@K` = mean of `HP@k` for `k = 1..=K`.
//! - `mAHP@K` = mean of `AHP@K` over queries.
//!
//! Means over queries use compensated summation, so the result does not
//! depend on accumulation order beyond rounding.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::hashing::{HashCode, HashIndex, HashingError};
use crate::hierarchy::{HierarchyError, NodeId, Taxonomy};
use crate::matrix::Matrix;
use crate::sum::{compensated_mean, CompensatedSum};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("cutoff {k} exceeds the {available} candidates available")]
    KTooLarge { k: usize, available: usize },
    #[error("cutoff must be at least 1")]
    InvalidK,
    #[error("no query has a same-class item in the database")]
    NoRelevantItems,
    #[error("no queries given")]
    NoQueries,
    #[error("{rows} embedding rows but {ids} ids and {labels} labels")]
    ColumnMismatch { rows: usize, ids: usize, labels: usize },
    #[error("query has {found} dimensions, database has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Hashing(#[from] HashingError),
}

pub fn relevance(t: &Taxonomy, query: NodeId, item: NodeId) -> Result<f64, MetricsError> {
    Ok(1.0 - t.semantic_distance(query, item)?)
}

/// `HP@k` for every `k` in `1..=k_max`, given relevances in ranked order.
pub fn hp_curve_from_relevance(ranked: &[f64], k_max: usize) -> Result<Vec<f64>, MetricsError> {
    if k_max == 0 {
        return Err(MetricsError::InvalidK);
    }
    if k_max > ranked.len() {
        return Err(MetricsError::KTooLarge {
            k: k_max,
            available: ranked.len(),
        });
    }
    let mut best = ranked.to_vec();
    best.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut got = 0.0;
    let mut ideal = 0.0;
    let mut out = Vec::with_capacity(k_max);
    for k in 0..k_max {
        got += ranked[k];
        ideal += best[k];
        out.push(if ideal > 0.0 { (got / ideal).min(1.0) } else { 1.0 });
    }
    Ok(out)
}

fn ranked_relevance(ranked: &[NodeId], query: NodeId, t: &Taxonomy) -> Result<Vec<f64>, MetricsError> {
    ranked.iter().map(|&l| relevance(t, query, l)).collect()
}

/// Hierarchical precision at cutoff `k` for a complete ranking of item labels.
pub fn hp_at_k(ranked: &[NodeId], query: NodeId, k: usize, t: &Taxonomy) -> Result<f64, MetricsError> {
    let rel = ranked_relevance(ranked, query, t)?;
    Ok(hp_curve_from_relevance(&rel, k)?[k - 1])
}

/// Mean of `HP@k` over `k = 1..=k_max`.
pub fn ahp_at_k(ranked: &[NodeId], query: NodeId, k_max: usize, t: &Taxonomy) -> Result<f64, MetricsError> {
    let rel = ranked_relevance(ranked, query, t)?;
    Ok(compensated_mean(hp_curve_from_relevance(&rel, k_max)?))
}

/// Average precision with binary relevance; `None` when nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut acc = CompensatedSum::default();
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            acc.add(hits as f64 / (i + 1) as f64);
        }
    }
    Some(acc.value() / total as f64)
}

/// Produces a full ranking of a database for one query.
pub trait Ranker {
    type Key;

    /// Labels of all database items in rank order, skipping items whose id
    /// equals `exclude`.
    fn rank(&self, key: &Self::Key, exclude: u64) -> Result<Vec<NodeId>, MetricsError>;
}

impl Ranker for HashIndex {
    type Key = HashCode;

    fn rank(&self, key: &HashCode, exclude: u64) -> Result<Vec<NodeId>, MetricsError> {
        Ok(self
            .query_topk(key, self.len())?
            .into_iter()
            .filter(|n| n.id != exclude)
            .map(|n| n.label)
            .collect())
    }
}

/// Continuous embeddings ranked by Manhattan distance, ties broken by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanRanker {
    values: Matrix,
    ids: Vec<u64>,
    labels: Vec<NodeId>,
}

impl ManhattanRanker {
    pub fn new(values: Matrix, ids: Vec<u64>, labels: Vec<NodeId>) -> Result<Self, MetricsError> {
        if values.rows() != ids.len() || values.rows() != labels.len() {
            return Err(MetricsError::ColumnMismatch {
                rows: values.rows(),
                ids: ids.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { values, ids, labels })
    }
}

impl Ranker for ManhattanRanker {
    type Key = Vec<f64>;

    fn rank(&self, key: &Vec<f64>, exclude: u64) -> Result<Vec<NodeId>, MetricsError> {
        if key.len() != self.values.cols() {
            return Err(MetricsError::DimensionMismatch {
                expected: self.values.cols(),
                found: key.len(),
            });
        }
        let mut scored: Vec<(f64, u64, usize)> = (0..self.values.rows())
            .filter(|&i| self.ids[i] != exclude)
            .map(|i| {
                let d: f64 = self.values.row(i).iter().zip(key).map(|(a, b)| (a - b).abs()).sum();
                (d, self.ids[i], i)
            })
            .collect();
        scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Ok(scored.into_iter().map(|(_, _, i)| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query<K> {
    pub id: u64,
    pub label: NodeId,
    pub key: K,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanAp {
    pub map: f64,
    pub evaluated: usize,
    /// Queries without any same-class database item.
    pub skipped: usize,
}

pub fn mean_ap<R: Ranker>(ranker: &R, queries: &[Query<R::Key>]) -> Result<MeanAp, MetricsError> {
    let mut aps = Vec::with_capacity(queries.len());
    for q in queries {
        let ranked = ranker.rank(&q.key, q.id)?;
        let rel: Vec<bool> = ranked.iter().map(|&l| l == q.label).collect();
        if let Some(ap) = average_precision(&rel) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(MetricsError::NoRelevantItems);
    }
    Ok(MeanAp {
        map: compensated_mean(aps.iter().copied()),
        evaluated: aps.len(),
        skipped: queries.len() - aps.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub id: u64,
    /// `None` when the query has no same-class item.
    pub ap: Option<f64>,
    pub ahp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub map: f64,
    pub map_skipped: usize,
    pub k_max: usize,
    /// `mAHP@k` at standard cutoffs up to `k_max`, always including `k_max`.
    pub mahp_at_k: BTreeMap<usize, f64>,
    /// `(k, mean HP@k)` for `k = 1..=k_max`.
    pub hp_curve: Vec<(usize, f64)>,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricsReport {
    /// `mAHP@k_max`.
    pub fn mahp(&self) -> f64 {
        self.mahp_at_k[&self.k_max]
    }
}

const REPORT_CUTOFFS: [usize; 10] = [1, 5, 10, 25, 50, 100, 250, 500, 1000, 2500];

/// Relevance between leaves, looked up by class index.
struct RelevanceTable<'a> {
    taxonomy: &'a Taxonomy,
    values: Matrix,
}

impl<'a> RelevanceTable<'a> {
    fn new(t: &'a Taxonomy) -> Result<Self, MetricsError> {
        let d = t.distance_matrix(t.leaves())?;
        let values = Matrix::from_fn(d.len(), d.len(), |i, j| 1.0 - d.get(i, j));
        Ok(Self { taxonomy: t, values })
    }

    fn get(&self, a: NodeId, b: NodeId) -> Result<f64, MetricsError> {
        let i = self.taxonomy.class_index(a)?;
        let j = self.taxonomy.class_index(b)?;
        Ok(self.values.get(i, j))
    }
}

/// Scores every query against the ranker's database.
pub fn evaluate<R: Ranker>(
    ranker: &R,
    queries: &[Query<R::Key>],
    t: &Taxonomy,
    k_max: usize,
) -> Result<MetricsReport, MetricsError> {
    if queries.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    if k_max == 0 {
        return Err(MetricsError::InvalidK);
    }
    let table = RelevanceTable::new(t)?;
    let mut curve_sums = vec![CompensatedSum::default(); k_max];
    let mut per_query = Vec::with_capacity(queries.len());
    let mut hp_rows = Vec::with_capacity(queries.len());
    for q in queries {
        let ranked = ranker.rank(&q.key, q.id)?;
        let rel: Vec<f64> = ranked
            .iter()
            .map(|&l| table.get(q.label, l))
            .collect::<Result<_, _>>()?;
        let hp = hp_curve_from_relevance(&rel, k_max)?;
        for (acc, &v) in curve_sums.iter_mut().zip(&hp) {
            acc.add(v);
        }
        let same: Vec<bool> = ranked.iter().map(|&l| l == q.label).collect();
        per_query.push(QueryMetrics {
            id: q.id,
            ap: average_precision(&same),
            ahp: compensated_mean(hp.iter().copied()),
        });
        hp_rows.push(hp);
    }

    let n = queries.len() as f64;
    let hp_curve = curve_sums
        .iter()
        .enumerate()
        .map(|(k, s)| (k + 1, s.value() / n))
        .collect();

    let mut mahp_at_k = BTreeMap::new();
    for cutoff in REPORT_CUTOFFS.iter().copied().filter(|&c| c < k_max).chain([k_max]) {
        let mahp = compensated_mean(hp_rows.iter().map(|hp| compensated_mean(hp[..cutoff].iter().copied())));
        mahp_at_k.insert(cutoff, mahp);
    }

    let aps: Vec<f64> = per_query.iter().filter_map(|q| q.ap).collect();
    let map_skipped = per_query.len() - aps.len();
    let map = if aps.is_empty() {
        0.0
    } else {
        compensated_mean(aps.iter().copied())
    };

    Ok(MetricsReport {
        map,
        map_skipped,
        k_max,
        mahp_at_k,
        hp_curve,
        per_query,
    })
}

/// Leave-one-out queries: every index entry queries the rest of the index.
pub fn self_queries(index: &HashIndex) -> Vec<Query<HashCode>> {
    index
        .codes()
        .iter()
        .zip(index.ids())
        .zip(index.labels())
        .map(|((c, &id), &label)| Query { id, label, key: c.clone() })
        .collect()
}
