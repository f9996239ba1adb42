//! Bit-packed binary codes and exact Hamming-distance retrieval.

use alloc::vec::Vec;

use crate::hierarchy::NodeId;
use crate::model::EmbeddingBatch;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashingError {
    #[error("code length mismatch: expected {expected} bits, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{words} words cannot hold a {bits}-bit code")]
    WordCount { bits: usize, words: usize },
    #[error("bits above position {bits} are set")]
    PaddingBitsSet { bits: usize },
    #[error("parallel index columns differ in length: {codes} codes, {ids} ids, {labels} labels")]
    ColumnMismatch { codes: usize, ids: usize, labels: usize },
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// A K-bit code; bit `j` lives in bit `j % 64` of word `j / 64`. Padding bits
/// above `K - 1` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    words: Vec<u64>,
    bits: usize,
}

impl HashCode {
    pub fn zeros(bits: usize) -> Self {
        Self {
            words: alloc::vec![0; words_for(bits)],
            bits,
        }
    }

    pub fn from_words(words: Vec<u64>, bits: usize) -> Result<Self, HashingError> {
        if words.len() != words_for(bits) {
            return Err(HashingError::WordCount {
                bits,
                words: words.len(),
            });
        }
        if !bits.is_multiple_of(64) {
            let last = words[words.len() - 1];
            if last >> (bits % 64) != 0 {
                return Err(HashingError::PaddingBitsSet { bits });
            }
        }
        Ok(Self { words, bits })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            code.set(j, b);
        }
        code
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.bits).map(|j| self.get(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.bits, "bit {j} out of range");
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, j: usize, value: bool) {
        assert!(j < self.bits, "bit {j} out of range");
        let mask = 1u64 << (j % 64);
        if value {
            self.words[j / 64] |= mask;
        } else {
            self.words[j / 64] &= !mask;
        }
    }

    /// Thresholds one embedding row: bit set iff value ≥ threshold.
    pub fn from_embedding(row: &[f64], threshold: f64) -> Self {
        let mut code = Self::zeros(row.len());
        for (j, &v) in row.iter().enumerate() {
            if v >= threshold {
                code.words[j / 64] |= 1 << (j % 64);
            }
        }
        code
    }
}

/// One code per embedding row.
pub fn binarize(z: &EmbeddingBatch, threshold: f64) -> Vec<HashCode> {
    (0..z.batch_size())
        .map(|b| HashCode::from_embedding(z.values().row(b), threshold))
        .collect()
}

#[inline]
fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32, HashingError> {
    if a.bits != b.bits {
        return Err(HashingError::LengthMismatch {
            expected: a.bits,
            found: b.bits,
        });
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub id: u64,
    pub label: NodeId,
    pub distance: u32,
}

/// Codes with parallel sample ids and labels, searched by full scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashIndex {
    bits: usize,
    codes: Vec<HashCode>,
    ids: Vec<u64>,
    labels: Vec<NodeId>,
}

impl HashIndex {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            codes: Vec::new(),
            ids: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(bits: usize, codes: Vec<HashCode>, ids: Vec<u64>, labels: Vec<NodeId>) -> Result<Self, HashingError> {
        if codes.len() != ids.len() || codes.len() != labels.len() {
            return Err(HashingError::ColumnMismatch {
                codes: codes.len(),
                ids: ids.len(),
                labels: labels.len(),
            });
        }
        if let Some(c) = codes.iter().find(|c| c.bits != bits) {
            return Err(HashingError::LengthMismatch {
                expected: bits,
                found: c.bits,
            });
        }
        Ok(Self {
            bits,
            codes,
            ids,
            labels,
        })
    }

    pub fn push(&mut self, code: HashCode, id: u64, label: NodeId) -> Result<(), HashingError> {
        if code.bits != self.bits {
            return Err(HashingError::LengthMismatch {
                expected: self.bits,
                found: code.bits,
            });
        }
        self.codes.push(code);
        self.ids.push(id);
        self.labels.push(label);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[HashCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    /// The `k` nearest codes ordered by (distance, id), ties between equal ids
    /// falling back to insertion order.
    pub fn query_topk(&self, q: &HashCode, k: usize) -> Result<Vec<Neighbor>, HashingError> {
        if k == 0 {
            return Err(HashingError::InvalidK);
        }
        if self.codes.is_empty() {
            return Err(HashingError::EmptyIndex);
        }
        if q.bits != self.bits {
            return Err(HashingError::LengthMismatch {
                expected: self.bits,
                found: q.bits,
            });
        }
        let mut scored: Vec<(u32, u64, usize)> = self
            .codes
            .iter()
            .enumerate()
            .map(|(pos, c)| (hamming_words(&q.words, &c.words), self.ids[pos], pos))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable(k - 1);
            scored.truncate(k);
        }
        scored.sort_unstable();
        Ok(scored
            .into_iter()
            .map(|(distance, id, pos)| Neighbor {
                id,
                label: self.labels[pos],
                distance,
            })
            .collect())
    }
}
