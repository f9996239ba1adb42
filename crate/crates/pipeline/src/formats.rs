//! On-disk formats. All integers and floats are little-endian.
//!
//! | file       | magic  | layout after magic + `u32` version                                   |
//! |------------|--------|----------------------------------------------------------------------|
//! | features   | `SHRF` | `u32 N, u32 D`, then `N·D` `f32` row-major                           |
//! | checkpoint | `SHRW` | `u32 D, K, C, L`; per layer `u32 out, in`, `out·in` `f64` weights,   |
//! |            |        | `out` `f64` biases; then classifier `C·K` `f64` weights, `C` biases  |
//! | index      | `SHRI` | `u32 K, count`; per entry `u64 id, u32 label, ⌈K/64⌉ u64 words`      |
//! | embeddings | `SHRE` | `u32 K, count`; per entry `u64 id, u32 label, K f64 values`          |
//!
//! Labels files are UTF-8 text with one leaf label name per line.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use shrewd_core::data::Dataset;
use shrewd_core::hashing::{words_for, HashCode, HashIndex};
use shrewd_core::model::{ClassifierParams, DenseLayer, EncoderParams};
use shrewd_core::{Matrix, NodeId, Taxonomy};

pub const FEATURES_MAGIC: &[u8; 4] = b"SHRF";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SHRW";
pub const INDEX_MAGIC: &[u8; 4] = b"SHRI";
pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"SHRE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed file at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("line {line}: unknown label {name:?}")]
    UnknownLabel { line: usize, name: String },
    #[error("{features} feature rows but {labels} labels")]
    ShapeMismatch { features: usize, labels: usize },
    #[error(transparent)]
    Core(#[from] shrewd_core::Error),
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(offset: usize, message: impl Into<String>) -> Self {
        Self::Malformed {
            offset,
            message: message.into(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// Cursor over a byte buffer that reports offsets on failure.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::malformed(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(FormatError::malformed(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(magic)),
            ));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| FormatError::malformed(self.pos, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FormatError::malformed(self.pos, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::malformed(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

/// Serializes a matrix as `f32` rows. Values are narrowed to single precision.
pub fn encode_matrix_f32(m: &Matrix) -> Vec<u8> {
    let mut out = header(FEATURES_MAGIC);
    put_u32(&mut out, m.rows());
    put_u32(&mut out, m.cols());
    out.reserve(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix_f32(bytes: &[u8]) -> Result<Matrix, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURES_MAGIC)?;
    let n = r.u32("row count")? as usize;
    let d = r.u32("column count")? as usize;
    let at = r.pos;
    let values = r.f32s(n * d, "feature values")?;
    r.finish()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::malformed(at + 4 * i, "non-finite value"));
    }
    Ok(Matrix::from_vec(n, d, values).expect("sized by header"))
}

pub fn encode_labels(labels: &[NodeId], taxonomy: &Taxonomy) -> Result<String, FormatError> {
    let mut out = String::new();
    for &l in labels {
        out.push_str(taxonomy.name(l).map_err(shrewd_core::Error::from)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses one leaf name per line. Blank lines are rejected.
pub fn decode_labels(text: &str, taxonomy: &Taxonomy) -> Result<Vec<NodeId>, FormatError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let name = line.trim();
            taxonomy.leaf_id(name).map_err(|_| FormatError::UnknownLabel {
                line: i + 1,
                name: name.to_string(),
            })
        })
        .collect()
}

pub fn save_dataset(ds: &Dataset, taxonomy: &Taxonomy, features: &Path, labels: &Path) -> Result<(), FormatError> {
    write_file(features, &encode_matrix_f32(ds.features()))?;
    write_file(labels, encode_labels(ds.labels(), taxonomy)?.as_bytes())
}

pub fn load_dataset(features: &Path, labels: &Path, taxonomy: &Taxonomy) -> Result<Dataset, FormatError> {
    let m = decode_matrix_f32(&read_file(features)?)?;
    let l = decode_labels(&read_text(labels)?, taxonomy)?;
    if m.rows() != l.len() {
        return Err(FormatError::ShapeMismatch {
            features: m.rows(),
            labels: l.len(),
        });
    }
    Dataset::new(m, l, taxonomy).map_err(|e| FormatError::Core(e.into()))
}

pub fn encode_checkpoint(encoder: &EncoderParams, classifier: &ClassifierParams) -> Vec<u8> {
    let mut out = header(CHECKPOINT_MAGIC);
    put_u32(&mut out, encoder.input_dim());
    put_u32(&mut out, encoder.code_length());
    put_u32(&mut out, classifier.classes());
    put_u32(&mut out, encoder.layers().len());
    for layer in encoder.layers() {
        put_u32(&mut out, layer.outputs());
        put_u32(&mut out, layer.inputs());
        for v in layer.weights.as_slice().iter().chain(&layer.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in classifier.weights.as_slice().iter().chain(&classifier.biases) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderParams, ClassifierParams), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let d = r.u32("input dim")? as usize;
    let k = r.u32("code length")? as usize;
    let c = r.u32("class count")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for l in 0..n_layers {
        let at = r.pos;
        let outputs = r.u32("layer rows")? as usize;
        let inputs = r.u32("layer cols")? as usize;
        let expected_in = if l == 0 { d } else { layers.last().map(DenseLayer::outputs).unwrap_or(0) };
        if inputs != expected_in || (l + 1 == n_layers && outputs != k) {
            return Err(FormatError::malformed(at, format!("layer {l} has shape {outputs}x{inputs}")));
        }
        let weights = r.f64s(outputs * inputs, "layer weights")?;
        let biases = r.f64s(outputs, "layer biases")?;
        layers.push(DenseLayer {
            weights: Matrix::from_vec(outputs, inputs, weights).expect("sized"),
            biases,
        });
    }
    let cw = r.f64s(c * k, "classifier weights")?;
    let cb = r.f64s(c, "classifier biases")?;
    r.finish()?;
    let encoder = EncoderParams::new(layers).map_err(|e| FormatError::malformed(16, e.to_string()))?;
    let classifier = ClassifierParams::new(Matrix::from_vec(c, k, cw).expect("sized"), cb)
        .map_err(|e| FormatError::malformed(16, e.to_string()))?;
    Ok((encoder, classifier))
}

pub fn encode_index(index: &HashIndex) -> Vec<u8> {
    let mut out = header(INDEX_MAGIC);
    put_u32(&mut out, index.bits());
    put_u32(&mut out, index.len());
    for ((code, &id), &label) in index.codes().iter().zip(index.ids()).zip(index.labels()) {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for w in code.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<HashIndex, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(INDEX_MAGIC)?;
    let bits = r.u32("code length")? as usize;
    let count = r.u32("entry count")? as usize;
    let nw = words_for(bits);
    let mut index = HashIndex::new(bits);
    for _ in 0..count {
        let id = r.u64("entry id")?;
        let label = r.u32("entry label")?;
        let at = r.pos;
        let words = (0..nw).map(|_| r.u64("code word")).collect::<Result<Vec<_>, _>>()?;
        let code = HashCode::from_words(words, bits).map_err(|e| FormatError::malformed(at, e.to_string()))?;
        index
            .push(code, id, label)
            .map_err(|e| FormatError::malformed(at, e.to_string()))?;
    }
    r.finish()?;
    Ok(index)
}

pub fn save_index(index: &HashIndex, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_index(index))
}

pub fn load_index(path: &Path) -> Result<HashIndex, FormatError> {
    decode_index(&read_file(path)?)
}

pub fn save_checkpoint(encoder: &EncoderParams, classifier: &ClassifierParams, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_checkpoint(encoder, classifier))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, ClassifierParams), FormatError> {
    decode_checkpoint(&read_file(path)?)
}

/// Continuous embeddings with the sample ids and leaf labels they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub values: Matrix,
    pub ids: Vec<u64>,
    pub labels: Vec<NodeId>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Thresholds every row into an index with the same ids and labels.
    pub fn to_index(&self, threshold: f64) -> HashIndex {
        let codes = (0..self.values.rows())
            .map(|i| HashCode::from_embedding(self.values.row(i), threshold))
            .collect();
        HashIndex::from_parts(self.values.cols(), codes, self.ids.clone(), self.labels.clone())
            .expect("parallel columns")
    }
}

pub fn encode_embeddings(e: &Embeddings) -> Vec<u8> {
    let mut out = header(EMBEDDINGS_MAGIC);
    put_u32(&mut out, e.values.cols());
    put_u32(&mut out, e.len());
    for i in 0..e.len() {
        out.extend_from_slice(&e.ids[i].to_le_bytes());
        out.extend_from_slice(&e.labels[i].to_le_bytes());
        for v in e.values.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Embeddings, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDINGS_MAGIC)?;
    let k = r.u32("code length")? as usize;
    let count = r.u32("entry count")? as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut labels = Vec::with_capacity(count.min(1 << 20));
    let mut values = Vec::with_capacity(count.min(1 << 20) * k);
    for _ in 0..count {
        ids.push(r.u64("entry id")?);
        labels.push(r.u32("entry label")?);
        let at = r.pos;
        let row = r.f64s(k, "embedding values")?;
        if let Some(j) = row.iter().position(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(FormatError::malformed(at + 8 * j, "embedding value outside (0, 1)"));
        }
        values.extend(row);
    }
    r.finish()?;
    Ok(Embeddings {
        values: Matrix::from_vec(count, k, values).expect("sized by header"),
        ids,
        labels,
    })
}

pub fn save_embeddings(e: &Embeddings, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_embeddings(e))
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings, FormatError> {
    decode_embeddings(&read_file(path)?)
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, FormatError> {
    Taxonomy::parse(&read_text(path)?).map_err(|e| FormatError::Core(e.into()))
}
