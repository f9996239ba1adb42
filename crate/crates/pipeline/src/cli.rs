//! Command-line pipeline: `gen-data → train → encode → index → query / eval`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 training diverged.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use shrewd_core::data::{generate_synthetic, Dataset, SyntheticConfig};
use shrewd_core::hashing::{HashCode, HashIndex};
use shrewd_core::losses::Variant;
use shrewd_core::metrics::{evaluate, self_queries, ManhattanRanker, MetricsReport, Query};
use shrewd_core::trainer::{encode, train, TrainConfig};
use shrewd_core::RngState;

use crate::artifacts::{hp_curve_csv, train_log_csv, Report, RunManifest};
use crate::config::{self, ConfigError};
use crate::formats::{self, Embeddings, FormatError, EMBEDDINGS_MAGIC, INDEX_MAGIC};

#[derive(Debug, Parser)]
#[command(name = "shrewd", version, about = "Hierarchy-aware binary hashing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a hierarchical Gaussian synthetic dataset.
    GenData(GenDataArgs),
    /// Train an encoder and write a checkpoint plus training log.
    Train(TrainArgs),
    /// Embed a dataset with a checkpoint; writes embeddings and a binary index.
    Encode(EncodeArgs),
    /// Build a binary index from an embeddings file.
    Index(IndexArgs),
    /// Print the nearest codes for one query.
    Query(QueryArgs),
    /// Score retrieval with mAP and mAHP.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Taxonomy file: one `parent child` edge per line.
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub diffusion: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Rows per class moved to a separate query split.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `shrewd` forces lambda_cls = 0; `shred` requires lambda_cls > 0.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub code_length: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Added to row numbers to form sample ids; keeps query ids disjoint from
    /// database ids.
    #[arg(long, default_value_t = 0)]
    pub id_offset: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query with the code stored under this id (excluded from results).
    #[arg(long, conflicts_with = "code", required_unless_present = "code")]
    pub id: Option<u64>,
    /// Query with an explicit code written as a `0`/`1` string, bit 0 first.
    #[arg(long)]
    pub code: Option<String>,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    /// Print leaf names instead of node ids.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Database: an embeddings file, or an index file for binary retrieval.
    #[arg(long)]
    pub database: PathBuf,
    /// Query set in the same format; defaults to leave-one-out over the database.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Rank continuous embeddings by Manhattan distance instead of Hamming.
    #[arg(long)]
    pub no_binarize: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 250)]
    pub k_max: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] shrewd_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("training diverged: {0}")]
    Diverged(shrewd_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) => 3,
            _ => 1,
        }
    }
}

/// Names of the files each command writes inside its `--out` directory.
pub mod files {
    pub const FEATURES: &str = "features.bin";
    pub const LABELS: &str = "labels.txt";
    pub const QUERY_FEATURES: &str = "query_features.bin";
    pub const QUERY_LABELS: &str = "query_labels.txt";
    pub const CHECKPOINT: &str = "checkpoint.bin";
    pub const TRAIN_LOG: &str = "train_log.csv";
    pub const CONFIG: &str = "config.txt";
    pub const EMBEDDINGS: &str = "embeddings.bin";
    pub const INDEX: &str = "index.bin";
    pub const REPORT: &str = "report.json";
    pub const HP_CURVE: &str = "hp_curve.csv";
    pub const MANIFEST: &str = "manifest.json";
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_manifest(m: &RunManifest, dir: &Path) -> Result<(), CliError> {
    formats::write_file(&dir.join(files::MANIFEST), m.to_json().as_bytes())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Encode(a) => encode_cmd(&a),
        Command::Index(a) => index_cmd(&a),
        Command::Query(a) => query_cmd(&a, &mut std::io::stdout().lock()),
        Command::Eval(a) => eval_cmd(&a).map(|_| ()),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let taxonomy = formats::load_taxonomy(&a.taxonomy)?;
    if a.holdout >= a.per_class {
        return Err(CliError::Invalid(format!(
            "--holdout {} must be smaller than --per-class {}",
            a.holdout, a.per_class
        )));
    }
    let cfg = SyntheticConfig {
        per_class: a.per_class,
        dim: a.dim,
        diffusion: a.diffusion,
        noise: a.noise,
    };
    let ds = generate_synthetic(&taxonomy, &cfg, &mut RngState::new(a.seed)).map_err(shrewd_core::Error::from)?;
    create_dir(&a.out)?;
    let (db, queries) = split_holdout(&ds, a.per_class, a.holdout);
    let mut m = RunManifest::new("gen-data");
    m.seed = Some(a.seed);
    for (k, v) in [
        ("per_class", a.per_class.to_string()),
        ("dim", a.dim.to_string()),
        ("diffusion", a.diffusion.to_string()),
        ("noise", a.noise.to_string()),
        ("holdout", a.holdout.to_string()),
    ] {
        m.settings.insert(k.into(), v);
    }
    m.input(&a.taxonomy)?;
    let mut outputs = vec![(db, files::FEATURES, files::LABELS)];
    if let Some(q) = queries {
        outputs.push((q, files::QUERY_FEATURES, files::QUERY_LABELS));
    }
    for (part, f, l) in outputs {
        let (f, l) = (a.out.join(f), a.out.join(l));
        formats::save_dataset(&part, &taxonomy, &f, &l)?;
        m.output(&f)?;
        m.output(&l)?;
    }
    write_manifest(&m, &a.out)
}

/// Splits the class-grouped synthetic rows: the last `holdout` rows of each
/// class become queries.
fn split_holdout(ds: &Dataset, per_class: usize, holdout: usize) -> (Dataset, Option<Dataset>) {
    if holdout == 0 {
        return (ds.clone(), None);
    }
    let (db, q): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|i| i % per_class < per_class - holdout);
    (ds.subset(&db), Some(ds.subset(&q)))
}

/// Resolves the effective configuration: file, then command-line overrides.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let parsed = config::parse(&formats::read_text(path)?)?;
            parsed.warnings.iter().for_each(|w| warn(w));
            parsed.config
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        if a.config.is_some() && seed != cfg.seed {
            warn(&format!("--seed {seed} overrides configured seed {}", cfg.seed));
        }
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(k) = a.code_length {
        cfg.code_length = k;
    }
    if let Some(v) = a.variant {
        if let Some(w) = config::apply_variant(&mut cfg, v)? {
            warn(&format!("--variant {w}"));
        }
    }
    cfg.validate().map_err(shrewd_core::Error::from)?;
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(a)?;
    let taxonomy = formats::load_taxonomy(&a.taxonomy)?;
    let ds = formats::load_dataset(&a.features, &a.labels, &taxonomy)?;
    let model = train(&cfg, &ds, &taxonomy).map_err(|e| match e {
        shrewd_core::Error::Train(ref t) if t.is_divergence() => CliError::Diverged(e),
        e => e.into(),
    })?;

    create_dir(&a.out)?;
    let mut m = RunManifest::new("train");
    m.seed = Some(cfg.seed);
    m.settings = config::to_map(&cfg);
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    for p in [&a.taxonomy, &a.features, &a.labels] {
        m.input(p)?;
    }
    let ckpt = a.out.join(files::CHECKPOINT);
    formats::save_checkpoint(&model.encoder, &model.classifier, &ckpt)?;
    let log = a.out.join(files::TRAIN_LOG);
    formats::write_file(&log, train_log_csv(&model.log).as_bytes())?;
    let cfg_path = a.out.join(files::CONFIG);
    formats::write_file(&cfg_path, config::render(&cfg).as_bytes())?;
    for p in [&ckpt, &log, &cfg_path] {
        m.output(p)?;
    }
    write_manifest(&m, &a.out)
}

pub fn encode_cmd(a: &EncodeArgs) -> Result<(), CliError> {
    check_threshold(a.threshold)?;
    let (encoder, _) = formats::load_checkpoint(&a.checkpoint)?;
    let taxonomy = formats::load_taxonomy(&a.taxonomy)?;
    let ds = formats::load_dataset(&a.features, &a.labels, &taxonomy)?;
    if ds.dim() != encoder.input_dim() {
        return Err(CliError::Invalid(format!(
            "features have {} columns but the checkpoint expects {}",
            ds.dim(),
            encoder.input_dim()
        )));
    }
    let z = encode(&encoder, ds.features(), 256)?;
    let ids = (0..ds.len() as u64)
        .map(|i| {
            a.id_offset
                .checked_add(i)
                .ok_or_else(|| CliError::Invalid("--id-offset overflows sample ids".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let emb = Embeddings {
        values: z.values().clone(),
        ids,
        labels: ds.labels().to_vec(),
    };

    create_dir(&a.out)?;
    let mut m = RunManifest::new("encode");
    m.settings.insert("threshold".into(), a.threshold.to_string());
    m.settings.insert("id_offset".into(), a.id_offset.to_string());
    for p in [&a.checkpoint, &a.taxonomy, &a.features, &a.labels] {
        m.input(p)?;
    }
    let emb_path = a.out.join(files::EMBEDDINGS);
    formats::save_embeddings(&emb, &emb_path)?;
    let idx_path = a.out.join(files::INDEX);
    formats::save_index(&emb.to_index(a.threshold), &idx_path)?;
    m.output(&emb_path)?;
    m.output(&idx_path)?;
    write_manifest(&m, &a.out)
}

fn check_threshold(t: f64) -> Result<(), CliError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("--threshold {t} must lie in (0, 1)")))
    }
}

pub fn index_cmd(a: &IndexArgs) -> Result<(), CliError> {
    check_threshold(a.threshold)?;
    let emb = formats::load_embeddings(&a.embeddings)?;
    formats::save_index(&emb.to_index(a.threshold), &a.out)?;
    Ok(())
}

pub fn parse_code(s: &str) -> Result<HashCode, CliError> {
    let bits = s
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(CliError::Invalid(format!("code {s:?} may only contain 0 and 1"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HashCode::from_bools(&bits))
}

/// Writes one `rank<TAB>id<TAB>label<TAB>distance` line per neighbor.
pub fn query_cmd(a: &QueryArgs, out: &mut impl std::io::Write) -> Result<(), CliError> {
    let index = formats::load_index(&a.index)?;
    let taxonomy = a.taxonomy.as_deref().map(formats::load_taxonomy).transpose()?;
    let neighbors = match (&a.code, a.id) {
        (Some(code), _) => index.query_topk(&parse_code(code)?, a.k).map_err(shrewd_core::Error::from)?,
        (None, Some(id)) => {
            let pos = index
                .position_of(id)
                .ok_or_else(|| CliError::Invalid(format!("id {id} is not in the index")))?;
            // One extra slot so the query itself can be dropped.
            let mut n = index
                .query_topk(&index.codes()[pos], a.k.saturating_add(1))
                .map_err(shrewd_core::Error::from)?;
            n.retain(|nb| nb.id != id);
            n.truncate(a.k);
            n
        }
        (None, None) => return Err(CliError::Invalid("give --id or --code".into())),
    };
    let io_err = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    for (rank, nb) in neighbors.iter().enumerate() {
        let label = match &taxonomy {
            Some(t) => t.name(nb.label).map_err(shrewd_core::Error::from)?.to_string(),
            None => nb.label.to_string(),
        };
        writeln!(out, "{}\t{}\t{}\t{}", rank + 1, nb.id, label, nb.distance).map_err(io_err)?;
    }
    Ok(())
}

enum Store {
    Codes(HashIndex),
    Embeddings(Embeddings),
}

impl Store {
    fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = formats::read_file(path)?;
        match bytes.get(..4) {
            Some(m) if m == INDEX_MAGIC => Ok(Store::Codes(formats::decode_index(&bytes)?)),
            Some(m) if m == EMBEDDINGS_MAGIC => Ok(Store::Embeddings(formats::decode_embeddings(&bytes)?)),
            _ => Err(FormatError::Malformed {
                offset: 0,
                message: format!("{} is neither an index nor an embeddings file", path.display()),
            }
            .into()),
        }
    }

    fn ids(&self) -> &[u64] {
        match self {
            Store::Codes(i) => i.ids(),
            Store::Embeddings(e) => &e.ids,
        }
    }

    fn into_index(self, threshold: f64) -> HashIndex {
        match self {
            Store::Codes(i) => i,
            Store::Embeddings(e) => e.to_index(threshold),
        }
    }
}

/// Runs an evaluation and writes `report.json`, `hp_curve.csv` and a manifest.
pub fn eval_cmd(a: &EvalArgs) -> Result<MetricsReport, CliError> {
    check_threshold(a.threshold)?;
    let taxonomy = formats::load_taxonomy(&a.taxonomy)?;
    let db = Store::load(&a.database)?;
    let queries = a.queries.as_deref().map(Store::load).transpose()?;
    let db_len = db.ids().len();
    if db_len == 0 {
        return Err(CliError::Invalid("database is empty".into()));
    }
    let overlap = match &queries {
        None => true,
        Some(q) => q.ids().iter().any(|id| db.ids().contains(id)),
    };
    let available = db_len - usize::from(overlap);
    if available == 0 {
        return Err(CliError::Invalid("no database items remain after excluding queries".into()));
    }
    let k_max = a.k_max.min(available);
    if k_max < a.k_max {
        warn(&format!("--k-max {} exceeds the {available} rankable items; using {k_max}", a.k_max));
    }

    let report = if a.no_binarize {
        let (Store::Embeddings(db), q) = (db, queries) else {
            return Err(CliError::Invalid("--no-binarize needs an embeddings database".into()));
        };
        let q = match q {
            None => db.clone(),
            Some(Store::Embeddings(q)) => q,
            Some(Store::Codes(_)) => return Err(CliError::Invalid("--no-binarize needs embedding queries".into())),
        };
        let qs = embedding_queries(&q);
        let ranker = ManhattanRanker::new(db.values, db.ids, db.labels).map_err(shrewd_core::Error::from)?;
        evaluate(&ranker, &qs, &taxonomy, k_max).map_err(shrewd_core::Error::from)?
    } else {
        let index = db.into_index(a.threshold);
        let qs = match queries {
            None => self_queries(&index),
            Some(q) => self_queries(&q.into_index(a.threshold)),
        };
        evaluate(&index, &qs, &taxonomy, k_max).map_err(shrewd_core::Error::from)?
    };

    create_dir(&a.out)?;
    let mut m = RunManifest::new("eval");
    m.settings.insert("binarized".into(), (!a.no_binarize).to_string());
    m.settings.insert("threshold".into(), a.threshold.to_string());
    m.settings.insert("k_max".into(), k_max.to_string());
    for p in [Some(&a.taxonomy), Some(&a.database), a.queries.as_ref()].into_iter().flatten() {
        m.input(p)?;
    }
    let report_path = a.out.join(files::REPORT);
    formats::write_file(&report_path, Report::new(&report, !a.no_binarize, db_len).to_json().as_bytes())?;
    let curve_path = a.out.join(files::HP_CURVE);
    formats::write_file(&curve_path, hp_curve_csv(&report).as_bytes())?;
    m.output(&report_path)?;
    m.output(&curve_path)?;
    write_manifest(&m, &a.out)?;
    Ok(report)
}

fn embedding_queries(e: &Embeddings) -> Vec<Query<Vec<f64>>> {
    (0..e.len())
        .map(|i| Query {
            id: e.ids[i],
            label: e.labels[i],
            key: e.values.row(i).to_vec(),
        })
        .collect()
}

