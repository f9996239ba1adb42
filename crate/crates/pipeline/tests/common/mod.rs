#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn shrewd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shrewd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn shrewd")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = shrewd(args, cwd);
    assert!(
        out.status.success(),
        "shrewd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Three-level taxonomy: 4 groups × 2 subgroups × `leaves` leaves.
pub fn three_level_taxonomy(leaves: usize) -> String {
    let mut s = String::new();
    for a in 0..4 {
        writeln!(s, "root s{a}").unwrap();
        for b in 0..2 {
            writeln!(s, "s{a} m{a}{b}").unwrap();
            for c in 0..leaves {
                writeln!(s, "m{a}{b} l{a}{b}{c}").unwrap();
            }
        }
    }
    s
}

/// Paths of the artifacts written by [`pipeline`].
pub struct PipelineRun {
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    pub report: PathBuf,
    pub hp_curve: PathBuf,
}

/// gen-data → train → encode (database and held-out queries) → eval, all
/// inside `dir`.
pub fn pipeline(dir: &Path, config: &str, seed: u64) -> PipelineRun {
    fs::write(dir.join("tax.txt"), three_level_taxonomy(1)).unwrap();
    fs::write(dir.join("cfg.txt"), config).unwrap();
    let seed = seed.to_string();
    ok(
        &[
            "gen-data", "--taxonomy", "tax.txt", "--per-class", "24", "--dim", "16", "--noise", "0.5",
            "--holdout", "4", "--seed", &seed, "--out", "data",
        ],
        dir,
    );
    ok(
        &[
            "train", "--config", "cfg.txt", "--taxonomy", "tax.txt", "--features", "data/features.bin",
            "--labels", "data/labels.txt", "--seed", &seed, "--out", "run",
        ],
        dir,
    );
    ok(
        &[
            "encode", "--checkpoint", "run/checkpoint.bin", "--taxonomy", "tax.txt", "--features",
            "data/features.bin", "--labels", "data/labels.txt", "--out", "db",
        ],
        dir,
    );
    ok(
        &[
            "encode", "--checkpoint", "run/checkpoint.bin", "--taxonomy", "tax.txt", "--features",
            "data/query_features.bin", "--labels", "data/query_labels.txt", "--id-offset", "1000000",
            "--out", "q",
        ],
        dir,
    );
    ok(
        &[
            "eval", "--taxonomy", "tax.txt", "--database", "db/embeddings.bin", "--queries",
            "q/embeddings.bin", "--k-max", "50", "--out", "eval",
        ],
        dir,
    );
    PipelineRun {
        checkpoint: dir.join("run/checkpoint.bin"),
        index: dir.join("db/index.bin"),
        report: dir.join("eval/report.json"),
        hp_curve: dir.join("eval/hp_curve.csv"),
    }
}

pub const SMALL_CONFIG: &str = "hidden = 32\ncode_length = 8\nbatch_size = 16\nepochs = 3\nlambda_cls = 0\n";
