mod common;

use std::fs;

use common::{ok, pipeline, shrewd, SMALL_CONFIG};
use shrewd_pipeline::artifacts::Report;

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let run = pipeline(dir.path(), SMALL_CONFIG, 5);
    for p in [&run.checkpoint, &run.index, &run.report, &run.hp_curve] {
        assert!(p.is_file(), "{}", p.display());
    }
    for m in ["data", "run", "db", "q", "eval"] {
        assert!(dir.path().join(m).join("manifest.json").is_file(), "{m}");
    }

    let report: Report = serde_json::from_str(&fs::read_to_string(&run.report).unwrap()).unwrap();
    assert!(report.binarized);
    assert_eq!(report.queries, 8 * 4);
    assert_eq!(report.database, 8 * 20);
    assert_eq!(report.k_max, 50);
    assert!((0.0..=1.0).contains(&report.mahp) && (0.0..=1.0).contains(&report.map));
    let ks: Vec<usize> = report.mahp_at_k.iter().map(|c| c.k).collect();
    assert_eq!(ks, [1, 5, 10, 25, 50]);

    let curve = fs::read_to_string(&run.hp_curve).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("k,mean_hp"));
    assert_eq!(lines.count(), 50);

    let log = fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("step,sim,kl,cls,total\n"));
    // 160 rows / batch 16 = 10 steps per epoch, 3 epochs.
    assert_eq!(log.lines().count(), 1 + 30);
}

#[test]
fn manifest_digests_match_inputs() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 1);
    let m: shrewd_pipeline::artifacts::RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.seed, Some(1));
    assert_eq!(m.settings["variant"], "shrewd");
    for d in m.inputs.iter().chain(&m.outputs) {
        let bytes = fs::read(dir.path().join(&d.path)).unwrap();
        assert_eq!(shrewd_pipeline::artifacts::sha256_hex(&bytes), d.sha256, "{}", d.path);
    }
}

#[test]
fn same_seed_reproduces_bytes_and_other_seed_does_not() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = pipeline(a.path(), SMALL_CONFIG, 2);
    let rb = pipeline(b.path(), SMALL_CONFIG, 2);
    let rc = pipeline(c.path(), SMALL_CONFIG, 3);
    for (x, y) in [(&ra.checkpoint, &rb.checkpoint), (&ra.index, &rb.index), (&ra.report, &rb.report)] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    assert_ne!(fs::read(&ra.checkpoint).unwrap(), fs::read(&rc.checkpoint).unwrap());
}

#[test]
fn query_by_id_and_code() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 4);
    let out = ok(&["query", "--index", "db/index.bin", "--id", "3", "-k", "5", "--taxonomy", "tax.txt"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    let mut last = 0u32;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        assert_ne!(r[1], "3", "query must not return itself");
        assert!(r[2].starts_with('l'));
        let d: u32 = r[3].parse().unwrap();
        assert!(d >= last && d <= 8);
        last = d;
    }

    let out = ok(&["query", "--index", "db/index.bin", "--code", "10101010", "-k", "2"], dir.path());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let bad = shrewd(&["query", "--index", "db/index.bin", "--code", "1010"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let missing = shrewd(&["query", "--index", "db/index.bin", "--id", "99999"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn eval_modes_and_index_command() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 6);
    ok(&["index", "--embeddings", "db/embeddings.bin", "--out", "rebuilt.bin"], dir.path());
    assert_eq!(
        fs::read(dir.path().join("rebuilt.bin")).unwrap(),
        fs::read(dir.path().join("db/index.bin")).unwrap()
    );

    ok(
        &[
            "eval", "--taxonomy", "tax.txt", "--database", "db/embeddings.bin", "--queries", "q/embeddings.bin",
            "--k-max", "50", "--no-binarize", "--out", "cont",
        ],
        dir.path(),
    );
    let r: Report = serde_json::from_str(&fs::read_to_string(dir.path().join("cont/report.json")).unwrap()).unwrap();
    assert!(!r.binarized);

    // An index database works for binary evaluation and gives the same numbers.
    ok(
        &[
            "eval", "--taxonomy", "tax.txt", "--database", "db/index.bin", "--queries", "q/index.bin", "--k-max",
            "50", "--out", "from_index",
        ],
        dir.path(),
    );
    assert_eq!(
        fs::read(dir.path().join("from_index/report.json")).unwrap(),
        fs::read(dir.path().join("eval/report.json")).unwrap()
    );

    // Leave-one-out over the database; k_max is clamped to what is rankable.
    let out = ok(
        &["eval", "--taxonomy", "tax.txt", "--database", "db/index.bin", "--k-max", "100000", "--out", "loo"],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let r: Report = serde_json::from_str(&fs::read_to_string(dir.path().join("loo/report.json")).unwrap()).unwrap();
    assert_eq!(r.k_max, 159);

    let bad = shrewd(
        &["eval", "--taxonomy", "tax.txt", "--database", "db/index.bin", "--no-binarize", "--out", "x"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["train"][..], &["nonsense"], &["query", "--index", "i.bin"], &["gen-data", "--per-class", "x"]] {
        assert_eq!(shrewd(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
    assert!(shrewd(&["--help"], dir.path()).status.success());
}

#[test]
fn runtime_errors_exit_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 7);
    let p = dir.path();

    fs::write(p.join("typo.txt"), "epochs = 1\nlearning_rat = 0.1\n").unwrap();
    let out = shrewd(
        &["train", "--config", "typo.txt", "--taxonomy", "tax.txt", "--features", "data/features.bin", "--labels", "data/labels.txt", "--out", "x"],
        p,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    fs::write(p.join("bad_labels.txt"), "l000\nzebra\n").unwrap();
    let out = shrewd(
        &["train", "--taxonomy", "tax.txt", "--features", "data/features.bin", "--labels", "bad_labels.txt", "--out", "x"],
        p,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zebra"));

    let mut idx = fs::read(p.join("db/index.bin")).unwrap();
    idx.truncate(idx.len() - 3);
    fs::write(p.join("short.bin"), idx).unwrap();
    let out = shrewd(&["query", "--index", "short.bin", "--id", "0"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let out = shrewd(&["train", "--taxonomy", "missing.txt", "--features", "f", "--labels", "l", "--out", "x"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn variant_flag_overrides_config_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 8);
    let p = dir.path();
    fs::write(p.join("shred.txt"), "hidden = 8\ncode_length = 4\nbatch_size = 16\nepochs = 1\nlambda_cls = 2\n").unwrap();
    let out = ok(
        &[
            "train", "--config", "shred.txt", "--taxonomy", "tax.txt", "--features", "data/features.bin", "--labels",
            "data/labels.txt", "--variant", "shrewd", "--out", "v",
        ],
        p,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_cls"));
    let cfg = fs::read_to_string(p.join("v/config.txt")).unwrap();
    assert!(cfg.contains("lambda_cls = 0\n") && cfg.contains("variant = shrewd\n"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), SMALL_CONFIG, 9);
    let p = dir.path();
    fs::write(p.join("wild.txt"), "hidden = 8\ncode_length = 4\nbatch_size = 16\nepochs = 5\nlearning_rate = 1e300\n").unwrap();
    let out = shrewd(
        &["train", "--config", "wild.txt", "--taxonomy", "tax.txt", "--features", "data/features.bin", "--labels", "data/labels.txt", "--out", "w"],
        p,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!p.join("w/checkpoint.bin").exists());
}
