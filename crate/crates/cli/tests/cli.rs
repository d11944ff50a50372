//! End-to-end behaviour of the `aefuse` binary on small synthetic datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use aefuse::metrics::{compose_crossmodal, QualityWeights};
use tempfile::TempDir;

/// Fast training settings for the tests.
const QUICK_TRAIN: &str = "train.epochs = 2\ntrain.crop_size = 32\ntrain.batch_size = 2\n";

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn aefuse(out: &Path, args: &[&str], config: Option<&str>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aefuse"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(text) = config {
        let path = out.join("run.conf");
        fs::create_dir_all(out).unwrap();
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    let o = cmd.output().expect("binary runs");
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn ok(out: &Path, args: &[&str], config: Option<&str>) -> Run {
    let r = aefuse(out, args, config);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r
}

fn fails_with(out: &Path, args: &[&str], config: Option<&str>, code: i32) -> Run {
    let r = aefuse(out, args, config);
    assert_eq!(r.code, code, "{args:?}: {}", r.stderr);
    assert!(
        r.stderr.starts_with(&format!("AEERR:{code}:")),
        "diagnostic lacks the prefix: {}",
        r.stderr
    );
    assert_eq!(
        r.stderr.trim_end().lines().count(),
        1,
        "diagnostic is one line"
    );
    r
}

/// Three 96×96 synthetic pairs with their manifest.
fn dataset() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["gen-synthetic", "--count", "3", "--size", "96"],
        None,
    );
    dir
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key]
        .parse()
        .unwrap_or_else(|_| panic!("{key}={} is not a number", row[key]))
}

/// `pair_id -> method` from the cache index.
fn index_methods(out: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(out.join("cache").join("oracle.idx"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect()
}

#[test]
fn fuse_writes_every_candidate_reproducibly() {
    let data = dataset();
    let out = data.path();
    ok(out, &["fuse"], None);
    let dir = out.join("candidates");
    let snapshot = || -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect()
    };
    let first = snapshot();
    assert_eq!(first.len(), 15);
    assert!(first.contains_key("syn002.tsal.pgm"));
    ok(out, &["fuse"], None);
    assert_eq!(snapshot(), first);
}

#[test]
fn fuse_missing_input_names_the_pair() {
    let data = dataset();
    fs::remove_file(data.path().join("synthetic").join("syn001_b.pgm")).unwrap();
    let r = fails_with(data.path(), &["fuse"], None, 2);
    assert!(r.stderr.contains("syn001"), "{}", r.stderr);
}

#[test]
fn empty_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("manifest.csv"),
        "pair_id,path_a,path_b,path_ref,task\n",
    )
    .unwrap();
    fails_with(dir.path(), &["fuse"], None, 2);
    fails_with(dir.path(), &["oracle"], None, 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let data = dataset();
    fails_with(data.path(), &["fuse"], Some("weights.gamma = 1\n"), 2);
    fails_with(data.path(), &["fuse"], Some("weights.beta = -1\n"), 2);
}

#[test]
fn oracle_selects_one_optimum_per_pair() {
    let data = dataset();
    let out = data.path();
    ok(out, &["fuse"], None);
    ok(out, &["oracle"], None);
    let rows = read_csv(&out.join("scores.csv"));
    assert_eq!(rows.len(), 15);
    let w = QualityWeights::default();
    let mut per_pair: BTreeMap<String, Vec<&BTreeMap<String, String>>> = BTreeMap::new();
    for row in &rows {
        let recomposed = compose_crossmodal(
            &w,
            num(row, "NIQE"),
            num(row, "EN"),
            num(row, "VIF"),
            num(row, "AG"),
            num(row, "PSNR"),
            num(row, "SSIM"),
        );
        assert!((recomposed - num(row, "E2")).abs() <= 1e-9, "{row:?}");
        per_pair
            .entry(row["pair_id"].clone())
            .or_default()
            .push(row);
    }
    let index = index_methods(out);
    for (pair, rows) in per_pair {
        let selected: Vec<_> = rows.iter().filter(|r| r["selected"] == "1").collect();
        assert_eq!(selected.len(), 1, "{pair}");
        let best = rows.iter().map(|r| num(r, "E2")).fold(f64::MIN, f64::max);
        assert_eq!(num(selected[0], "E2"), best);
        assert_eq!(index[&pair], selected[0]["method"]);
    }
    let by_source = read_csv(&out.join("scores_by_source.csv"));
    assert_eq!(by_source.len(), 30);
}

#[test]
fn train_with_zero_rate_keeps_initialization() {
    let data = dataset();
    let out = data.path();
    ok(out, &["oracle"], None);
    let conf = format!("{QUICK_TRAIN}train.learning_rate = 0\n");
    ok(out, &["train"], Some(&conf));
    let init = fs::read(out.join("model.init.aenet")).unwrap();
    assert_eq!(init.len(), 6 + 809 * 8);
    assert_eq!(fs::read(out.join("model.aenet")).unwrap(), init);
    assert_eq!(read_csv(&out.join("trace.csv")).len(), 2);
}

#[test]
fn train_is_reproducible_per_seed() {
    let models: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let data = dataset();
            ok(data.path(), &["oracle"], None);
            let r = ok(data.path(), &["train"], Some(QUICK_TRAIN));
            assert!(r.stdout.contains("final mean loss"));
            assert_eq!(read_csv(&data.path().join("trace.csv")).len(), 2);
            fs::read(data.path().join("model.aenet")).unwrap()
        })
        .collect();
    assert_eq!(models[0], models[1]);
}

#[test]
fn train_without_oracle_is_missing_input() {
    let data = dataset();
    fails_with(data.path(), &["train"], Some(QUICK_TRAIN), 5);
    let unsup = format!("{QUICK_TRAIN}train.loss_mode = unsupervised\n");
    ok(data.path(), &["train"], Some(&unsup));
}

#[test]
fn evolve_is_monotone_and_counts_replacements() {
    let data = dataset();
    let out = data.path();
    ok(out, &["oracle"], None);
    fails_with(out, &["evolve", "--method", "avg"], None, 6);
    let before = index_methods(out);
    let conf = "method.avg3.kind = avg\nmethod.avg3.weight = 0.3\n";
    let r = ok(out, &["evolve", "--method", "avg3"], Some(conf));
    let after = index_methods(out);
    let rows = read_csv(&out.join("evolve.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| num(r, "delta") >= 0.0));
    let recount = before.iter().filter(|(k, v)| after[*k] != **v).count();
    let reported = rows.iter().filter(|r| r["replaced"] == "1").count();
    assert_eq!(reported, recount);
    assert!(
        r.stdout.contains(&format!("for {recount} of 3 pairs")),
        "{}",
        r.stdout
    );
    // the same method a second time is a duplicate
    fails_with(out, &["evolve", "--method", "avg3"], Some(conf), 6);
}

#[test]
fn evolve_against_other_weights_is_stale() {
    let data = dataset();
    ok(data.path(), &["oracle"], None);
    let conf = "weights.alpha0 = 0.5\nmethod.avg3.kind = avg\n";
    fails_with(data.path(), &["evolve", "--method", "avg3"], Some(conf), 6);
}

#[test]
fn bench_reports_registry_oracle_and_network() {
    let data = dataset();
    let out = data.path();
    fails_with(out, &["bench"], None, 5);
    ok(out, &["oracle"], None);
    ok(out, &["train"], Some(QUICK_TRAIN));
    ok(out, &["bench"], None);
    let rows = read_csv(&out.join("bench.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r["method"].as_str()).collect();
    assert_eq!(
        names,
        ["avg", "maxsel", "lp", "rp", "tsal", "oracle", "ae-net"]
    );

    let mut per_pair: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for row in read_csv(&out.join("bench_pairs.csv")) {
        per_pair
            .entry(row["pair_id"].clone())
            .or_default()
            .insert(row["method"].clone(), num(&row, "E2"));
    }
    assert_eq!(per_pair.len(), 3);
    for (pair, scores) in &per_pair {
        for m in ["avg", "maxsel", "lp", "rp", "tsal"] {
            assert!(scores["oracle"] >= scores[m], "{pair}: oracle below {m}");
        }
    }

    let md = fs::read_to_string(out.join("bench.md")).unwrap();
    let csv_text = fs::read_to_string(out.join("bench.csv")).unwrap();
    for line in csv_text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let md_row = format!("| {} |", cells.join(" | "));
        assert!(md.contains(&md_row), "markdown lacks {md_row}");
    }
}

#[test]
fn help_lists_the_commands() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["--help"], None);
    for cmd in [
        "fuse",
        "oracle",
        "train",
        "evolve",
        "bench",
        "gen-synthetic",
        "fit-nss",
    ] {
        assert!(r.stdout.contains(cmd), "help lacks {cmd}");
    }
    fails_with(dir.path(), &["frobnicate"], None, 2);
}
