use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aswap::metrics::Report;

fn aswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aswap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = aswap(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    trace: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = root.join("spec.json");
        std::fs::write(
            &spec,
            r#"{"app_count":4,"pages_per_app":256,"relaunch_count":4,"seed":3}"#,
        )
        .unwrap();
        let trace = root.join("t.aswp");
        ok(&["generate", "--spec", p(&spec), "--out", p(&trace)]);
        Self { _dir: dir, root, trace }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn replay(&self, extra: &[&str], out: &str) -> Report {
        let out = self.path(out);
        let mut args = vec![
            "replay",
            "--trace",
            p(&self.trace),
            "--mem",
            "1M",
            "--zpool",
            "2M",
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
    }
}

#[test]
fn replay_compare_and_analyze() {
    let f = Fixture::new();
    let audit = f.path("a.jsonl");
    let z = f.replay(&["--scheme", "zram"], "z.json");
    let a = f.replay(
        &["--scheme", "ariadne", "--scenario", "al", "--audit", p(&audit)],
        "a.json",
    );
    assert_eq!(z.totals.relaunches, 16);
    assert_eq!(a.config["scheme"], "ariadne");
    assert_eq!(a.config["sizes"], "1K-2K-16K");

    let csv = f.path("cmp.csv");
    let table = ok(&["compare", p(&f.path("z.json")), p(&f.path("a.json")), "--out", p(&csv)]);
    assert!(table.contains("latency_ns"));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 3);

    for (what, header) in [
        ("similarity", "uid,pair,similarity,reuse"),
        ("deciles", "part,hot,warm,cold"),
        ("locality", "N,p"),
        ("coverage", "uid,launch,coverage,accuracy"),
    ] {
        let out = f.path(&format!("{what}.csv"));
        ok(&[
            "analyze",
            what,
            "--trace",
            p(&f.trace),
            "--audit",
            p(&audit),
            "--out",
            p(&out),
        ]);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{what}");
    }
}

#[test]
fn replay_is_reproducible() {
    let f = Fixture::new();
    let args = ["--scheme", "ariadne", "--scenario", "ehl"];
    f.replay(&[&args[..], &["--audit", p(&f.path("1.jsonl"))]].concat(), "1.json");
    f.replay(&[&args[..], &["--audit", p(&f.path("2.jsonl"))]].concat(), "2.json");
    let read = |n: &str| std::fs::read(f.path(n)).unwrap();
    assert_eq!(read("1.json"), read("2.json"));
    assert_eq!(read("1.jsonl"), read("2.jsonl"));
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let cfg = f.path("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"scheme":"ariadne","scenario":"ehl","sizes":"512-4K-32K","buffer":2,"mem":"8M"}"#,
    )
    .unwrap();
    let r = f.replay(&["--config", p(&cfg), "--sizes", "1K-2K-16K"], "r.json");
    assert_eq!(r.config["scheme"], "ariadne");
    assert_eq!(r.config["scenario"], "ehl");
    assert_eq!(r.config["sizes"], "1K-2K-16K");
    assert_eq!(r.config["buffer_pages"], 2);
    assert_eq!(r.config["mem_bytes"], 1 << 20);
}

#[test]
fn matrix_runs_in_config_order() {
    let f = Fixture::new();
    let m = f.path("m.json");
    std::fs::write(
        &m,
        r#"[{"scheme":"zram"},{"scheme":"ariadne","scenario":"ehl"},{"scheme":"ariadne","sizes":"512-4K-32K"}]"#,
    )
    .unwrap();
    let out = f.path("all.json");
    ok(&[
        "replay",
        "--trace",
        p(&f.trace),
        "--mem",
        "1M",
        "--zpool",
        "2M",
        "--matrix",
        p(&m),
        "--out",
        p(&out),
    ]);
    let all: Vec<Report> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let labels: Vec<String> = all
        .iter()
        .map(|r| format!("{}/{}/{}", r.config["scheme"], r.config["scenario"], r.config["sizes"]))
        .collect();
    assert_eq!(
        labels,
        [
            r#""zram"/"al"/"1K-2K-16K""#,
            r#""ariadne"/"ehl"/"1K-2K-16K""#,
            r#""ariadne"/"al"/"512B-4K-32K""#
        ]
    );
    let single = f.replay(&["--scheme", "ariadne", "--scenario", "ehl"], "single.json");
    assert_eq!(single.totals, all[1].totals);
}

#[test]
fn jsonl_round_trip() {
    let f = Fixture::new();
    let j = f.path("t.jsonl");
    let back = f.path("back.aswp");
    ok(&["export-jsonl", "--trace", p(&f.trace), "--out", p(&j)]);
    ok(&["import-jsonl", "--input", p(&j), "--out", p(&back)]);
    assert_eq!(std::fs::read(&f.trace).unwrap(), std::fs::read(&back).unwrap());
}

#[test]
fn sweep_and_calibrate() {
    let f = Fixture::new();
    let csv = f.path("sweep.csv");
    ok(&[
        "sweep-chunks",
        "--bytes",
        "256K",
        "--sizes",
        "1K..16K",
        "--reps",
        "1",
        "--out",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("chunk,comp_ns,decomp_ns,ratio"));
    assert_eq!(lines.count(), 5);

    let corpus = f.path("corpus.bin");
    std::fs::write(&corpus, vec![7u8; 4096]).unwrap();
    ok(&["sweep-chunks", "--corpus", p(&corpus), "--sizes", "128B,4K"]);

    let cm = f.path("cost.json");
    ok(&["calibrate", "--out", p(&cm), "--bytes", "512K", "--reps", "1"]);
    let r = f.replay(&["--cost", p(&cm)], "c.json");
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cm).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(r.cost_model).unwrap(), written);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let out = aswap(&["replay", "--trace", p(&f.trace), "--out", "x.json", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(
        aswap(&["analyze", "deciles", "--trace", p(&f.trace)]).status.code(),
        Some(1)
    );

    let missing = aswap(&["replay", "--trace", "/nonexistent.aswp", "--out", p(&f.path("x.json"))]);
    assert_eq!(missing.status.code(), Some(2));

    let junk = f.path("junk.aswp");
    std::fs::write(&junk, b"not a trace").unwrap();
    let out = aswap(&["export-jsonl", "--trace", p(&junk), "--out", p(&f.path("j.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = aswap(&[
        "replay",
        "--trace",
        p(&f.trace),
        "--sizes",
        "1K-3K-16K",
        "--out",
        p(&f.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = aswap(&[
        "replay",
        "--trace",
        p(&f.trace),
        "--zpool",
        "1000",
        "--out",
        p(&f.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(aswap(&["--version"]).status.code(), Some(0));
}
