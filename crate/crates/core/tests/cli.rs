use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixture.jsonl")
}

const SMALL: &str = "seed = 3\n[mgate]\nembed_dim = 12\nepochs = 2\nbatch_size = 32\n";

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new(config: &str) -> Workdir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("faima.toml"), config).unwrap();
        Workdir { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.dir.path().join("faima.toml");
        let out = self.out();
        Command::new(env!("CARGO_BIN_EXE_faima"))
            .arg("--config")
            .arg(&cfg)
            .arg("--corpus")
            .arg(fixture_path())
            .arg("--out-dir")
            .arg(&out)
            .args(args)
            .env("RUST_LOG", "info")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }
}

fn code(o: &Output) -> Option<i32> {
    o.status.code()
}

#[test]
fn validate_reports_zero_violations() {
    let w = Workdir::new("");
    let o = w.run(&["validate"]);
    assert_eq!(code(&o), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim(),
        "records=60 violations=0"
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("0 violations"));

    let bad = w.dir.path().join("bad.jsonl");
    let mut text = std::fs::read_to_string(fixture_path()).unwrap();
    text.push_str("{\"id\":\"x\",\"domain\":\"hotel\",\"tokens\":[\"a\"],\"pos\":[],\"dep\":[],\"pairs\":[]}\n");
    std::fs::write(&bad, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_faima"))
        .args(["--corpus", bad.to_str().unwrap(), "validate"])
        .output()
        .unwrap();
    assert_eq!(code(&o), Some(1));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim(),
        "records=61 violations=3"
    );
}

#[test]
fn pipeline_end_to_end() {
    let w = Workdir::new(SMALL);
    let stats = w.ok(&["stats"]);
    assert_eq!(
        stats.lines().filter(|l| l.starts_with("domain=")).count(),
        4
    );
    assert!(stats.contains("domain=Overall sentences=60 pairs=72"));
    assert!(w
        .ok(&["gen-pairs"])
        .lines()
        .next()
        .unwrap()
        .starts_with("pairs="));
    let train = w.ok(&["train"]);
    assert_eq!(train.lines().filter(|l| l.starts_with("epoch=")).count(), 2);
    assert!(train.contains("checkpoint="));
    assert!(w.ok(&["build-index"]).contains("rows=60"));

    let r = w.ok(&["retrieve", "--id", "s17", "--k", "5"]);
    let ranks: Vec<&str> = r.lines().filter(|l| l.starts_with("rank=")).collect();
    assert_eq!(ranks.len(), 5, "{r}");
    for l in &ranks {
        assert!(
            l.contains(" id=") && l.contains(" channel=") && l.contains(" distance="),
            "{l}"
        );
        assert!(!l.contains("id=s17 "));
    }
    let chans: Vec<&str> = ranks
        .iter()
        .map(|l| {
            l.split_whitespace()
                .find(|f| f.starts_with("channel="))
                .unwrap()
        })
        .collect();
    assert_eq!(chans.iter().filter(|c| **c == "channel=avg").count(), 2);

    assert!(w.ok(&["emit-sft"]).starts_with("records=60"));
    assert_eq!(
        std::fs::read_to_string(w.out().join("sft.jsonl"))
            .unwrap()
            .lines()
            .count(),
        60
    );

    let hits = w.ok(&["hit-rate", "--eval", fixture_path().to_str().unwrap()]);
    assert!(
        hits.lines()
            .any(|l| l.starts_with("hit_rate domain=overall queries=60")),
        "{hits}"
    );

    let preds = w.dir.path().join("preds.jsonl");
    std::fs::write(&preds, "{\"id\":\"s0\",\"text\":\"NONE\"}\n").unwrap();
    let ev = w.ok(&["evaluate", "--predictions", preds.to_str().unwrap()]);
    assert!(
        ev.lines()
            .any(|l| l.starts_with("eval domain=overall macro_f1=")),
        "{ev}"
    );

    let o = w.run(&["retrieve", "--id", "nope"]);
    assert_eq!(code(&o), Some(1));
    let o = w.run(&["retrieve", "--id", "s17", "--k", "2"]);
    assert_eq!(code(&o), Some(2));
}

#[test]
fn gradcheck_passes() {
    let w = Workdir::new("");
    let s = w.ok(&["gradcheck"]);
    assert!(s.contains("status=pass"), "{s}");
    assert!(s.contains("tolerance=1e-4"), "{s}");
    let err: f64 = s
        .split_whitespace()
        .find_map(|f| f.strip_prefix("max_relative_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn usage_errors_exit_two() {
    let w = Workdir::new("");
    assert_eq!(code(&w.run(&["frobnicate"])), Some(2));
    assert_eq!(code(&w.run(&["retrieve"])), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_faima"))
        .arg("validate")
        .output()
        .unwrap();
    assert_eq!(code(&o), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.corpus"));
    let bad = Workdir::new("foo = 1\n");
    assert_eq!(code(&bad.run(&["validate"])), Some(2));
    let range = Workdir::new("[heuristics]\ntheta_lig = 1.5\n");
    let o = range.run(&["validate"]);
    assert_eq!(code(&o), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("theta_lig"));
    let o = w.run(&["build-index"]);
    assert_eq!(
        code(&o),
        Some(1),
        "missing checkpoint is a failure, not a usage error"
    );
}

#[test]
fn in_process_run_matches_binary_output() {
    let mut buf = Vec::new();
    let status = faima::cli::run(
        [
            "faima",
            "--corpus",
            fixture_path().to_str().unwrap(),
            "validate",
        ],
        &mut buf,
    );
    assert_eq!(status, faima::cli::EXIT_OK);
    assert_eq!(String::from_utf8(buf).unwrap(), "records=60 violations=0\n");
}

#[test]
fn gen_pairs_and_train_are_bitwise_reproducible() {
    let w = Workdir::new(SMALL);
    let artifacts = ["pairs.jsonl", "registry.json", "encoder.ckpt"];
    let snapshot = |w: &Workdir| -> Vec<Vec<u8>> {
        w.ok(&["gen-pairs"]);
        w.ok(&["train"]);
        artifacts
            .iter()
            .map(|a| std::fs::read(w.out().join(a)).unwrap())
            .collect()
    };
    let first = snapshot(&w);
    let second = snapshot(&w);
    for (name, (a, b)) in artifacts.iter().zip(first.iter().zip(&second)) {
        assert!(!a.is_empty());
        assert!(a == b, "{name} differs between runs");
    }
}
