use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_textcue"));
    c.env_remove("TEXTCUE_CONFIG").env("RUST_LOG", "warn");
    c
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["generate-corpus", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["evaluate", "--mode", "clap", "--corpus", "x", "--out", "y"])
            .status
            .code(),
        Some(2)
    );
    assert!(run(&["--help"]).status.success());
}

#[test]
fn data_errors_exit_with_3_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = run(&[
        "generate-corpus",
        "--config",
        s(&tiny()),
        "--set",
        "tpe.b=3",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    let lines: Vec<_> = err.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error kind=data msg="));
    let o = run(&[
        "train-tpe",
        "--config",
        s(&tiny()),
        "--corpus",
        s(&dir.path().join("none")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corpus_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&[
        "generate-corpus",
        "--config",
        s(&tiny()),
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    ok(&[
        "generate-corpus",
        "--config",
        s(&tiny()),
        "--seed",
        "7",
        "--out",
        s(&b),
        "--workers",
        "3",
    ]);
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    assert!(ta.contains_key(Path::new("resolved_config.toml")));
    assert!(ta.contains_key(Path::new("manifest.jsonl")));
    // the configuration may also come from the environment
    let o = bin()
        .env("TEXTCUE_CONFIG", tiny())
        .args(["generate-corpus", "--seed", "8", "--out", s(&c)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(tree(&c), ta);
}

#[test]
fn train_evaluate_report_and_inference() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = tiny();
    let cfg = s(&cfg);
    ok(&[
        "generate-corpus",
        "--config",
        cfg,
        "--seed",
        "3",
        "--out",
        s(&p("corpus")),
    ]);
    for (cmd, out) in [
        ("train-tpe", "tpe"),
        ("train-dprnn", "dprnn"),
        ("train-tsr", "tsr"),
    ] {
        let log = ok(&[
            cmd,
            "--config",
            cfg,
            "--seed",
            "3",
            "--corpus",
            s(&p("corpus")),
            "--out",
            s(&p(out)),
        ]);
        assert!(log.contains("\"epochs\":1"), "{log}");
        for f in [
            "best.ckpt",
            "last.ckpt",
            "train_log.csv",
            "resolved_config.toml",
        ] {
            assert!(p(out).join(f).exists(), "{out}/{f}");
        }
    }

    // same seed, same checkpoint bytes
    ok(&[
        "train-tpe",
        "--config",
        cfg,
        "--seed",
        "3",
        "--corpus",
        s(&p("corpus")),
        "--out",
        s(&p("tpe2")),
    ]);
    assert_eq!(
        std::fs::read(p("tpe/last.ckpt")).unwrap(),
        std::fs::read(p("tpe2/last.ckpt")).unwrap()
    );

    // resuming for one more epoch matches a two-epoch run
    ok(&[
        "train-tpe",
        "--config",
        cfg,
        "--seed",
        "3",
        "--corpus",
        s(&p("corpus")),
        "--out",
        s(&p("tpe2")),
        "--resume",
        s(&p("tpe/last.ckpt")),
        "--epochs",
        "2",
    ]);
    ok(&[
        "train-tpe",
        "--config",
        cfg,
        "--seed",
        "3",
        "--corpus",
        s(&p("corpus")),
        "--out",
        s(&p("tpe3")),
        "--epochs",
        "2",
    ]);
    assert_eq!(
        std::fs::read(p("tpe2/last.ckpt")).unwrap(),
        std::fs::read(p("tpe3/last.ckpt")).unwrap()
    );

    let tpe = p("tpe/best.ckpt");
    let dprnn = p("dprnn/best.ckpt");
    let tsr = p("tsr/best.ckpt");
    let corpus = p("corpus");
    let eval = |mode: &str, extra: &[&str], out: &str| {
        let mut a = vec![
            "evaluate",
            "--config",
            cfg,
            "--corpus",
            s(&corpus),
            "--mode",
            mode,
            "--out",
            out,
        ];
        a.extend_from_slice(extra);
        run(&a)
    };
    let o = eval("tpe", &["--tpe", s(&tpe)], s(&p("ev_tpe")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(agg["count"], 4);
    assert!(p("ev_tpe/records.csv").exists());
    assert!(eval("pit", &["--dprnn", s(&dprnn)], s(&p("ev_pit")))
        .status
        .success());
    assert!(eval("random", &[], s(&p("ev_rand"))).status.success());
    assert!(eval(
        "dprnn_tsr",
        &["--dprnn", s(&dprnn), "--tsr", s(&tsr)],
        s(&p("ev_two"))
    )
    .status
    .success());
    assert_eq!(
        eval("tpe", &["--tpe", s(&dprnn)], s(&p("ev_bad")))
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        eval("dprnn_tsr", &["--dprnn", s(&dprnn)], s(&p("ev_bad")))
            .status
            .code(),
        Some(3)
    );

    ok(&[
        "report",
        "--report",
        s(&p("ev_tpe/report.json")),
        "--out",
        s(&p("rep")),
    ]);
    let hist: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p("rep/histogram.json")).unwrap()).unwrap();
    let total: u64 = hist["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(total, 4);
    let curves: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p("rep/curves.json")).unwrap()).unwrap();
    assert_eq!(curves["interference"].as_array().unwrap().len(), 20);
    ok(&[
        "report",
        "--report",
        s(&p("ev_tpe/report.json")),
        "--out",
        s(&p("rep2")),
        "--sdr-edges",
        "-5,0,5",
    ]);

    // single-file inference on the first test mixture
    let manifest = std::fs::read_to_string(corpus.join("manifest.jsonl")).unwrap();
    let entry: serde_json::Value = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|e| e["split"] == "test")
        .unwrap();
    let mix = corpus.join(entry["mixture_path"].as_str().unwrap());
    let target = corpus.join(entry["target_path"].as_str().unwrap());
    let prompt = entry["prompt"].as_str().unwrap();
    let before = tree(&corpus);
    ok(&[
        "extract",
        "--mixture",
        s(&mix),
        "--prompt",
        prompt,
        "--checkpoint",
        s(&tpe),
        "--out",
        s(&p("x/est.wav")),
        "--reference",
        s(&target),
    ]);
    let side: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p("x/est.json")).unwrap()).unwrap();
    assert!(side["si_sdr"].as_f64().unwrap().is_finite());
    assert!(side["si_sdri"].as_f64().is_some());
    assert!(p("x/est.wav").exists() && p("x/resolved_config.toml").exists());
    ok(&[
        "extract",
        "--mixture",
        s(&mix),
        "--prompt",
        prompt,
        "--checkpoint",
        s(&tpe),
        "--out",
        s(&p("y/est.wav")),
    ]);
    assert_eq!(
        std::fs::read(p("x/est.wav")).unwrap(),
        std::fs::read(p("y/est.wav")).unwrap()
    );
    let bare: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p("y/est.json")).unwrap()).unwrap();
    assert!(bare.get("si_sdr").is_none());

    ok(&[
        "separate",
        "--mixture",
        s(&mix),
        "--checkpoint",
        s(&dprnn),
        "--out",
        s(&p("sep")),
    ]);
    assert!(p("sep/stream_0.wav").exists() && p("sep/stream_1.wav").exists());
    std::fs::remove_file(p("sep/resolved_config.toml")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&ok(&[
        "match",
        "--prompt",
        prompt,
        "--dir",
        s(&p("sep")),
        "--checkpoint",
        s(&tsr),
    ]))
    .unwrap();
    assert!(m["index"].as_u64().unwrap() < 2);
    let probs: f64 = m["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((probs - 1.0).abs() < 1e-9);
    assert_eq!(
        run(&[
            "extract",
            "--mixture",
            s(&mix),
            "--prompt",
            " ",
            "--checkpoint",
            s(&tpe),
            "--out",
            s(&p("z.wav"))
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(tree(&corpus), before);
}
