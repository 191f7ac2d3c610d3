use std::path::Path;
use std::process::{Command, Output};

use papyrid::synth::SynthCorpus;

fn papyr_id(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_papyr-id"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = papyr_id(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) {
    SynthCorpus {
        writers: 4,
        docs_per_writer: 3,
        seed: 5,
        ..SynthCorpus::default()
    }
    .write(&dir.join("imgs"), None)
    .unwrap();
}

#[test]
fn stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let imgs = d.join("imgs");

    let manifest = d.join("m.csv");
    #[rustfmt::skip]
    let listing = ok(&["scan", s(&imgs), "--manifest", s(&manifest), "--split-seed", "3",
                       "--split-mode", "random"]);
    assert!(listing.starts_with("12 documents, 4 writers"));
    assert!(listing.contains("scribe02_3\tscribe02"));
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 8);
    assert_eq!(split["seed"], 3);

    #[rustfmt::skip]
    ok(&["binarize", s(&manifest), "--method", "su", "--out-dir", s(&d.join("masks")),
         "--su-window", "9", "--su-min-hc", "9"]);
    assert!(d.join("masks/scribe00_1.png").is_file());

    #[rustfmt::skip]
    ok(&["features", s(&manifest), "--masks", s(&d.join("masks")), "--mode", "rsift",
         "--on-binarized", "--out-dim", "32", "--out-dir", s(&d.join("feats"))]);
    assert!(d.join("feats/scribe03_2.pwid").is_file());

    #[rustfmt::skip]
    let enc = ok(&["encode", s(&manifest), "--feats", s(&d.join("feats")), "--codebooks", "2",
                   "--k", "8", "--alpha", "0.5", "--pool", "gmp", "--out", s(&d.join("enc"))]);
    assert_eq!(enc.trim(), "12 documents encoded, dimension 11");

    #[rustfmt::skip]
    let r = ok(&["retrieve", "--enc", s(&d.join("enc")), "--report", s(&d.join("r/report.json")),
                 "--heatmap-doc", s(&d.join("r/doc.png")), "--heatmap-scribe", s(&d.join("r/scribe.png"))]);
    assert!(r.starts_with("top1 "));
    for f in [
        "report.json",
        "doc.png",
        "doc.csv",
        "scribe.png",
        "scribe.csv",
    ] {
        assert!(d.join("r").join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["per_query"].as_array().unwrap().len(), 12);

    for c in ["nn", "svm"] {
        let rep = d.join(format!("cls_{c}.json"));
        let conf = d.join(format!("conf_{c}.csv"));
        #[rustfmt::skip]
        let out = ok(&["classify", "--enc", s(&d.join("enc")), "--split", s(&d.join("split.json")),
                       "--classifier", c, "--report", s(&rep), "--confusion", s(&conf)]);
        assert!(out.contains("(4 test documents)"), "{out}");
        let csv = std::fs::read_to_string(conf).unwrap();
        assert!(
            csv.starts_with(",scribe00,scribe01,scribe02,scribe03\n"),
            "{csv}"
        );
    }
}

#[test]
fn run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        "[binarize]\nmethod = \"su\"\n[features]\nmode = \"rsift\"\non_binarized = true\nout_dim = 32\n",
    )
    .unwrap();
    let (imgs, out, cache) = (d.join("imgs"), d.join("out"), d.join("cache"));
    #[rustfmt::skip]
    let args = ["run", "--config", s(&cfg), "--input", s(&imgs), "--output", s(&out),
                "--cache", s(&cache), "--codebooks", "2", "--k", "8"];
    let out = ok(&args);
    assert!(out.contains("retrieval: top1"));
    assert!(out.contains("svm: top1"));
    let again = ok(&args);
    assert_eq!(out, again);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = papyr_id(&["scan", s(&d.join("missing"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "[encode]\nbogus = 1\n").unwrap();
    assert_eq!(
        papyr_id(&["run", "--config", s(&cfg)]).status.code(),
        Some(1)
    );

    // clap usage errors
    assert_eq!(papyr_id(&["retrieve"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_2() {
    use papyrid::features::DescriptorFile;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let feats = d.join("feats");
    std::fs::create_dir_all(&feats).unwrap();
    for e in std::fs::read_dir(d.join("imgs")).unwrap() {
        let stem = e.unwrap().path().file_stem().unwrap().to_owned();
        let file = DescriptorFile {
            dim: 4,
            descriptors: vec![vec![f32::NAN, 0.0, 0.0, 1.0]; 20],
            keypoints: vec![[0.0; 4]; 20],
        };
        file.save(&feats.join(stem).with_extension("pwid")).unwrap();
    }
    #[rustfmt::skip]
    let out = papyr_id(&["encode", s(&d.join("imgs")), "--feats", s(&feats), "--codebooks", "1",
                         "--k", "2", "--out", s(&d.join("enc"))]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
