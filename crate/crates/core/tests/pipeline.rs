use std::fs;
use std::path::Path;

use papyrid::config::{BinarizeMethod, PipelineConfig};
use papyrid::encode::{load_globals, GLOBALS_FILE};
use papyrid::features::FeatureMode;
use papyrid::pipeline::{run_pipeline, RunLog};
use papyrid::synth::SynthCorpus;
use papyrid::Error;

fn small_corpus(dir: &Path, masks: bool) {
    SynthCorpus {
        writers: 4,
        docs_per_writer: 3,
        seed: 21,
        ..SynthCorpus::default()
    }
    .write(
        &dir.join("imgs"),
        masks.then(|| dir.join("masks")).as_deref(),
    )
    .unwrap();
}

fn small_config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.input = dir.join("imgs");
    cfg.paths.output = dir.join("out");
    cfg.paths.cache = Some(dir.join("cache"));
    cfg.binarize.method = BinarizeMethod::Su;
    cfg.features.mode = FeatureMode::Rsift;
    cfg.features.on_binarized = true;
    cfg.features.out_dim = 32;
    cfg.encode = cfg.encode.with_codebooks(2);
    cfg.encode.k = 8;
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn second_run_reuses_every_stage_and_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), false);
    let cfg = small_config(dir.path());

    let first = run_pipeline(&cfg, false).unwrap();
    assert!(first.log.stages.iter().all(|s| !s.skipped));
    for f in [
        "report.json",
        "heatmap_doc.png",
        "heatmap_doc.csv",
        "heatmap_scribe.png",
        "heatmap_scribe.csv",
        "cls_nn.json",
        "conf_nn.csv",
        "cls_svm.json",
        "conf_svm.csv",
        "split.json",
        "config.toml",
        "run_log.json",
    ] {
        assert!(first.report_dir.join(f).is_file(), "missing {f}");
    }
    let report = read(&first.report_dir.join("report.json"));

    let second = run_pipeline(&cfg, false).unwrap();
    assert_eq!(second.report_dir, first.report_dir);
    let skipped: Vec<_> = second
        .log
        .stages
        .iter()
        .filter(|s| s.name != "scan")
        .map(|s| s.skipped)
        .collect();
    assert_eq!(skipped, vec![true; 4]);

    let forced = run_pipeline(&cfg, true).unwrap();
    assert!(forced.log.stages.iter().all(|s| !s.skipped));
    assert_eq!(read(&forced.report_dir.join("report.json")), report);

    let log: RunLog =
        serde_json::from_slice(&read(&forced.report_dir.join("run_log.json"))).unwrap();
    assert_eq!(log.config_hash, cfg.hash());
    assert_eq!(log.codebook_seeds, vec![1, 2]);
}

#[test]
fn changing_one_stage_reruns_only_downstream() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), false);
    let mut cfg = small_config(dir.path());
    run_pipeline(&cfg, false).unwrap();

    cfg.encode.k = 6;
    let run = run_pipeline(&cfg, false).unwrap();
    let skipped: Vec<(&str, bool)> = run
        .log
        .stages
        .iter()
        .map(|s| (s.name.as_str(), s.skipped))
        .collect();
    assert_eq!(
        skipped,
        vec![
            ("scan", false),
            ("binarize", true),
            ("features", true),
            ("encode", false),
            ("evaluate", false)
        ]
    );
    let enc = run.log.stages.iter().find(|s| s.name == "encode").unwrap();
    let globals = load_globals(&enc.dir.join(GLOBALS_FILE)).unwrap();
    assert_eq!(globals.len(), 12);
}

#[test]
fn external_masks_and_plain_sift() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), true);
    let mut cfg = small_config(dir.path());
    cfg.binarize.method = BinarizeMethod::External;
    cfg.binarize.mask_dir = Some(dir.path().join("masks"));
    let masked = run_pipeline(&cfg, false).unwrap();
    assert_eq!(masked.retrieval.per_query.len(), 12);

    cfg.binarize.method = BinarizeMethod::None;
    cfg.binarize.mask_dir = None;
    cfg.features.mode = FeatureMode::Sift;
    cfg.features.on_binarized = false;
    let plain = run_pipeline(&cfg, false).unwrap();
    assert_ne!(plain.report_dir, masked.report_dir);
    assert!(!plain.log.stages.iter().any(|s| s.name == "binarize"));
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), false);
    let mut cfg = small_config(dir.path());
    cfg.binarize.method = BinarizeMethod::External;
    cfg.binarize.mask_dir = Some(dir.path().join("no-such-masks"));
    match run_pipeline(&cfg, false) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "binarize"),
        other => panic!("unexpected {other:?}"),
    }

    let mut cfg = small_config(dir.path());
    cfg.features.sample_size = 100_000;
    cfg.encode.k = 5000;
    match run_pipeline(&cfg, false) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "encode");
            assert!(!source.is_numerical());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = PipelineConfig::load(&path).unwrap();
        cfg.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 4);
}
