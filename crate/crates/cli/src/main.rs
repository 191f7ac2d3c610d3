use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use papyrid::classify::Classifier;
use papyrid::config::{BinarizeConfig, BinarizeMethod, FeatureConfig, PipelineConfig};
use papyrid::corpus::{make_classification_split, ClassificationSplit, SplitMode};
use papyrid::encode::{EncodingConfig, FitOn, Pool};
use papyrid::features::FeatureMode;
use papyrid::pipeline::{self, RetrievalOutputs};

#[derive(Parser)]
#[command(
    name = "papyr-id",
    version,
    about = "Writer retrieval and classification for document images"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// -v info, -vv debug. RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List documents and writers; optionally write a manifest CSV and a split.
    Scan {
        input: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Where to write the split; defaults to split.json next to the
        /// manifest when --split-seed or --split-mode is given.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        split_mode: Option<SplitMode>,
    },
    /// Write one ink mask PNG per page.
    Binarize(BinarizeArgs),
    /// Extract local descriptors and fit the descriptor transform.
    Features(FeaturesArgs),
    /// Fit codebooks and joint PCA, write global descriptors.
    Encode(EncodeArgs),
    /// Leave-one-out retrieval over encoded documents.
    Retrieve {
        /// Output directory of `encode`.
        #[arg(long)]
        enc: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        heatmap_doc: Option<PathBuf>,
        #[arg(long)]
        heatmap_scribe: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        cell_px: u32,
    },
    /// Train on two documents per writer, classify the rest.
    Classify {
        #[arg(long)]
        enc: PathBuf,
        /// Split JSON; generated from `--split-seed` when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        #[command(flatten)]
        split_args: SplitArgs,
        #[arg(long, default_value = "svm")]
        classifier: Classifier,
        #[arg(long, default_value_t = 1.0)]
        svm_c: f64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Full cached pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value = "first-two")]
    split_mode: SplitMode,
}

#[derive(Args)]
struct BinarizeArgs {
    /// Manifest CSV or image directory.
    input: PathBuf,
    #[arg(long, default_value = "su")]
    method: BinarizeMethod,
    /// Source masks for `--method external`.
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    #[arg(long, alias = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    su_window: Option<u32>,
    #[arg(long)]
    su_min_hc: Option<u32>,
    #[arg(long)]
    sauvola_window: Option<u32>,
    #[arg(long)]
    sauvola_k: Option<f64>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Manifest CSV or image directory.
    input: PathBuf,
    /// Mask directory from `binarize`.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, default_value = "sift")]
    mode: FeatureMode,
    /// Detect and describe on the mask instead of the gray page.
    #[arg(long)]
    on_binarized: bool,
    #[arg(long)]
    upright: bool,
    #[arg(long)]
    no_downsample: bool,
    #[arg(long, default_value_t = 64)]
    out_dim: usize,
    #[arg(long, default_value_t = 100_000)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long, alias = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Manifest CSV or image directory.
    input: PathBuf,
    /// Output directory of `features`.
    #[arg(long, alias = "features")]
    feats: PathBuf,
    #[arg(long, default_value_t = 5)]
    codebooks: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1000.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value = "gmp")]
    pool: Pool,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long, default_value = "all")]
    fit_on: FitOn,
    /// Split JSON used with `--fit-on train`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    binarize: Option<BinarizeMethod>,
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<FeatureMode>,
    #[arg(long)]
    pool: Option<Pool>,
    #[arg(long)]
    codebooks: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Recompute every stage even when cached.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| {
                c.downcast_ref::<papyrid::Error>()
                    .is_some_and(papyrid::Error::is_numerical)
            });
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn split_for(
    corpus: &papyrid::corpus::Corpus,
    path: Option<&Path>,
    args: &SplitArgs,
) -> Result<ClassificationSplit> {
    match path {
        Some(p) => Ok(ClassificationSplit::load(p)?),
        None => Ok(make_classification_split(
            corpus,
            args.split_seed,
            args.split_mode,
        )?),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Scan {
            input,
            manifest,
            split,
            split_seed,
            split_mode,
        } => {
            let corpus = pipeline::load_corpus(&input)?;
            println!(
                "{} documents, {} writers",
                corpus.len(),
                corpus.writers().len()
            );
            for r in corpus.records() {
                println!("{}\t{}", r.doc_id, r.writer);
            }
            if let Some(m) = &manifest {
                corpus.write_manifest(m)?;
            }
            let split_path = match (split, &manifest) {
                (Some(p), _) => Some(p),
                (None, Some(m)) if split_seed.is_some() || split_mode.is_some() => {
                    Some(m.parent().unwrap_or(Path::new("")).join("split.json"))
                }
                (None, None) if split_seed.is_some() || split_mode.is_some() => {
                    bail!("--split-seed/--split-mode need --manifest or --split")
                }
                _ => None,
            };
            if let Some(p) = split_path {
                let s = make_classification_split(
                    &corpus,
                    split_seed.unwrap_or(0),
                    split_mode.unwrap_or(SplitMode::FirstTwo),
                )?;
                s.save(&p)?;
                println!(
                    "split: {} train, {} test -> {}",
                    s.train.len(),
                    s.test.len(),
                    p.display()
                );
            }
        }
        Command::Binarize(a) => {
            if a.method == BinarizeMethod::None {
                bail!("--method none produces no masks");
            }
            let corpus = pipeline::load_corpus(&a.input)?;
            let mut cfg = BinarizeConfig {
                method: a.method,
                mask_dir: a.mask_dir,
                ..BinarizeConfig::default()
            };
            if let Some(v) = a.su_window {
                cfg.su.window = v;
            }
            if let Some(v) = a.su_min_hc {
                cfg.su.min_high_contrast = v;
            }
            if let Some(v) = a.sauvola_window {
                cfg.sauvola.window = v;
            }
            if let Some(v) = a.sauvola_k {
                cfg.sauvola.k = v;
            }
            pipeline::binarize_corpus(&corpus, &cfg, &a.out_dir)?;
            info!("wrote {} masks to {}", corpus.len(), a.out_dir.display());
        }
        Command::Features(a) => {
            let corpus = pipeline::load_corpus(&a.input)?;
            let cfg = FeatureConfig {
                mode: a.mode,
                upright: a.upright,
                downsample: !a.no_downsample,
                on_binarized: a.on_binarized,
                out_dim: a.out_dim,
                sample_size: a.sample_size,
                sample_seed: a.sample_seed,
                ..FeatureConfig::default()
            };
            let summary = pipeline::extract_corpus(&corpus, a.masks.as_deref(), &cfg, &a.out_dir)?;
            let total: usize = summary.counts.iter().map(|c| c.1).sum();
            println!(
                "{total} descriptors over {} documents",
                summary.counts.len()
            );
        }
        Command::Encode(a) => {
            let corpus = pipeline::load_corpus(&a.input)?;
            let cfg = EncodingConfig {
                gamma: a.gamma,
                power_alpha: a.alpha,
                pool: a.pool,
                pca_dim: a.pca_dim,
                fit_on: a.fit_on,
                k: a.k,
                ..EncodingConfig::default().with_codebooks(a.codebooks)
            };
            cfg.validate()?;
            let split = match a.fit_on {
                FitOn::Train => Some(split_for(&corpus, a.split.as_deref(), &a.split_args)?),
                FitOn::All => None,
            };
            let globals = pipeline::encode_corpus(&corpus, &a.feats, &cfg, split.as_ref(), &a.out)?;
            let dim = globals.first().map_or(0, |g| g.vector.len());
            println!("{} documents encoded, dimension {dim}", globals.len());
        }
        Command::Retrieve {
            enc,
            report,
            heatmap_doc,
            heatmap_scribe,
            cell_px,
        } => {
            let (globals, corpus) = pipeline::load_encoded(&enc)?;
            let r = pipeline::write_retrieval(
                &globals,
                &corpus.labels(),
                &RetrievalOutputs {
                    report: &report,
                    heatmap_doc: heatmap_doc.as_deref(),
                    heatmap_scribe: heatmap_scribe.as_deref(),
                    cell_px,
                },
            )?;
            println!(
                "top1 {:.1}  top5 {:.1}  top10 {:.1}  mAP {:.1}",
                r.top1, r.top5, r.top10, r.map
            );
            if !r.excluded.is_empty() {
                println!(
                    "excluded (single-document writers): {}",
                    r.excluded.join(", ")
                );
            }
        }
        Command::Classify {
            enc,
            split,
            split_args,
            classifier,
            svm_c,
            report,
            confusion,
        } => {
            let (globals, corpus) = pipeline::load_encoded(&enc)?;
            let split = split_for(&corpus, split.as_deref(), &split_args)?;
            let r = pipeline::write_classification(
                &globals,
                &corpus.labels(),
                &split,
                classifier,
                svm_c,
                &report,
                confusion.as_deref(),
            )?;
            println!(
                "{}: top1 {:.1}  top5 {:.1}  ({} test documents)",
                pipeline::classifier_name(classifier),
                r.top1,
                r.top5,
                r.per_doc.len()
            );
        }
        Command::Run(a) => {
            let cfg = run_config(&a)?;
            let s = pipeline::run_pipeline(&cfg, a.force)?;
            let r = &s.retrieval;
            println!(
                "retrieval: top1 {:.1}  top5 {:.1}  top10 {:.1}  mAP {:.1}",
                r.top1, r.top5, r.top10, r.map
            );
            for c in &s.classification {
                println!(
                    "{}: top1 {:.1}  top5 {:.1}",
                    pipeline::classifier_name(c.classifier),
                    c.top1,
                    c.top5
                );
            }
            println!("reports in {}", s.report_dir.display());
        }
    }
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<PipelineConfig> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = PipelineConfig::from_toml(&text)
        .with_context(|| format!("parsing {}", a.config.display()))?;
    if let Some(v) = &a.input {
        cfg.paths.input = v.clone();
    }
    if let Some(v) = &a.output {
        cfg.paths.output = v.clone();
    }
    if let Some(v) = &a.cache {
        cfg.paths.cache = Some(v.clone());
    }
    if let Some(v) = a.binarize {
        cfg.binarize.method = v;
    }
    if let Some(v) = &a.mask_dir {
        cfg.binarize.mask_dir = Some(v.clone());
    }
    if let Some(v) = a.mode {
        cfg.features.mode = v;
    }
    if let Some(v) = a.pool {
        cfg.encode.pool = v;
    }
    if let Some(n) = a.codebooks {
        cfg.encode = cfg.encode.clone().with_codebooks(n);
    }
    if let Some(k) = a.k {
        cfg.encode.k = k;
    }
    if let Some(s) = a.split_seed {
        cfg.evaluate.split_seed = s;
    }
    Ok(cfg)
}
