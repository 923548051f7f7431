//! textpix command line: dataset generation, training, fusion and the
//! experiment/comparison/sweep drivers.
//!
//! Every subcommand is deterministic given identical inputs, seed and
//! config. On failure a single machine-parseable line `error: <message>`
//! is printed to stderr and the exit code is nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use textpix::checkpoint::{ImageCheckpoint, TextCheckpoint};
use textpix::config::RunConfig;
use textpix::experiment::{
    self, compare_strategies, fuse_dataset, metrics_to_csv, run_experiment, sweep_embedding,
    ExperimentKind,
};
use textpix::image_model::{train_image_model, ImageModel};
use textpix::manifest::{DatasetManifest, Split};
use textpix::synth;
use textpix::text_model::extract_features;
use textpix::vocab::Vocabulary;

#[derive(Parser)]
#[command(
    name = "textpix",
    version,
    about = "Multimodal classification by painting text-CNN features onto images as RGB superpixels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Seed override; falls back to the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl CommonOpts {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired text+image dataset.
    GenSynth {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset preset: "xor" (modalities individually ambiguous) or
        /// "soft" (distinct classes with cross-modal ambiguity).
        #[arg(long, default_value = "xor")]
        preset: String,
        #[arg(long, default_value_t = 50)]
        train_per_class: usize,
        #[arg(long, default_value_t = 20)]
        test_per_class: usize,
        /// Ambiguity rates for the "soft" preset.
        #[arg(long, default_value_t = 0.3)]
        text_ambiguity: f64,
        #[arg(long, default_value_t = 0.3)]
        image_ambiguity: f64,
    },
    /// Build and print the vocabulary of a manifest's text column.
    BuildVocab {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the text classifier and save its checkpoint (weights,
    /// vocabulary, normalization statistics).
    TrainText {
        #[command(flatten)]
        common: CommonOpts,
        /// Training-split manifest.
        #[arg(long)]
        train: PathBuf,
    },
    /// Extract feature vectors for every record of a manifest.
    Extract {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Paint text features onto every image of a manifest.
    Fuse {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Split tag recorded in the fused manifest (train or test).
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train the image classifier on a (plain or fused) manifest.
    TrainImage {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
    },
    /// Train and evaluate one pipeline kind, writing a metrics CSV.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// One of text-only, image-only, fused.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma-separated seed list; defaults to the single run seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Run all five strategies (early, late, proposed, text-only,
    /// image-only) and write the comparison CSV.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Sweep the text feature length, comparing text-only against fused
    /// accuracy per length.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated feature lengths (each a multiple of 3).
        #[arg(long, default_value = "30,75,150,300")]
        l_values: String,
    },
}

fn parse_seeds(spec: &Option<String>, default: u64) -> Result<Vec<u64>> {
    match spec {
        None => Ok(vec![default]),
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .with_context(|| format!("invalid seed {v:?}"))
            })
            .collect(),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?} (expected train or test)"),
    }
}

fn load_pair(train: &Path, test: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    let train = DatasetManifest::load(train, Split::Train)?;
    let test = DatasetManifest::load(test, Split::Test)?;
    Ok((train, test))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth {
            common,
            preset,
            train_per_class,
            test_per_class,
            text_ambiguity,
            image_ambiguity,
        } => {
            let cfg = common.load()?;
            let side = cfg.image_side as u32;
            let spec = match preset.as_str() {
                "xor" => synth::xor_spec(train_per_class, test_per_class, side, cfg.seed),
                "soft" => synth::soft_spec(
                    train_per_class,
                    test_per_class,
                    side,
                    text_ambiguity,
                    image_ambiguity,
                    cfg.seed,
                ),
                other => bail!("unknown preset {other:?} (expected xor or soft)"),
            };
            let (train, test) = synth::generate_synthetic(&spec, &common.out)?;
            println!(
                "generated {} train and {} test records under {}",
                train.records.len(),
                test.records.len(),
                common.out.display()
            );
        }
        Command::BuildVocab { common, manifest } => {
            let cfg = common.load()?;
            let manifest = DatasetManifest::load(&manifest, Split::Train)?;
            let vocab =
                Vocabulary::build(manifest.records.iter().map(|r| r.text.as_str()), cfg.min_frequency)?;
            let path = common.out.join("vocab.tsv");
            let mut out = format!("# min_frequency = {}\n", cfg.min_frequency);
            for (id, token) in vocab.tokens().iter().enumerate() {
                out.push_str(&format!("{id}\t{token}\n"));
            }
            fs::write(&path, out)?;
            println!("wrote {} tokens to {}", vocab.len(), path.display());
        }
        Command::TrainText { common, train } => {
            let cfg = common.load()?;
            let train = DatasetManifest::load(&train, Split::Train)?;
            let classes = train.class_table();
            train.validate(&classes)?;
            let (ckpt, trace) = experiment::train_text_pipeline(&train, &classes, &cfg, cfg.seed)?;
            let path = common.out.join("text.ckpt");
            ckpt.save(&path)?;
            let last = trace.last();
            println!(
                "trained text model: {} parameters, {} classes, {} epochs, final accuracy {}",
                ckpt.model.param_count(),
                classes.len(),
                trace.len(),
                last.map(|s| s.accuracy.to_string()).unwrap_or_else(|| "n/a".into())
            );
            println!("checkpoint: {}", path.display());
        }
        Command::Extract {
            common,
            checkpoint,
            manifest,
        } => {
            common.load()?;
            let ckpt = TextCheckpoint::load(&checkpoint)?;
            let manifest = DatasetManifest::load(&manifest, Split::Train)?;
            let seq_len = ckpt.model.config().seq_len;
            let sequences: Vec<Vec<u32>> = manifest
                .records
                .iter()
                .map(|r| ckpt.vocab.tokenize_and_pad(&r.text, seq_len))
                .collect();
            let features = extract_features(&ckpt.model, &sequences)?;
            let l = ckpt.model.config().feature_len();
            let mut out = String::from("record,label");
            for i in 0..l {
                out.push_str(&format!(",f{i}"));
            }
            out.push('\n');
            for (fv, r) in features.iter().zip(&manifest.records) {
                out.push_str(&format!("{},{}", fv.sample, r.label));
                for v in &fv.values {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
            let path = common.out.join("features.csv");
            fs::write(&path, out)?;
            println!("wrote {} feature vectors of length {l} to {}", features.len(), path.display());
        }
        Command::Fuse {
            common,
            checkpoint,
            manifest,
            split,
        } => {
            let cfg = common.load()?;
            let split = parse_split(&split)?;
            let ckpt = TextCheckpoint::load(&checkpoint)?;
            let manifest = DatasetManifest::load(&manifest, split)?;
            let geometry = cfg.geometry()?;
            let (_, report) =
                fuse_dataset(&manifest, &ckpt, &geometry, cfg.image_side as u32, &common.out)?;
            for (idx, reason) in &report.skipped {
                eprintln!("skipped record {idx}: {reason}");
            }
            println!(
                "fused {} records ({} skipped) into {}",
                report.written,
                report.skipped.len(),
                common.out.display()
            );
        }
        Command::TrainImage { common, train } => {
            let cfg = common.load()?;
            let train = DatasetManifest::load(&train, Split::Train)?;
            let classes = train.class_table();
            train.validate(&classes)?;
            let labels = train.label_indices(&classes)?;
            let images = experiment::load_images(&train, cfg.image_side as u32)?;
            let samples: Vec<_> = images.into_iter().zip(labels).collect();
            let mut model = ImageModel::new(cfg.image_config(classes.len()), cfg.seed)?;
            let trace = train_image_model(&mut model, &samples, &cfg.train_options(cfg.seed))?;
            let path = common.out.join("image.ckpt");
            ImageCheckpoint { model }.save(&path)?;
            let last = trace.last();
            println!(
                "trained image model: {} epochs, final accuracy {}",
                trace.len(),
                last.map(|s| s.accuracy.to_string()).unwrap_or_else(|| "n/a".into())
            );
            println!("checkpoint: {}", path.display());
        }
        Command::Eval {
            common,
            kind,
            train,
            test,
            seeds,
        } => {
            let cfg = common.load()?;
            let kind = ExperimentKind::parse(&kind)?;
            let seeds = parse_seeds(&seeds, cfg.seed)?;
            let (train, test) = load_pair(&train, &test)?;
            let work = common.out.join("work");
            let rows = run_experiment(kind, &train, &test, &cfg, &seeds, &work)?;
            let csv = metrics_to_csv(&rows, &cfg);
            let path = common.out.join("metrics.csv");
            fs::write(&path, &csv)?;
            print!("{csv}");
            println!("metrics: {}", path.display());
        }
        Command::Compare {
            common,
            train,
            test,
            seeds,
        } => {
            let cfg = common.load()?;
            let seeds = parse_seeds(&seeds, cfg.seed)?;
            let (train, test) = load_pair(&train, &test)?;
            let work = common.out.join("work");
            let table = compare_strategies(&train, &test, &cfg, &seeds, &work)?;
            let csv = table.to_csv(&cfg);
            let path = common.out.join("comparison.csv");
            fs::write(&path, &csv)?;
            print!("{csv}");
            println!("comparison: {}", path.display());
        }
        Command::Sweep {
            common,
            train,
            test,
            seeds,
            l_values,
        } => {
            let cfg = common.load()?;
            let seeds = parse_seeds(&seeds, cfg.seed)?;
            let lens: Vec<usize> = l_values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .with_context(|| format!("invalid feature length {v:?}"))
                })
                .collect::<Result<_>>()?;
            let (train, test) = load_pair(&train, &test)?;
            let work = common.out.join("work");
            let table = sweep_embedding(&train, &test, &cfg, &lens, &seeds, &work)?;
            let csv = table.to_csv(&cfg);
            let path = common.out.join("sweep.csv");
            fs::write(&path, &csv)?;
            print!("{csv}");
            println!("sweep: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
