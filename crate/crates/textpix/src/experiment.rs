//! Pipeline orchestration: fused-dataset production, the unimodal/fused
//! experiments, the five-strategy comparison, and the feature-length sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint::TextCheckpoint;
use crate::codec::{self, EncodingGeometry};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionWeights};
use crate::image_model::{train_image_model, ImageModel, MiniCnnConfig};
use crate::manifest::{check_disjoint, ClassTable, DatasetManifest, ManifestRecord};
use crate::raster::{overlay, resize_bilinear, RasterImage};
use crate::tensor::argmax;
use crate::text_model::{
    compute_norm_stats, extract_features, train_text_model, EpochStats, TextModel, TrainOptions,
};
use crate::vocab::Vocabulary;

// ---------------------------------------------------------------------------
// Text pipeline
// ---------------------------------------------------------------------------

/// Builds the vocabulary, trains the text classifier, and captures the
/// training-split normalization statistics into a checkpoint.
pub fn train_text_pipeline(
    train: &DatasetManifest,
    classes: &ClassTable,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(TextCheckpoint, Vec<EpochStats>)> {
    let vocab = Vocabulary::build(train.records.iter().map(|r| r.text.as_str()), cfg.min_frequency)?;
    let text_cfg = cfg.text_config(classes.len());
    let labels = train.label_indices(classes)?;
    let samples: Vec<(Vec<u32>, usize)> = train
        .records
        .iter()
        .zip(&labels)
        .map(|(r, &l)| (vocab.tokenize_and_pad(&r.text, text_cfg.seq_len), l))
        .collect();
    let mut model = TextModel::new(text_cfg, vocab.len(), seed)?;
    let trace = train_text_model(&mut model, &samples, &cfg.train_options(seed))?;

    let sequences: Vec<Vec<u32>> = samples.into_iter().map(|(ids, _)| ids).collect();
    let features = extract_features(&model, &sequences)?;
    let stats = compute_norm_stats(&features)?;
    Ok((
        TextCheckpoint {
            model,
            vocab,
            stats: Some(stats),
        },
        trace,
    ))
}

/// Test accuracy of a text checkpoint on a manifest.
pub fn eval_text(ckpt: &TextCheckpoint, manifest: &DatasetManifest, classes: &ClassTable) -> Result<f64> {
    let labels = manifest.label_indices(classes)?;
    let s = ckpt.model.config().seq_len;
    let mut correct = 0usize;
    for (r, &label) in manifest.records.iter().zip(&labels) {
        let ids = ckpt.vocab.tokenize_and_pad(&r.text, s);
        let probs = ckpt.model.posteriors(&ids)?;
        if argmax(probs.data()) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Image helpers
// ---------------------------------------------------------------------------

/// Loads every record's image, resized to `side x side`.
pub fn load_images(manifest: &DatasetManifest, side: u32) -> Result<Vec<RasterImage>> {
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let img = RasterImage::load_png(&manifest.resolve_image(i))?;
            resize_bilinear(&img, side, side)
        })
        .collect()
}

fn eval_image_model(model: &ImageModel, images: &[RasterImage], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (img, &label) in images.iter().zip(labels) {
        let probs = model.posteriors(img)?;
        if argmax(probs.data()) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// The one place both the plain-image and fused-image runs get their model
/// configuration and training options, so the two runs are guaranteed to
/// share a hyperparameter set.
pub fn image_training_setup(cfg: &RunConfig, classes: usize, seed: u64) -> (MiniCnnConfig, TrainOptions) {
    (cfg.image_config(classes), cfg.train_options(seed))
}

fn train_image_pipeline(
    images: &[RasterImage],
    labels: &[usize],
    cfg: &RunConfig,
    classes: usize,
    seed: u64,
) -> Result<ImageModel> {
    let (model_cfg, opts) = image_training_setup(cfg, classes, seed);
    let mut model = ImageModel::new(model_cfg, seed)?;
    let samples: Vec<(RasterImage, usize)> = images
        .iter()
        .cloned()
        .zip(labels.iter().copied())
        .collect();
    train_image_model(&mut model, &samples, &opts)?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Fused dataset production
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct FuseReport {
    pub written: usize,
    /// (record index, reason) for every skipped record.
    pub skipped: Vec<(usize, String)>,
}

/// Writes `geometry.cfg` next to a fused dataset so the encoding placement
/// is reproducible.
fn write_geometry_file(path: &Path, geom: &EncodingGeometry, image_side: u32) -> Result<()> {
    let content = format!(
        "grid_width = {}\ngrid_height = {}\nsuperpixel = {}\nanchor = {},{}\nimage_side = {}\n",
        geom.grid_width, geom.grid_height, geom.superpixel, geom.anchor.0, geom.anchor.1, image_side
    );
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Produces the fused dataset: per record, resize the image, extract the
/// text features, quantize them with the checkpoint's training-split stats,
/// paint the superpixel region and overlay it at the geometry's anchor.
///
/// Per-record failures (unreadable images) are logged and skipped; more
/// than 10% failures aborts the run. Pixels outside the encoding region
/// are spot-checked against the resized base on up to 10 records.
pub fn fuse_dataset(
    manifest: &DatasetManifest,
    ckpt: &TextCheckpoint,
    geometry: &EncodingGeometry,
    image_side: u32,
    out_dir: &Path,
) -> Result<(DatasetManifest, FuseReport)> {
    let stats = ckpt
        .stats
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("text checkpoint has no normalization statistics".into()))?;
    let feature_len = ckpt.model.config().feature_len();
    if geometry.feature_len() != feature_len {
        return Err(Error::InvalidConfig(format!(
            "geometry encodes {} values but the model produces {feature_len}",
            geometry.feature_len()
        )));
    }
    geometry.fits_within(image_side, image_side)?;

    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let total = manifest.records.len();
    let spot_stride = (total / 10).max(1);
    let seq_len = ckpt.model.config().seq_len;
    let mut records = Vec::new();
    let mut skipped = Vec::new();

    for (i, r) in manifest.records.iter().enumerate() {
        let base = match RasterImage::load_png(&manifest.resolve_image(i)) {
            Ok(img) => img,
            Err(e) => {
                skipped.push((i, e.to_string()));
                continue;
            }
        };
        let resized = resize_bilinear(&base, image_side, image_side)?;
        let ids = ckpt.vocab.tokenize_and_pad(&r.text, seq_len);
        let features = extract_features(&ckpt.model, std::slice::from_ref(&ids))?;
        let quantized = codec::quantize(&features[0].values, stats)?;
        let encoding = codec::encode_superpixels(&quantized, geometry)?;
        let fused = overlay(&resized, &encoding, geometry.anchor)?;

        if i % spot_stride == 0 {
            verify_outside_region(&resized, &fused, geometry)?;
        }

        let stem = manifest.records[i]
            .image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("record{i}"));
        let file_name = format!("{i:05}_{stem}.png");
        fused.save_png(&images_dir.join(&file_name))?;
        records.push(ManifestRecord {
            label: r.label.clone(),
            image_path: Path::new("images").join(file_name),
            text: r.text.clone(),
        });
    }

    if skipped.len() * 10 > total {
        return Err(Error::InvalidInput(format!(
            "fusing failed for {}/{total} records (over the 10% tolerance)",
            skipped.len()
        )));
    }
    let fused_manifest = DatasetManifest::new(manifest.split, records, out_dir.to_path_buf());
    fused_manifest.save(&out_dir.join(format!("{}.tsv", manifest.split.as_str())))?;
    write_geometry_file(&out_dir.join("geometry.cfg"), geometry, image_side)?;
    Ok((
        fused_manifest,
        FuseReport {
            written: total - skipped.len(),
            skipped,
        },
    ))
}

fn verify_outside_region(base: &RasterImage, fused: &RasterImage, geom: &EncodingGeometry) -> Result<()> {
    let (rw, rh) = geom.region_size();
    let (ax, ay) = geom.anchor;
    for y in 0..base.height() {
        for x in 0..base.width() {
            let inside = x >= ax && x < ax + rw && y >= ay && y < ay + rh;
            if !inside && base.get(x, y) != fused.get(x, y) {
                return Err(Error::InvalidInput(format!(
                    "fused image altered pixel ({x}, {y}) outside the encoding region"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    TextOnly,
    ImageOnly,
    Fused,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<ExperimentKind> {
        match s {
            "text-only" => Ok(ExperimentKind::TextOnly),
            "image-only" => Ok(ExperimentKind::ImageOnly),
            "fused" => Ok(ExperimentKind::Fused),
            other => Err(Error::InvalidInput(format!(
                "unknown experiment kind {other:?} (expected text-only, image-only or fused)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::TextOnly => "text-only",
            ExperimentKind::ImageOnly => "image-only",
            ExperimentKind::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub config: String,
    pub seed: u64,
    pub split: String,
    pub accuracy: f64,
}

/// Renders metrics rows as CSV, echoing the config file lines verbatim as
/// leading comments.
pub fn metrics_to_csv(rows: &[MetricsRow], cfg: &RunConfig) -> String {
    let mut out = String::new();
    for line in &cfg.raw_lines {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("experiment,config,seed,split,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.experiment, r.config, r.seed, r.split, r.accuracy);
    }
    out
}

fn shared_validation(train: &DatasetManifest, test: &DatasetManifest) -> Result<ClassTable> {
    if test.records.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let classes = train.class_table();
    train.validate(&classes)?;
    test.validate(&classes)?;
    check_disjoint(train, test)?;
    Ok(classes)
}

/// Trains and evaluates one pipeline kind per seed, reporting test-split
/// accuracy. `work_dir` holds the intermediate fused datasets.
pub fn run_experiment(
    kind: ExperimentKind,
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &RunConfig,
    seeds: &[u64],
    work_dir: &Path,
) -> Result<Vec<MetricsRow>> {
    let classes = shared_validation(train, test)?;
    let echo = cfg.canonical_echo();
    let mut rows = Vec::new();
    for &seed in seeds {
        let accuracy = match kind {
            ExperimentKind::TextOnly => {
                let (ckpt, _) = train_text_pipeline(train, &classes, cfg, seed)?;
                eval_text(&ckpt, test, &classes)?
            }
            ExperimentKind::ImageOnly => {
                let train_images = load_images(train, cfg.image_side as u32)?;
                let test_images = load_images(test, cfg.image_side as u32)?;
                let train_labels = train.label_indices(&classes)?;
                let test_labels = test.label_indices(&classes)?;
                let model = train_image_pipeline(&train_images, &train_labels, cfg, classes.len(), seed)?;
                eval_image_model(&model, &test_images, &test_labels)?
            }
            ExperimentKind::Fused => {
                let (ckpt, _) = train_text_pipeline(train, &classes, cfg, seed)?;
                run_fused_with_checkpoint(&ckpt, train, test, &classes, cfg, seed, work_dir)?
            }
        };
        rows.push(MetricsRow {
            experiment: kind.as_str().to_string(),
            config: echo.clone(),
            seed,
            split: "test".to_string(),
            accuracy,
        });
    }
    Ok(rows)
}

/// Fuses both splits with an already-trained text checkpoint, trains the
/// image model on the fused train split, and returns fused test accuracy.
fn run_fused_with_checkpoint(
    ckpt: &TextCheckpoint,
    train: &DatasetManifest,
    test: &DatasetManifest,
    classes: &ClassTable,
    cfg: &RunConfig,
    seed: u64,
    work_dir: &Path,
) -> Result<f64> {
    let geometry = cfg.geometry()?;
    let side = cfg.image_side as u32;
    let fused_train_dir = work_dir.join(format!("seed{seed}_fused_train"));
    let fused_test_dir = work_dir.join(format!("seed{seed}_fused_test"));
    let (fused_train, _) = fuse_dataset(train, ckpt, &geometry, side, &fused_train_dir)?;
    let (fused_test, _) = fuse_dataset(test, ckpt, &geometry, side, &fused_test_dir)?;

    let train_images = load_images(&fused_train, side)?;
    let test_images = load_images(&fused_test, side)?;
    let train_labels = fused_train.label_indices(classes)?;
    let test_labels = fused_test.label_indices(classes)?;
    let model = train_image_pipeline(&train_images, &train_labels, cfg, classes.len(), seed)?;
    eval_image_model(&model, &test_images, &test_labels)
}

// ---------------------------------------------------------------------------
// Five-strategy comparison
// ---------------------------------------------------------------------------

pub const COMPARISON_STRATEGIES: [&str; 5] = ["early", "late", "proposed", "text-only", "image-only"];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: String,
    /// Seed as text; the aggregate row uses `"mean"`.
    pub seed: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn accuracy(&self, strategy: &str, seed: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.seed == seed)
            .map(|r| r.accuracy)
    }

    /// CSV with one row per (strategy, seed) cell plus a mean row per
    /// strategy, strategies in [`COMPARISON_STRATEGIES`] order.
    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        out.push_str("# five-strategy comparison: early, late, proposed, text-only, image-only\n");
        out.push_str(
            "# early fusion: multinomial logistic regression on concatenated text+image feature vectors\n",
        );
        out.push_str(
            "# late fusion: logarithmic opinion pool over text/image model posteriors, equal weights\n",
        );
        for line in &cfg.raw_lines {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("strategy,seed,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.strategy, r.seed, r.accuracy);
        }
        out
    }
}

/// Runs all five strategies per seed on one dataset. The text and image
/// models are trained once per seed and reused for the feature-based and
/// posterior-based baselines.
pub fn compare_strategies(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &RunConfig,
    seeds: &[u64],
    work_dir: &Path,
) -> Result<ComparisonTable> {
    let classes = shared_validation(train, test)?;
    let side = cfg.image_side as u32;
    let train_labels = train.label_indices(&classes)?;
    let test_labels = test.label_indices(&classes)?;
    let train_images = load_images(train, side)?;
    let test_images = load_images(test, side)?;

    let mut per_strategy: Vec<Vec<f64>> = vec![Vec::new(); COMPARISON_STRATEGIES.len()];
    for &seed in seeds {
        // Unimodal models, reused by every fusion baseline.
        let (text_ckpt, _) = train_text_pipeline(train, &classes, cfg, seed)?;
        let text_acc = eval_text(&text_ckpt, test, &classes)?;
        let image_model = train_image_pipeline(&train_images, &train_labels, cfg, classes.len(), seed)?;
        let image_acc = eval_image_model(&image_model, &test_images, &test_labels)?;

        // Early fusion: logistic regression on concatenated features.
        let seq_len = text_ckpt.model.config().seq_len;
        let featurize = |manifest: &DatasetManifest, images: &[RasterImage]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let mut text_feats = Vec::new();
            let mut image_feats = Vec::new();
            for (r, img) in manifest.records.iter().zip(images) {
                let ids = text_ckpt.vocab.tokenize_and_pad(&r.text, seq_len);
                let fv = extract_features(&text_ckpt.model, std::slice::from_ref(&ids))?;
                text_feats.push(fv.into_iter().next().expect("one vector per sequence").values);
                image_feats.push(image_model.extract_features(img)?);
            }
            Ok((text_feats, image_feats))
        };
        let (train_text_feats, train_image_feats) = featurize(train, &train_images)?;
        let (test_text_feats, test_image_feats) = featurize(test, &test_images)?;
        let early_model = fusion::early_fusion_train(
            &train_text_feats,
            &train_image_feats,
            &train_labels,
            classes.len(),
            &cfg.train_options(seed),
        )?;
        let mut early_correct = 0usize;
        for i in 0..test_labels.len() {
            let mut concat = test_text_feats[i].clone();
            concat.extend_from_slice(&test_image_feats[i]);
            if argmax(&early_model.predict(&concat)?) == test_labels[i] {
                early_correct += 1;
            }
        }
        let early_acc = early_correct as f64 / test_labels.len() as f64;

        // Late fusion: opinion pool over the two models' posteriors.
        let weights = FusionWeights::uniform(2);
        let mut late_correct = 0usize;
        for (i, r) in test.records.iter().enumerate() {
            let ids = text_ckpt.vocab.tokenize_and_pad(&r.text, seq_len);
            let text_post = text_ckpt.model.posteriors(&ids)?.into_data();
            let image_post = image_model.posteriors(&test_images[i])?.into_data();
            let combined = fusion::late_fusion_combine(&[text_post, image_post], &weights)?;
            if argmax(&combined) == test_labels[i] {
                late_correct += 1;
            }
        }
        let late_acc = late_correct as f64 / test_labels.len() as f64;

        // Proposed: fused-image pipeline reusing the text checkpoint.
        let proposed_acc =
            run_fused_with_checkpoint(&text_ckpt, train, test, &classes, cfg, seed, work_dir)?;

        for (slot, acc) in per_strategy
            .iter_mut()
            .zip([early_acc, late_acc, proposed_acc, text_acc, image_acc])
        {
            slot.push(acc);
        }
    }

    let mut rows = Vec::new();
    for (si, strategy) in COMPARISON_STRATEGIES.iter().enumerate() {
        for (i, &seed) in seeds.iter().enumerate() {
            rows.push(ComparisonRow {
                strategy: strategy.to_string(),
                seed: seed.to_string(),
                accuracy: per_strategy[si][i],
            });
        }
        let mean = per_strategy[si].iter().sum::<f64>() / seeds.len() as f64;
        rows.push(ComparisonRow {
            strategy: strategy.to_string(),
            seed: "mean".to_string(),
            accuracy: mean,
        });
    }
    Ok(ComparisonTable { rows })
}

// ---------------------------------------------------------------------------
// Feature-length sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub feature_len: usize,
    pub seed: u64,
    /// `None` marks a length whose geometry does not fit the image.
    pub text_accuracy: Option<f64>,
    pub fused_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        for line in &cfg.raw_lines {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("l,seed,text_accuracy,fused_accuracy\n");
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map(|a| a.to_string()).unwrap_or_else(|| "unfit".to_string());
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.feature_len,
                r.seed,
                fmt(r.text_accuracy),
                fmt(r.fused_accuracy)
            );
        }
        out
    }
}

/// Near-square superpixel grid for a feature length: the largest divisor of
/// `l/3` not exceeding its square root becomes the row count.
pub fn grid_for_feature_len(l: usize) -> Option<(usize, usize)> {
    if l == 0 || l % 3 != 0 {
        return None;
    }
    let n = l / 3;
    let mut ht = (n as f64).sqrt().floor() as usize;
    while ht >= 1 {
        if n % ht == 0 {
            return Some((ht, n / ht));
        }
        ht -= 1;
    }
    None
}

/// Retrains the text model at each feature length, regenerates the fused
/// dataset, and reports text-only vs fused accuracy per (length, seed).
/// Lengths whose encoding region cannot fit the image are marked unfit.
pub fn sweep_embedding(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &RunConfig,
    feature_lens: &[usize],
    seeds: &[u64],
    work_dir: &Path,
) -> Result<SweepTable> {
    shared_validation(train, test)?;
    let mut rows = Vec::new();
    for &l in feature_lens {
        let grid = grid_for_feature_len(l);
        let fits = grid.and_then(|(ht, wt)| {
            let mut sub = cfg.clone();
            sub.grid_height = ht;
            sub.grid_width = wt;
            let geom = sub.geometry().ok()?;
            geom.fits_within(cfg.image_side as u32, cfg.image_side as u32).ok()?;
            Some(sub)
        });
        match fits {
            None => {
                for &seed in seeds {
                    rows.push(SweepRow {
                        feature_len: l,
                        seed,
                        text_accuracy: None,
                        fused_accuracy: None,
                    });
                }
            }
            Some(sub_cfg) => {
                for &seed in seeds {
                    let sweep_dir = work_dir.join(format!("l{l}"));
                    let classes = train.class_table();
                    let (ckpt, _) = train_text_pipeline(train, &classes, &sub_cfg, seed)?;
                    let text_accuracy = eval_text(&ckpt, test, &classes)?;
                    let fused_accuracy = run_fused_with_checkpoint(
                        &ckpt, train, test, &classes, &sub_cfg, seed, &sweep_dir,
                    )?;
                    rows.push(SweepRow {
                        feature_len: l,
                        seed,
                        text_accuracy: Some(text_accuracy),
                        fused_accuracy: Some(fused_accuracy),
                    });
                }
            }
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_model::StageConfig;
    use crate::manifest::Split;
    use crate::synth;
    use std::path::PathBuf;

    /// A configuration small enough for unit tests.
    fn tiny_cfg() -> RunConfig {
        RunConfig {
            seed: 0,
            epochs: 2,
            lr: 0.01,
            min_frequency: 1,
            text_seq_len: 10,
            text_embed: 6,
            text_filter_sizes: vec![2, 3],
            text_filters: 3,
            grid_height: 1,
            grid_width: 2,
            image_side: 24,
            image_stages: vec![StageConfig { filters: 3, kernel: 3, pool: 2 }],
            image_hidden: 8,
            superpixel: 2,
            anchor: (0, 0),
            raw_lines: vec!["epochs = 2".to_string()],
        }
    }

    fn tiny_dataset(dir: &Path, seed: u64) -> (DatasetManifest, DatasetManifest) {
        let spec = synth::xor_spec(3, 2, 24, seed);
        synth::generate_synthetic(&spec, dir).unwrap()
    }

    #[test]
    fn fused_region_decodes_back_to_the_quantized_vector() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = tiny_dataset(&dir.path().join("data"), 3);
        let cfg = tiny_cfg();
        let classes = train.class_table();
        let (ckpt, _) = train_text_pipeline(&train, &classes, &cfg, 1).unwrap();
        let geometry = cfg.geometry().unwrap();
        let fused_dir = dir.path().join("fused");
        let (fused, report) = fuse_dataset(&train, &ckpt, &geometry, 24, &fused_dir).unwrap();
        assert_eq!(report.written, train.records.len());
        assert!(report.skipped.is_empty());
        assert!(fused_dir.join("geometry.cfg").is_file());

        // Recover each record's quantized vector straight off the pixels.
        let stats = ckpt.stats.as_ref().unwrap();
        for (i, r) in fused.records.iter().enumerate() {
            let img = RasterImage::load_png(&fused.resolve_image(i)).unwrap();
            let decoded = codec::decode_superpixels(&img, &geometry).unwrap();
            let ids = ckpt.vocab.tokenize_and_pad(&r.text, cfg.text_seq_len);
            let fv = extract_features(&ckpt.model, std::slice::from_ref(&ids)).unwrap();
            let expected = codec::quantize(&fv[0].values, stats).unwrap();
            assert_eq!(decoded, expected, "record {i}");
        }
    }

    #[test]
    fn encoding_footprint_is_fixed_regardless_of_text_length() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        std::fs::create_dir_all(data_dir.join("images")).unwrap();
        let mut img = RasterImage::new(24, 24).unwrap();
        img.fill([120, 120, 120]);
        img.save_png(&data_dir.join("images/a.png")).unwrap();
        img.save_png(&data_dir.join("images/b.png")).unwrap();

        let long_text = std::iter::repeat("word").take(500).collect::<Vec<_>>().join(" ");
        let manifest = DatasetManifest::new(
            Split::Train,
            vec![
                ManifestRecord {
                    label: "x".into(),
                    image_path: "images/a.png".into(),
                    text: "short text".into(),
                },
                ManifestRecord {
                    label: "x".into(),
                    image_path: "images/b.png".into(),
                    text: long_text,
                },
            ],
            data_dir.clone(),
        );
        manifest.save(&data_dir.join("train.tsv")).unwrap();

        let cfg = tiny_cfg();
        let classes = manifest.class_table();
        let (ckpt, _) = train_text_pipeline(&manifest, &classes, &cfg, 0).unwrap();
        let geometry = cfg.geometry().unwrap();
        let (fused, _) = fuse_dataset(&manifest, &ckpt, &geometry, 24, &dir.path().join("fused")).unwrap();

        let (rw, rh) = geometry.region_size();
        for i in 0..2 {
            let out = RasterImage::load_png(&fused.resolve_image(i)).unwrap();
            // Outside the fixed region both images match the gray base.
            for y in 0..24u32 {
                for x in 0..24u32 {
                    let inside = x < rw && y < rh;
                    if !inside {
                        assert_eq!(out.get(x, y), [120, 120, 120], "record {i} pixel ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn identical_text_produces_identical_encoding_regions() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        std::fs::create_dir_all(data_dir.join("images")).unwrap();
        let mut a = RasterImage::new(24, 24).unwrap();
        a.fill([10, 200, 10]);
        a.save_png(&data_dir.join("images/a.png")).unwrap();
        let mut b = RasterImage::new(24, 24).unwrap();
        b.fill([200, 10, 200]);
        b.save_png(&data_dir.join("images/b.png")).unwrap();

        let manifest = DatasetManifest::new(
            Split::Train,
            vec![
                ManifestRecord {
                    label: "x".into(),
                    image_path: "images/a.png".into(),
                    text: "same description here".into(),
                },
                ManifestRecord {
                    label: "x".into(),
                    image_path: "images/b.png".into(),
                    text: "same description here".into(),
                },
            ],
            data_dir.clone(),
        );
        manifest.save(&data_dir.join("train.tsv")).unwrap();

        let cfg = tiny_cfg();
        let classes = manifest.class_table();
        let (ckpt, _) = train_text_pipeline(&manifest, &classes, &cfg, 0).unwrap();
        let geometry = cfg.geometry().unwrap();
        let (fused, _) = fuse_dataset(&manifest, &ckpt, &geometry, 24, &dir.path().join("fused")).unwrap();

        let img_a = RasterImage::load_png(&fused.resolve_image(0)).unwrap();
        let img_b = RasterImage::load_png(&fused.resolve_image(1)).unwrap();
        let dec_a = codec::decode_superpixels(&img_a, &geometry).unwrap();
        let dec_b = codec::decode_superpixels(&img_b, &geometry).unwrap();
        assert_eq!(dec_a, dec_b);
        // The bases still differ outside the region.
        assert_ne!(img_a.get(23, 23), img_b.get(23, 23));
    }

    #[test]
    fn fuse_tolerates_up_to_ten_percent_failures() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        std::fs::create_dir_all(data_dir.join("images")).unwrap();
        let mut records = Vec::new();
        for i in 0..12 {
            let name = format!("images/{i}.png");
            if i != 7 {
                let mut img = RasterImage::new(24, 24).unwrap();
                img.fill([50, 60, 70]);
                img.save_png(&data_dir.join(&name)).unwrap();
            }
            records.push(ManifestRecord {
                label: "x".into(),
                image_path: PathBuf::from(name),
                text: format!("record number {i}"),
            });
        }
        // Train on the valid subset only (training itself validates files).
        let trainable = DatasetManifest::new(
            Split::Train,
            records.iter().filter(|r| r.image_path != PathBuf::from("images/7.png")).cloned().collect(),
            data_dir.clone(),
        );
        let cfg = tiny_cfg();
        let classes = trainable.class_table();
        let (ckpt, _) = train_text_pipeline(&trainable, &classes, &cfg, 0).unwrap();
        let geometry = cfg.geometry().unwrap();

        // One broken record out of 12 stays under the 10% ceiling? 1/12 is
        // 8.3%, so the fuse succeeds and reports the skip.
        let with_gap = DatasetManifest::new(Split::Train, records.clone(), data_dir.clone());
        let (fused, report) = fuse_dataset(&with_gap, &ckpt, &geometry, 24, &dir.path().join("f1")).unwrap();
        assert_eq!(report.written, 11);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, 7);
        assert_eq!(fused.records.len(), 11);

        // Deleting more images pushes the failure rate over 10%.
        for i in [2usize, 9] {
            std::fs::remove_file(data_dir.join(format!("images/{i}.png"))).unwrap();
        }
        let err = fuse_dataset(&with_gap, &ckpt, &geometry, 24, &dir.path().join("f2")).unwrap_err();
        assert!(err.to_string().contains("10%"));
    }

    #[test]
    fn plain_and_fused_runs_share_hyperparameters() {
        let cfg = tiny_cfg();
        let (plain_cfg, plain_opts) = image_training_setup(&cfg, 4, 9);
        let (fused_cfg, fused_opts) = image_training_setup(&cfg, 4, 9);
        assert_eq!(plain_cfg, fused_cfg);
        assert_eq!(plain_opts, fused_opts);
    }

    #[test]
    fn empty_test_split_rejected_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = tiny_dataset(&dir.path().join("data"), 5);
        let empty_test = DatasetManifest::new(Split::Test, Vec::new(), test.base_dir.clone());
        let err = run_experiment(
            ExperimentKind::TextOnly,
            &train,
            &empty_test,
            &tiny_cfg(),
            &[0],
            dir.path(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("test split is empty"));
    }

    #[test]
    fn grid_factorization_rule() {
        assert_eq!(grid_for_feature_len(30), Some((2, 5)));
        assert_eq!(grid_for_feature_len(75), Some((5, 5)));
        assert_eq!(grid_for_feature_len(150), Some((5, 10)));
        assert_eq!(grid_for_feature_len(300), Some((10, 10)));
        assert_eq!(grid_for_feature_len(3), Some((1, 1)));
        assert_eq!(grid_for_feature_len(31), None);
        assert_eq!(grid_for_feature_len(0), None);
    }

    #[test]
    fn sweep_emits_one_row_per_length_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = tiny_dataset(&dir.path().join("data"), 2);
        let cfg = tiny_cfg();
        // 6 fits (grid 1x2 at p=2 is 4x2 pixels); 3000 does not fit 24px.
        let table = sweep_embedding(&train, &test, &cfg, &[6, 3000], &[0], &dir.path().join("w")).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows[0].text_accuracy.is_some());
        assert!(table.rows[0].fused_accuracy.is_some());
        assert_eq!(table.rows[1].text_accuracy, None);
        let csv = table.to_csv(&cfg);
        assert!(csv.contains("l,seed,text_accuracy,fused_accuracy"));
        assert!(csv.contains("unfit"));
    }

    #[test]
    fn single_class_dataset_scores_one_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        std::fs::create_dir_all(data_dir.join("images")).unwrap();
        let mut records_train = Vec::new();
        let mut records_test = Vec::new();
        for i in 0..4 {
            let name = format!("images/s{i}.png");
            let mut img = RasterImage::new(24, 24).unwrap();
            img.fill([90, 120, 150]);
            img.save_png(&data_dir.join(&name)).unwrap();
            let rec = ManifestRecord {
                label: "only".into(),
                image_path: PathBuf::from(name),
                text: format!("the single class sample {i}"),
            };
            if i < 3 {
                records_train.push(rec);
            } else {
                records_test.push(rec);
            }
        }
        let train = DatasetManifest::new(Split::Train, records_train, data_dir.clone());
        let test = DatasetManifest::new(Split::Test, records_test, data_dir.clone());
        let cfg = tiny_cfg();
        let table = compare_strategies(&train, &test, &cfg, &[0], &dir.path().join("w")).unwrap();
        for strategy in COMPARISON_STRATEGIES {
            assert_eq!(table.accuracy(strategy, "0"), Some(1.0), "{strategy}");
            assert_eq!(table.accuracy(strategy, "mean"), Some(1.0), "{strategy}");
        }
    }

    #[test]
    fn metrics_csv_echoes_config_and_rows() {
        let cfg = tiny_cfg();
        let rows = vec![MetricsRow {
            experiment: "text-only".into(),
            config: cfg.canonical_echo(),
            seed: 3,
            split: "test".into(),
            accuracy: 0.75,
        }];
        let csv = metrics_to_csv(&rows, &cfg);
        assert!(csv.starts_with("# epochs = 2\n"));
        assert!(csv.contains("experiment,config,seed,split,accuracy"));
        assert!(csv.contains("text-only,"));
        assert!(csv.contains(",0.75"));
    }
}
