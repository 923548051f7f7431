//! Synthetic paired text+image dataset generator.
//!
//! Each class is a keyword set plus a colored shape. A sample's text is its
//! class keyword surrounded by noise words; its image is the class shape
//! over a speckled background. Ambiguity rates swap a sample's text or
//! image with its confusable sibling class, so class identity may be
//! recoverable only from both modalities jointly.
//!
//! The canonical "xor" preset goes further: its four classes share keywords
//! pairwise and colors pairwise, so text alone reveals only the keyword
//! group and the image alone only the color group.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClass {
    pub name: String,
    pub keywords: Vec<String>,
    pub shape: Shape,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<SyntheticClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Probability that a sample's text is drawn from its sibling class.
    pub text_ambiguity: f64,
    /// Probability that a sample's image is drawn from its sibling class.
    pub image_ambiguity: f64,
    pub noise_vocab: Vec<String>,
    pub image_side: u32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        for rate in [self.text_ambiguity, self.image_ambiguity] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!("ambiguity rate {rate} not in [0, 1]")));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("samples per class must be positive".into()));
        }
        if self.image_side < 16 {
            return Err(Error::InvalidConfig("image side must be at least 16".into()));
        }
        if self.noise_vocab.is_empty() {
            return Err(Error::InvalidConfig("noise vocabulary is empty".into()));
        }
        for c in &self.classes {
            if c.keywords.is_empty() {
                return Err(Error::InvalidConfig(format!("class {} has no keywords", c.name)));
            }
            for kw in &c.keywords {
                if self.noise_vocab.contains(kw) {
                    return Err(Error::InvalidConfig(format!(
                        "keyword {kw} also appears in the noise vocabulary"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The class an ambiguous text is drawn from: the next class cyclically.
    pub fn text_sibling(&self, i: usize) -> usize {
        (i + 1) % self.classes.len()
    }

    /// The class an ambiguous image is drawn from. For three or more
    /// classes this is the class after next, so text errors and image
    /// errors never point at the same wrong class and the true class stays
    /// decodable from the joint observation.
    pub fn image_sibling(&self, i: usize) -> usize {
        let k = self.classes.len();
        if k >= 3 {
            (i + 2) % k
        } else {
            (i + 1) % k
        }
    }
}

fn default_noise_vocab() -> Vec<String> {
    [
        "the", "with", "for", "and", "sturdy", "compact", "premium", "series", "model", "steel",
        "home", "garden", "classic", "extra", "value", "pack", "new", "improved", "pro", "basic",
        "grip", "edition", "set", "line",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Four classes laid out so text reveals only the keyword group and the
/// image only the color group; class identity requires both.
pub fn xor_spec(train_per_class: usize, test_per_class: usize, image_side: u32, seed: u64) -> SyntheticSpec {
    let red = [210, 45, 45];
    let blue = [45, 65, 210];
    let classes = vec![
        SyntheticClass {
            name: "alpha_red".into(),
            keywords: vec!["alpha".into()],
            shape: Shape::Circle,
            color: red,
        },
        SyntheticClass {
            name: "alpha_blue".into(),
            keywords: vec!["alpha".into()],
            shape: Shape::Circle,
            color: blue,
        },
        SyntheticClass {
            name: "bravo_red".into(),
            keywords: vec!["bravo".into()],
            shape: Shape::Circle,
            color: red,
        },
        SyntheticClass {
            name: "bravo_blue".into(),
            keywords: vec!["bravo".into()],
            shape: Shape::Circle,
            color: blue,
        },
    ];
    SyntheticSpec {
        classes,
        train_per_class,
        test_per_class,
        text_ambiguity: 0.0,
        image_ambiguity: 0.0,
        noise_vocab: default_noise_vocab(),
        image_side,
        seed,
    }
}

/// Four fully distinguishable classes (unique keyword, shape and color)
/// with configurable cross-modal ambiguity rates.
pub fn soft_spec(
    train_per_class: usize,
    test_per_class: usize,
    image_side: u32,
    text_ambiguity: f64,
    image_ambiguity: f64,
    seed: u64,
) -> SyntheticSpec {
    let classes = vec![
        SyntheticClass {
            name: "drill".into(),
            keywords: vec!["drill".into()],
            shape: Shape::Circle,
            color: [225, 120, 30],
        },
        SyntheticClass {
            name: "saw".into(),
            keywords: vec!["saw".into()],
            shape: Shape::Square,
            color: [40, 190, 70],
        },
        SyntheticClass {
            name: "clamp".into(),
            keywords: vec!["clamp".into()],
            shape: Shape::Triangle,
            color: [160, 60, 220],
        },
        SyntheticClass {
            name: "sander".into(),
            keywords: vec!["sander".into()],
            shape: Shape::Diamond,
            color: [30, 190, 200],
        },
    ];
    SyntheticSpec {
        classes,
        train_per_class,
        test_per_class,
        text_ambiguity,
        image_ambiguity,
        noise_vocab: default_noise_vocab(),
        image_side,
        seed,
    }
}

fn shape_contains(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r * 0.82 && dy.abs() <= r * 0.82,
        Shape::Triangle => {
            let from_top = dy + r;
            from_top >= 0.0 && from_top <= 2.0 * r && dx.abs() <= from_top * 0.55
        }
        Shape::Diamond => dx.abs() + dy.abs() <= r * 1.15,
    }
}

fn draw_sample_image(side: u32, shape: Shape, color: [u8; 3], rng: &mut ChaCha8Rng) -> RasterImage {
    let mut img = RasterImage::new(side, side).expect("side validated > 0");
    for y in 0..side {
        for x in 0..side {
            let v = 70 + rng.random_range(0..90) as u8;
            let tint = rng.random_range(0..20) as u8;
            img.set(x, y, [v, v.saturating_add(tint), v]);
        }
    }
    let jitter = (side / 16).max(1) as i64;
    let cx = side as f64 / 2.0 + rng.random_range(-jitter..=jitter) as f64;
    let cy = side as f64 / 2.0 + rng.random_range(-jitter..=jitter) as f64;
    let r = side as f64 * (0.24 + 0.06 * rng.random::<f64>());
    for y in 0..side {
        for x in 0..side {
            if shape_contains(shape, x as f64 - cx, y as f64 - cy, r) {
                img.set(x, y, color);
            }
        }
    }
    img
}

fn compose_text(keyword: &str, noise_vocab: &[String], rng: &mut ChaCha8Rng) -> String {
    let noise_count = rng.random_range(5..=8);
    let mut words: Vec<&str> = (0..noise_count)
        .map(|_| noise_vocab[rng.random_range(0..noise_vocab.len())].as_str())
        .collect();
    let pos = rng.random_range(0..=words.len());
    words.insert(pos, keyword);
    words.join(" ")
}

/// Generates the dataset under `out_dir`: PNGs in `out_dir/images/` plus
/// `train.tsv` and `test.tsv`. Fixed seed means byte-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifests = Vec::new();
    for (split, per_class) in [
        (Split::Train, spec.train_per_class),
        (Split::Test, spec.test_per_class),
    ] {
        let mut records = Vec::new();
        for (ci, class) in spec.classes.iter().enumerate() {
            for k in 0..per_class {
                let text_class = if rng.random::<f64>() < spec.text_ambiguity {
                    spec.text_sibling(ci)
                } else {
                    ci
                };
                let image_class = if rng.random::<f64>() < spec.image_ambiguity {
                    spec.image_sibling(ci)
                } else {
                    ci
                };
                let keywords = &spec.classes[text_class].keywords;
                let keyword = &keywords[rng.random_range(0..keywords.len())];
                let text = compose_text(keyword, &spec.noise_vocab, &mut rng);
                let visual = &spec.classes[image_class];
                let img = draw_sample_image(spec.image_side, visual.shape, visual.color, &mut rng);

                let file_name = format!("{}_{}_{k:04}.png", split.as_str(), class.name);
                let rel_path = Path::new("images").join(&file_name);
                img.save_png(&images_dir.join(&file_name))?;
                records.push(ManifestRecord {
                    label: class.name.clone(),
                    image_path: rel_path,
                    text,
                });
            }
        }
        let manifest = DatasetManifest::new(split, records, out_dir.to_path_buf());
        manifest.save(&out_dir.join(format!("{}.tsv", split.as_str())))?;
        manifests.push(manifest);
    }
    let test = manifests.pop().expect("two splits generated");
    let train = manifests.pop().expect("two splits generated");
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Which keyword group a generated text belongs to, by scanning for
    /// class keywords.
    fn observed_keyword(spec: &SyntheticSpec, text: &str) -> String {
        for class in &spec.classes {
            for kw in &class.keywords {
                if text.split(' ').any(|w| w == kw) {
                    return kw.clone();
                }
            }
        }
        panic!("no class keyword in text {text:?}");
    }

    /// Which class color dominates a generated image, by counting
    /// near-matches against each distinct class color.
    fn observed_color(spec: &SyntheticSpec, img: &RasterImage) -> [u8; 3] {
        let mut counts: BTreeMap<[u8; 3], usize> = BTreeMap::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let px = img.get(x, y);
                for class in &spec.classes {
                    let d: i32 = px
                        .iter()
                        .zip(&class.color)
                        .map(|(&a, &b)| (a as i32 - b as i32).abs())
                        .sum();
                    if d < 30 {
                        *counts.entry(class.color).or_insert(0) += 1;
                    }
                }
            }
        }
        counts
            .into_iter()
            .max_by_key(|&(_, n)| n)
            .map(|(c, _)| c)
            .expect("no class color found in image")
    }

    /// Best achievable accuracy when predicting the label from the given
    /// per-sample observable: group by observable, guess each group's
    /// majority label.
    fn bayes_accuracy<O: Ord>(observations: Vec<(O, String)>) -> f64 {
        let total = observations.len();
        let mut groups: BTreeMap<O, BTreeMap<String, usize>> = BTreeMap::new();
        for (o, label) in observations {
            *groups.entry(o).or_default().entry(label).or_insert(0) += 1;
        }
        let correct: usize = groups
            .values()
            .map(|labels| labels.values().copied().max().unwrap_or(0))
            .sum();
        correct as f64 / total as f64
    }

    #[test]
    fn xor_modalities_are_individually_ambiguous_and_jointly_complete() {
        let dir = tempfile::tempdir().unwrap();
        let spec = xor_spec(6, 4, 32, 11);
        let (train, test) = generate_synthetic(&spec, dir.path()).unwrap();

        for manifest in [&train, &test] {
            let mut text_obs = Vec::new();
            let mut image_obs = Vec::new();
            let mut joint_obs = Vec::new();
            for (i, r) in manifest.records.iter().enumerate() {
                let kw = observed_keyword(&spec, &r.text);
                let img = RasterImage::load_png(&manifest.resolve_image(i)).unwrap();
                let color = observed_color(&spec, &img);
                text_obs.push((kw.clone(), r.label.clone()));
                image_obs.push((color, r.label.clone()));
                joint_obs.push(((kw, color), r.label.clone()));
            }
            assert_eq!(bayes_accuracy(text_obs), 0.5);
            assert_eq!(bayes_accuracy(image_obs), 0.5);
            assert_eq!(bayes_accuracy(joint_obs), 1.0);
        }
    }

    #[test]
    fn zero_ambiguity_makes_each_modality_fully_informative() {
        let dir = tempfile::tempdir().unwrap();
        let spec = soft_spec(4, 2, 32, 0.0, 0.0, 3);
        let (train, _) = generate_synthetic(&spec, dir.path()).unwrap();
        let mut text_obs = Vec::new();
        let mut image_obs = Vec::new();
        for (i, r) in train.records.iter().enumerate() {
            let img = RasterImage::load_png(&train.resolve_image(i)).unwrap();
            text_obs.push((observed_keyword(&spec, &r.text), r.label.clone()));
            image_obs.push((observed_color(&spec, &img), r.label.clone()));
        }
        assert_eq!(bayes_accuracy(text_obs), 1.0);
        assert_eq!(bayes_accuracy(image_obs), 1.0);
    }

    #[test]
    fn ambiguity_rate_swaps_roughly_that_fraction() {
        let dir = tempfile::tempdir().unwrap();
        let spec = soft_spec(50, 1, 32, 0.3, 0.0, 5);
        let (train, _) = generate_synthetic(&spec, dir.path()).unwrap();
        let swapped = train
            .records
            .iter()
            .filter(|r| {
                let kw = observed_keyword(&spec, &r.text);
                !spec.classes.iter().any(|c| c.name == r.label && c.keywords.contains(&kw))
            })
            .count();
        let rate = swapped as f64 / train.records.len() as f64;
        assert!((rate - 0.3).abs() < 0.12, "observed swap rate {rate}");
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = xor_spec(2, 1, 24, 7);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, dir_a.path()).unwrap();
        generate_synthetic(&spec, dir_b.path()).unwrap();

        for name in ["train.tsv", "test.tsv"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        let mut entries: Vec<_> = fs::read_dir(dir_a.path().join("images"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        entries.sort();
        assert!(!entries.is_empty());
        for name in entries {
            let a = fs::read(dir_a.path().join("images").join(&name)).unwrap();
            let b = fs::read(dir_b.path().join("images").join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
    }

    #[test]
    fn train_and_test_paths_are_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let spec = xor_spec(3, 2, 24, 1);
        let (train, test) = generate_synthetic(&spec, dir.path()).unwrap();
        crate::manifest::check_disjoint(&train, &test).unwrap();
        train.validate(&train.class_table()).unwrap();
        test.validate(&test.class_table()).unwrap();
    }

    #[test]
    fn invalid_rates_rejected() {
        let mut spec = xor_spec(2, 2, 24, 0);
        spec.text_ambiguity = 1.5;
        assert!(spec.validate().is_err());
    }
}
