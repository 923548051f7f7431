//! Early and late fusion baselines.
//!
//! Early fusion concatenates per-modality feature vectors and trains a
//! multinomial logistic regression on them. Late fusion combines
//! per-modality posteriors with a logarithmic opinion pool (weighted
//! geometric mean, renormalized).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, layers, OptimizerState};
use crate::tensor::{argmax, Parameter, Tensor};
use crate::text_model::TrainOptions;

/// Posteriors below this floor are clamped before the geometric pool so a
/// single zero cannot annihilate a class.
pub const POOL_FLOOR: f64 = 1e-12;

/// Per-modality weights for the opinion pool; non-negative, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    alpha: Vec<f64>,
}

impl FusionWeights {
    pub fn new(alpha: Vec<f64>) -> Result<FusionWeights> {
        if alpha.is_empty() || alpha.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::InvalidConfig("fusion weights must be non-negative".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "fusion weights must sum to 1, got {sum}"
            )));
        }
        Ok(FusionWeights { alpha })
    }

    /// Equal weight per modality.
    pub fn uniform(modalities: usize) -> FusionWeights {
        FusionWeights {
            alpha: vec![1.0 / modalities as f64; modalities],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

/// Logarithmic opinion pool: `combined[c] ∝ Π_m posterior_m[c]^alpha_m`,
/// renormalized to a distribution.
pub fn late_fusion_combine(posteriors: &[Vec<f64>], weights: &FusionWeights) -> Result<Vec<f64>> {
    if posteriors.is_empty() {
        return Err(Error::InvalidInput("opinion pool needs at least one posterior".into()));
    }
    if posteriors.len() != weights.alpha.len() {
        return Err(Error::shape(
            "late_fusion",
            format!(
                "{} posteriors but {} weights",
                posteriors.len(),
                weights.alpha.len()
            ),
        ));
    }
    let c = posteriors[0].len();
    for (m, p) in posteriors.iter().enumerate() {
        if p.len() != c {
            return Err(Error::shape(
                "late_fusion",
                format!("posterior {m} has length {}, expected {c}", p.len()),
            ));
        }
    }
    // Pool in log space for stability.
    let mut log_combined = vec![0.0f64; c];
    for (p, &a) in posteriors.iter().zip(&weights.alpha) {
        for (acc, &v) in log_combined.iter_mut().zip(p) {
            *acc += a * v.max(POOL_FLOOR).ln();
        }
    }
    let max = log_combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut combined: Vec<f64> = log_combined.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = combined.iter().sum();
    for v in &mut combined {
        *v /= sum;
    }
    Ok(combined)
}

/// Multinomial logistic regression over concatenated text and image feature
/// vectors.
pub struct LinearModel {
    weight: Parameter, // [C, text_width + image_width]
    bias: Parameter,   // [C]
    text_width: usize,
    image_width: usize,
}

impl LinearModel {
    pub fn classes(&self) -> usize {
        self.bias.value().len()
    }

    pub fn text_width(&self) -> usize {
        self.text_width
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    /// Posterior for one concatenated `[text ∥ image]` feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let expected = self.text_width + self.image_width;
        if features.len() != expected {
            return Err(Error::shape(
                "early_fusion_predict",
                format!("feature length {} does not match trained width {expected}", features.len()),
            ));
        }
        let x = Tensor::from_vec(&[expected], features.to_vec())?;
        let logits = layers::dense_forward(&x, self.weight.value(), self.bias.value())?;
        let (_, probs) = layers::softmax_xent(&logits, 0)?;
        Ok(probs.into_data())
    }
}

/// Trains the early-fusion classifier with seeded-shuffled per-sample SGD
/// on `[text ∥ image]` vectors.
pub fn early_fusion_train(
    text_features: &[Vec<f64>],
    image_features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    opts: &TrainOptions,
) -> Result<LinearModel> {
    if text_features.len() != image_features.len() || text_features.len() != labels.len() {
        return Err(Error::shape(
            "early_fusion_train",
            format!(
                "misaligned inputs: {} text, {} image, {} labels",
                text_features.len(),
                image_features.len(),
                labels.len()
            ),
        ));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("early fusion training set is empty".into()));
    }
    let text_width = text_features[0].len();
    let image_width = image_features[0].len();
    let concat_width = text_width + image_width;
    let mut inputs = Vec::with_capacity(labels.len());
    for (i, (tf, imf)) in text_features.iter().zip(image_features).enumerate() {
        if tf.len() != text_width || imf.len() != image_width {
            return Err(Error::shape(
                "early_fusion_train",
                format!("sample {i} feature widths differ from sample 0"),
            ));
        }
        if labels[i] >= classes {
            return Err(Error::InvalidInput(format!(
                "sample {i} has label {} but there are {classes} classes",
                labels[i]
            )));
        }
        let mut v = Vec::with_capacity(concat_width);
        v.extend_from_slice(tf);
        v.extend_from_slice(imf);
        inputs.push(Tensor::from_vec(&[concat_width], v)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weight = Parameter::new(
        "early.weight",
        nn::glorot_uniform(&[classes, concat_width], concat_width, classes, &mut rng),
    );
    let mut bias = Parameter::new("early.bias", Tensor::zeros(&[classes]));
    let state = OptimizerState::new(opts.learning_rate)?;
    let mut order: Vec<usize> = (0..labels.len()).collect();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for &si in &order {
            let logits = layers::dense_forward(&inputs[si], weight.value(), bias.value())?;
            let (loss, probs) = layers::softmax_xent(&logits, labels[si])?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "early fusion loss diverged at epoch {epoch}, sample {si}"
                )));
            }
            if argmax(probs.data()) == labels[si] {
                correct += 1;
            }
            let d_logits = layers::softmax_xent_backward(&probs, labels[si]);
            let grads = layers::dense_backward(&inputs[si], weight.value(), bias.value(), &d_logits)?;
            weight.accumulate(&grads.weight)?;
            bias.accumulate(&grads.bias)?;
            nn::sgd_step(&mut [&mut weight, &mut bias], &state)?;
        }
        if correct == labels.len() {
            break;
        }
    }
    Ok(LinearModel {
        weight,
        bias,
        text_width,
        image_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pool_closed_form_example() {
        // p1=(0.8,0.2), p2=(0.5,0.5), alpha=(0.5,0.5)
        // combined[0] = sqrt(0.4) / (sqrt(0.4) + sqrt(0.1)) = 2/3
        let combined = late_fusion_combine(
            &[vec![0.8, 0.2], vec![0.5, 0.5]],
            &FusionWeights::uniform(2),
        )
        .unwrap();
        assert!((combined[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((combined[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn pool_agreement_is_idempotent() {
        let p = vec![0.3, 0.1, 0.6];
        let combined = late_fusion_combine(&[p.clone(), p.clone()], &FusionWeights::uniform(2)).unwrap();
        for (a, b) in combined.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_weight_selects_first_posterior() {
        let p1 = vec![0.7, 0.2, 0.1];
        let p2 = vec![0.1, 0.1, 0.8];
        let w = FusionWeights::new(vec![1.0, 0.0]).unwrap();
        let combined = late_fusion_combine(&[p1.clone(), p2], &w).unwrap();
        for (a, b) in combined.iter().zip(&p1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_is_permutation_invariant() {
        let p1 = vec![0.6, 0.4];
        let p2 = vec![0.2, 0.8];
        let w = FusionWeights::new(vec![0.75, 0.25]).unwrap();
        let a = late_fusion_combine(&[p1.clone(), p2.clone()], &w).unwrap();
        let w_swapped = FusionWeights::new(vec![0.25, 0.75]).unwrap();
        let b = late_fusion_combine(&[p2, p1], &w_swapped).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_rejects_length_mismatch() {
        let err = late_fusion_combine(
            &[vec![0.5, 0.5], vec![0.2, 0.3, 0.5]],
            &FusionWeights::uniform(2),
        )
        .unwrap_err();
        assert!(err.to_string().contains("length 3"));
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(FusionWeights::new(vec![0.5, 0.6]).is_err());
        assert!(FusionWeights::new(vec![-0.5, 1.5]).is_err());
        assert!(FusionWeights::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn zero_posterior_entry_survives_via_floor() {
        let combined = late_fusion_combine(
            &[vec![0.0, 1.0], vec![0.5, 0.5]],
            &FusionWeights::uniform(2),
        )
        .unwrap();
        assert!(combined[0] > 0.0);
        assert!(combined[1] > combined[0]);
    }

    #[test]
    fn early_fusion_separable_synthetic() {
        // Four classes: text features carry a 2-way group bit, image
        // features the other; one-hot-ish blocks are linearly separable.
        let mut text = Vec::new();
        let mut imagef = Vec::new();
        let mut labels = Vec::new();
        for label in 0..4usize {
            for k in 0..5usize {
                let jitter = 0.01 * k as f64;
                let t = if label < 2 {
                    vec![1.0 + jitter, 0.0]
                } else {
                    vec![0.0, 1.0 + jitter]
                };
                let im = if label % 2 == 0 {
                    vec![1.0 - jitter, 0.0, 0.1]
                } else {
                    vec![0.0, 1.0 - jitter, 0.1]
                };
                text.push(t);
                imagef.push(im);
                labels.push(label);
            }
        }
        let opts = TrainOptions {
            epochs: 60,
            learning_rate: 0.1,
            seed: 3,
        };
        let model = early_fusion_train(&text, &imagef, &labels, 4, &opts).unwrap();
        let correct = text
            .iter()
            .zip(&imagef)
            .zip(&labels)
            .filter(|((t, im), &l)| {
                let mut v = (*t).clone();
                v.extend_from_slice(im);
                argmax(&model.predict(&v).unwrap()) == l
            })
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn zero_features_predict_softmax_of_bias() {
        let text = vec![vec![0.0, 0.0]];
        let imagef = vec![vec![0.0]];
        let labels = vec![0usize];
        let opts = TrainOptions {
            epochs: 0,
            ..Default::default()
        };
        let model = early_fusion_train(&text, &imagef, &labels, 3, &opts).unwrap();
        // Untrained bias is zero, so the posterior is uniform.
        let p = model.predict(&[0.0, 0.0, 0.0]).unwrap();
        for &v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let model = early_fusion_train(
            &[vec![1.0]],
            &[vec![2.0]],
            &[0],
            2,
            &TrainOptions {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(model.predict(&[1.0]).is_err());
        assert_eq!(model.text_width() + model.image_width(), 2);
    }

    #[test]
    fn early_fusion_is_order_invariant_given_seed() {
        let text = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.3, 0.7]];
        let imagef = vec![vec![0.2], vec![0.4], vec![0.6], vec![0.8]];
        let labels = vec![0usize, 1, 0, 1];
        let opts = TrainOptions {
            epochs: 4,
            learning_rate: 0.05,
            seed: 17,
        };
        let m1 = early_fusion_train(&text, &imagef, &labels, 2, &opts).unwrap();
        let m2 = early_fusion_train(&text, &imagef, &labels, 2, &opts).unwrap();
        let probe = vec![0.5, 0.5, 0.5];
        assert_eq!(m1.predict(&probe).unwrap(), m2.predict(&probe).unwrap());
    }

    proptest! {
        #[test]
        fn pool_always_yields_a_distribution(
            raw1 in proptest::collection::vec(0.0f64..1.0, 4),
            raw2 in proptest::collection::vec(0.0f64..1.0, 4),
            a in 0.0f64..1.0,
        ) {
            let norm = |raw: &[f64]| {
                let s: f64 = raw.iter().sum::<f64>() + 1e-6;
                raw.iter().map(|v| (v + 0.25e-6) / s).collect::<Vec<_>>()
            };
            let w = FusionWeights::new(vec![a, 1.0 - a]).unwrap();
            let combined = late_fusion_combine(&[norm(&raw1), norm(&raw2)], &w).unwrap();
            let sum: f64 = combined.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(combined.iter().all(|&v| v >= 0.0));
        }
    }
}
