//! A small configurable 2-D CNN for classifying plain or fused images.
//!
//! Stages of conv/ReLU/maxpool (same-padded 3x3 kernels by default) feed a
//! flatten, a hidden dense layer with ReLU (the image-feature extraction
//! point for early fusion), and a dense softmax head. Pixels are scaled to
//! `[0, 1]` per channel before the first layer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, layers, LayerSpec, OptimizerState};
use crate::raster::RasterImage;
use crate::tensor::{argmax, Parameter, Tensor};
use crate::text_model::{EpochStats, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniCnnConfig {
    /// Input images are square with this side length.
    pub input_side: usize,
    pub stages: Vec<StageConfig>,
    /// Width of the penultimate dense layer.
    pub hidden: usize,
    pub classes: usize,
}

impl MiniCnnConfig {
    /// Desk-scale default: 64x64 input, two 3x3 stages (8 then 16 filters,
    /// 2x2 pools), 64 hidden units.
    pub fn with_classes(classes: usize) -> MiniCnnConfig {
        MiniCnnConfig {
            input_side: 64,
            stages: vec![
                StageConfig { filters: 8, kernel: 3, pool: 2 },
                StageConfig { filters: 16, kernel: 3, pool: 2 },
            ],
            hidden: 64,
            classes,
        }
    }

    fn stage_padding(kernel: usize) -> usize {
        kernel / 2
    }

    /// Spatial side and channel count after each stage; errors if any stage
    /// collapses the spatial extent below 1.
    pub fn stage_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut side = self.input_side;
        let mut shapes = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            if st.filters == 0 || st.kernel == 0 || st.pool == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {i} has a zero filter/kernel/pool value"
                )));
            }
            let pad = Self::stage_padding(st.kernel);
            if side + 2 * pad < st.kernel {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: kernel {} exceeds spatial side {side}",
                    st.kernel
                )));
            }
            side = (side + 2 * pad - st.kernel) + 1;
            if side < st.pool {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: pool {} collapses spatial side {side} below 1",
                    st.pool
                )));
            }
            side = (side - st.pool) / st.pool + 1;
            shapes.push((side, st.filters));
        }
        Ok(shapes)
    }

    pub fn flatten_width(&self) -> Result<usize> {
        let shapes = self.stage_shapes()?;
        let (side, channels) = shapes.last().copied().unwrap_or((self.input_side, 3));
        Ok(side * side * channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(
                "image model input side, hidden width and classes must be positive".into(),
            ));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("at least one conv stage is required".into()));
        }
        self.stage_shapes()?;
        Ok(())
    }
}

#[derive(Debug)]
struct Stage {
    config: StageConfig,
    filters: Parameter, // [F, k, k, Cin]
    bias: Parameter,    // [F]
}

#[derive(Debug)]
pub struct ImageModel {
    config: MiniCnnConfig,
    stages: Vec<Stage>,
    hidden_weight: Parameter, // [hidden, flat]
    hidden_bias: Parameter,
    out_weight: Parameter, // [C, hidden]
    out_bias: Parameter,
}

#[derive(Debug)]
pub struct ImageForward {
    input: Tensor,
    stage_pre: Vec<Tensor>,
    stage_act: Vec<Tensor>,
    stage_pool: Vec<Tensor>,
    stage_argmax: Vec<Vec<usize>>,
    flat: Tensor,
    hidden_pre: Tensor,
    /// Post-ReLU hidden activation — the image-feature extraction point.
    pub hidden: Tensor,
    pub logits: Tensor,
}

/// Scales an RGB image to a `[side, side, 3]` tensor in `[0, 1]`.
pub fn image_to_tensor(img: &RasterImage) -> Tensor {
    let data: Vec<f64> = img.pixels().iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[img.height() as usize, img.width() as usize, 3], data)
        .expect("pixel buffer length always matches its dimensions")
}

impl ImageModel {
    pub fn new(config: MiniCnnConfig, seed: u64) -> Result<ImageModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut in_ch = 3usize;
        for (i, st) in config.stages.iter().enumerate() {
            let fan_in = st.kernel * st.kernel * in_ch;
            let fan_out = st.kernel * st.kernel * st.filters;
            stages.push(Stage {
                config: *st,
                filters: Parameter::new(
                    format!("stage{i}.filters"),
                    nn::glorot_uniform(&[st.filters, st.kernel, st.kernel, in_ch], fan_in, fan_out, &mut rng),
                ),
                bias: Parameter::new(format!("stage{i}.bias"), Tensor::zeros(&[st.filters])),
            });
            in_ch = st.filters;
        }
        let flat = config.flatten_width()?;
        let hidden_weight = Parameter::new(
            "hidden.weight",
            nn::glorot_uniform(&[config.hidden, flat], flat, config.hidden, &mut rng),
        );
        let hidden_bias = Parameter::new("hidden.bias", Tensor::zeros(&[config.hidden]));
        let out_weight = Parameter::new(
            "out.weight",
            nn::glorot_uniform(&[config.classes, config.hidden], config.hidden, config.classes, &mut rng),
        );
        let out_bias = Parameter::new("out.bias", Tensor::zeros(&[config.classes]));
        Ok(ImageModel {
            config,
            stages,
            hidden_weight,
            hidden_bias,
            out_weight,
            out_bias,
        })
    }

    pub fn from_parts(config: MiniCnnConfig, params: Vec<(String, Tensor)>) -> Result<ImageModel> {
        let mut model = ImageModel::new(config, 0)?;
        let mut supplied: std::collections::HashMap<String, Tensor> = params.into_iter().collect();
        for p in model.params_mut() {
            let t = supplied
                .remove(&p.name)
                .ok_or_else(|| Error::CheckpointFormat(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value().shape() {
                return Err(Error::CheckpointFormat(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value().shape()
                )));
            }
            *p.value_mut() = t;
        }
        if let Some(name) = supplied.keys().next() {
            return Err(Error::CheckpointFormat(format!("unexpected parameter {name}")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &MiniCnnConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = Vec::new();
        for s in &self.stages {
            ps.push(&s.filters);
            ps.push(&s.bias);
        }
        ps.push(&self.hidden_weight);
        ps.push(&self.hidden_bias);
        ps.push(&self.out_weight);
        ps.push(&self.out_bias);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = Vec::new();
        for s in &mut self.stages {
            ps.push(&mut s.filters);
            ps.push(&mut s.bias);
        }
        ps.push(&mut self.hidden_weight);
        ps.push(&mut self.hidden_bias);
        ps.push(&mut self.out_weight);
        ps.push(&mut self.out_bias);
        ps
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut in_ch = 3usize;
        for st in &self.config.stages {
            specs.push(LayerSpec::Conv2d {
                filters: st.filters,
                kernel: st.kernel,
                stride: 1,
                padding: MiniCnnConfig::stage_padding(st.kernel),
                in_channels: in_ch,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool2d {
                window: st.pool,
                stride: st.pool,
            });
            in_ch = st.filters;
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense {
            inputs: self.config.flatten_width().expect("validated at construction"),
            outputs: self.config.hidden,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Dense {
            inputs: self.config.hidden,
            outputs: self.config.classes,
        });
        specs.push(LayerSpec::SoftmaxXent {
            classes: self.config.classes,
        });
        specs
    }

    pub fn forward(&self, input: &Tensor) -> Result<ImageForward> {
        let side = self.config.input_side;
        if input.shape() != [side, side, 3] {
            return Err(Error::shape(
                "image_forward",
                format!("input shape {:?} does not match configured [{side}, {side}, 3]", input.shape()),
            ));
        }
        let mut x = input.clone();
        let mut stage_pre = Vec::new();
        let mut stage_act = Vec::new();
        let mut stage_pool = Vec::new();
        let mut stage_argmax = Vec::new();
        for s in &self.stages {
            let pad = MiniCnnConfig::stage_padding(s.config.kernel);
            let pre = layers::conv2d_forward(&x, s.filters.value(), s.bias.value(), 1, pad)?;
            let act = layers::relu_forward(&pre);
            let (pool, am) = layers::maxpool2d_forward(&act, s.config.pool, s.config.pool)?;
            stage_pre.push(pre);
            stage_act.push(act);
            x = pool.clone();
            stage_pool.push(pool);
            stage_argmax.push(am);
        }
        let mut flat = x;
        let n = flat.len();
        flat.reshape(&[n])?;
        let hidden_pre = layers::dense_forward(&flat, self.hidden_weight.value(), self.hidden_bias.value())?;
        let hidden = layers::relu_forward(&hidden_pre);
        let logits = layers::dense_forward(&hidden, self.out_weight.value(), self.out_bias.value())?;
        Ok(ImageForward {
            input: input.clone(),
            stage_pre,
            stage_act,
            stage_pool,
            stage_argmax,
            flat,
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn loss(&self, fwd: &ImageForward, label: usize) -> Result<(f64, Tensor)> {
        layers::softmax_xent(&fwd.logits, label)
    }

    pub fn backward(&mut self, fwd: &ImageForward, probs: &Tensor, label: usize) -> Result<()> {
        let d_logits = layers::softmax_xent_backward(probs, label);
        let out_grads = layers::dense_backward(
            &fwd.hidden,
            self.out_weight.value(),
            self.out_bias.value(),
            &d_logits,
        )?;
        self.out_weight.accumulate(&out_grads.weight)?;
        self.out_bias.accumulate(&out_grads.bias)?;

        let d_hidden_pre = layers::relu_backward(&fwd.hidden_pre, &out_grads.input);
        let hidden_grads = layers::dense_backward(
            &fwd.flat,
            self.hidden_weight.value(),
            self.hidden_bias.value(),
            &d_hidden_pre,
        )?;
        self.hidden_weight.accumulate(&hidden_grads.weight)?;
        self.hidden_bias.accumulate(&hidden_grads.bias)?;

        // Un-flatten back to the last pool's spatial shape.
        let mut d_x = hidden_grads.input;
        d_x.reshape(fwd.stage_pool.last().expect("at least one stage").shape())?;

        for (si, s) in self.stages.iter_mut().enumerate().rev() {
            let d_act = layers::maxpool2d_backward(fwd.stage_act[si].shape(), &fwd.stage_argmax[si], &d_x);
            let d_pre = layers::relu_backward(&fwd.stage_pre[si], &d_act);
            let below = if si == 0 { &fwd.input } else { &fwd.stage_pool[si - 1] };
            let pad = MiniCnnConfig::stage_padding(s.config.kernel);
            let grads = layers::conv2d_backward(below, s.filters.value(), s.bias.value(), 1, pad, &d_pre)?;
            s.filters.accumulate(&grads.filters)?;
            s.bias.accumulate(&grads.bias)?;
            d_x = grads.input;
        }
        Ok(())
    }

    /// Softmax posteriors for an image (forward only).
    pub fn posteriors(&self, img: &RasterImage) -> Result<Tensor> {
        let fwd = self.forward(&image_to_tensor(img))?;
        let (_, probs) = layers::softmax_xent(&fwd.logits, 0)?;
        Ok(probs)
    }

    /// Post-ReLU penultimate activation, length `hidden`.
    pub fn extract_features(&self, img: &RasterImage) -> Result<Vec<f64>> {
        let fwd = self.forward(&image_to_tensor(img))?;
        Ok(fwd.hidden.into_data())
    }
}

/// Seeded-shuffled per-sample SGD over `(image, label)` pairs, mirroring the
/// text trainer's protocol so plain-image and fused-image runs share one
/// hyperparameter set.
pub fn train_image_model(
    model: &mut ImageModel,
    samples: &[(RasterImage, usize)],
    opts: &TrainOptions,
) -> Result<Vec<EpochStats>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let side = model.config.input_side as u32;
    for (i, (img, label)) in samples.iter().enumerate() {
        if img.width() != side || img.height() != side {
            return Err(Error::shape(
                "train_image_model",
                format!(
                    "sample {i} is {}x{}, model expects {side}x{side}",
                    img.width(),
                    img.height()
                ),
            ));
        }
        if *label >= model.config.classes {
            return Err(Error::InvalidInput(format!(
                "sample {i} has label {label}, but the model has {} classes",
                model.config.classes
            )));
        }
    }
    let inputs: Vec<Tensor> = samples.iter().map(|(img, _)| image_to_tensor(img)).collect();
    let state = OptimizerState::new(opts.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &si in &order {
            let label = samples[si].1;
            let fwd = model.forward(&inputs[si])?;
            let (loss, probs) = model.loss(&fwd, label)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, sample {si}"
                )));
            }
            loss_sum += loss;
            if argmax(probs.data()) == label {
                correct += 1;
            }
            model.backward(&fwd, &probs, label)?;
            nn::sgd_step(&mut model.params_mut(), &state)?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        trace.push(stats);
        if stats.accuracy == 1.0 {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    fn mini_config() -> MiniCnnConfig {
        MiniCnnConfig {
            input_side: 8,
            stages: vec![StageConfig { filters: 4, kernel: 3, pool: 2 }],
            hidden: 8,
            classes: 2,
        }
    }

    fn noise_image(side: u32, seed: u64) -> RasterImage {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = RasterImage::new(side, side).unwrap();
        for y in 0..side {
            for x in 0..side {
                img.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
        img
    }

    #[test]
    fn default_config_flatten_width() {
        let cfg = MiniCnnConfig::with_classes(4);
        assert_eq!(cfg.flatten_width().unwrap(), 16 * 16 * 16);
    }

    #[test]
    fn config_collapsing_spatial_dims_rejected() {
        let cfg = MiniCnnConfig {
            input_side: 4,
            stages: vec![
                StageConfig { filters: 2, kernel: 3, pool: 2 },
                StageConfig { filters: 2, kernel: 3, pool: 4 },
            ],
            hidden: 4,
            classes: 2,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layer_specs_match_observed_shapes() {
        let model = ImageModel::new(mini_config(), 0).unwrap();
        let specs = model.layer_specs();
        let mut shape = vec![8usize, 8, 3];
        for spec in &specs {
            shape = spec.output_shape(&shape).unwrap();
        }
        assert_eq!(shape, vec![2]); // softmax over 2 classes
        let fwd = model.forward(&Tensor::zeros(&[8, 8, 3])).unwrap();
        assert_eq!(fwd.logits.shape(), &[2]);
        assert_eq!(fwd.flat.shape(), &[model.config.flatten_width().unwrap()]);
    }

    #[test]
    fn zero_image_hits_bias_path_only() {
        let mut model = ImageModel::new(mini_config(), 3).unwrap();
        // With zero input, conv output is bias (zero), so ReLU output is
        // zero, hidden is bias-only, and with zero out-bias the posterior
        // over classes is uniform.
        let fwd = model.forward(&Tensor::zeros(&[8, 8, 3])).unwrap();
        let (_, probs) = model.loss(&fwd, 0).unwrap();
        for &p in probs.data() {
            assert!((p - 0.5).abs() < 1e-12);
        }
        // Forcing a non-zero out bias shifts the posterior accordingly.
        model.out_bias.value_mut().data_mut()[0] = 1.0;
        let fwd = model.forward(&Tensor::zeros(&[8, 8, 3])).unwrap();
        let (_, probs) = model.loss(&fwd, 0).unwrap();
        assert!(probs.data()[0] > probs.data()[1]);
    }

    #[test]
    fn pixel_scaling_presents_unit_values() {
        let mut img = RasterImage::new(2, 2).unwrap();
        img.fill([255, 255, 255]);
        let t = image_to_tensor(&img);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mini_model_passes_gradient_check() {
        let mut model = ImageModel::new(mini_config(), 11).unwrap();
        let imgs = [noise_image(8, 1), noise_image(8, 2)];
        let batch: Vec<(Tensor, usize)> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| (image_to_tensor(img), i % 2))
            .collect();
        model.zero_grads();
        for (x, label) in &batch {
            let fwd = model.forward(x).unwrap();
            let (_, probs) = model.loss(&fwd, *label).unwrap();
            model.backward(&fwd, &probs, *label).unwrap();
        }
        let report = grad_check(
            &mut model,
            |m| m.params_mut(),
            |m| {
                batch
                    .iter()
                    .map(|(x, label)| {
                        let fwd = m.forward(x).unwrap();
                        m.loss(&fwd, *label).unwrap().0
                    })
                    .sum()
            },
            1e-6,
        );
        assert!(
            report.max_rel_err < 1e-5,
            "max rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
    }

    #[test]
    fn posteriors_are_a_distribution_and_deterministic() {
        let model = ImageModel::new(mini_config(), 5).unwrap();
        let img = noise_image(8, 9);
        let p1 = model.posteriors(&img).unwrap();
        let p2 = model.posteriors(&img).unwrap();
        assert_eq!(p1.data(), p2.data());
        assert!((p1.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p1.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn extracted_features_shape_and_sign() {
        let model = ImageModel::new(mini_config(), 5).unwrap();
        let img = noise_image(8, 4);
        let f = model.extract_features(&img).unwrap();
        assert_eq!(f.len(), 8);
        assert!(f.iter().all(|&v| v >= 0.0));
        assert_eq!(f, model.extract_features(&img).unwrap());
    }

    #[test]
    fn colored_shape_toy_set_trains_to_perfect_accuracy() {
        // Four classes discriminated by solid color; separable by
        // construction.
        let colors = [
            [230u8, 40, 40],
            [40, 230, 40],
            [40, 40, 230],
            [230, 230, 40],
        ];
        let mut samples = Vec::new();
        for (label, color) in colors.iter().enumerate() {
            for k in 0..4u64 {
                let mut img = noise_image(8, label as u64 * 10 + k);
                for y in 2..6 {
                    for x in 2..6 {
                        img.set(x, y, *color);
                    }
                }
                samples.push((img, label));
            }
        }
        let cfg = MiniCnnConfig {
            input_side: 8,
            stages: vec![StageConfig { filters: 4, kernel: 3, pool: 2 }],
            hidden: 16,
            classes: 4,
        };
        let mut model = ImageModel::new(cfg, 2).unwrap();
        let trace = train_image_model(&mut model, &samples, &TrainOptions::default()).unwrap();
        let last = trace.last().unwrap();
        assert_eq!(last.accuracy, 1.0, "trace: {trace:?}");
        assert!(last.mean_loss < trace[0].mean_loss);
    }

    #[test]
    fn training_same_seed_is_identical() {
        let samples: Vec<(RasterImage, usize)> =
            (0..4).map(|i| (noise_image(8, i), (i % 2) as usize)).collect();
        let run = || {
            let mut m = ImageModel::new(mini_config(), 21).unwrap();
            let opts = TrainOptions {
                epochs: 3,
                learning_rate: 0.01,
                seed: 21,
            };
            train_image_model(&mut m, &samples, &opts).unwrap();
            m.params().iter().flat_map(|p| p.value().data().to_vec()).collect::<Vec<f64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let samples = vec![(noise_image(8, 0), 0usize)];
        let mut m = ImageModel::new(mini_config(), 1).unwrap();
        let before: Vec<f64> = m.params().iter().flat_map(|p| p.value().data().to_vec()).collect();
        let trace = train_image_model(
            &mut m,
            &samples,
            &TrainOptions {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(trace.is_empty());
        let after: Vec<f64> = m.params().iter().flat_map(|p| p.value().data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn mismatched_image_size_rejected() {
        let mut m = ImageModel::new(mini_config(), 1).unwrap();
        let err = train_image_model(
            &mut m,
            &[(noise_image(9, 0), 0)],
            &TrainOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("9x9"));
    }
}
