//! The text classifier whose hidden feature vector gets painted onto images.
//!
//! Architecture: embedding, three parallel full-width 1-D convolution
//! branches with ReLU and max-over-time pooling, concatenation, a dense
//! feature layer of width `3 * grid_height * grid_width` with ReLU (this is
//! the extraction point), and a dense softmax head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, layers, LayerSpec, OptimizerState};
use crate::tensor::{argmax, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextModelConfig {
    /// Sequence length S: texts are truncated/padded to this many tokens.
    pub seq_len: usize,
    /// Embedding width per token.
    pub embed_width: usize,
    /// Kernel sizes of the parallel convolution branches.
    pub filter_sizes: Vec<usize>,
    /// Filters per branch.
    pub filters_per_size: usize,
    /// Encoded-text grid height (rows of superpixels downstream).
    pub grid_height: usize,
    /// Encoded-text grid width.
    pub grid_width: usize,
    /// Number of output classes.
    pub classes: usize,
}

impl TextModelConfig {
    /// The default configuration: S=100, 128-wide embeddings, 128 filters
    /// for each of the kernel sizes 3, 4 and 5, and a 10x10 feature grid.
    pub fn with_classes(classes: usize) -> TextModelConfig {
        TextModelConfig {
            seq_len: 100,
            embed_width: 128,
            filter_sizes: vec![3, 4, 5],
            filters_per_size: 128,
            grid_height: 10,
            grid_width: 10,
            classes,
        }
    }

    /// Feature length L = 3 * grid_height * grid_width.
    pub fn feature_len(&self) -> usize {
        3 * self.grid_height * self.grid_width
    }

    /// Width of the concatenated pooled vector.
    pub fn concat_width(&self) -> usize {
        self.filter_sizes.len() * self.filters_per_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seq_len == 0
            || self.embed_width == 0
            || self.filters_per_size == 0
            || self.grid_height == 0
            || self.grid_width == 0
            || self.classes == 0
        {
            return bad("all text model dimensions must be positive".into());
        }
        if self.filter_sizes.is_empty() {
            return bad("at least one filter size is required".into());
        }
        for &k in &self.filter_sizes {
            if k == 0 || k > self.seq_len {
                return bad(format!(
                    "filter size {k} must be in 1..={} (sequence length)",
                    self.seq_len
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
struct ConvBranch {
    filters: Parameter, // [F, k, w]
    bias: Parameter,    // [F]
}

#[derive(Debug)]
pub struct TextModel {
    config: TextModelConfig,
    vocab_size: usize,
    embedding: Parameter, // [V, w]
    branches: Vec<ConvBranch>,
    feat_weight: Parameter, // [L, D]
    feat_bias: Parameter,   // [L]
    out_weight: Parameter,  // [C, L]
    out_bias: Parameter,    // [C]
}

/// Per-sample activation cache produced by [`TextModel::forward`].
#[derive(Debug)]
pub struct TextForward {
    ids: Vec<u32>,
    embedded: Tensor,
    branch_pre: Vec<Tensor>,
    branch_act: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    concat: Tensor,
    feat_pre: Tensor,
    /// Post-ReLU feature vector of length L — the extraction point.
    pub features: Tensor,
    pub logits: Tensor,
}

impl TextModel {
    /// Builds and initializes the model. Weight init is Glorot-uniform from
    /// a generator seeded with `seed`; biases start at zero.
    pub fn new(config: TextModelConfig, vocab_size: usize, seed: u64) -> Result<TextModel> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must contain at least the reserved tokens, got {vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.embed_width;
        let f = config.filters_per_size;
        let l = config.feature_len();
        let d = config.concat_width();
        let c = config.classes;

        let embedding = Parameter::new(
            "embedding",
            nn::glorot_uniform(&[vocab_size, w], vocab_size, w, &mut rng),
        );
        let mut branches = Vec::new();
        for &k in &config.filter_sizes {
            branches.push(ConvBranch {
                filters: Parameter::new(
                    format!("conv{k}.filters"),
                    nn::glorot_uniform(&[f, k, w], k * w, k * f, &mut rng),
                ),
                bias: Parameter::new(format!("conv{k}.bias"), Tensor::zeros(&[f])),
            });
        }
        let feat_weight = Parameter::new("feat.weight", nn::glorot_uniform(&[l, d], d, l, &mut rng));
        let feat_bias = Parameter::new("feat.bias", Tensor::zeros(&[l]));
        let out_weight = Parameter::new("out.weight", nn::glorot_uniform(&[c, l], l, c, &mut rng));
        let out_bias = Parameter::new("out.bias", Tensor::zeros(&[c]));

        Ok(TextModel {
            config,
            vocab_size,
            embedding,
            branches,
            feat_weight,
            feat_bias,
            out_weight,
            out_bias,
        })
    }

    /// Rebuilds a model from checkpointed parameters, matching them by name.
    pub fn from_parts(
        config: TextModelConfig,
        vocab_size: usize,
        params: Vec<(String, Tensor)>,
    ) -> Result<TextModel> {
        let mut model = TextModel::new(config, vocab_size, 0)?;
        let mut supplied: std::collections::HashMap<String, Tensor> = params.into_iter().collect();
        for p in model.params_mut() {
            let t = supplied.remove(&p.name).ok_or_else(|| {
                Error::CheckpointFormat(format!("missing parameter {}", p.name))
            })?;
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

    pub fn config(&self) -> &TextModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = vec![&self.embedding];
        for b in &self.branches {
            ps.push(&b.filters);
            ps.push(&b.bias);
        }
        ps.push(&self.feat_weight);
        ps.push(&self.feat_bias);
        ps.push(&self.out_weight);
        ps.push(&self.out_bias);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = vec![&mut self.embedding];
        for b in &mut self.branches {
            ps.push(&mut b.filters);
            ps.push(&mut b.bias);
        }
        ps.push(&mut self.feat_weight);
        ps.push(&mut self.feat_bias);
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

    /// The layer graph as declarative specs, in execution order. Branch
    /// specs appear once per kernel size.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let mut specs = vec![LayerSpec::Embedding {
            vocab: self.vocab_size,
            dim: c.embed_width,
        }];
        for &k in &c.filter_sizes {
            specs.push(LayerSpec::Conv1d {
                filters: c.filters_per_size,
                kernel: k,
                stride: 1,
                padding: 0,
                width: c.embed_width,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxOverTime);
        }
        specs.push(LayerSpec::Concat {
            widths: vec![c.filters_per_size; c.filter_sizes.len()],
        });
        specs.push(LayerSpec::Dense {
            inputs: c.concat_width(),
            outputs: c.feature_len(),
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Dense {
            inputs: c.feature_len(),
            outputs: c.classes,
        });
        specs.push(LayerSpec::SoftmaxXent { classes: c.classes });
        specs
    }

    pub fn forward(&self, ids: &[u32]) -> Result<TextForward> {
        if ids.len() != self.config.seq_len {
            return Err(Error::shape(
                "text_forward",
                format!(
                    "sequence length {} does not match configured S={}",
                    ids.len(),
                    self.config.seq_len
                ),
            ));
        }
        let embedded = layers::embedding_forward(ids, self.embedding.value())?;
        let mut branch_pre = Vec::new();
        let mut branch_act = Vec::new();
        let mut pooled = Vec::new();
        let mut pool_argmax = Vec::new();
        for b in &self.branches {
            let pre = layers::conv1d_forward(&embedded, b.filters.value(), b.bias.value(), 1, 0)?;
            let act = layers::relu_forward(&pre);
            let (pool, am) = layers::max_over_time_forward(&act)?;
            branch_pre.push(pre);
            branch_act.push(act);
            pooled.push(pool);
            pool_argmax.push(am);
        }
        let concat = layers::concat_forward(&pooled.iter().collect::<Vec<_>>());
        let feat_pre = layers::dense_forward(&concat, self.feat_weight.value(), self.feat_bias.value())?;
        let features = layers::relu_forward(&feat_pre);
        let logits = layers::dense_forward(&features, self.out_weight.value(), self.out_bias.value())?;
        Ok(TextForward {
            ids: ids.to_vec(),
            embedded,
            branch_pre,
            branch_act,
            pool_argmax,
            concat,
            feat_pre,
            features,
            logits,
        })
    }

    /// Loss and class posteriors for a completed forward pass.
    pub fn loss(&self, fwd: &TextForward, label: usize) -> Result<(f64, Tensor)> {
        layers::softmax_xent(&fwd.logits, label)
    }

    /// Accumulates gradients for one sample into the parameters.
    pub fn backward(&mut self, fwd: &TextForward, probs: &Tensor, label: usize) -> Result<()> {
        let d_logits = layers::softmax_xent_backward(probs, label);
        let out_grads = layers::dense_backward(
            &fwd.features,
            self.out_weight.value(),
            self.out_bias.value(),
            &d_logits,
        )?;
        self.out_weight.accumulate(&out_grads.weight)?;
        self.out_bias.accumulate(&out_grads.bias)?;

        let d_feat_pre = layers::relu_backward(&fwd.feat_pre, &out_grads.input);
        let feat_grads = layers::dense_backward(
            &fwd.concat,
            self.feat_weight.value(),
            self.feat_bias.value(),
            &d_feat_pre,
        )?;
        self.feat_weight.accumulate(&feat_grads.weight)?;
        self.feat_bias.accumulate(&feat_grads.bias)?;

        let widths = vec![self.config.filters_per_size; self.branches.len()];
        let d_pooled = layers::concat_backward(&widths, &feat_grads.input);

        let mut d_embedded = Tensor::zeros(fwd.embedded.shape());
        for (bi, b) in self.branches.iter_mut().enumerate() {
            let d_act = layers::max_over_time_backward(
                fwd.branch_act[bi].shape(),
                &fwd.pool_argmax[bi],
                &d_pooled[bi],
            );
            let d_pre = layers::relu_backward(&fwd.branch_pre[bi], &d_act);
            let grads = layers::conv1d_backward(
                &fwd.embedded,
                b.filters.value(),
                b.bias.value(),
                1,
                0,
                &d_pre,
            )?;
            b.filters.accumulate(&grads.filters)?;
            b.bias.accumulate(&grads.bias)?;
            for (acc, g) in d_embedded.data_mut().iter_mut().zip(grads.input.data()) {
                *acc += g;
            }
        }
        let d_embedding = layers::embedding_backward(&fwd.ids, &d_embedded, self.vocab_size)?;
        self.embedding.accumulate(&d_embedding)?;
        Ok(())
    }

    /// Class posteriors for a token sequence (forward only).
    pub fn posteriors(&self, ids: &[u32]) -> Result<Tensor> {
        let fwd = self.forward(ids)?;
        // Loss against class 0 is discarded; only the softmax matters here.
        let (_, probs) = layers::softmax_xent(&fwd.logits, 0)?;
        Ok(probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 60,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Seeded-shuffled per-sample SGD. Each epoch reshuffles, then runs one
/// forward/backward/step per sample. Training accuracy is measured on each
/// sample's prediction before its own update; the loop stops early once an
/// epoch reaches accuracy 1.0.
pub fn train_text_model(
    model: &mut TextModel,
    samples: &[(Vec<u32>, usize)],
    opts: &TrainOptions,
) -> Result<Vec<EpochStats>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let classes = model.config.classes;
    for (i, (_, label)) in samples.iter().enumerate() {
        if *label >= classes {
            return Err(Error::InvalidInput(format!(
                "sample {i} has label {label}, but the model has {classes} classes"
            )));
        }
    }
    let state = OptimizerState::new(opts.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &si in &order {
            let (ids, label) = &samples[si];
            let fwd = model.forward(ids)?;
            let (loss, probs) = model.loss(&fwd, *label)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, sample {si}"
                )));
            }
            loss_sum += loss;
            if argmax(probs.data()) == *label {
                correct += 1;
            }
            model.backward(&fwd, &probs, *label)?;
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

/// The length-L feature vector extracted for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Index of the sample in the extraction input order.
    pub sample: usize,
    pub values: Vec<f64>,
}

/// Extracts the post-ReLU feature-layer activation for each sequence.
/// Forward passes only; the model is not modified.
pub fn extract_features(model: &TextModel, sequences: &[Vec<u32>]) -> Result<Vec<FeatureVector>> {
    sequences
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            let fwd = model.forward(ids)?;
            Ok(FeatureVector {
                sample: i,
                values: fwd.features.into_data(),
            })
        })
        .collect()
}

/// Per-dimension min/max over a set of feature vectors. Computed on the
/// training split only and stored in the checkpoint; test-time values
/// outside the range clamp during quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }
}

pub fn compute_norm_stats(features: &[FeatureVector]) -> Result<NormStats> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot compute normalization stats of zero vectors".into()))?;
    let len = first.values.len();
    let mut min = first.values.clone();
    let mut max = first.values.clone();
    for fv in &features[1..] {
        if fv.values.len() != len {
            return Err(Error::shape(
                "norm_stats",
                format!("feature length {} differs from first vector's {len}", fv.values.len()),
            ));
        }
        for i in 0..len {
            min[i] = min[i].min(fv.values[i]);
            max[i] = max[i].max(fv.values[i]);
        }
    }
    Ok(NormStats { min, max })
}
