//! Declarative layer descriptions with ahead-of-time shape inference.
//!
//! Every layer the runtime can execute has a [`LayerSpec`] whose output shape
//! is computable from the input shape before any data flows. Model builders
//! validate their whole graph this way, and the checkpoint container stores
//! the spec list alongside the weights.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// Token-id lookup: `[S]` ids -> `[S, dim]`.
    Embedding { vocab: usize, dim: usize },
    /// 1-D convolution over a `[S, width]` sequence with full-width filters.
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        width: usize,
    },
    /// Max over the time axis: `[T, F]` -> `[F]`.
    MaxOverTime,
    /// Vector concatenation of the listed widths.
    Concat { widths: Vec<usize> },
    /// Affine map `[inputs]` -> `[outputs]`.
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// 2-D convolution over `[H, W, in_channels]` (channel-last).
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
    },
    /// Windowed spatial max over `[H, W, C]`.
    MaxPool2d { window: usize, stride: usize },
    /// Any shape -> `[n]`.
    Flatten,
    /// Softmax + cross-entropy head over `classes` logits.
    SoftmaxXent { classes: usize },
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(
            "conv",
            format!("input extent {input} with padding {padding} is shorter than kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl LayerSpec {
    /// Checks the hyperparameters themselves (positivity etc.), independent
    /// of any input.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        match self {
            LayerSpec::Embedding { vocab, dim } => {
                if *vocab == 0 || *dim == 0 {
                    return bad("embedding vocab and dim must be positive");
                }
            }
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                width,
                ..
            } => {
                if *filters == 0 || *kernel == 0 || *stride == 0 || *width == 0 {
                    return bad("conv1d filters, kernel, stride and width must be positive");
                }
            }
            LayerSpec::Concat { widths } => {
                if widths.is_empty() || widths.iter().any(|&w| w == 0) {
                    return bad("concat requires at least one positive width");
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return bad("dense inputs and outputs must be positive");
                }
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                in_channels,
                ..
            } => {
                if *filters == 0 || *kernel == 0 || *stride == 0 || *in_channels == 0 {
                    return bad("conv2d filters, kernel, stride and channels must be positive");
                }
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return bad("maxpool2d window and stride must be positive");
                }
            }
            LayerSpec::SoftmaxXent { classes } => {
                if *classes == 0 {
                    return bad("softmax head needs at least one class");
                }
            }
            LayerSpec::MaxOverTime | LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// The output shape this layer produces for `input`, or an error naming
    /// the offending dimension.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match self {
            LayerSpec::Embedding { dim, .. } => {
                if input.len() != 1 {
                    return Err(Error::shape("embedding", format!("expected [S], got {input:?}")));
                }
                Ok(vec![input[0], *dim])
            }
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
                width,
            } => {
                if input.len() != 2 {
                    return Err(Error::shape("conv1d", format!("expected [S, w], got {input:?}")));
                }
                if input[1] != *width {
                    return Err(Error::shape(
                        "conv1d",
                        format!("input width {} does not match filter width {width}", input[1]),
                    ));
                }
                let t = conv_extent(input[0], *kernel, *stride, *padding)?;
                Ok(vec![t, *filters])
            }
            LayerSpec::MaxOverTime => {
                if input.len() != 2 || input[0] == 0 {
                    return Err(Error::shape(
                        "max_over_time",
                        format!("expected non-empty [T, F], got {input:?}"),
                    ));
                }
                Ok(vec![input[1]])
            }
            LayerSpec::Concat { widths } => {
                // Input shape is the first operand; remaining operands are
                // described by the spec itself.
                if input != [widths[0]] {
                    return Err(Error::shape(
                        "concat",
                        format!("first operand {input:?} does not match declared width {}", widths[0]),
                    ));
                }
                Ok(vec![widths.iter().sum()])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(Error::shape(
                        "dense",
                        format!("expected [{inputs}], got {input:?}"),
                    ));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                in_channels,
            } => {
                if input.len() != 3 {
                    return Err(Error::shape("conv2d", format!("expected [H, W, C], got {input:?}")));
                }
                if input[2] != *in_channels {
                    return Err(Error::shape(
                        "conv2d",
                        format!("input channels {} do not match filter channels {in_channels}", input[2]),
                    ));
                }
                let h = conv_extent(input[0], *kernel, *stride, *padding)?;
                let w = conv_extent(input[1], *kernel, *stride, *padding)?;
                Ok(vec![h, w, *filters])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if input.len() != 3 {
                    return Err(Error::shape("maxpool2d", format!("expected [H, W, C], got {input:?}")));
                }
                let h = conv_extent(input[0], *window, *stride, 0)?;
                let w = conv_extent(input[1], *window, *stride, 0)?;
                if h == 0 || w == 0 {
                    return Err(Error::shape("maxpool2d", "pooled spatial extent is zero".to_string()));
                }
                Ok(vec![h, w, input[2]])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::SoftmaxXent { classes } => {
                if input != [*classes] {
                    return Err(Error::shape(
                        "softmax_xent",
                        format!("expected [{classes}] logits, got {input:?}"),
                    ));
                }
                // Loss is a scalar; the probability vector keeps the class axis.
                Ok(vec![*classes])
            }
        }
    }
}
