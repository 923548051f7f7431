//! Forward/backward kernels for the supported layer set.
//!
//! Kernels are pure functions: forward passes take their inputs by reference
//! and return fresh tensors, backward passes take the same inputs plus the
//! upstream gradient and return the downstream gradients. Callers (the model
//! types) own the activation caches and accumulate parameter gradients.
//!
//! Conventions fixed across the crate:
//! - zero padding; out-of-range positions contribute nothing,
//! - max pools break ties by lowest index, so backward routing is
//!   deterministic,
//! - ReLU's subgradient at exactly 0 is 0.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// Looks up each id's row of `table` (`[V, dim]`), producing `[S, dim]`.
pub fn embedding_forward(ids: &[u32], table: &Tensor) -> Result<Tensor> {
    if table.shape().len() != 2 {
        return Err(Error::shape(
            "embedding",
            format!("table must be [V, dim], got {:?}", table.shape()),
        ));
    }
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    let mut out = Tensor::zeros(&[ids.len(), dim]);
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::shape(
                "embedding",
                format!("token id {id} out of range for vocabulary of {vocab}"),
            ));
        }
        let src = &table.data()[id * dim..(id + 1) * dim];
        out.data_mut()[t * dim..(t + 1) * dim].copy_from_slice(src);
    }
    Ok(out)
}

/// Scatter-adds the upstream `[S, dim]` gradient into a `[V, dim]` gradient
/// for the lookup table.
pub fn embedding_backward(ids: &[u32], upstream: &Tensor, vocab: usize) -> Result<Tensor> {
    let dim = upstream.shape()[1];
    if upstream.shape()[0] != ids.len() {
        return Err(Error::shape(
            "embedding",
            format!(
                "upstream rows {} do not match sequence length {}",
                upstream.shape()[0],
                ids.len()
            ),
        ));
    }
    let mut grad = Tensor::zeros(&[vocab, dim]);
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        let src = &upstream.data()[t * dim..(t + 1) * dim];
        let dst = &mut grad.data_mut()[id * dim..(id + 1) * dim];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Conv1D over [S, w] sequences
// ---------------------------------------------------------------------------

pub struct Conv1dGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
}

fn check_conv1d(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if input.shape().len() != 2 {
        return Err(Error::shape(
            "conv1d",
            format!("input must be [S, w], got {:?}", input.shape()),
        ));
    }
    if filters.shape().len() != 3 {
        return Err(Error::shape(
            "conv1d",
            format!("filters must be [F, k, w], got {:?}", filters.shape()),
        ));
    }
    let (s, w) = (input.shape()[0], input.shape()[1]);
    let (f, k, fw) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if fw != w {
        return Err(Error::shape(
            "conv1d",
            format!("filter width {fw} does not match embedding width {w}"),
        ));
    }
    if bias.shape() != [f] {
        return Err(Error::shape(
            "conv1d",
            format!("bias shape {:?} does not match filter count {f}", bias.shape()),
        ));
    }
    Ok((s, w, f, k))
}

/// `out[t, f] = bias[f] + sum_{i,j} input[t*stride + i - padding, j] * filters[f, i, j]`
/// with out-of-range input treated as zero.
pub fn conv1d_forward(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (s, w, f, k) = check_conv1d(input, filters, bias)?;
    if s + 2 * padding < k {
        return Err(Error::shape(
            "conv1d",
            format!("sequence length {s} with padding {padding} is shorter than kernel {k}"),
        ));
    }
    let t_out = (s + 2 * padding - k) / stride + 1;
    let mut out = Tensor::zeros(&[t_out, f]);
    for t in 0..t_out {
        for fi in 0..f {
            let mut acc = bias.data()[fi];
            for i in 0..k {
                let pos = t * stride + i;
                if pos < padding || pos - padding >= s {
                    continue;
                }
                let row = pos - padding;
                let in_off = row * w;
                let flt_off = (fi * k + i) * w;
                for j in 0..w {
                    acc += input.data()[in_off + j] * filters.data()[flt_off + j];
                }
            }
            out.data_mut()[t * f + fi] = acc;
        }
    }
    Ok(out)
}

pub fn conv1d_backward(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<Conv1dGrads> {
    let (s, w, f, k) = check_conv1d(input, filters, bias)?;
    let t_out = (s + 2 * padding - k) / stride + 1;
    if upstream.shape() != [t_out, f] {
        return Err(Error::shape(
            "conv1d",
            format!("upstream shape {:?} does not match output [{t_out}, {f}]", upstream.shape()),
        ));
    }
    let mut d_input = Tensor::zeros(&[s, w]);
    let mut d_filters = Tensor::zeros(&[f, k, w]);
    let mut d_bias = Tensor::zeros(&[f]);
    for t in 0..t_out {
        for fi in 0..f {
            let g = upstream.data()[t * f + fi];
            if g == 0.0 {
                continue;
            }
            d_bias.data_mut()[fi] += g;
            for i in 0..k {
                let pos = t * stride + i;
                if pos < padding || pos - padding >= s {
                    continue;
                }
                let row = pos - padding;
                let in_off = row * w;
                let flt_off = (fi * k + i) * w;
                for j in 0..w {
                    d_filters.data_mut()[flt_off + j] += g * input.data()[in_off + j];
                    d_input.data_mut()[in_off + j] += g * filters.data()[flt_off + j];
                }
            }
        }
    }
    Ok(Conv1dGrads {
        input: d_input,
        filters: d_filters,
        bias: d_bias,
    })
}

// ---------------------------------------------------------------------------
// Max over time
// ---------------------------------------------------------------------------

/// Column-wise max of a `[T, F]` tensor, returning the pooled `[F]` vector
/// and the winning row per column (ties go to the lowest index).
pub fn max_over_time_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if input.shape().len() != 2 || input.shape()[0] == 0 {
        return Err(Error::shape(
            "max_over_time",
            format!("input must be non-empty [T, F], got {:?}", input.shape()),
        ));
    }
    let (t_len, f) = (input.shape()[0], input.shape()[1]);
    let mut out = Tensor::zeros(&[f]);
    let mut argmax = vec![0usize; f];
    for fi in 0..f {
        let mut best = input.data()[fi];
        let mut best_t = 0usize;
        for t in 1..t_len {
            let v = input.data()[t * f + fi];
            if v > best {
                best = v;
                best_t = t;
            }
        }
        out.data_mut()[fi] = best;
        argmax[fi] = best_t;
    }
    Ok((out, argmax))
}

/// Routes each column's upstream gradient to the argmax row recorded during
/// the forward pass; every other position receives exactly zero.
pub fn max_over_time_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Tensor {
    let f = input_shape[1];
    let mut d_input = Tensor::zeros(input_shape);
    for fi in 0..f {
        d_input.data_mut()[argmax[fi] * f + fi] = upstream.data()[fi];
    }
    d_input
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    if weight.shape().len() != 2 {
        return Err(Error::shape(
            "dense",
            format!("weight must be [m, n], got {:?}", weight.shape()),
        ));
    }
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if input.shape() != [n] {
        return Err(Error::shape(
            "dense",
            format!("input shape {:?} does not match weight columns {n}", input.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(
            "dense",
            format!("bias shape {:?} does not match weight rows {m}", bias.shape()),
        ));
    }
    Ok((m, n))
}

/// `out = weight . input + bias` for `weight: [m, n]`, `input: [n]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = check_dense(input, weight, bias)?;
    let mut out = Tensor::zeros(&[m]);
    for r in 0..m {
        let row = &weight.data()[r * n..(r + 1) * n];
        let mut acc = bias.data()[r];
        for (wv, xv) in row.iter().zip(input.data()) {
            acc += wv * xv;
        }
        out.data_mut()[r] = acc;
    }
    Ok(out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, bias: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let (m, n) = check_dense(input, weight, bias)?;
    if upstream.shape() != [m] {
        return Err(Error::shape(
            "dense",
            format!("upstream shape {:?} does not match output rows {m}", upstream.shape()),
        ));
    }
    let mut d_input = Tensor::zeros(&[n]);
    let mut d_weight = Tensor::zeros(&[m, n]);
    let d_bias = upstream.clone();
    for r in 0..m {
        let g = upstream.data()[r];
        if g == 0.0 {
            continue;
        }
        let w_row = &weight.data()[r * n..(r + 1) * n];
        let dw_row = &mut d_weight.data_mut()[r * n..(r + 1) * n];
        for j in 0..n {
            dw_row[j] = g * input.data()[j];
        }
        for j in 0..n {
            d_input.data_mut()[j] += g * w_row[j];
        }
    }
    Ok(DenseGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Masks the upstream gradient where the pre-activation was <= 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let mut d = upstream.clone();
    for (dv, &x) in d.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *dv = 0.0;
        }
    }
    d
}

// ---------------------------------------------------------------------------
// Softmax + cross-entropy
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax with cross-entropy loss against
/// `true_class`. Returns `(loss, probs)`; the backward gradient at the
/// logits is `probs - onehot(true_class)`.
pub fn softmax_xent(logits: &Tensor, true_class: usize) -> Result<(f64, Tensor)> {
    let c = logits.len();
    if logits.shape().len() != 1 {
        return Err(Error::shape(
            "softmax_xent",
            format!("logits must be rank 1, got {:?}", logits.shape()),
        ));
    }
    if true_class >= c {
        return Err(Error::InvalidInput(format!(
            "true class {true_class} out of range for {c} classes"
        )));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = Tensor::zeros(&[c]);
    let mut sum = 0.0;
    for (p, &z) in probs.data_mut().iter_mut().zip(logits.data()) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.data_mut() {
        *p /= sum;
    }
    let loss = -(probs.data()[true_class].max(f64::MIN_POSITIVE)).ln();
    Ok((loss, probs))
}

pub fn softmax_xent_backward(probs: &Tensor, true_class: usize) -> Tensor {
    let mut d = probs.clone();
    d.data_mut()[true_class] -= 1.0;
    d
}

// ---------------------------------------------------------------------------
// Conv2D over [H, W, C] images (channel-last)
// ---------------------------------------------------------------------------

pub struct Conv2dGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
}

fn check_conv2d(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if input.shape().len() != 3 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [H, W, C], got {:?}", input.shape()),
        ));
    }
    if filters.shape().len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("filters must be [F, kh, kw, C], got {:?}", filters.shape()),
        ));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw, fc) = (
        filters.shape()[0],
        filters.shape()[1],
        filters.shape()[2],
        filters.shape()[3],
    );
    if fc != c {
        return Err(Error::shape(
            "conv2d",
            format!("filter channels {fc} do not match input channels {c}"),
        ));
    }
    if bias.shape() != [f] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match filter count {f}", bias.shape()),
        ));
    }
    let _ = (h, w, kh, kw);
    Ok((h, w, c, f, kh, kw))
}

/// Cross-correlation with zero padding: the output at `(y, x, f)` sums the
/// kernel window anchored at `y*stride - padding, x*stride - padding`.
pub fn conv2d_forward(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, c, f, kh, kw) = check_conv2d(input, filters, bias)?;
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(
            "conv2d",
            format!("input {h}x{w} with padding {padding} is smaller than kernel {kh}x{kw}"),
        ));
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor::zeros(&[out_h, out_w, f]);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for fi in 0..f {
                let mut acc = bias.data()[fi];
                for ky in 0..kh {
                    let iy = oy * stride + ky;
                    if iy < padding || iy - padding >= h {
                        continue;
                    }
                    let iy = iy - padding;
                    for kx in 0..kw {
                        let ix = ox * stride + kx;
                        if ix < padding || ix - padding >= w {
                            continue;
                        }
                        let ix = ix - padding;
                        let in_off = (iy * w + ix) * c;
                        let flt_off = ((fi * kh + ky) * kw + kx) * c;
                        for ch in 0..c {
                            acc += input.data()[in_off + ch] * filters.data()[flt_off + ch];
                        }
                    }
                }
                out.data_mut()[(oy * out_w + ox) * f + fi] = acc;
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<Conv2dGrads> {
    let (h, w, c, f, kh, kw) = check_conv2d(input, filters, bias)?;
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    if upstream.shape() != [out_h, out_w, f] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "upstream shape {:?} does not match output [{out_h}, {out_w}, {f}]",
                upstream.shape()
            ),
        ));
    }
    let mut d_input = Tensor::zeros(&[h, w, c]);
    let mut d_filters = Tensor::zeros(&[f, kh, kw, c]);
    let mut d_bias = Tensor::zeros(&[f]);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for fi in 0..f {
                let g = upstream.data()[(oy * out_w + ox) * f + fi];
                if g == 0.0 {
                    continue;
                }
                d_bias.data_mut()[fi] += g;
                for ky in 0..kh {
                    let iy = oy * stride + ky;
                    if iy < padding || iy - padding >= h {
                        continue;
                    }
                    let iy = iy - padding;
                    for kx in 0..kw {
                        let ix = ox * stride + kx;
                        if ix < padding || ix - padding >= w {
                            continue;
                        }
                        let ix = ix - padding;
                        let in_off = (iy * w + ix) * c;
                        let flt_off = ((fi * kh + ky) * kw + kx) * c;
                        for ch in 0..c {
                            d_filters.data_mut()[flt_off + ch] += g * input.data()[in_off + ch];
                            d_input.data_mut()[in_off + ch] += g * filters.data()[flt_off + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: d_input,
        filters: d_filters,
        bias: d_bias,
    })
}

// ---------------------------------------------------------------------------
// MaxPool2D
// ---------------------------------------------------------------------------

/// Windowed spatial max over `[H, W, C]`, channel by channel. Returns the
/// pooled tensor and, per output cell, the flat input offset of the winner
/// (lowest index on ties).
pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.shape().len() != 3 {
        return Err(Error::shape(
            "maxpool2d",
            format!("input must be [H, W, C], got {:?}", input.shape()),
        ));
    }
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig("pool window and stride must be positive".into()));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h < window || w < window {
        return Err(Error::shape(
            "maxpool2d",
            format!("input {h}x{w} is smaller than pool window {window}"),
        ));
    }
    let out_h = (h - window) / stride + 1;
    let out_w = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    let mut argmax = vec![0usize; out_h * out_w * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_off = 0usize;
                for ky in 0..window {
                    for kx in 0..window {
                        let off = ((oy * stride + ky) * w + (ox * stride + kx)) * c + ch;
                        let v = input.data()[off];
                        if v > best {
                            best = v;
                            best_off = off;
                        }
                    }
                }
                let out_off = (oy * out_w + ox) * c + ch;
                out.data_mut()[out_off] = best;
                argmax[out_off] = best_off;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Tensor {
    let mut d_input = Tensor::zeros(input_shape);
    for (out_off, &in_off) in argmax.iter().enumerate() {
        d_input.data_mut()[in_off] += upstream.data()[out_off];
    }
    d_input
}

// ---------------------------------------------------------------------------
// Concat
// ---------------------------------------------------------------------------

pub fn concat_forward(parts: &[&Tensor]) -> Tensor {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Tensor::zeros(&[total]);
    let mut off = 0;
    for p in parts {
        out.data_mut()[off..off + p.len()].copy_from_slice(p.data());
        off += p.len();
    }
    out
}

/// Splits the upstream gradient back into per-part tensors of the given widths.
pub fn concat_backward(widths: &[usize], upstream: &Tensor) -> Vec<Tensor> {
    let mut parts = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &w in widths {
        let mut t = Tensor::zeros(&[w]);
        t.data_mut().copy_from_slice(&upstream.data()[off..off + w]);
        off += w;
        parts.push(t);
    }
    parts
}
