//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian, full description in
//! `docs/formats.md`): magic `TXPX`, format version, model kind, a
//! kind-specific metadata block, the layer-spec list, then each parameter
//! as name, shape and raw little-endian f64 payload. Writing is fully
//! deterministic, so identical models produce identical files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image_model::{ImageModel, MiniCnnConfig, StageConfig};
use crate::nn::LayerSpec;
use crate::tensor::Tensor;
use crate::text_model::{NormStats, TextModel, TextModelConfig};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"TXPX";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TEXT: u8 = 1;
const KIND_IMAGE: u8 = 2;

// --- primitive writers ------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.str(name);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

// --- primitive readers ------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CheckpointFormat("invalid UTF-8 in string field".into()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u32()? as usize;
        (0..len).map(|_| self.f64()).collect()
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.str()?;
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok((name, Tensor::from_vec(&shape, data)?))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CheckpointFormat(format!(
                "{} trailing bytes after checkpoint payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

// --- layer specs -------------------------------------------------------------

fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match spec {
        LayerSpec::Embedding { vocab, dim } => {
            w.u8(0);
            w.u64(*vocab as u64);
            w.u64(*dim as u64);
        }
        LayerSpec::Conv1d {
            filters,
            kernel,
            stride,
            padding,
            width,
        } => {
            w.u8(1);
            for v in [filters, kernel, stride, padding, width] {
                w.u64(*v as u64);
            }
        }
        LayerSpec::MaxOverTime => w.u8(2),
        LayerSpec::Concat { widths } => {
            w.u8(3);
            w.u32(widths.len() as u32);
            for &v in widths {
                w.u64(v as u64);
            }
        }
        LayerSpec::Dense { inputs, outputs } => {
            w.u8(4);
            w.u64(*inputs as u64);
            w.u64(*outputs as u64);
        }
        LayerSpec::Relu => w.u8(5),
        LayerSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            in_channels,
        } => {
            w.u8(6);
            for v in [filters, kernel, stride, padding, in_channels] {
                w.u64(*v as u64);
            }
        }
        LayerSpec::MaxPool2d { window, stride } => {
            w.u8(7);
            w.u64(*window as u64);
            w.u64(*stride as u64);
        }
        LayerSpec::Flatten => w.u8(8),
        LayerSpec::SoftmaxXent { classes } => {
            w.u8(9);
            w.u64(*classes as u64);
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    let tag = r.u8()?;
    Ok(match tag {
        0 => LayerSpec::Embedding {
            vocab: r.u64()? as usize,
            dim: r.u64()? as usize,
        },
        1 => LayerSpec::Conv1d {
            filters: r.u64()? as usize,
            kernel: r.u64()? as usize,
            stride: r.u64()? as usize,
            padding: r.u64()? as usize,
            width: r.u64()? as usize,
        },
        2 => LayerSpec::MaxOverTime,
        3 => {
            let n = r.u32()? as usize;
            let mut widths = Vec::with_capacity(n);
            for _ in 0..n {
                widths.push(r.u64()? as usize);
            }
            LayerSpec::Concat { widths }
        }
        4 => LayerSpec::Dense {
            inputs: r.u64()? as usize,
            outputs: r.u64()? as usize,
        },
        5 => LayerSpec::Relu,
        6 => LayerSpec::Conv2d {
            filters: r.u64()? as usize,
            kernel: r.u64()? as usize,
            stride: r.u64()? as usize,
            padding: r.u64()? as usize,
            in_channels: r.u64()? as usize,
        },
        7 => LayerSpec::MaxPool2d {
            window: r.u64()? as usize,
            stride: r.u64()? as usize,
        },
        8 => LayerSpec::Flatten,
        9 => LayerSpec::SoftmaxXent {
            classes: r.u64()? as usize,
        },
        other => {
            return Err(Error::CheckpointFormat(format!("unknown layer spec tag {other}")));
        }
    })
}

fn write_specs_and_params(w: &mut Writer, specs: &[LayerSpec], params: Vec<(&str, &Tensor)>) {
    w.u32(specs.len() as u32);
    for s in specs {
        write_spec(w, s);
    }
    w.u32(params.len() as u32);
    for (name, t) in params {
        w.tensor(name, t);
    }
}

fn read_specs_and_params(r: &mut Reader) -> Result<(Vec<LayerSpec>, Vec<(String, Tensor)>)> {
    let n_specs = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_specs);
    for _ in 0..n_specs {
        specs.push(read_spec(r)?);
    }
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.tensor()?);
    }
    Ok((specs, params))
}

fn check_header(r: &mut Reader, expected_kind: u8) -> Result<()> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::CheckpointFormat("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = r.u8()?;
    if kind != expected_kind {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint kind {kind} does not match expected {expected_kind}"
        )));
    }
    Ok(())
}

// --- text checkpoint ----------------------------------------------------------

/// A trained text model with everything needed to reproduce feature
/// extraction: weights, vocabulary, configuration and (once computed) the
/// training-split normalization statistics.
#[derive(Debug)]
pub struct TextCheckpoint {
    pub model: TextModel,
    pub vocab: Vocabulary,
    pub stats: Option<NormStats>,
}

impl TextCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(KIND_TEXT);

        let cfg = self.model.config();
        w.u64(cfg.seq_len as u64);
        w.u64(cfg.embed_width as u64);
        w.u32(cfg.filter_sizes.len() as u32);
        for &k in &cfg.filter_sizes {
            w.u64(k as u64);
        }
        w.u64(cfg.filters_per_size as u64);
        w.u64(cfg.grid_height as u64);
        w.u64(cfg.grid_width as u64);
        w.u64(cfg.classes as u64);

        w.u32(self.vocab.min_frequency);
        w.u32(self.vocab.len() as u32);
        for token in self.vocab.tokens() {
            w.str(token);
        }

        match &self.stats {
            Some(stats) => {
                w.u8(1);
                w.f64_slice(&stats.min);
                w.f64_slice(&stats.max);
            }
            None => w.u8(0),
        }

        let specs = self.model.layer_specs();
        let params: Vec<(&str, &Tensor)> = self
            .model
            .params()
            .iter()
            .map(|p| (p.name.as_str(), p.value()))
            .collect();
        write_specs_and_params(&mut w, &specs, params);
        fs::write(path, &w.buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TextCheckpoint> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&buf);
        check_header(&mut r, KIND_TEXT)?;

        let seq_len = r.u64()? as usize;
        let embed_width = r.u64()? as usize;
        let n_sizes = r.u32()? as usize;
        let mut filter_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            filter_sizes.push(r.u64()? as usize);
        }
        let filters_per_size = r.u64()? as usize;
        let grid_height = r.u64()? as usize;
        let grid_width = r.u64()? as usize;
        let classes = r.u64()? as usize;
        let config = TextModelConfig {
            seq_len,
            embed_width,
            filter_sizes,
            filters_per_size,
            grid_height,
            grid_width,
            classes,
        };

        let min_frequency = r.u32()?;
        let n_tokens = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(r.str()?);
        }
        if tokens.len() < 2 || tokens[0] != crate::vocab::PAD_TOKEN || tokens[1] != crate::vocab::OOV_TOKEN {
            return Err(Error::CheckpointFormat(
                "vocabulary table must start with the reserved pad/oov tokens".into(),
            ));
        }
        let vocab = Vocabulary::from_tokens(tokens, min_frequency);

        let stats = match r.u8()? {
            0 => None,
            1 => {
                let min = r.f64_vec()?;
                let max = r.f64_vec()?;
                if min.len() != max.len() {
                    return Err(Error::CheckpointFormat(
                        "normalization min/max lengths differ".into(),
                    ));
                }
                Some(NormStats { min, max })
            }
            other => {
                return Err(Error::CheckpointFormat(format!(
                    "invalid normalization-stats flag {other}"
                )));
            }
        };

        let (specs, params) = read_specs_and_params(&mut r)?;
        r.done()?;
        let model = TextModel::from_parts(config, vocab.len(), params)?;
        if specs != model.layer_specs() {
            return Err(Error::CheckpointFormat(
                "stored layer specs do not match the configuration".into(),
            ));
        }
        if let Some(s) = &stats {
            if s.len() != model.config().feature_len() {
                return Err(Error::CheckpointFormat(format!(
                    "normalization stats length {} does not match feature length {}",
                    s.len(),
                    model.config().feature_len()
                )));
            }
        }
        Ok(TextCheckpoint {
            model,
            vocab,
            stats,
        })
    }
}

// --- image checkpoint ----------------------------------------------------------

#[derive(Debug)]
pub struct ImageCheckpoint {
    pub model: ImageModel,
}

impl ImageCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(KIND_IMAGE);

        let cfg = self.model.config();
        w.u64(cfg.input_side as u64);
        w.u32(cfg.stages.len() as u32);
        for st in &cfg.stages {
            w.u64(st.filters as u64);
            w.u64(st.kernel as u64);
            w.u64(st.pool as u64);
        }
        w.u64(cfg.hidden as u64);
        w.u64(cfg.classes as u64);

        let specs = self.model.layer_specs();
        let params: Vec<(&str, &Tensor)> = self
            .model
            .params()
            .iter()
            .map(|p| (p.name.as_str(), p.value()))
            .collect();
        write_specs_and_params(&mut w, &specs, params);
        fs::write(path, &w.buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ImageCheckpoint> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&buf);
        check_header(&mut r, KIND_IMAGE)?;

        let input_side = r.u64()? as usize;
        let n_stages = r.u32()? as usize;
        let mut stages = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            stages.push(StageConfig {
                filters: r.u64()? as usize,
                kernel: r.u64()? as usize,
                pool: r.u64()? as usize,
            });
        }
        let hidden = r.u64()? as usize;
        let classes = r.u64()? as usize;
        let config = MiniCnnConfig {
            input_side,
            stages,
            hidden,
            classes,
        };

        let (specs, params) = read_specs_and_params(&mut r)?;
        r.done()?;
        let model = ImageModel::from_parts(config, params)?;
        if specs != model.layer_specs() {
            return Err(Error::CheckpointFormat(
                "stored layer specs do not match the configuration".into(),
            ));
        }
        Ok(ImageCheckpoint { model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_model::extract_features;

    fn tiny_text_checkpoint() -> TextCheckpoint {
        let vocab = Vocabulary::build(["red drill blue saw tool kit"], 1).unwrap();
        let config = TextModelConfig {
            seq_len: 5,
            embed_width: 4,
            filter_sizes: vec![2, 3],
            filters_per_size: 2,
            grid_height: 1,
            grid_width: 2,
            classes: 2,
        };
        let model = TextModel::new(config, vocab.len(), 77).unwrap();
        TextCheckpoint {
            model,
            vocab,
            stats: Some(NormStats {
                min: vec![0.0; 6],
                max: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            }),
        }
    }

    #[test]
    fn text_checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.ckpt");
        let ckpt = tiny_text_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = TextCheckpoint::load(&path).unwrap();

        assert_eq!(loaded.model.config(), ckpt.model.config());
        assert_eq!(loaded.vocab, ckpt.vocab);
        assert_eq!(loaded.stats, ckpt.stats);
        for (a, b) in loaded.model.params().iter().zip(ckpt.model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value().data(), b.value().data());
        }

        // Extraction through the loaded model matches in-memory extraction
        // bit for bit.
        let seq = ckpt.vocab.tokenize_and_pad("red drill gadget", 5);
        let orig = extract_features(&ckpt.model, &[seq.clone()]).unwrap();
        let roundtrip = extract_features(&loaded.model, &[seq]).unwrap();
        assert_eq!(orig[0].values, roundtrip[0].values);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let ckpt = tiny_text_checkpoint();
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn image_checkpoint_roundtrip() {
        use crate::image_model::ImageModel;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("image.ckpt");
        let config = MiniCnnConfig {
            input_side: 8,
            stages: vec![StageConfig { filters: 2, kernel: 3, pool: 2 }],
            hidden: 4,
            classes: 3,
        };
        let ckpt = ImageCheckpoint {
            model: ImageModel::new(config, 5).unwrap(),
        };
        ckpt.save(&path).unwrap();
        let loaded = ImageCheckpoint::load(&path).unwrap();
        assert_eq!(loaded.model.config(), ckpt.model.config());
        for (a, b) in loaded.model.params().iter().zip(ckpt.model.params()) {
            assert_eq!(a.value().data(), b.value().data());
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOPE____________").unwrap();
        let err = TextCheckpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.ckpt");
        tiny_text_checkpoint().save(&path).unwrap();
        assert!(ImageCheckpoint::load(&path).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.ckpt");
        tiny_text_checkpoint().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 40);
        fs::write(&path, bytes).unwrap();
        let err = TextCheckpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
