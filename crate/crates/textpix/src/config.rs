//! Run configuration: a small `key = value` file format covering every
//! hyperparameter a pipeline run needs. The raw file lines are kept so
//! metrics CSVs can echo them verbatim.

use std::fs;
use std::path::Path;

use crate::codec::EncodingGeometry;
use crate::error::{Error, Result};
use crate::image_model::{MiniCnnConfig, StageConfig};
use crate::text_model::{TextModelConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub min_frequency: u32,

    pub text_seq_len: usize,
    pub text_embed: usize,
    pub text_filter_sizes: Vec<usize>,
    pub text_filters: usize,
    pub grid_height: usize,
    pub grid_width: usize,

    pub image_side: usize,
    pub image_stages: Vec<StageConfig>,
    pub image_hidden: usize,

    pub superpixel: u32,
    pub anchor: (u32, u32),

    /// Verbatim lines of the source config file (empty when defaults are
    /// used); echoed into every metrics CSV header.
    pub raw_lines: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 60,
            lr: 0.01,
            min_frequency: 1,
            text_seq_len: 100,
            text_embed: 128,
            text_filter_sizes: vec![3, 4, 5],
            text_filters: 128,
            grid_height: 10,
            grid_width: 10,
            image_side: 64,
            image_stages: vec![
                StageConfig { filters: 8, kernel: 3, pool: 2 },
                StageConfig { filters: 16, kernel: 3, pool: 2 },
            ],
            image_hidden: 64,
            superpixel: 3,
            anchor: (0, 0),
            raw_lines: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} value {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_num(key, v.trim()))
        .collect()
}

fn parse_stages(value: &str) -> Result<Vec<StageConfig>> {
    value
        .split(',')
        .map(|stage| {
            let parts: Vec<&str> = stage.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "image.stages entry {stage:?} must be filters:kernel:pool"
                )));
            }
            Ok(StageConfig {
                filters: parse_num("image.stages", parts[0])?,
                kernel: parse_num("image.stages", parts[1])?,
                pool: parse_num("image.stages", parts[2])?,
            })
        })
        .collect()
}

impl RunConfig {
    /// Parses a config file: one `key = value` per line, `#` comments and
    /// blank lines ignored. Unknown keys are rejected so typos surface.
    pub fn from_str(content: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if !raw.trim().is_empty() {
                cfg.raw_lines.push(raw.to_string());
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "seed" => cfg.seed = parse_num(key, value)?,
                "epochs" => cfg.epochs = parse_num(key, value)?,
                "lr" => cfg.lr = parse_num(key, value)?,
                "min_frequency" => cfg.min_frequency = parse_num(key, value)?,
                "text.s" => cfg.text_seq_len = parse_num(key, value)?,
                "text.embed" => cfg.text_embed = parse_num(key, value)?,
                "text.filter_sizes" => cfg.text_filter_sizes = parse_list(key, value)?,
                "text.filters" => cfg.text_filters = parse_num(key, value)?,
                "text.ht" => cfg.grid_height = parse_num(key, value)?,
                "text.wt" => cfg.grid_width = parse_num(key, value)?,
                "image.side" => cfg.image_side = parse_num(key, value)?,
                "image.stages" => cfg.image_stages = parse_stages(value)?,
                "image.hidden" => cfg.image_hidden = parse_num(key, value)?,
                "geometry.p" => cfg.superpixel = parse_num(key, value)?,
                "geometry.anchor" => {
                    let (x, y) = value.split_once(',').ok_or_else(|| {
                        Error::InvalidConfig(format!("geometry.anchor {value:?} must be x,y"))
                    })?;
                    cfg.anchor = (parse_num(key, x.trim())?, parse_num(key, y.trim())?);
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_str(&content)
    }

    pub fn text_config(&self, classes: usize) -> TextModelConfig {
        TextModelConfig {
            seq_len: self.text_seq_len,
            embed_width: self.text_embed,
            filter_sizes: self.text_filter_sizes.clone(),
            filters_per_size: self.text_filters,
            grid_height: self.grid_height,
            grid_width: self.grid_width,
            classes,
        }
    }

    pub fn image_config(&self, classes: usize) -> MiniCnnConfig {
        MiniCnnConfig {
            input_side: self.image_side,
            stages: self.image_stages.clone(),
            hidden: self.image_hidden,
            classes,
        }
    }

    pub fn geometry(&self) -> Result<EncodingGeometry> {
        EncodingGeometry::new(
            self.grid_width as u32,
            self.grid_height as u32,
            self.superpixel,
            self.anchor,
        )
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            learning_rate: self.lr,
            seed,
        }
    }

    /// Compact one-line echo of the effective configuration; contains no
    /// commas so it can sit in a CSV field unquoted.
    pub fn canonical_echo(&self) -> String {
        let sizes: Vec<String> = self.text_filter_sizes.iter().map(|k| k.to_string()).collect();
        let stages: Vec<String> = self
            .image_stages
            .iter()
            .map(|s| format!("{}:{}:{}", s.filters, s.kernel, s.pool))
            .collect();
        format!(
            "seed={};epochs={};lr={};min_frequency={};text.s={};text.embed={};text.filter_sizes={};text.filters={};text.ht={};text.wt={};image.side={};image.stages={};image.hidden={};geometry.p={};geometry.anchor={}:{}",
            self.seed,
            self.epochs,
            self.lr,
            self.min_frequency,
            self.text_seq_len,
            self.text_embed,
            sizes.join("+"),
            self.text_filters,
            self.grid_height,
            self.grid_width,
            self.image_side,
            stages.join("+"),
            self.image_hidden,
            self.superpixel,
            self.anchor.0,
            self.anchor.1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = RunConfig::from_str(
            "# desk-scale run\n\
             seed = 7\n\
             epochs = 30\n\
             lr = 0.01\n\
             text.s = 16\n\
             text.embed = 16\n\
             text.filter_sizes = 2,3\n\
             text.filters = 8\n\
             text.ht = 5\n\
             text.wt = 5\n\
             image.side = 48\n\
             image.stages = 4:3:2,8:3:2\n\
             image.hidden = 32\n\
             geometry.p = 2\n\
             geometry.anchor = 1,2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.text_filter_sizes, vec![2, 3]);
        assert_eq!(cfg.image_stages.len(), 2);
        assert_eq!(cfg.image_stages[1].filters, 8);
        assert_eq!(cfg.anchor, (1, 2));
        assert_eq!(cfg.raw_lines.len(), 15);
    }

    #[test]
    fn defaults_without_file() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.text_config(4).concat_width(), 384);
        assert_eq!(cfg.text_config(4).feature_len(), 300);
        assert_eq!(cfg.image_config(4).flatten_width().unwrap(), 4096);
        // Early fusion concatenates the 300-wide text features with the
        // 64-wide image features under these defaults.
        assert_eq!(cfg.text_config(4).feature_len() + cfg.image_config(4).hidden, 364);
        assert_eq!(cfg.epochs, 60);
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_str("sede = 7\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn canonical_echo_has_no_commas() {
        let echo = RunConfig::default().canonical_echo();
        assert!(!echo.contains(','));
        assert!(echo.contains("text.filter_sizes=3+4+5"));
    }
}
