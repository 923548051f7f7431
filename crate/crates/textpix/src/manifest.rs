//! Tab-separated dataset manifests binding labels, image files and text.
//!
//! One record per line: `label<TAB>image_path<TAB>text`, UTF-8, no header.
//! Tabs, newlines and backslashes inside the text field are escaped as
//! `\t`, `\n` and `\\`. Image paths are resolved relative to the manifest
//! file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub label: String,
    /// Path as written in the manifest (relative to the manifest file).
    pub image_path: PathBuf,
    pub text: String,
}

/// Sorted label-name to class-index table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl ClassTable {
    /// Builds the table from the distinct labels, sorted lexicographically.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> ClassTable {
        let names: BTreeSet<&str> = labels.into_iter().collect();
        let names: Vec<String> = names.into_iter().map(str::to_string).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        ClassTable { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    pub records: Vec<ManifestRecord>,
    /// Directory the manifest was loaded from; image paths resolve against it.
    pub base_dir: PathBuf,
}

fn escape_text(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl DatasetManifest {
    pub fn new(split: Split, records: Vec<ManifestRecord>, base_dir: PathBuf) -> DatasetManifest {
        DatasetManifest {
            split,
            records,
            base_dir,
        }
    }

    /// Parses a manifest file. Structural problems (wrong column count)
    /// are rejected here; file existence is checked by [`Self::validate`].
    pub fn load(path: &Path, split: Split) -> Result<DatasetManifest> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let label = cols.next().unwrap_or_default();
            let image_path = cols.next();
            let text = cols.next();
            let (Some(image_path), Some(text)) = (image_path, text) else {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    detail: format!("line {}: expected 3 tab-separated columns", lineno + 1),
                });
            };
            if label.is_empty() || image_path.is_empty() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    detail: format!("line {}: empty label or image path", lineno + 1),
                });
            }
            records.push(ManifestRecord {
                label: label.to_string(),
                image_path: PathBuf::from(image_path),
                text: unescape_text(text),
            });
        }
        if records.is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                detail: "manifest contains no records".into(),
            });
        }
        Ok(DatasetManifest {
            split,
            records,
            base_dir,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.label);
            out.push('\t');
            out.push_str(&r.image_path.to_string_lossy());
            out.push('\t');
            out.push_str(&escape_text(&r.text));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Absolute (base-dir-resolved) path of record `i`'s image.
    pub fn resolve_image(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.records[i].image_path)
    }

    pub fn class_table(&self) -> ClassTable {
        ClassTable::from_labels(self.records.iter().map(|r| r.label.as_str()))
    }

    /// Checks that every image file exists and every label is known to
    /// `classes`. Run before any training starts.
    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if classes.index_of(&r.label).is_none() {
                return Err(Error::Manifest {
                    path: self.base_dir.clone(),
                    detail: format!("record {i}: unknown label {:?}", r.label),
                });
            }
            let img = self.resolve_image(i);
            if !img.is_file() {
                return Err(Error::Manifest {
                    path: self.base_dir.clone(),
                    detail: format!("record {i}: missing image file {}", img.display()),
                });
            }
        }
        Ok(())
    }

    /// Label indices under `classes`, in record order.
    pub fn label_indices(&self, classes: &ClassTable) -> Result<Vec<usize>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                classes.index_of(&r.label).ok_or_else(|| Error::Manifest {
                    path: self.base_dir.clone(),
                    detail: format!("record {i}: unknown label {:?}", r.label),
                })
            })
            .collect()
    }
}

/// Train and test splits must not share any image path.
pub fn check_disjoint(train: &DatasetManifest, test: &DatasetManifest) -> Result<()> {
    let train_paths: BTreeSet<&Path> = train.records.iter().map(|r| r.image_path.as_path()).collect();
    for (i, r) in test.records.iter().enumerate() {
        if train_paths.contains(r.image_path.as_path()) {
            return Err(Error::Manifest {
                path: test.base_dir.clone(),
                detail: format!(
                    "test record {i} shares image {} with the train split",
                    r.image_path.display()
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterImage;

    fn write_manifest(dir: &Path, name: &str, rows: &[(&str, &str, &str)]) -> PathBuf {
        let path = dir.join(name);
        let content: String = rows
            .iter()
            .map(|(l, p, t)| format!("{l}\t{p}\t{t}\n"))
            .collect();
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn roundtrip_with_escapes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::new(
            Split::Train,
            vec![ManifestRecord {
                label: "drill".into(),
                image_path: "images/a.png".into(),
                text: "line one\nwith\ttab and \\ backslash".into(),
            }],
            dir.path().to_path_buf(),
        );
        let path = dir.path().join("train.tsv");
        manifest.save(&path).unwrap();
        let back = DatasetManifest::load(&path, Split::Train).unwrap();
        assert_eq!(back.records, manifest.records);
    }

    #[test]
    fn wrong_column_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        fs::write(&path, "label_only\n").unwrap();
        let err = DatasetManifest::load(&path, Split::Train).unwrap_err();
        assert!(err.to_string().contains("3 tab-separated columns"));
    }

    #[test]
    fn missing_image_rejected_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "t.tsv", &[("a", "nope.png", "text")]);
        let m = DatasetManifest::load(&path, Split::Train).unwrap();
        let classes = m.class_table();
        let err = m.validate(&classes).unwrap_err();
        assert!(err.to_string().contains("missing image"));
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        RasterImage::new(2, 2).unwrap().save_png(&dir.path().join("a.png")).unwrap();
        let path = write_manifest(dir.path(), "t.tsv", &[("mystery", "a.png", "text")]);
        let m = DatasetManifest::load(&path, Split::Test).unwrap();
        let classes = ClassTable::from_labels(["known"]);
        let err = m.validate(&classes).unwrap_err();
        assert!(err.to_string().contains("unknown label"));
    }

    #[test]
    fn class_table_is_sorted_and_indexed() {
        let t = ClassTable::from_labels(["zeta", "alpha", "zeta", "mid"]);
        assert_eq!(t.names(), &["alpha", "mid", "zeta"]);
        assert_eq!(t.index_of("mid"), Some(1));
        assert_eq!(t.index_of("nope"), None);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn split_overlap_detected() {
        let dir = tempfile::tempdir().unwrap();
        let train_path = write_manifest(dir.path(), "train.tsv", &[("a", "img/x.png", "t")]);
        let test_path = write_manifest(dir.path(), "test.tsv", &[("a", "img/x.png", "t")]);
        let train = DatasetManifest::load(&train_path, Split::Train).unwrap();
        let test = DatasetManifest::load(&test_path, Split::Test).unwrap();
        let err = check_disjoint(&train, &test).unwrap_err();
        assert!(err.to_string().contains("shares image"));
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "").unwrap();
        assert!(DatasetManifest::load(&path, Split::Train).is_err());
    }
}
