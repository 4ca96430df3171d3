//! Image manifests: `path,identity,origin_path` CSV files.
//!
//! Relative paths are resolved against the directory holding the manifest.
//! A fourth `error` column is written only when at least one row carries an
//! error, and is accepted on read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub identity: String,
    pub origin_path: String,
    pub error: Option<String>,
}

impl ManifestRow {
    pub fn new(path: impl Into<String>, identity: impl Into<String>) -> Self {
        let path = path.into();
        Self {
            origin_path: path.clone(),
            path,
            identity: identity.into(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Self {
        Self {
            root: root.into(),
            rows,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Rows without an error entry.
    pub fn valid_rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    /// Sorted identity names mapped to dense class indices.
    pub fn identity_index(&self) -> BTreeMap<String, usize> {
        let mut names: Vec<&str> = self.valid_rows().map(|r| r.identity.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut rows = Self::parse(&text)?;
        for r in &mut rows {
            if r.origin_path.is_empty() {
                r.origin_path = r.path.clone();
            }
        }
        Ok(Self { root, rows })
    }

    fn parse(bytes: &[u8]) -> Result<Vec<ManifestRow>> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let path_col = col("path")
            .ok_or_else(|| Error::Config("manifest header lacks `path` column".into()))?;
        let id_col = col("identity")
            .ok_or_else(|| Error::Config("manifest header lacks `identity` column".into()))?;
        let origin_col = col("origin_path");
        let err_col = col("error");
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).unwrap_or("").to_string();
            let error = get(err_col);
            rows.push(ManifestRow {
                path: get(Some(path_col)),
                identity: get(Some(id_col)),
                origin_path: get(origin_col),
                error: (!error.is_empty()).then_some(error),
            });
        }
        Ok(rows)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let with_errors = self.rows.iter().any(|r| r.error.is_some());
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        if with_errors {
            w.write_record(["path", "identity", "origin_path", "error"])?;
        } else {
            w.write_record(["path", "identity", "origin_path"])?;
        }
        for r in &self.rows {
            if with_errors {
                w.write_record([
                    r.path.as_str(),
                    r.identity.as_str(),
                    r.origin_path.as_str(),
                    r.error.as_deref().unwrap_or(""),
                ])?;
            } else {
                w.write_record([r.path.as_str(), r.identity.as_str(), r.origin_path.as_str()])?;
            }
        }
        w.into_inner()
            .map_err(|e| Error::Config(format!("manifest write: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_bytes()?).map_err(|e| Error::io(path, e))
    }
}
