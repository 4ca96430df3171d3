//! Run configuration: one JSON document for the whole pipeline, with
//! dotted-path overrides from the command line.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgproc::AugPlan;
use crate::retrieval::QeConfig;
use crate::synthdata::ShiftProfile;
use crate::trainer::TrainConfig;

/// Environment variable consulted when no seed is given explicitly.
pub const SEED_ENV: &str = "NOSEPRINT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_ids: usize,
    pub per_id: usize,
    pub size: usize,
    pub shift: ShiftProfile,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_ids: 20,
            per_id: 10,
            size: 64,
            shift: ShiftProfile::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; takes precedence over the section seeds when set.
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub train: TrainConfig,
    /// Offline augmentation plan for `augment`.
    pub plan: Option<AugPlan>,
    pub qe: QeConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `file` (if any), then applies `overrides` as `(dotted.key, value)`.
    /// Values parse as JSON and fall back to a plain string.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let user: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            doc = serde_json::to_value(user).expect("config serializes");
        }
        for (key, raw) in overrides {
            set_path(&mut doc, key, parse_scalar(raw))?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        cfg.train.validate()?;
        if let Some(plan) = &cfg.plan {
            plan.validate()?;
        }
        Ok(cfg)
    }

    /// Explicit flag, then the config's global seed, then `NOSEPRINT_SEED`.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<Option<u64>> {
        if flag.is_some() {
            return Ok(flag);
        }
        if self.seed.is_some() {
            return Ok(self.seed);
        }
        env_seed()
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Replaces the value at `key`; every segment must already exist.
fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let mut walked = Vec::new();
    for seg in key.split('.') {
        walked.push(seg);
        cur = match cur {
            Value::Object(map) => map.get_mut(seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config key `{}`", walked.join("."))))?;
    }
    if cur.is_object() || cur.is_array() {
        return Err(Error::Config(format!("`{key}` is not a scalar")));
    }
    *cur = value;
    Ok(())
}

/// Splits `--dotted.key value` (or `--dotted.key=value`) pairs out of
/// `args`; everything else is returned untouched for the argument parser.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => match it.next_if(|next| !next.starts_with("--")) {
                Some(v) => overrides.push((flag.to_string(), v)),
                // a dangling override is left for the parser to reject
                None => rest.push(arg),
            },
        }
    }
    (rest, overrides)
}
