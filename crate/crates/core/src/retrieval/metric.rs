use serde::{Deserialize, Serialize};

use super::store::{EmbeddingRecord, EmbeddingStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    #[default]
    Cosine,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Euclidean distance or cosine distance `1 - cos(a, b)`.
pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("distance between dims {} and {}", a.len(), b.len())));
    }
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Domain("cosine distance of a zero vector".into()));
            }
            let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
            Ok(1.0 - dot / (na * nb))
        }
    }
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Domain(format!("cannot normalize a vector of norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QeConfig {
    pub m: usize,
    pub metric: Metric,
    /// Neighbours less similar than this (similarity = -distance) are
    /// left out of the average.
    pub min_similarity: Option<f64>,
}

impl Default for QeConfig {
    fn default() -> Self {
        Self {
            m: 3,
            metric: Metric::Cosine,
            min_similarity: None,
        }
    }
}

/// Averages `query` with its `m` nearest gallery vectors.
///
/// Ties in distance go to the smaller id. When `m` exceeds the gallery the
/// whole gallery is used. Under the cosine metric the mean is renormalized.
/// With no neighbour selected the query is returned unchanged, bit for bit.
pub fn query_expand<'a>(
    query: &[f32],
    gallery: impl IntoIterator<Item = &'a EmbeddingRecord>,
    cfg: &QeConfig,
) -> Result<Vec<f32>> {
    if cfg.m == 0 {
        return Ok(query.to_vec());
    }
    let mut ranked = Vec::new();
    for r in gallery {
        ranked.push((distance(query, &r.vector, cfg.metric)?, r));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let chosen: Vec<&EmbeddingRecord> = ranked
        .into_iter()
        .filter(|(d, _)| cfg.min_similarity.is_none_or(|t| -d >= t))
        .take(cfg.m)
        .map(|(_, r)| r)
        .collect();
    if chosen.is_empty() {
        return Ok(query.to_vec());
    }
    let mut sum: Vec<f64> = query.iter().map(|&x| x as f64).collect();
    for r in &chosen {
        sum.iter_mut().zip(&r.vector).for_each(|(s, &x)| *s += x as f64);
    }
    let n = (chosen.len() + 1) as f64;
    let mut mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    if cfg.metric == Metric::Cosine {
        mean = l2_normalize(&mean)?;
    }
    Ok(mean.into_iter().map(|x| x as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// Normalize each source, concatenate, normalize again.
    #[default]
    Concat,
    /// Normalize each source, average, normalize again. Needs equal dims.
    Mean,
}

/// Combines stores over the same id set into one; ids keep the order of
/// the first store.
pub fn fuse_embeddings(stores: &[EmbeddingStore], mode: FuseMode) -> Result<EmbeddingStore> {
    let Some(first) = stores.first() else {
        return Err(Error::Argument("fusion needs at least one store".into()));
    };
    for (i, s) in stores.iter().enumerate().skip(1) {
        let mut diff: Vec<&str> = first
            .ids()
            .filter(|id| !s.contains(id))
            .chain(s.ids().filter(|id| !first.contains(id)))
            .collect();
        if !diff.is_empty() {
            diff.sort_unstable();
            let total = diff.len();
            diff.truncate(10);
            return Err(Error::Argument(format!(
                "store 0 and store {i} differ in {total} ids: {}",
                diff.join(", ")
            )));
        }
        if mode == FuseMode::Mean && s.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "mean fusion needs equal dims, got {} and {}",
                first.dim(),
                s.dim()
            )));
        }
    }
    let mut out = Vec::with_capacity(first.len());
    for r in first.records() {
        let mut acc: Vec<f64> = match mode {
            FuseMode::Concat => Vec::with_capacity(stores.iter().map(EmbeddingStore::dim).sum()),
            FuseMode::Mean => vec![0.0; first.dim()],
        };
        for s in stores {
            let v = &s.get(&r.id).expect("id sets checked").vector;
            let unit = l2_normalize(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
                .map_err(|e| Error::Domain(format!("`{}`: {e}", r.id)))?;
            match mode {
                FuseMode::Concat => acc.extend(unit),
                FuseMode::Mean => acc.iter_mut().zip(unit).for_each(|(a, u)| *a += u),
            }
        }
        let fused = l2_normalize(&acc)?;
        out.push(EmbeddingRecord::new(r.id.clone(), fused.into_iter().map(|x| x as f32).collect()));
    }
    EmbeddingStore::new(out)
}
