use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metric::{distance, query_expand, Metric, QeConfig};
use super::store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::imgproc::RngStream;
use crate::manifest::Manifest;

/// Two image ids and whether they show the same identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationPair {
    pub a: String,
    pub b: String,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: VerificationPair,
    pub score: f64,
}

/// Every unordered pair of valid manifest rows, ids being the row paths.
/// With `max_per_class`, positives and negatives are each subsampled to
/// at most that many, keeping manifest order.
pub fn make_pairs(manifest: &Manifest, max_per_class: Option<usize>, seed: u64) -> Vec<VerificationPair> {
    let rows: Vec<_> = manifest.valid_rows().collect();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i].identity == rows[j].identity {
                pos.push((i, j));
            } else {
                neg.push((i, j));
            }
        }
    }
    let mut rng = RngStream::new(seed, 0x7061_6972);
    let mut cap = |v: &mut Vec<(usize, usize)>| {
        if let Some(m) = max_per_class.filter(|&m| m < v.len()) {
            rng.shuffle(v);
            v.truncate(m);
            v.sort_unstable();
        }
    };
    cap(&mut pos);
    cap(&mut neg);
    let mut all: Vec<_> = pos.into_iter().map(|p| (p, true)).chain(neg.into_iter().map(|p| (p, false))).collect();
    all.sort_unstable();
    all.into_iter()
        .map(|((i, j), same)| VerificationPair {
            a: rows[i].path.clone(),
            b: rows[j].path.clone(),
            same,
        })
        .collect()
}

/// Similarity (negated distance) for each pair. With `qe`, each side is
/// first expanded against the store minus both pair members.
pub fn score_pairs(
    pairs: &[VerificationPair],
    store: &EmbeddingStore,
    metric: Metric,
    qe: Option<&QeConfig>,
) -> Result<Vec<ScoredPair>> {
    let lookup = |id: &str| {
        store
            .get(id)
            .map(|r| r.vector.as_slice())
            .ok_or_else(|| Error::Argument(format!("pair id `{id}` is not in the embedding store")))
    };
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (va, vb) = (lookup(&p.a)?, lookup(&p.b)?);
        let d = match qe {
            Some(cfg) if cfg.m > 0 => {
                let gallery = || store.records().iter().filter(|r| r.id != p.a && r.id != p.b);
                let qa = query_expand(va, gallery(), cfg)?;
                let qb = query_expand(vb, gallery(), cfg)?;
                distance(&qa, &qb, metric)?
            }
            _ => distance(va, vb, metric)?,
        };
        out.push(ScoredPair {
            pair: p.clone(),
            score: -d,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)`, one point per
    /// distinct score.
    pub points: Vec<RocPoint>,
    /// Mann-Whitney statistic with ties counted one half.
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    /// Trapezoidal area under the emitted points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// ROC curve and AUC over `(score, is_positive)` pairs; higher scores
/// predict positives.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Domain(format!("score {s} is not a number")));
    }
    let p = scores.iter().filter(|(_, y)| *y).count();
    let n = scores.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Domain(format!("roc needs both classes, got {p} positive and {n} negative")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // Twice the Mann-Whitney count, kept integral so the statistic is exact.
    let mut twice: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice += gn as u128 * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: twice as f64 / (2 * p as u128 * n as u128) as f64,
        positives: p,
        negatives: n,
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv write: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_label(s: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Config(format!("line {line}: label must be 0 or 1, got `{other}`"))),
    }
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let got: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != header {
        return Err(Error::Config(format!(
            "{}: header must be `{}`, got `{}`",
            path.display(),
            header.join(","),
            got.join(",")
        )));
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

/// Pairs CSV with header `a,b,label`.
pub fn save_pairs(pairs: &[VerificationPair], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["a", "b", "label"])?;
    for p in pairs {
        w.write_record([p.a.as_str(), p.b.as_str(), if p.same { "1" } else { "0" }])?;
    }
    finish(w, path.as_ref())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<VerificationPair>> {
    read_csv(path.as_ref(), &["a", "b", "label"])?
        .iter()
        .map(|r| {
            let line = r.position().map_or(0, |p| p.line());
            Ok(VerificationPair {
                a: r[0].to_string(),
                b: r[1].to_string(),
                same: parse_label(&r[2], line)?,
            })
        })
        .collect()
}

/// Scores CSV with header `a,b,label,score`.
pub fn save_scores(scores: &[ScoredPair], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["a", "b", "label", "score"])?;
    for s in scores {
        let label = if s.pair.same { "1" } else { "0" };
        w.write_record([s.pair.a.as_str(), s.pair.b.as_str(), label, &s.score.to_string()])?;
    }
    finish(w, path.as_ref())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredPair>> {
    read_csv(path.as_ref(), &["a", "b", "label", "score"])?
        .iter()
        .map(|r| {
            let line = r.position().map_or(0, |p| p.line());
            let score = r[3]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("line {line}: bad score `{}`", &r[3])))?;
            Ok(ScoredPair {
                pair: VerificationPair {
                    a: r[0].to_string(),
                    b: r[1].to_string(),
                    same: parse_label(&r[2], line)?,
                },
                score,
            })
        })
        .collect()
}

/// `threshold,fpr,tpr` rows followed by `auc,<value>`.
pub fn save_roc(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    writeln!(s, "auc,{}", curve.auc).unwrap();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
