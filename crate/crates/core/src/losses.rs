//! Label-smoothed cross-entropy, soft-margin batch-hard triplet and
//! pairwise circle loss, each returning the batch-mean value and the
//! gradient with respect to its input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_tri: f64,
    pub w_circle: f64,
    /// Label smoothing ε.
    pub smoothing: f64,
    /// Circle margin m.
    pub circle_margin: f64,
    /// Circle scale γ.
    pub circle_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ce: 1.0,
            w_tri: 1.0,
            w_circle: 1.0,
            smoothing: 0.1,
            circle_margin: 0.25,
            circle_scale: 64.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_ce, self.w_tri, self.w_circle];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing must lie in [0, 1), got {}", self.smoothing)));
        }
        if !(self.circle_margin >= 0.0 && self.circle_scale >= 0.0) {
            return Err(Error::Config("circle margin and scale must be non-negative".into()));
        }
        Ok(())
    }

    fn metric(&self) -> bool {
        self.w_tri > 0.0 || self.w_circle > 0.0
    }
}

/// A loss value and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossValue<T: Real> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// `max(x, 0) + log1p(exp(-|x|))`
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shifted log-sum-exp and the matching softmax weights.
fn log_sum_exp(v: &[f64]) -> (f64, Vec<f64>) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|x| x / s).collect())
}

/// One-hot rows, `N x K`.
pub fn one_hot<T: Real>(labels: &[usize], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        out[i * k + l] = T::one();
    }
    out
}

/// Cross-entropy against `q = (1 - ε) t + ε / K` for target rows `t`
/// summing to one (`N x K`, row-major).
pub fn ce_label_smooth<T: Real>(logits: &Tensor<T>, targets: &[T], eps: f64) -> Result<LossValue<T>> {
    if logits.rank() != 2 || logits.dim(1) < 2 {
        return Err(Error::Shape(format!("logits must be [N, K] with K >= 2, got {:?}", logits.shape())));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if targets.len() != n * k {
        return Err(Error::Shape(format!("targets hold {} values for [{n}, {k}] logits", targets.len())));
    }
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut total = 0.0;
    let mut grad = vec![T::zero(); n * k];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let t = &targets[i * k..(i + 1) * k];
        let sum: f64 = t.iter().map(|v| v.f64()).sum();
        if (sum - 1.0).abs() > 1e-6 || t.iter().any(|v| v.f64() < 0.0) {
            return Err(Error::Argument(format!("target row {i} sums to {sum}, expected a distribution")));
        }
        let z: Vec<f64> = logits.row(i).iter().map(|v| v.f64()).collect();
        let (lse, p) = log_sum_exp(&z);
        for j in 0..k {
            let q = (1.0 - eps) * t[j].f64() + eps / k as f64;
            total -= q * (z[j] - lse);
            grad[i * k + j] = T::of((p[j] - q) * inv_n);
        }
    }
    Ok(LossValue {
        value: total * inv_n,
        grad: Tensor::new(&[n, k], grad)?,
    })
}

/// Checks that every identity occurs at least twice and that at least two
/// identities are present.
pub fn check_batch_labels(labels: &[usize]) -> Result<()> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if let Some((id, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Argument(format!(
            "identity {id} occurs once in the batch; metric losses need at least two instances per identity"
        )));
    }
    if counts.len() < 2 {
        let id = counts.keys().next().map_or("none".to_string(), |k| k.to_string());
        return Err(Error::Argument(format!(
            "batch holds only identity {id}; metric losses need at least two identities"
        )));
    }
    Ok(())
}

fn feature_rows<T: Real>(features: &Tensor<T>, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if features.rank() != 2 || features.dim(0) != labels.len() {
        return Err(Error::Shape(format!(
            "features must be [N, D] with N = {} labels, got {:?}",
            labels.len(),
            features.shape()
        )));
    }
    Ok((0..labels.len()).map(|i| features.row(i).iter().map(|v| v.f64()).collect()).collect())
}

/// Soft-margin batch-hard triplet loss. The batch must satisfy
/// [`check_batch_labels`].
pub fn triplet_softmargin_batchhard<T: Real>(features: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    check_batch_labels(labels)?;
    triplet_over_valid_anchors(features, labels)
}

/// Batch-hard soft-margin triplet averaged over the anchors that have at
/// least one positive and one negative; other anchors are ignored.
pub fn triplet_over_valid_anchors<T: Real>(features: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    let f = feature_rows(features, labels)?;
    let n = f.len();
    let d = features.dim(1);
    let dist = |i: usize, j: usize| f[i].iter().zip(&f[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut grad = vec![0.0; n * d];
    let mut total = 0.0;
    let mut anchors = Vec::new();
    for a in 0..n {
        let mut hp: Option<(usize, f64)> = None;
        let mut hn: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let dj = dist(a, j);
            if labels[j] == labels[a] {
                if hp.is_none_or(|(_, v)| dj > v) {
                    hp = Some((j, dj));
                }
            } else if hn.is_none_or(|(_, v)| dj < v) {
                hn = Some((j, dj));
            }
        }
        if let (Some(p), Some(q)) = (hp, hn) {
            anchors.push((a, p, q));
        }
    }
    if anchors.is_empty() {
        return Err(Error::Argument("no anchor has both a positive and a negative".into()));
    }
    let scale = 1.0 / anchors.len() as f64;
    for &(a, (p, dap), (q, dan)) in &anchors {
        let x = dap - dan;
        total += softplus(x);
        let s = sigmoid(x) * scale;
        // d dist(a, j) / d f_a = (f_a - f_j) / dist, zero at coincident points
        for (j, dj, sign) in [(p, dap, s), (q, dan, -s)] {
            if dj > 0.0 {
                for k in 0..d {
                    let g = sign * (f[a][k] - f[j][k]) / dj;
                    grad[a * d + k] += g;
                    grad[j * d + k] -= g;
                }
            }
        }
    }
    Ok(LossValue {
        value: total * scale,
        grad: Tensor::new(&[n, d], grad.into_iter().map(T::of).collect())?,
    })
}

struct CircleAnchor {
    value: f64,
    /// d loss / d s for each positive, then each negative.
    d_sp: Vec<f64>,
    d_sn: Vec<f64>,
}

fn circle_anchor(sp: &[f64], sn: &[f64], m: f64, gamma: f64) -> CircleAnchor {
    let (dp, dn) = (1.0 - m, m);
    let lp: Vec<f64> = sp.iter().map(|&s| -gamma * (1.0 + m - s).max(0.0) * (s - dp)).collect();
    let ln: Vec<f64> = sn.iter().map(|&s| gamma * (s + m).max(0.0) * (s - dn)).collect();
    let (a, wp) = log_sum_exp(&lp);
    let (b, wn) = log_sum_exp(&ln);
    let x = a + b;
    let sig = sigmoid(x);
    // d/ds of alpha_p (s - Δp) is 2(1 - s) while alpha_p > 0;
    // of alpha_n (s - Δn) is 2s while alpha_n > 0
    let d_sp = sp
        .iter()
        .zip(&wp)
        .map(|(&s, &w)| if 1.0 + m - s > 0.0 { sig * w * -gamma * 2.0 * (1.0 - s) } else { 0.0 })
        .collect();
    let d_sn = sn
        .iter()
        .zip(&wn)
        .map(|(&s, &w)| if s + m > 0.0 { sig * w * gamma * 2.0 * s } else { 0.0 })
        .collect();
    CircleAnchor {
        value: softplus(x),
        d_sp,
        d_sn,
    }
}

/// Circle loss of one anchor from its positive and negative cosine
/// similarities: `log(1 + Σn exp(γ αn (sn - Δn)) Σp exp(-γ αp (sp - Δp)))`.
pub fn circle_anchor_loss(sp: &[f64], sn: &[f64], m: f64, gamma: f64) -> f64 {
    circle_anchor(sp, sn, m, gamma).value
}

/// Pairwise circle loss over all anchors of the batch, on internally
/// L2-normalized features.
pub fn circle_pairwise<T: Real>(features: &Tensor<T>, labels: &[usize], m: f64, gamma: f64) -> Result<LossValue<T>> {
    check_batch_labels(labels)?;
    let f = feature_rows(features, labels)?;
    let n = f.len();
    let d = features.dim(1);
    let norms: Vec<f64> = f.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Domain(format!("feature row {i} is zero and cannot be normalized")));
    }
    let u: Vec<Vec<f64>> = f.iter().zip(&norms).map(|(r, &nv)| r.iter().map(|v| v / nv).collect()).collect();
    let sim = |i: usize, j: usize| u[i].iter().zip(&u[j]).map(|(a, b)| a * b).sum::<f64>();
    let mut du = vec![vec![0.0; d]; n];
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for a in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        let sp: Vec<f64> = pos.iter().map(|&j| sim(a, j)).collect();
        let sn: Vec<f64> = neg.iter().map(|&j| sim(a, j)).collect();
        let r = circle_anchor(&sp, &sn, m, gamma);
        total += r.value;
        for (&j, &g) in pos.iter().zip(&r.d_sp).chain(neg.iter().zip(&r.d_sn)) {
            let g = g * scale;
            for k in 0..d {
                du[a][k] += g * u[j][k];
                du[j][k] += g * u[a][k];
            }
        }
    }
    // back through u = f / |f|
    let mut grad = Vec::with_capacity(n * d);
    for i in 0..n {
        let dot: f64 = du[i].iter().zip(&u[i]).map(|(a, b)| a * b).sum();
        for k in 0..d {
            grad.push(T::of((du[i][k] - u[i][k] * dot) / norms[i]));
        }
    }
    Ok(LossValue {
        value: total * scale,
        grad: Tensor::new(&[n, d], grad)?,
    })
}

/// Weighted joint objective with per-term values.
#[derive(Debug, Clone)]
pub struct CombinedLoss<T: Real> {
    pub ce: f64,
    pub triplet: f64,
    pub circle: f64,
    pub total: f64,
    pub d_logits: Tensor<T>,
    pub d_features: Tensor<T>,
}

/// `w_ce CE + w_tri triplet + w_circle circle`. CE uses the (possibly
/// mixed) target rows; the metric terms use `labels`. Terms with zero
/// weight are skipped and report 0.
pub fn combined_loss<T: Real>(
    logits: &Tensor<T>,
    features: &Tensor<T>,
    targets: &[T],
    labels: &[usize],
    weights: &LossWeights,
) -> Result<CombinedLoss<T>> {
    weights.validate()?;
    if weights.metric() {
        check_batch_labels(labels)?;
    }
    let mut d_logits = vec![T::zero(); logits.len()];
    let mut d_features = vec![T::zero(); features.len()];
    let add = |dst: &mut [T], g: &Tensor<T>, w: f64| {
        let w = T::of(w);
        dst.iter_mut().zip(g.data()).for_each(|(d, &v)| *d += w * v);
    };
    let mut ce = 0.0;
    if weights.w_ce > 0.0 {
        let r = ce_label_smooth(logits, targets, weights.smoothing)?;
        ce = r.value;
        add(&mut d_logits, &r.grad, weights.w_ce);
    }
    let mut triplet = 0.0;
    if weights.w_tri > 0.0 {
        let r = triplet_softmargin_batchhard(features, labels)?;
        triplet = r.value;
        add(&mut d_features, &r.grad, weights.w_tri);
    }
    let mut circle = 0.0;
    if weights.w_circle > 0.0 {
        let r = circle_pairwise(features, labels, weights.circle_margin, weights.circle_scale)?;
        circle = r.value;
        add(&mut d_features, &r.grad, weights.w_circle);
    }
    Ok(CombinedLoss {
        ce,
        triplet,
        circle,
        total: weights.w_ce * ce + weights.w_tri * triplet + weights.w_circle * circle,
        d_logits: Tensor::new(logits.shape(), d_logits)?,
        d_features: Tensor::new(features.shape(), d_features)?,
    })
}
