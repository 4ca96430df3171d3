//! Central finite-difference oracle (fourth-order stencil).
//!
//! Every check flattens all inputs and parameters of one op into a single
//! vector, evaluates a scalar probe loss `sum(r * output)` on perturbed
//! copies, and compares against the analytic gradient from the library.
//! Probes whose two stencil points take a different discrete branch than
//! the base point (ReLU activity, max winner, hardest pair) straddle a
//! kink and are excluded and counted.

use noseprint::imgproc::RngStream;
use noseprint::losses::{self, LossWeights};
use noseprint::nn::{
    BatchNorm, Conv2d, Dropout, Head, HeadConfig, HeadKind, Linear, Mode, ModelConfig, Network, Pool,
    PoolMode, Relu, Tensor,
};

pub const TOL: f64 = 1e-4;
/// Step of the fourth-order central stencil
/// `(-f(x+2ε) + 8f(x+ε) - 8f(x-ε) + f(x-2ε)) / 12ε`. Train-mode batch
/// norm over two samples per channel and circle loss at γ = 64 are curved
/// enough that a two-point stencil at 1e-3 misses the tolerance on
/// truncation alone.
pub const EPS: f64 = 1e-4;
/// Gradients this small are compared on an absolute scale.
pub const FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub compared: usize,
    pub skipped: usize,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.worst < TOL && self.compared > 0
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

type Eval<'a> = dyn Fn(&[f64]) -> (f64, Vec<usize>) + 'a;

pub fn compare(name: &str, x0: &[f64], analytic: &[f64], eps: f64, f: &Eval<'_>) -> Check {
    assert_eq!(x0.len(), analytic.len(), "{name}: flat size");
    let (_, sig0) = f(x0);
    let mut x = x0.to_vec();
    let mut check = Check {
        name: name.to_string(),
        worst: 0.0,
        compared: 0,
        skipped: 0,
    };
    for i in 0..x.len() {
        let mut vals = [0.0; 4];
        let mut same_branch = true;
        for (v, k) in vals.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            x[i] = x0[i] + k * eps;
            let (l, sig) = f(&x);
            *v = l;
            same_branch &= sig == sig0;
        }
        x[i] = x0[i];
        if !same_branch {
            check.skipped += 1;
            continue;
        }
        check.compared += 1;
        let num = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * eps);
        check.worst = check.worst.max(rel_err(analytic[i], num));
    }
    check
}

fn normals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn grad_of(t: &Tensor<f64>) -> Vec<f64> {
    t.grad().unwrap().to_vec()
}

fn conv(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 11);
    let (n, c, o) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let (h, w) = (3 + rng.below(4), 3 + rng.below(4));
    let stride = 1 + rng.below(2);
    let mut layer = Conv2d::<f64>::new(c, o, stride, &mut rng);
    let (nx, nw) = (n * c * h * w, o * c * 9);
    let mut x0 = normals(&mut rng, nx);
    x0.extend_from_slice(layer.weight.data());
    x0.extend(normals(&mut rng, o).iter().map(|v| v * 0.1));
    let build = |v: &[f64], layer: &mut Conv2d<f64>| {
        layer.weight.data_mut().copy_from_slice(&v[nx..nx + nw]);
        layer.bias.data_mut().copy_from_slice(&v[nx + nw..]);
        layer.forward(&t(&[n, c, h, w], &v[..nx]), Mode::Train).unwrap()
    };
    let y = build(&x0, &mut layer);
    let r = normals(&mut rng, y.len());
    layer.weight.zero_grad();
    layer.bias.zero_grad();
    let dx = layer.backward(&t(y.shape(), &r), true).unwrap().unwrap();
    let mut analytic = dx.data().to_vec();
    analytic.extend(grad_of(&layer.weight));
    analytic.extend(grad_of(&layer.bias));
    let f = |v: &[f64]| {
        let mut l = layer.clone();
        (dot(build(v, &mut l).data(), &r), vec![])
    };
    compare(&format!("conv stride {stride}"), &x0, &analytic, EPS, &f)
}

fn batchnorm(seed: u64, mode: Mode) -> Check {
    let mut rng = RngStream::new(seed, 12);
    let (n, c) = (2 + rng.below(3), 1 + rng.below(3));
    let spatial: Vec<usize> = if rng.bernoulli(0.3) { vec![] } else { vec![1 + rng.below(3), 1 + rng.below(3)] };
    let mut shape = vec![n, c];
    shape.extend(&spatial);
    let nx: usize = shape.iter().product();
    let mut layer = BatchNorm::<f64>::new(c, true);
    layer.running_mean.data_mut().copy_from_slice(&normals(&mut rng, c));
    layer.running_var.data_mut().iter_mut().for_each(|v| *v = 0.5 + rng.uniform());
    let mut x0: Vec<f64> = normals(&mut rng, nx).iter().map(|v| v * 2.0 + 0.5).collect();
    x0.extend(normals(&mut rng, c).iter().map(|v| 1.0 + 0.3 * v));
    x0.extend(normals(&mut rng, c));
    let build = |v: &[f64], layer: &mut BatchNorm<f64>| {
        layer.weight.data_mut().copy_from_slice(&v[nx..nx + c]);
        layer.bias.as_mut().unwrap().data_mut().copy_from_slice(&v[nx + c..]);
        layer.forward(&t(&shape, &v[..nx]), mode).unwrap()
    };
    let base = layer.clone();
    let y = build(&x0, &mut layer);
    let r = normals(&mut rng, y.len());
    layer.weight.zero_grad();
    layer.bias.as_mut().unwrap().zero_grad();
    let dx = layer.backward(&t(y.shape(), &r)).unwrap();
    let mut analytic = dx.data().to_vec();
    analytic.extend(grad_of(&layer.weight));
    analytic.extend(grad_of(layer.bias.as_ref().unwrap()));
    let f = |v: &[f64]| {
        let mut l = base.clone();
        (dot(build(v, &mut l).data(), &r), vec![])
    };
    compare(&format!("batch norm {mode:?}"), &x0, &analytic, EPS, &f)
}

fn relu(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 13);
    let n = 2 + rng.below(20);
    // keep every input at least 0.05 away from the kink
    let x0: Vec<f64> = (0..n).map(|_| {
        let v = rng.uniform_range(0.05, 2.0);
        if rng.bernoulli(0.5) { v } else { -v }
    }).collect();
    let r = normals(&mut rng, n);
    let mut layer = Relu::<f64>::default();
    layer.forward(&t(&[n], &x0), Mode::Train);
    let analytic = layer.backward(&t(&[n], &r)).unwrap().into_data();
    let f = |v: &[f64]| (dot(Relu::default().forward(&t(&[n], v), Mode::Eval).data(), &r), vec![]);
    compare("relu", &x0, &analytic, EPS, &f)
}

fn linear(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 14);
    let (n, i, o) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
    let with_bias = rng.bernoulli(0.5);
    let mut layer = Linear::<f64>::new(i, o, with_bias, 0.5, &mut rng);
    let nb = if with_bias { o } else { 0 };
    let mut x0 = normals(&mut rng, n * i);
    x0.extend_from_slice(layer.weight.data());
    x0.extend(normals(&mut rng, nb));
    let build = |v: &[f64], layer: &mut Linear<f64>| {
        layer.weight.data_mut().copy_from_slice(&v[n * i..n * i + o * i]);
        if let Some(b) = layer.bias.as_mut() {
            b.data_mut().copy_from_slice(&v[n * i + o * i..]);
        }
        layer.forward(&t(&[n, i], &v[..n * i]), Mode::Train).unwrap()
    };
    let y = build(&x0, &mut layer);
    let r = normals(&mut rng, y.len());
    layer.weight.zero_grad();
    let dx = layer.backward(&t(y.shape(), &r)).unwrap();
    let mut analytic = dx.data().to_vec();
    analytic.extend(grad_of(&layer.weight));
    if let Some(b) = &layer.bias {
        analytic.extend(grad_of(b));
    }
    let f = |v: &[f64]| {
        let mut l = layer.clone();
        (dot(build(v, &mut l).data(), &r), vec![])
    };
    compare("linear", &x0, &analytic, EPS, &f)
}

fn dropout(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 15);
    let n = 1 + rng.below(30);
    let x0 = normals(&mut rng, n);
    let r = normals(&mut rng, n);
    let run = |v: &[f64], layer: &mut Dropout<f64>| {
        layer.forward(&t(&[n], v), Mode::Train, Some(&mut RngStream::new(seed, 99))).unwrap()
    };
    let mut layer = Dropout::new(0.5);
    run(&x0, &mut layer);
    let analytic = layer.backward(&t(&[n], &r)).unwrap().into_data();
    let f = |v: &[f64]| (dot(run(v, &mut Dropout::new(0.5)).data(), &r), vec![]);
    compare("dropout (fixed mask)", &x0, &analytic, EPS, &f)
}

fn pooling(seed: u64, mode: PoolMode) -> Check {
    let mut rng = RngStream::new(seed, 16 + mode as u64);
    let (n, c, h, w) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
    let nx = n * c * h * w;
    let mut x0: Vec<f64> = match mode {
        // distinct values, 0.05 apart, so the max never ties within a stencil
        PoolMode::Max => {
            let mut v: Vec<f64> = (0..nx).map(|i| i as f64 * 0.05).collect();
            rng.shuffle(&mut v);
            v
        }
        PoolMode::Gem => (0..nx).map(|_| rng.uniform_range(0.1, 1.0)).collect(),
        _ => normals(&mut rng, nx),
    };
    let mut pool = Pool::<f64>::new(mode, c, rng.uniform_range(1.0, 4.0));
    x0.push(pool.p());
    if mode == PoolMode::Attention {
        x0.extend(normals(&mut rng, c + 1));
    }
    let build = |v: &[f64], pool: &mut Pool<f64>| {
        pool.gem_p.data_mut()[0] = v[nx];
        if let (Some(wt), Some(b)) = (pool.attn_weight.as_mut(), pool.attn_bias.as_mut()) {
            wt.data_mut().copy_from_slice(&v[nx + 1..nx + 1 + c]);
            b.data_mut()[0] = v[nx + 1 + c];
        }
        pool.forward(&t(&[n, c, h, w], &v[..nx]), Mode::Train).unwrap()
    };
    let y = build(&x0, &mut pool);
    let r = normals(&mut rng, y.len());
    let dx = pool.backward(&t(y.shape(), &r)).unwrap();
    let mut analytic = dx.data().to_vec();
    analytic.push(if mode == PoolMode::Gem { grad_of(&pool.gem_p)[0] } else { 0.0 });
    if let (Some(wt), Some(b)) = (&pool.attn_weight, &pool.attn_bias) {
        analytic.extend(grad_of(wt));
        analytic.extend(grad_of(b));
    }
    let f = |v: &[f64]| {
        let mut p = pool.clone();
        let y = build(v, &mut p);
        (dot(y.data(), &r), p.winners().map(|w| w.to_vec()).unwrap_or_default())
    };
    compare(&format!("pool {mode:?}"), &x0, &analytic, EPS, &f)
}

fn head(seed: u64, kind: HeadKind) -> Check {
    let mut rng = RngStream::new(seed, 20 + kind as u64);
    let (n, d) = (4 + rng.below(3), 1 + rng.below(5));
    let cfg = HeadConfig {
        kind,
        embed_dim: 1 + rng.below(4),
        num_classes: 2 + rng.below(3),
        dropout_p: 0.5,
    };
    let mut head = Head::<f64>::new(&cfg, d, &mut rng).unwrap();
    // a larger classifier than the training init so its gradient is visible
    head.classifier.weight.data_mut().iter_mut().for_each(|v| *v *= 500.0);
    let mut x0 = normals(&mut rng, n * d);
    head.visit(&mut |_, p, trainable| {
        if trainable {
            x0.extend_from_slice(p.data())
        }
    });
    let build = |v: &[f64], head: &mut Head<f64>| {
        let mut at = n * d;
        head.visit(&mut |_, p, trainable| {
            if trainable {
                let k = p.len();
                p.data_mut().copy_from_slice(&v[at..at + k]);
                at += k;
            }
        });
        head.forward(&t(&[n, d], &v[..n * d]), Mode::Train, Some(&mut RngStream::new(seed, 7))).unwrap()
    };
    let out = build(&x0, &mut head);
    let rf = normals(&mut rng, out.feature.len());
    let rl = normals(&mut rng, out.logits.len());
    head.visit(&mut |_, p, _| p.zero_grad());
    let dx = head
        .backward(Some(&t(out.feature.shape(), &rf)), Some(&t(out.logits.shape(), &rl)))
        .unwrap();
    let mut analytic = dx.data().to_vec();
    head.visit(&mut |_, p, trainable| {
        if trainable {
            analytic.extend(grad_of(p))
        }
    });
    let f = |v: &[f64]| {
        let mut h = head.clone();
        let o = build(v, &mut h);
        let sig = match kind {
            HeadKind::Reduction => o.feature.data().iter().map(|&x| usize::from(x > 0.0)).collect(),
            _ => vec![],
        };
        (dot(o.feature.data(), &rf) + dot(o.logits.data(), &rl), sig)
    };
    compare(&format!("head {kind:?}"), &x0, &analytic, EPS, &f)
}

/// PK-style labels: `p` identities with `k` instances each, shuffled.
fn pk_labels(rng: &mut RngStream, p: usize, k: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..p * k).map(|i| i / k).collect();
    rng.shuffle(&mut l);
    l
}

fn hardest_pairs(v: &[f64], labels: &[usize], d: usize) -> Vec<usize> {
    let n = labels.len();
    let dist = |i: usize, j: usize| {
        (0..d).map(|k| (v[i * d + k] - v[j * d + k]).powi(2)).sum::<f64>()
    };
    let mut sig = Vec::new();
    for a in 0..n {
        let mut best_p = (usize::MAX, f64::NEG_INFINITY);
        let mut best_n = (usize::MAX, f64::INFINITY);
        for j in (0..n).filter(|&j| j != a) {
            let dj = dist(a, j);
            if labels[j] == labels[a] && dj > best_p.1 {
                best_p = (j, dj);
            }
            if labels[j] != labels[a] && dj < best_n.1 {
                best_n = (j, dj);
            }
        }
        sig.push(best_p.0);
        sig.push(best_n.0);
    }
    sig
}

fn circle_branches(v: &[f64], labels: &[usize], d: usize, m: f64) -> Vec<usize> {
    let n = labels.len();
    let u: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = &v[i * d..(i + 1) * d];
            let norm = dot(r, r).sqrt();
            r.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut sig = Vec::new();
    for a in 0..n {
        for j in (0..n).filter(|&j| j != a) {
            let s = dot(&u[a], &u[j]);
            sig.push(usize::from(if labels[a] == labels[j] { 1.0 + m - s > 0.0 } else { s + m > 0.0 }));
        }
    }
    sig
}

fn ce(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 30);
    let (n, k) = (1 + rng.below(8), 2 + rng.below(4));
    let x0: Vec<f64> = normals(&mut rng, n * k).iter().map(|v| v * 3.0).collect();
    // soft rows as produced by cutmix
    let mut targets = vec![0.0; n * k];
    for i in 0..n {
        let lam = rng.uniform();
        targets[i * k + rng.below(k)] += lam;
        targets[i * k + rng.below(k)] += 1.0 - lam;
    }
    let eps_ls = rng.uniform_range(0.0, 0.5);
    let analytic = losses::ce_label_smooth(&t(&[n, k], &x0), &targets, eps_ls).unwrap().grad.into_data();
    let f = |v: &[f64]| (losses::ce_label_smooth(&t(&[n, k], v), &targets, eps_ls).unwrap().value, vec![]);
    compare("cross-entropy", &x0, &analytic, EPS, &f)
}

fn triplet(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 31);
    let (p, k, d) = (2 + rng.below(3), 2 + rng.below(2), 1 + rng.below(16));
    let labels = pk_labels(&mut rng, p, k);
    let n = labels.len().min(8);
    let labels = if n < labels.len() { pk_labels(&mut rng, 2, 4) } else { labels };
    let n = labels.len();
    let x0 = normals(&mut rng, n * d);
    let analytic = losses::triplet_softmargin_batchhard(&t(&[n, d], &x0), &labels).unwrap().grad.into_data();
    let f = |v: &[f64]| {
        let r = losses::triplet_softmargin_batchhard(&t(&[n, d], v), &labels).unwrap();
        (r.value, hardest_pairs(v, &labels, d))
    };
    compare("triplet", &x0, &analytic, EPS, &f)
}

fn circle(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 32);
    let labels = if rng.bernoulli(0.5) { pk_labels(&mut rng, 2, 4) } else { pk_labels(&mut rng, 3, 2) };
    let n = labels.len();
    let d = 2 + rng.below(15);
    let (m, gamma) = (0.25, rng.uniform_range(1.0, 64.0));
    let x0 = normals(&mut rng, n * d);
    let analytic = losses::circle_pairwise(&t(&[n, d], &x0), &labels, m, gamma).unwrap().grad.into_data();
    let f = |v: &[f64]| {
        let r = losses::circle_pairwise(&t(&[n, d], v), &labels, m, gamma).unwrap();
        (r.value, circle_branches(v, &labels, d, m))
    };
    compare("circle", &x0, &analytic, EPS, &f)
}

fn combined(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 33);
    let labels = pk_labels(&mut rng, 2, 3);
    let (n, k, d) = (labels.len(), 3, 1 + rng.below(8));
    let targets = losses::one_hot::<f64>(&labels, k);
    let w = LossWeights {
        w_ce: rng.uniform(),
        w_tri: rng.uniform(),
        w_circle: rng.uniform(),
        circle_scale: 16.0,
        ..LossWeights::default()
    };
    let mut x0 = normals(&mut rng, n * k);
    x0.extend(normals(&mut rng, n * d));
    let eval = |v: &[f64]| {
        losses::combined_loss(&t(&[n, k], &v[..n * k]), &t(&[n, d], &v[n * k..]), &targets, &labels, &w).unwrap()
    };
    let c = eval(&x0);
    let mut analytic = c.d_logits.into_data();
    analytic.extend(c.d_features.into_data());
    let f = |v: &[f64]| {
        let mut sig = hardest_pairs(&v[n * k..], &labels, d);
        sig.extend(circle_branches(&v[n * k..], &labels, d, w.circle_margin));
        (eval(v).total, sig)
    };
    compare("combined loss", &x0, &analytic, EPS, &f)
}

const POOLS: [PoolMode; 4] = [PoolMode::Avg, PoolMode::Max, PoolMode::Gem, PoolMode::Attention];
const HEADS: [HeadKind; 3] = [HeadKind::Linear, HeadKind::Bn, HeadKind::Reduction];

/// Whole-network check on a `[2, 1, 16, 16]` batch; pooling and head
/// cycle with the seed.
pub fn network(seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 40);
    let pool = POOLS[seed as usize % 4];
    let kind = HEADS[(seed as usize / 4) % 3];
    let mut cfg = ModelConfig::default();
    cfg.backbone.stage_channels = vec![3, 4];
    cfg.pool = pool;
    cfg.head = HeadConfig {
        kind,
        embed_dim: 5,
        num_classes: 3,
        dropout_p: 0.5,
    };
    let mut net = Network::<f64>::new(&cfg, seed).unwrap();
    if let Some(w) = net.pool.attn_weight.as_mut() {
        w.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    }
    let x = t(&[2, 1, 16, 16], &(0..512).map(|_| rng.uniform()).collect::<Vec<_>>());
    let mut x0 = Vec::new();
    net.visit(&mut |_, p, trainable| {
        if trainable {
            x0.extend_from_slice(p.data())
        }
    });
    let build = |v: &[f64], net: &mut Network<f64>| {
        let mut at = 0;
        net.visit(&mut |_, p, trainable| {
            if trainable {
                let k = p.len();
                p.data_mut().copy_from_slice(&v[at..at + k]);
                at += k;
            }
        });
        net.forward(&x, Mode::Train, Some(&mut RngStream::new(seed, 5))).unwrap()
    };
    let out = build(&x0, &mut net);
    let rf = normals(&mut rng, out.feature.len());
    let rl = normals(&mut rng, out.logits.len());
    net.zero_grad();
    net.backward(Some(&t(out.feature.shape(), &rf)), Some(&t(out.logits.shape(), &rl))).unwrap();
    let mut analytic = Vec::new();
    net.visit(&mut |_, p, trainable| {
        if trainable {
            analytic.extend(grad_of(p))
        }
    });
    let f = |v: &[f64]| {
        let mut m = net.clone();
        let o = build(v, &mut m);
        (dot(o.feature.data(), &rf) + dot(o.logits.data(), &rl), m.branch_signature())
    };
    compare(&format!("network {pool:?}/{kind:?}"), &x0, &analytic, EPS, &f)
}

/// Every op, loss and the network for one seed.
pub fn suite(seed: u64) -> Vec<Check> {
    let mut out = vec![
        conv(seed),
        batchnorm(seed, Mode::Train),
        batchnorm(seed, Mode::Eval),
        relu(seed),
        linear(seed),
        dropout(seed),
    ];
    out.extend(POOLS.iter().map(|&m| pooling(seed, m)));
    out.extend(HEADS.iter().map(|&k| head(seed, k)));
    out.extend([ce(seed), triplet(seed), circle(seed), combined(seed), network(seed)]);
    out
}
