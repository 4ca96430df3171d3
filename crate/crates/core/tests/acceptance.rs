//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs with its own harness so the summary lines are always printed.
//! Exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use noseprint::imgproc::{apply_plan, AugPlan, ImageBuffer, RngStream};
use noseprint::losses::{
    ce_label_smooth, circle_anchor_loss, circle_pairwise, combined_loss, one_hot, softplus, triplet_softmargin_batchhard,
    LossWeights,
};
use noseprint::manifest::Manifest;
use noseprint::nn::{extract_embedding, pool, Checkpoint, ModelConfig, Network, PoolMode, Tensor};
use noseprint::retrieval::{
    fuse_embeddings, make_pairs, roc_auc, score_pairs, EmbeddingRecord, EmbeddingStore, FuseMode, Metric, QeConfig,
    ScoredPair, VerificationPair,
};
use noseprint::synthdata::{generate_dataset, DatasetSpec, ShiftProfile};
use noseprint::trainer::{initial_network, train, LrSchedule, TrainConfig, TrainOutputs};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn auc_of(scores: &[ScoredPair]) -> f64 {
    let labelled: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.pair.same)).collect();
    roc_auc(&labelled).unwrap().auc
}

fn embed(net: &mut Network<f32>, m: &Manifest, size: usize) -> EmbeddingStore {
    let out = extract_embedding(net, m, size, Metric::Cosine).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    EmbeddingStore::new(out.records).unwrap()
}

fn store_auc(store: &EmbeddingStore, pairs: &[VerificationPair]) -> f64 {
    auc_of(&score_pairs(pairs, store, Metric::Cosine, None).unwrap())
}

fn work_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn gaussian(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let (mut compared, mut skipped, mut worst) = (0, 0, 0.0f64);
    for seed in 0..20 {
        for c in common::gradcheck::suite(seed) {
            check!(c.ok(), "seed {seed}: {} worst relative error {:.2e}", c.name, c.worst);
            compared += c.compared;
            skipped += c.skipped;
            worst = worst.max(c.worst);
        }
    }
    let elapsed = start.elapsed();
    check!(skipped * 20 < compared, "{skipped} kink-straddling stencils of {}", compared + skipped);
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("20 seeds, {compared} partials, worst relative error {worst:.1e}, {:.1}s", elapsed.as_secs_f64()))
}

fn auc_oracle() -> Outcome {
    let mut rng = RngStream::new(2024, 0);
    let mut worst = 0.0f64;
    for set in 0..200 {
        let levels = 2 + rng.below(30) as u64;
        let n_pos = 1 + rng.below(40);
        let n_neg = 1 + rng.below(40);
        let scored: Vec<(f64, bool)> = (0..n_pos + n_neg)
            .map(|i| ((rng.next_u64() % levels) as f64 / levels as f64 - 0.5, i < n_pos))
            .collect();
        let mut wins = 0.0;
        for &(p, _) in scored.iter().filter(|s| s.1) {
            for &(n, _) in scored.iter().filter(|s| !s.1) {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let oracle = wins / (n_pos * n_neg) as f64;
        let curve = roc_auc(&scored).unwrap();
        let err = (curve.auc - oracle).abs().max((curve.trapezoid_area() - curve.auc).abs());
        check!(err <= 1e-12, "set {set}: auc {} oracle {oracle} trapezoid {}", curve.auc, curve.trapezoid_area());
        worst = worst.max(err);
    }
    Ok(format!("200 tied score sets, worst deviation {worst:.1e}"))
}

fn closed_form_losses() -> Outcome {
    let ln2 = 2f64.ln();
    // unit square with each identity on one side: d_ap = d_an = 1 for every anchor
    let square = t(&[4, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let tri = triplet_softmargin_batchhard(&square, &[0, 0, 1, 1]).unwrap().value;
    check!((tri - ln2).abs() <= 1e-9, "triplet at zero gap {tri}");

    let k = 5;
    let labels = [0, 3, 4, 1];
    let ce = ce_label_smooth(&t(&[4, k], vec![0.7; 4 * k]), &one_hot::<f64>(&labels, k), 0.1).unwrap().value;
    check!((ce - (k as f64).ln()).abs() <= 1e-9, "uniform CE {ce}");

    // one positive and one negative similarity per anchor
    let mut rng = RngStream::new(3, 0);
    for _ in 0..20 {
        let (sp, sn) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
        let circ = circle_anchor_loss(&[sp], &[sn], 0.25, 0.0);
        check!((circ - ln2).abs() <= 1e-9, "circle at gamma 0 {circ} for sp {sp} sn {sn}");
    }

    let ce_ex = ce_label_smooth(&t(&[1, 2], vec![2.0, 0.0]), &[1.0, 0.0], 0.1).unwrap().value;
    check!((ce_ex - 0.226928).abs() <= 1e-6, "CE worked example {ce_ex}");
    let ce_plain = ce_label_smooth(&t(&[1, 2], vec![2.0, 0.0]), &[1.0, 0.0], 0.0).unwrap().value;
    check!((ce_plain - (1.0 + (-2f64).exp()).ln()).abs() <= 1e-12, "CE without smoothing {ce_plain}");
    // every anchor: farthest positive 1.5 away, nearest negative 1.0 away
    let gap = t(&[4, 2], vec![0.0, 0.0, 1.5, 0.0, 0.0, 1.0, 1.5, 1.0]);
    let tri_ex = triplet_softmargin_batchhard(&gap, &[0, 0, 1, 1]).unwrap().value;
    check!((tri_ex - 0.974077).abs() <= 1e-6 && (tri_ex - softplus(0.5)).abs() <= 1e-12, "triplet gap 0.5 {tri_ex}");
    let circ_ex = circle_anchor_loss(&[0.8], &[0.3], 0.25, 2.0);
    check!((circ_ex - 0.698159).abs() <= 1e-6, "circle worked example {circ_ex}");

    let logits = t(&[4, 3], gaussian(&mut rng, 12));
    let feats = t(&[4, 5], gaussian(&mut rng, 20));
    let labels = [0, 0, 2, 2];
    let targets = one_hot::<f64>(&labels, 3);
    let w = LossWeights { w_ce: 0.7, w_tri: 1.3, w_circle: 0.4, ..LossWeights::default() };
    let c = combined_loss(&logits, &feats, &targets, &labels, &w).unwrap();
    let parts = [
        ce_label_smooth(&logits, &targets, w.smoothing).unwrap(),
        triplet_softmargin_batchhard(&feats, &labels).unwrap(),
        circle_pairwise(&feats, &labels, w.circle_margin, w.circle_scale).unwrap(),
    ];
    let total = w.w_ce * parts[0].value + w.w_tri * parts[1].value + w.w_circle * parts[2].value;
    check!((c.total - total).abs() <= 1e-10, "combined total {} vs {total}", c.total);
    for (i, g) in c.d_features.data().iter().enumerate() {
        let want = w.w_tri * parts[1].grad.data()[i] + w.w_circle * parts[2].grad.data()[i];
        check!((g - want).abs() <= 1e-10, "combined feature gradient {i}");
    }
    let zero = LossWeights { w_ce: 0.0, w_tri: 0.0, w_circle: 0.0, ..LossWeights::default() };
    check!(combined_loss(&logits, &feats, &targets, &labels, &zero).is_err(), "all-zero weights accepted");
    Ok("ln 2, ln K, ln 2 and the worked examples reproduced".into())
}

fn pooling_limits() -> Outcome {
    let mut rng = RngStream::new(11, 0);
    let (mut gem1, mut gem100, mut attn) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (n, c, h, w) = (2, 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
        let len = n * c * h * w;
        let map = t(&[n, c, h, w], (0..len).map(|_| rng.uniform_range(0.1, 1.0)).collect());
        let avg = pool(&map, PoolMode::Avg, 3.0, None).unwrap();
        let max = pool(&map, PoolMode::Max, 3.0, None).unwrap();
        let diff = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        gem1 = gem1.max(diff(&pool(&map, PoolMode::Gem, 1.0, None).unwrap(), &avg));
        gem100 = gem100.max(diff(&pool(&map, PoolMode::Gem, 100.0, None).unwrap(), &max));
        let zeros = vec![0.0; c];
        attn = attn.max(diff(&pool(&map, PoolMode::Attention, 3.0, Some((&zeros, 0.8))).unwrap(), &avg));
    }
    check!(gem1 <= 1e-9, "GeM p=1 vs avg {gem1:.2e}");
    // a lone maximum among n cells leaves GeM at max * n^(-1/p), about 1.4% low for n = 4 at p = 100
    check!(gem100 <= 1e-3, "GeM p=100 vs max {gem100:.2e} exceeds 1e-3 (GeM(1)-avg {gem1:.1e}, attention-avg {attn:.1e})");
    check!(attn <= 1e-9, "uniform attention vs avg {attn:.2e}");
    Ok(format!("GeM(1)-avg {gem1:.1e}, GeM(100)-max {gem100:.1e}, attention-avg {attn:.1e}"))
}

/// The toy-scale desk run: 20 training ids, 10 unseen test ids, 64x64.
struct DeskRun {
    store: EmbeddingStore,
    pairs: Vec<VerificationPair>,
    trained: f64,
    untrained: f64,
    train_time: Duration,
}

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        p: 8,
        k: 4,
        input_size: 64,
        lr: 3e-3,
        schedule: LrSchedule::Cosine { min_factor: 0.01 },
        seed: 1,
        ..TrainConfig::default()
    };
    cfg.model.backbone.blocks_per_stage = 3;
    cfg
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = work_dir().join("desk");
        let train_m = generate_dataset(&DatasetSpec::new(20, 10, 64, 1), &root.join("train")).unwrap();
        let test_m = generate_dataset(&DatasetSpec::new(10, 10, 64, 99), &root.join("test")).unwrap();
        let pairs = make_pairs(&test_m, None, 0);
        let cfg = desk_config();
        let mut untrained = initial_network(&cfg, 20).unwrap();
        let untrained = store_auc(&embed(&mut untrained, &test_m, 64), &pairs);
        let start = Instant::now();
        let mut out = train(&cfg, &train_m, TrainOutputs::default()).unwrap();
        let train_time = start.elapsed();
        let store = embed(&mut out.network, &test_m, 64);
        let trained = store_auc(&store, &pairs);
        DeskRun { store, pairs, trained, untrained, train_time }
    })
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let run = desk_run();
    let elapsed = start.elapsed();
    let detail = format!(
        "trained AUC {:.4}, untrained AUC {:.4}, training {:.0}s, total {:.0}s",
        run.trained,
        run.untrained,
        run.train_time.as_secs_f64(),
        elapsed.as_secs_f64()
    );
    check!(run.trained >= 0.90, "{detail}");
    check!((0.35..=0.65).contains(&run.untrained), "{detail}");
    check!(elapsed < Duration::from_secs(300), "{detail}");
    Ok(detail)
}

/// Per dataset seed: held-out AUCs of the small benchmark models.
struct BenchSeed {
    plain_shifted: f64,
    augmented_shifted: f64,
    small_clean: f64,
    large_clean: f64,
    fused_clean: f64,
}

const BENCH_SMALL: usize = 32;
const BENCH_LARGE: usize = 48;

fn bench_config(input_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        p: 8,
        k: 4,
        input_size,
        epochs: 20,
        lr: 3e-3,
        schedule: LrSchedule::Cosine { min_factor: 0.01 },
        seed,
        ..TrainConfig::default()
    }
}

fn bench() -> &'static [BenchSeed] {
    static BENCH: OnceLock<Vec<BenchSeed>> = OnceLock::new();
    BENCH.get_or_init(|| {
        (0..3u64)
            .map(|ds| {
                let root = work_dir().join(format!("bench{ds}"));
                let size = BENCH_LARGE;
                let train_m = generate_dataset(&DatasetSpec::new(20, 10, size, ds * 10 + 1), &root.join("train")).unwrap();
                let test_spec = DatasetSpec::new(10, 10, size, ds * 10 + 99);
                let mut shifted_spec = test_spec.clone();
                shifted_spec.shift = ShiftProfile { blur_sigma: 1.0, brightness_delta: 0.2, noise_std: 0.0 };
                let test_m = generate_dataset(&test_spec, &root.join("test")).unwrap();
                let shifted_m = generate_dataset(&shifted_spec, &root.join("shifted")).unwrap();
                let augmented_m = apply_plan(&train_m, &AugPlan::full(ds), 1, &root.join("augmented")).unwrap();
                let pairs = make_pairs(&test_m, None, 0);

                let mut plain = train(&bench_config(BENCH_SMALL, 1), &train_m, TrainOutputs::default()).unwrap().network;
                let mut augmented = train(&bench_config(BENCH_SMALL, 1), &augmented_m, TrainOutputs::default()).unwrap().network;
                let mut large = train(&bench_config(BENCH_LARGE, 2), &train_m, TrainOutputs::default()).unwrap().network;

                let small_store = embed(&mut plain, &test_m, BENCH_SMALL);
                let large_store = embed(&mut large, &test_m, BENCH_LARGE);
                let small_clean = store_auc(&small_store, &pairs);
                let large_clean = store_auc(&large_store, &pairs);
                let fused = fuse_embeddings(&[small_store, large_store], FuseMode::Concat).unwrap();
                BenchSeed {
                    plain_shifted: store_auc(&embed(&mut plain, &shifted_m, BENCH_SMALL), &pairs),
                    augmented_shifted: store_auc(&embed(&mut augmented, &shifted_m, BENCH_SMALL), &pairs),
                    small_clean,
                    large_clean,
                    fused_clean: store_auc(&fused, &pairs),
                }
            })
            .collect()
    })
}

fn augmentation_direction() -> Outcome {
    let runs = bench();
    let mean = |f: fn(&BenchSeed) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let plain = mean(|r| r.plain_shifted);
    let augmented = mean(|r| r.augmented_shifted);
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.plain_shifted, r.augmented_shifted)).collect();
    let detail = format!("shifted-test AUC without/with plan: mean {plain:.4}/{augmented:.4} (seeds {})", per_seed.join(", "));
    check!(augmented >= plain, "{detail}");
    Ok(detail)
}

fn ensemble_direction() -> Outcome {
    let runs = bench();
    let mut gains: Vec<f64> = runs.iter().map(|r| r.fused_clean - r.small_clean.max(r.large_clean)).collect();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}+{:.3}->{:.3}", r.small_clean, r.large_clean, r.fused_clean))
        .collect();
    let detail = format!("sizes {BENCH_SMALL}+{BENCH_LARGE} fused vs best single: {}", per_seed.join(", "));
    check!(gains.iter().all(|&g| g >= -0.005), "{detail}");
    gains.sort_by(f64::total_cmp);
    check!(gains[1] >= 0.0, "median gain {:.4}; {detail}", gains[1]);
    Ok(format!("{detail}; median gain {:+.4}", gains[1]))
}

fn query_expansion() -> Outcome {
    let run = desk_run();
    let plain = score_pairs(&run.pairs, &run.store, Metric::Cosine, None).unwrap();
    let m0 = score_pairs(&run.pairs, &run.store, Metric::Cosine, Some(&QeConfig { m: 0, ..QeConfig::default() })).unwrap();
    check!(
        plain.iter().zip(&m0).all(|(a, b)| a.score.to_bits() == b.score.to_bits()),
        "m=0 scores differ from plain scores"
    );
    let qe = QeConfig { m: 3, ..QeConfig::default() };
    let a = score_pairs(&run.pairs, &run.store, Metric::Cosine, Some(&qe)).unwrap();
    let b = score_pairs(&run.pairs, &run.store, Metric::Cosine, Some(&qe)).unwrap();
    check!(a == b, "QE run not deterministic");
    let (base, expanded) = (auc_of(&plain), auc_of(&a));
    check!(expanded.is_finite(), "QE AUC {expanded}");
    Ok(format!("m=0 bit-exact; AUC {base:.4} -> {expanded:.4} with m=3 ({:+.4}, not gated)", expanded - base))
}

fn roundtrips() -> Outcome {
    let dir = work_dir().join("roundtrip");
    fs::create_dir_all(&dir).unwrap();
    for blocks in [1, 2] {
        let mut model = ModelConfig::default();
        model.backbone.blocks_per_stage = blocks;
        model.head.num_classes = 4;
        let net = Network::<f32>::new(&model, 9).unwrap();
        let path = dir.join(format!("m{blocks}.prck"));
        net.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = Network::<f32>::load(&path).unwrap();
        check!(back.to_checkpoint().to_bytes().unwrap() == bytes, "checkpoint bytes changed after reload");
        check!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap() == bytes, "checkpoint reparse changed bytes");
    }

    let mut rng = RngStream::new(5, 0);
    let records: Vec<EmbeddingRecord> = (0..7)
        .map(|i| EmbeddingRecord::new(format!("img_{i}"), (0..13).map(|_| (rng.normal() * 1e3) as f32).collect()))
        .collect();
    let store = EmbeddingStore::new(records).unwrap();
    let path = dir.join("e.prem");
    store.save(&path).unwrap();
    let back = EmbeddingStore::load(&path).unwrap();
    let bits = |s: &EmbeddingStore| s.records().iter().flat_map(|r| r.vector.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    check!(bits(&back) == bits(&store) && back.ids().eq(store.ids()), "PREM roundtrip changed values");

    for channels in [1, 3] {
        let data: Vec<f64> = (0..9 * 7 * channels).map(|_| rng.below(256) as f64 / 255.0).collect();
        let img = ImageBuffer::new(9, 7, channels, data).unwrap();
        let back = ImageBuffer::from_pnm_bytes(&img.to_pnm_bytes()).unwrap();
        check!(back.data() == img.data(), "PNM roundtrip with {channels} channels changed values");
    }
    Ok("PRCK, PREM and PGM/PPM bit-exact".into())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path) -> Result<(), String> {
    fs::create_dir_all(root).unwrap();
    let cfg = root.join("run.json");
    let plan = root.join("plan.json");
    fs::write(
        &cfg,
        r#"{"seed": 17, "train": {"P": 4, "K": 2, "epochs": 2, "input_size": 32,
            "model": {"backbone": {"stage_channels": [4, 8]}, "head": {"embed_dim": 8}}}}"#,
    )
    .unwrap();
    fs::write(&plan, AugPlan::full(3).to_json()).unwrap();
    let s = |p: &str| root.join(p).to_str().unwrap().to_string();
    let c = cfg.to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--n-ids".into(), "6".into(), "--per-id".into(), "3".into(), "--size".into(), "32".into(), "--out".into(), s("data"), "--config".into(), c.clone()],
        vec!["augment".into(), "--plan".into(), s("plan.json"), "--manifest".into(), s("data/manifest.csv"), "--copies".into(), "1".into(), "--out".into(), s("aug"), "--config".into(), c.clone()],
        vec!["train".into(), "--manifest".into(), s("aug/manifest.csv"), "--out".into(), s("model.prck"), "--config".into(), c.clone()],
        vec!["embed".into(), "--ckpt".into(), s("model.prck"), "--manifest".into(), s("data/manifest.csv"), "--size".into(), "32".into(), "--out".into(), s("emb.prem")],
        vec!["pairs".into(), "--manifest".into(), s("data/manifest.csv"), "--out".into(), s("pairs.csv")],
        vec!["verify".into(), "--embeddings".into(), s("emb.prem"), "--pairs".into(), s("pairs.csv"), "--qe-m".into(), "2".into(), "--out".into(), s("scores.csv")],
        vec!["eval".into(), "--scores".into(), s("scores.csv")],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_noseprint")).env_remove("NOSEPRINT_SEED").args(&args).output().unwrap();
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
        if args[0] == "eval" {
            fs::write(root.join("auc.txt"), out.stdout).unwrap();
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let a = work_dir().join("pipeline_a");
    let b = work_dir().join("pipeline_b");
    pipeline(&a)?;
    pipeline(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    check!(ta.keys().eq(tb.keys()), "artifact sets differ");
    let differing: Vec<_> = ta.iter().filter(|(k, v)| tb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    check!(differing.is_empty(), "differing artifacts: {}", differing.join(", "));
    Ok(format!("{} artifacts byte-identical across two runs", ta.len()))
}

fn main() {
    // the libtest-style `--list` probe gets an empty listing
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradients),
        (2, "AUC oracle", auc_oracle),
        (3, "closed-form losses", closed_form_losses),
        (4, "pooling limits", pooling_limits),
        (5, "end-to-end desk run", end_to_end),
        (6, "augmentation direction", augmentation_direction),
        (7, "ensemble direction", ensemble_direction),
        (8, "query expansion", query_expansion),
        (9, "format roundtrips", roundtrips),
        (10, "pipeline determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (n, name, run) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match result {
            Ok(detail) => format!("criterion {n:2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                format!("criterion {n:2} {name}: FAIL ({detail}) [{secs:.1}s]")
            }
        };
        writeln!(stdout, "{line}").unwrap();
        stdout.flush().unwrap();
    }
    writeln!(stdout, "acceptance: {} passed, {failed} failed", 10 - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
