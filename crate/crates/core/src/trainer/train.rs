use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::config::TrainConfig;
use super::sampler::pk_sample_epoch;
use crate::error::{Error, Result};
use crate::imgproc::{horizontal_flip, load_image, mix_seed, paste_box, resize_bilinear, CutBox, ImageBuffer, RngStream};
use crate::losses::{combined_loss, one_hot};
use crate::manifest::Manifest;
use crate::nn::{images_to_tensor, Mode, Network};

const TAG_SAMPLER: u64 = 0x5041_4d50;
const TAG_BATCH: u64 = 0x4241_5443;
const TAG_INIT: u64 = 0x494e_4954;

/// Per-batch losses; `epoch` and `batch` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: usize,
    pub ce: f64,
    pub triplet: f64,
    pub circle: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str = "epoch,batch,loss_ce,loss_tri,loss_circle,loss_total";

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.epoch, r.batch, r.ce, r.triplet, r.circle, r.total).unwrap();
    }
    s
}

/// Mean `total` per epoch, in epoch order.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if out.len() < r.epoch {
            out.resize(r.epoch, (0.0, 0));
        }
        out[r.epoch - 1].0 += r.total;
        out[r.epoch - 1].1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub log: Vec<LogRow>,
    /// Class index of each identity name, sorted by name.
    pub classes: Vec<String>,
}

/// Where [`train`] writes its artifacts. The log is written even when
/// training aborts, holding the batches completed so far.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOutputs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub log: Option<&'a Path>,
}

/// The network [`train`] starts from for `n_classes` identities, before any
/// update. Useful as an untrained baseline with the same weights.
pub fn initial_network(cfg: &TrainConfig, n_classes: usize) -> Result<Network<f32>> {
    let mut model = cfg.model.clone();
    model.head.num_classes = n_classes.max(2);
    Network::new(&model, mix_seed(cfg.seed, TAG_INIT))
}

/// Trains a fresh network on the valid rows of `manifest`.
pub fn train(cfg: &TrainConfig, manifest: &Manifest, outputs: TrainOutputs<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let index = manifest.identity_index();
    let rows: Vec<_> = manifest.valid_rows().collect();
    let labels: Vec<usize> = rows.iter().map(|r| index[&r.identity]).collect();
    let size = cfg.input_size;
    let images = rows
        .iter()
        .map(|r| {
            let img = load_image(manifest.resolve(r))?;
            // the online plan sees the stored image, otherwise resize once here
            if cfg.online_plan.is_some() || (img.height() == size && img.width() == size) {
                Ok(img)
            } else {
                resize_bilinear(&img, size, size)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut net = initial_network(cfg, index.len())?;
    let mut opt = Adam::new(AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    });

    let mut log = Vec::new();
    let result = run_epochs(cfg, &mut net, &mut opt, &images, &labels, index.len().max(2), &mut log);
    if let Some(path) = outputs.log {
        fs::write(path, log_to_csv(&log)).map_err(|e| Error::io(path, e))?;
    }
    result?;
    net.clear_cache();
    if let Some(path) = outputs.checkpoint {
        net.save(path)?;
    }
    Ok(TrainOutcome {
        network: net,
        log,
        classes: index.into_keys().collect(),
    })
}

fn run_epochs(
    cfg: &TrainConfig,
    net: &mut Network<f32>,
    opt: &mut Adam,
    images: &[ImageBuffer],
    labels: &[usize],
    n_classes: usize,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let size = cfg.input_size;
    let channels = net.config().backbone.in_channels;
    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::derived(cfg.seed, TAG_SAMPLER, epoch as u64);
        let batches = pk_sample_epoch(labels, cfg.p, cfg.k, &mut rng)?;
        let lr = cfg.lr * cfg.schedule.factor(epoch, cfg.epochs);
        for (b, batch) in batches.iter().enumerate() {
            let bseed = mix_seed(mix_seed(cfg.seed, epoch as u64), b as u64);
            let mut brng = RngStream::derived(bseed, TAG_BATCH, 0);
            let mut imgs = Vec::with_capacity(batch.len());
            for (i, &idx) in batch.iter().enumerate() {
                let mut irng = RngStream::derived(bseed, TAG_BATCH, i as u64 + 1);
                let mut img = match &cfg.online_plan {
                    Some(plan) => {
                        let out = plan.apply_with(&images[idx], &mut irng)?;
                        if out.height() == size && out.width() == size {
                            out
                        } else {
                            resize_bilinear(&out, size, size)?
                        }
                    }
                    None => images[idx].clone(),
                };
                if irng.bernoulli(cfg.flip_p) {
                    img = horizontal_flip(&img);
                }
                imgs.push(img);
            }
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut targets: Vec<f32> = one_hot(&batch_labels, n_classes);
            if brng.bernoulli(cfg.cutmix_p) {
                let mut partner: Vec<usize> = (0..imgs.len()).collect();
                brng.shuffle(&mut partner);
                let cut = CutBox::sample(size, size, &mut brng, cfg.cutmix_alpha);
                let originals = imgs.clone();
                for (i, &j) in partner.iter().enumerate() {
                    let (mixed, lam) = paste_box(&originals[i], &originals[j], cut)?;
                    imgs[i] = mixed;
                    let row = &mut targets[i * n_classes..(i + 1) * n_classes];
                    row.iter_mut().for_each(|t| *t *= lam as f32);
                    row[batch_labels[j]] += (1.0 - lam) as f32;
                }
            }
            let x = images_to_tensor(&imgs, channels, size)?;
            // domain failures here come from diverged parameters such as a negative GeM exponent
            let out = net.forward(&x, Mode::Train, Some(&mut brng)).map_err(|e| match e {
                Error::Domain(m) => Error::NonFinite { param: format!("forward pass: {m}") },
                e => e,
            })?;
            // a zero feature row means the network has collapsed
            let loss = combined_loss(&out.logits, &out.feature, &targets, &batch_labels, &cfg.loss).map_err(|e| match e {
                Error::Domain(_) => Error::NonFinite { param: "feature".into() },
                e => e,
            })?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite { param: "loss".into() });
            }
            net.zero_grad();
            net.backward(Some(&loss.d_features), Some(&loss.d_logits))?;
            opt.step(net, lr)?;
            log.push(LogRow {
                epoch: epoch + 1,
                batch: b + 1,
                ce: loss.ce,
                triplet: loss.triplet,
                circle: loss.circle,
                total: loss.total,
            });
        }
    }
    Ok(())
}
