use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imgproc::RngStream;

/// One epoch of PK batches over images with class labels `labels`.
///
/// Each batch holds `p` distinct classes with `k` image indices each,
/// drawn without replacement when the class has at least `k` images and
/// with replacement otherwise. Classes are visited in a fresh random order
/// that is cycled as needed; the epoch has
/// `max(ceil(classes / p), floor(images / (p k)))` batches, so every class
/// appears at least once.
pub fn pk_sample_epoch(labels: &[usize], p: usize, k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !members[c].is_empty()).collect();
    if p == 0 || k == 0 {
        return Err(Error::Config("P and K must be positive".into()));
    }
    if present.len() < p {
        return Err(Error::Config(format!(
            "PK sampling needs at least P={p} identities, dataset has {}",
            present.len()
        )));
    }
    let n_batches = present.len().div_ceil(p).max(labels.len() / (p * k));
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut chosen: Vec<usize> = Vec::with_capacity(p);
        let mut deferred = Vec::new();
        while chosen.len() < p {
            if queue.is_empty() {
                let mut order = present.clone();
                rng.shuffle(&mut order);
                queue.extend(order);
            }
            let c = queue.pop_front().unwrap();
            if chosen.contains(&c) {
                deferred.push(c);
            } else {
                chosen.push(c);
            }
        }
        for c in deferred.into_iter().rev() {
            queue.push_front(c);
        }
        let mut batch = Vec::with_capacity(p * k);
        for c in chosen {
            let pool = &members[c];
            if pool.len() >= k {
                let mut idx = pool.clone();
                rng.shuffle(&mut idx);
                batch.extend_from_slice(&idx[..k]);
            } else {
                batch.extend((0..k).map(|_| pool[rng.below(pool.len())]));
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}
