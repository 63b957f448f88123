//! Texture-statistics oracle: a deliberately shape-blind classifier used to
//! certify what the texture cue alone can achieve on a dataset.
//!
//! Statistics are computed separately over the figure and ground regions
//! given by the generator's ground-truth masks — mean RGB plus gradient
//! energies per region — so silhouette geometry contributes (almost)
//! nothing. A nearest-centroid classifier over z-scored features is scored
//! with a fixed even/odd train/eval split per class. High accuracy means
//! texture statistics identify classes; chance-level accuracy means they do
//! not.

use super::shapes::Mask;
use super::{ClassDataset, MaskSet};
use crate::image::Image;

pub const FEATURES: usize = 10;

/// Per-region texture statistics: for figure then ground, mean RGB, the
/// stride-1 gradient energy, and the stride-3 energy as a ratio of stride 1
/// (a scale-free spectral signature). Pairs straddling the region boundary
/// are excluded, so silhouette edges do not register.
pub fn texture_features(img: &Image, mask: &Mask) -> [f64; FEATURES] {
    assert_eq!(
        (img.height(), img.width()),
        (mask.height(), mask.width()),
        "feature extraction needs mask and image of equal size"
    );
    let (h, w) = (img.height(), img.width());
    let mut luma = vec![0.0f64; h * w];
    let mut mean = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for y in 0..h {
        for x in 0..w {
            let px = img.rgb(y, x);
            let region = mask.get(y, x) as usize;
            for ch in 0..3 {
                mean[region][ch] += px[ch];
            }
            counts[region] += 1;
            luma[y * w + x] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
    }
    for region in 0..2 {
        let n = counts[region].max(1) as f64;
        for ch in 0..3 {
            mean[region][ch] /= n;
        }
    }

    let mut grads = [[0.0f64; 2]; 2];
    for (gi, stride) in [1usize, 3].into_iter().enumerate() {
        let mut acc = [0.0f64; 2];
        let mut count = [0usize; 2];
        let mut tally = |a: (usize, usize), b: (usize, usize)| {
            if mask.get(a.0, a.1) == mask.get(b.0, b.1) {
                let region = mask.get(a.0, a.1) as usize;
                acc[region] += (luma[a.0 * w + a.1] - luma[b.0 * w + b.1]).abs();
                count[region] += 1;
            }
        };
        for y in 0..h {
            for x in 0..w.saturating_sub(stride) {
                tally((y, x), (y, x + stride));
            }
        }
        for y in 0..h.saturating_sub(stride) {
            for x in 0..w {
                tally((y, x), (y + stride, x));
            }
        }
        for region in 0..2 {
            grads[gi][region] = if count[region] == 0 {
                0.0
            } else {
                acc[region] / count[region] as f64
            };
        }
    }

    let mut out = [0.0f64; FEATURES];
    for region in 0..2 {
        let base = region * 5;
        out[base] = mean[region][0];
        out[base + 1] = mean[region][1];
        out[base + 2] = mean[region][2];
        out[base + 3] = grads[0][region];
        out[base + 4] = grads[1][region] / grads[0][region].max(1e-9);
    }
    out
}

/// Scores a nearest-centroid classifier on z-scored texture features.
/// Even-indexed images per class form the centroids, odd-indexed images are
/// scored. Returns `(accuracy, evaluated_count)`.
pub fn nearest_centroid_accuracy(dataset: &ClassDataset, masks: &MaskSet) -> (f64, usize) {
    assert_eq!(
        masks.classes(),
        dataset.n_classes(),
        "mask set must parallel the dataset"
    );
    let mut refs: Vec<Vec<[f64; FEATURES]>> = Vec::new();
    let mut evals: Vec<(usize, [f64; FEATURES])> = Vec::new();
    for (ci, record) in dataset.classes().iter().enumerate() {
        let class_masks = masks.class(ci);
        let mut class_refs = Vec::new();
        for (i, img) in record.images.iter().enumerate() {
            let f = texture_features(img, &class_masks[i]);
            if i % 2 == 0 {
                class_refs.push(f);
            } else {
                evals.push((ci, f));
            }
        }
        refs.push(class_refs);
    }
    if evals.is_empty() {
        return (0.0, 0);
    }

    // Z-score every dimension using the pooled reference statistics so no
    // single feature's scale dominates the distance.
    let all_refs: Vec<&[f64; FEATURES]> = refs.iter().flatten().collect();
    let mut mu = [0.0f64; FEATURES];
    let mut sd = [0.0f64; FEATURES];
    for f in &all_refs {
        for d in 0..FEATURES {
            mu[d] += f[d];
        }
    }
    for d in 0..FEATURES {
        mu[d] /= all_refs.len() as f64;
    }
    for f in &all_refs {
        for d in 0..FEATURES {
            sd[d] += (f[d] - mu[d]).powi(2);
        }
    }
    for d in 0..FEATURES {
        sd[d] = (sd[d] / all_refs.len() as f64).sqrt().max(1e-9);
    }
    let z = |f: &[f64; FEATURES]| {
        let mut out = [0.0f64; FEATURES];
        for d in 0..FEATURES {
            out[d] = (f[d] - mu[d]) / sd[d];
        }
        out
    };

    let centroids: Vec<[f64; FEATURES]> = refs
        .iter()
        .map(|class_refs| {
            let mut c = [0.0f64; FEATURES];
            for f in class_refs {
                let zf = z(f);
                for d in 0..FEATURES {
                    c[d] += zf[d];
                }
            }
            for d in c.iter_mut() {
                *d /= class_refs.len().max(1) as f64;
            }
            c
        })
        .collect();

    let mut correct = 0usize;
    for (ci, f) in &evals {
        let zf = z(f);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, c) in centroids.iter().enumerate() {
            let d: f64 = zf.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        correct += (best == *ci) as usize;
    }
    (correct as f64 / evals.len() as f64, evals.len())
}
