//! Stylization: re-texturing an image while keeping its silhouette.
//!
//! A stylized variant repaints the figure with a style texture and the
//! ground with a second, randomly drawn style texture, then alpha-blends
//! the repainted image with the original. `alpha = 0` returns the original
//! exactly; `alpha = 1` returns the fully repainted image. Figure styles
//! keep the dark parity the dataset fills use, so a variant perturbs what
//! the figure is filled with without flipping which side of the silhouette
//! is dark.

use super::shapes::Mask;
use super::textures::{sample_pose, TextureBank, TextureSpec};
use super::{compose, MaskSet};
use super::{ClassDataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, tag};
use rand::Rng;

/// How many distinct textures either parity band of the style bank offers
/// to stylization draws.
pub const STYLE_POOL: u64 = 64;

/// Settings for building stylized variants of a pre-training dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StylizeConfig {
    /// Blend weight of the repainted image.
    pub alpha: f64,
    /// Variants built per original image.
    pub variants: usize,
    pub seed: u64,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        StylizeConfig {
            alpha: 0.4,
            variants: 10,
            seed: 0,
        }
    }
}

/// Repaints `image` under `mask` with `style` in the figure and a randomly
/// drawn texture from `bank` in the ground, blending by `alpha`.
pub fn stylize(
    image: &Image,
    mask: &Mask,
    style: &TextureSpec,
    bank: &TextureBank,
    alpha: f64,
    seed: u64,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "stylization alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::Dimension(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    style.validate()?;
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    // Draw order: ground texture index, figure pose, ground pose.
    let mut stream = rng::rng_from(seed);
    let ground_index = 2 * stream.gen_range(0..STYLE_POOL)
        + if style.mean_luma() > 0.5 { 0 } else { 1 };
    let ground = bank.texture(ground_index);
    let fg_pose = sample_pose(&mut stream);
    let bg_pose = sample_pose(&mut stream);
    let repainted = compose(mask, style, &fg_pose, &ground, &bg_pose);
    if alpha == 1.0 {
        return Ok(repainted);
    }
    let mut out = image.clone();
    for (o, r) in out.pixels_mut().iter_mut().zip(repainted.pixels()) {
        *o = (1.0 - alpha) * *o + alpha * r;
    }
    Ok(out)
}

/// Builds `cfg.variants` stylized variants for every image of a
/// pre-training dataset, returning a copy with the variants attached.
/// Styles come from `styles`, whose textures are disjoint from the dataset
/// fill textures by construction.
pub fn build_stylized_variants(
    base: &ClassDataset,
    masks: &MaskSet,
    styles: &TextureBank,
    cfg: &StylizeConfig,
) -> Result<ClassDataset> {
    if base.split() != Split::Pretrain {
        return Err(Error::Contract(format!(
            "stylized variants are built for the pretrain split only, got {:?}",
            base.split()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Config(format!(
            "stylization alpha must lie in [0, 1], got {}",
            cfg.alpha
        )));
    }
    if cfg.variants == 0 {
        return Err(Error::Config("variant count must be positive".into()));
    }
    if masks.classes() != base.n_classes() {
        return Err(Error::Dimension(format!(
            "mask set covers {} classes, dataset has {}",
            masks.classes(),
            base.n_classes()
        )));
    }
    let mut out = base.clone();
    for (ci, record) in out.classes_mut().iter_mut().enumerate() {
        let class_masks = masks.class(ci);
        if class_masks.len() != record.images.len() {
            return Err(Error::Dimension(format!(
                "class {} has {} masks for {} images",
                record.class_id,
                class_masks.len(),
                record.images.len()
            )));
        }
        let class_seed = rng::child_seed(cfg.seed, tag::STYLIZE, record.class_id as u64);
        let mut stylized = Vec::with_capacity(record.images.len());
        for (ii, (image, mask)) in record.images.iter().zip(class_masks).enumerate() {
            let image_seed = rng::child_seed(class_seed, tag::IMAGE, ii as u64);
            let mut variants = Vec::with_capacity(cfg.variants);
            for v in 0..cfg.variants {
                let mut stream = rng::child_rng(image_seed, tag::STYLIZE, v as u64);
                let style_index = 2 * stream.gen_range(0..STYLE_POOL);
                let inner_seed: u64 = stream.gen();
                variants.push(stylize(
                    image,
                    mask,
                    &styles.texture(style_index),
                    styles,
                    cfg.alpha,
                    inner_seed,
                )?);
            }
            stylized.push(variants);
        }
        record.stylized = Some(stylized);
    }
    Ok(out)
}
