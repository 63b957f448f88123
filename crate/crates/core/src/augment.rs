//! Standard photometric/geometric augmentation of RGB images.
//!
//! An [`AugmentationSpec`] captures one concrete draw: horizontal flip,
//! brightness shift, contrast and saturation scaling, and a random crop that
//! is resized back to the source resolution with bilinear interpolation.
//! [`apply`] executes those steps in that fixed order and is a pure
//! function; the identity spec reproduces the input bit for bit.

use crate::error::Result;
use crate::image::Image;
use rand::Rng;

/// Sampling ranges for [`sample_augmentation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    /// Brightness shift is drawn from `[-max_brightness, max_brightness]`.
    pub max_brightness: f64,
    /// Contrast factor is drawn from `1 ± max_contrast`.
    pub max_contrast: f64,
    /// Saturation factor is drawn from `1 ± max_saturation`.
    pub max_saturation: f64,
    /// Crop keeps between `min_crop_fraction` and all of each side.
    pub min_crop_fraction: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_brightness: 0.2,
            max_contrast: 0.2,
            max_saturation: 0.2,
            min_crop_fraction: 0.7,
        }
    }
}

/// One concrete augmentation draw. Applied in the fixed order: flip,
/// brightness, contrast, saturation, crop, resize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSpec {
    pub flip: bool,
    /// Added to every channel value.
    pub brightness_delta: f64,
    /// Scales deviations from the image mean.
    pub contrast_factor: f64,
    /// Scales deviations from each pixel's grey value.
    pub saturation_factor: f64,
    /// Side fraction kept by the crop, in `(0, 1]`.
    pub crop_fraction: f64,
    /// Fractional position of the crop window inside the available slack,
    /// each component in `[0, 1]`.
    pub crop_offset: (f64, f64),
}

impl AugmentationSpec {
    /// The spec that leaves every image unchanged.
    pub fn identity() -> Self {
        AugmentationSpec {
            flip: false,
            brightness_delta: 0.0,
            contrast_factor: 1.0,
            saturation_factor: 1.0,
            crop_fraction: 1.0,
            crop_offset: (0.0, 0.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip
            && self.brightness_delta == 0.0
            && self.contrast_factor == 1.0
            && self.saturation_factor == 1.0
            && self.crop_fraction >= 1.0
    }
}

/// Draws a spec uniformly from the configured ranges; the flip is a fair
/// coin. Draw order is fixed (flip, brightness, contrast, saturation, crop
/// fraction, crop offset) so seeded streams are reproducible.
pub fn sample_augmentation<R: Rng + ?Sized>(
    ranges: &AugmentRanges,
    rng: &mut R,
) -> AugmentationSpec {
    let flip = rng.gen_bool(0.5);
    let brightness_delta = rng.gen_range(-ranges.max_brightness..=ranges.max_brightness);
    let contrast_factor = rng.gen_range(1.0 - ranges.max_contrast..=1.0 + ranges.max_contrast);
    let saturation_factor =
        rng.gen_range(1.0 - ranges.max_saturation..=1.0 + ranges.max_saturation);
    let crop_fraction = rng.gen_range(ranges.min_crop_fraction..=1.0);
    let crop_offset = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
    AugmentationSpec {
        flip,
        brightness_delta,
        contrast_factor,
        saturation_factor,
        crop_fraction,
        crop_offset,
    }
}

/// A source of augmentation draws. The uniform sampler drives normal
/// operation; the identity sampler lets tests collapse test-time
/// augmentation onto the unaugmented path exactly.
pub trait AugmentSampler {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> AugmentationSpec;
}

/// Samples uniformly from [`AugmentRanges`].
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAugment(pub AugmentRanges);

impl AugmentSampler for UniformAugment {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> AugmentationSpec {
        sample_augmentation(&self.0, rng)
    }
}

/// Always yields the identity spec.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAugment;

impl AugmentSampler for IdentityAugment {
    fn sample(&self, _rng: &mut dyn rand::RngCore) -> AugmentationSpec {
        AugmentationSpec::identity()
    }
}

/// Applies `spec` to `image`, returning a new image of the same size.
/// Pure: identical inputs yield identical outputs. Skips every no-op stage,
/// so the identity spec is a bitwise fixed point.
pub fn apply(spec: &AugmentationSpec, image: &Image) -> Result<Image> {
    let mut out = image.clone();
    if spec.flip {
        flip_horizontal(&mut out);
    }
    let color_changed = spec.brightness_delta != 0.0
        || spec.contrast_factor != 1.0
        || spec.saturation_factor != 1.0;
    if spec.brightness_delta != 0.0 {
        for v in out.pixels_mut() {
            *v += spec.brightness_delta;
        }
    }
    if spec.contrast_factor != 1.0 {
        let mean = out.mean();
        for v in out.pixels_mut() {
            *v = mean + spec.contrast_factor * (*v - mean);
        }
    }
    if spec.saturation_factor != 1.0 {
        let f = spec.saturation_factor;
        for px in out.pixels_mut().chunks_exact_mut(3) {
            let grey = (px[0] + px[1] + px[2]) / 3.0;
            for v in px {
                *v = grey + f * (*v - grey);
            }
        }
    }
    if color_changed {
        for v in out.pixels_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let (h, w) = (out.height(), out.width());
    let frac = spec.crop_fraction.clamp(0.0, 1.0);
    let crop_h = ((frac * h as f64).round() as usize).clamp(1, h);
    let crop_w = ((frac * w as f64).round() as usize).clamp(1, w);
    if crop_h < h || crop_w < w {
        let oy = (spec.crop_offset.0.clamp(0.0, 1.0) * (h - crop_h) as f64).round() as usize;
        let ox = (spec.crop_offset.1.clamp(0.0, 1.0) * (w - crop_w) as f64).round() as usize;
        out = resize_bilinear(&out, oy, ox, crop_h, crop_w, h, w);
    }
    Ok(out)
}

fn flip_horizontal(img: &mut Image) {
    let (h, w) = (img.height(), img.width());
    for y in 0..h {
        for x in 0..w / 2 {
            let a = img.rgb(y, x);
            let b = img.rgb(y, w - 1 - x);
            img.set_rgb(y, x, b);
            img.set_rgb(y, w - 1 - x, a);
        }
    }
}

/// Bilinearly resamples the `crop_h x crop_w` window at `(oy, ox)` of `src`
/// up to `out_h x out_w` (half-pixel-centered sampling).
fn resize_bilinear(
    src: &Image,
    oy: usize,
    ox: usize,
    crop_h: usize,
    crop_w: usize,
    out_h: usize,
    out_w: usize,
) -> Image {
    let mut dst = Image::zeros(out_h, out_w);
    let sy = crop_h as f64 / out_h as f64;
    let sx = crop_w as f64 / out_w as f64;
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (crop_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(crop_h - 1);
        let wy = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (crop_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(crop_w - 1);
            let wx = fx - x0 as f64;
            let p00 = src.rgb(oy + y0, ox + x0);
            let p01 = src.rgb(oy + y0, ox + x1);
            let p10 = src.rgb(oy + y1, ox + x0);
            let p11 = src.rgb(oy + y1, ox + x1);
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let top = p00[ch] * (1.0 - wx) + p01[ch] * wx;
                let bot = p10[ch] * (1.0 - wx) + p11[ch] * wx;
                px[ch] = top * (1.0 - wy) + bot * wy;
            }
            dst.set_rgb(y, x, px);
        }
    }
    dst
}
