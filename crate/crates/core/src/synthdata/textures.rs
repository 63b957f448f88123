//! Procedural two-color textures and the banks that index them.
//!
//! A [`TextureSpec`] is a deterministic function of a bank seed and a
//! texture id: kind (stripes, checkerboard, or band-limited value noise),
//! spatial frequency, orientation, and a two-color palette. Banks assign
//! dark palettes to even ids and light palettes to odd ids, so any
//! even/odd pair keeps a figure visible against its ground without
//! rejection sampling.
//!
//! Two bank profiles exist: the natural bank used for dataset
//! foreground/background fills, and a separate bank used only for
//! stylization. Their id spaces never overlap, but the style band covers
//! the natural frequency range, so blending a style over an image perturbs
//! texture statistics in the same band the fills occupy instead of adding
//! separable high-frequency detail.

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use rand::Rng;

/// Texture pattern family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    Stripes,
    Checker,
    Noise,
}

/// A fully determined procedural texture.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSpec {
    /// Bank-qualified identifier (unique across banks).
    pub id: u64,
    pub kind: TextureKind,
    /// Cycles across the unit square; must be positive.
    pub frequency: f64,
    /// Orientation in radians.
    pub angle: f64,
    /// Two-color palette: pattern interpolates or alternates between these.
    pub colors: ([f64; 3], [f64; 3]),
    /// Lattice seed for the noise kind.
    noise_seed: u64,
}

/// Per-image nuisance placement of a texture: a phase shift in texture
/// coordinates. Pattern identity (kind, frequency, orientation, palette)
/// is unaffected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexturePose {
    pub du: f64,
    pub dv: f64,
}

impl TexturePose {
    pub fn centered() -> Self {
        TexturePose { du: 0.0, dv: 0.0 }
    }
}

/// Draws a uniform phase shift.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R) -> TexturePose {
    TexturePose {
        du: rng.gen_range(0.0..1.0),
        dv: rng.gen_range(0.0..1.0),
    }
}

impl TextureSpec {
    /// Color of the texture at unit-square coordinates `(u, v)` under the
    /// given pose.
    pub fn value(&self, u: f64, v: f64, pose: &TexturePose) -> [f64; 3] {
        let (su, sv) = (u + pose.du, v + pose.dv);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let a = su * c + sv * s;
        let b = -su * s + sv * c;
        match self.kind {
            TextureKind::Stripes => {
                let t = (a * self.frequency).rem_euclid(1.0);
                if t < 0.5 {
                    self.colors.0
                } else {
                    self.colors.1
                }
            }
            TextureKind::Checker => {
                let ca = (a * self.frequency).floor() as i64;
                let cb = (b * self.frequency).floor() as i64;
                if (ca + cb).rem_euclid(2) == 0 {
                    self.colors.0
                } else {
                    self.colors.1
                }
            }
            TextureKind::Noise => {
                let n = self.noise(a * self.frequency, b * self.frequency);
                let mut out = [0.0; 3];
                for ch in 0..3 {
                    out[ch] = self.colors.0[ch] + n * (self.colors.1[ch] - self.colors.0[ch]);
                }
                out
            }
        }
    }

    /// Mean luminance of the palette midpoint.
    pub fn mean_luma(&self) -> f64 {
        let l0 = luma(&self.colors.0);
        let l1 = luma(&self.colors.1);
        (l0 + l1) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(Error::Contract(format!(
                "texture {} has non-positive frequency {}",
                self.id, self.frequency
            )));
        }
        for c in [&self.colors.0, &self.colors.1] {
            for &v in c {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Contract(format!(
                        "texture {} palette value {v} is outside [0, 1]",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value noise: smoothstep-interpolated hash lattice in `[0, 1]`.
    fn noise(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = smoothstep(x - x0);
        let fy = smoothstep(y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = lattice(self.noise_seed, x0, y0);
        let v01 = lattice(self.noise_seed, x0 + 1, y0);
        let v10 = lattice(self.noise_seed, x0, y0 + 1);
        let v11 = lattice(self.noise_seed, x0 + 1, y0 + 1);
        let top = v00 + fx * (v01 - v00);
        let bot = v10 + fx * (v11 - v10);
        top + fy * (bot - top)
    }
}

fn luma(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Hash of a lattice point into `[0, 1]`.
fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let h = rng::child_seed(seed, x as u64, y as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Frequency and identity profile of a texture bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankProfile {
    pub freq_lo: f64,
    pub freq_hi: f64,
    /// Salt separating this bank's id space from every other bank's.
    pub id_salt: u64,
}

/// A deterministic, indexable family of textures.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureBank {
    seed: u64,
    profile: BankProfile,
}

const NATURAL_SALT: u64 = 0x4e41_5455;
const STYLE_SALT: u64 = 0x5354_594c;

impl TextureBank {
    /// The low-frequency bank that fills dataset figures and grounds.
    pub fn natural(seed: u64) -> Self {
        TextureBank {
            seed,
            profile: BankProfile {
                freq_lo: 1.5,
                freq_hi: 6.0,
                id_salt: NATURAL_SALT,
            },
        }
    }

    /// The bank used exclusively for stylization; its id space is disjoint
    /// from the natural bank's while its frequency band contains the
    /// natural band.
    pub fn styles(seed: u64) -> Self {
        TextureBank {
            seed,
            profile: BankProfile {
                freq_lo: 1.5,
                freq_hi: 9.0,
                id_salt: STYLE_SALT,
            },
        }
    }

    pub fn profile(&self) -> BankProfile {
        self.profile
    }

    /// The texture at `index`. Even indices carry dark palettes, odd
    /// indices light palettes, so an (even, odd) pair always contrasts.
    pub fn texture(&self, index: u64) -> TextureSpec {
        let mut stream = rng::child_rng(
            rng::child_seed(self.seed, tag::TEXTURE, self.profile.id_salt),
            tag::TEXTURE,
            index,
        );
        let kind = match stream.gen_range(0..3u8) {
            0 => TextureKind::Stripes,
            1 => TextureKind::Checker,
            _ => TextureKind::Noise,
        };
        let frequency = stream.gen_range(self.profile.freq_lo..self.profile.freq_hi);
        let angle = stream.gen_range(0.0..std::f64::consts::PI);
        let (lo, hi) = if index % 2 == 0 {
            (0.05, 0.42)
        } else {
            (0.58, 0.95)
        };
        let colors = (
            palette_color(&mut stream, lo, hi),
            palette_color(&mut stream, lo, hi),
        );
        let noise_seed = stream.gen();
        TextureSpec {
            id: self.profile.id_salt.rotate_left(32) ^ index,
            kind,
            frequency,
            angle,
            colors,
            noise_seed,
        }
    }
}

/// Draws one palette color whose luminance lands in `[lo, hi]`.
fn palette_color<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    let target = rng.gen_range(lo..hi);
    let mut c = [0.0; 3];
    for v in c.iter_mut() {
        *v = (target + rng.gen_range(-0.16..0.16)).clamp(0.0, 1.0);
    }
    // Nudge the luminance back onto the target so parity bands never overlap.
    let l = luma(&c);
    let shift = target - l;
    for v in c.iter_mut() {
        *v = (*v + shift).clamp(0.0, 1.0);
    }
    c
}
