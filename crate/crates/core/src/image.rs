//! The RGB image value type shared by the data generator, the augmentation
//! pipeline, and the embedding network.

use crate::error::{Error, Result};

/// Minimum supported square resolution; below this the shape raster is too
/// coarse to carry a silhouette.
pub const MIN_RESOLUTION: usize = 16;

/// An RGB image with `f64` channels in `[0, 1]`, stored row-major as
/// interleaved `height x width x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Creates an image from interleaved HWC pixel data.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "image buffer holds {} values, expected {}x{}x3 = {}",
                pixels.len(),
                height,
                width,
                height * width * 3
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    /// A black image of the given size.
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Interleaved HWC pixel buffer.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    /// The RGB triple at `(y, x)`.
    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i] = rgb[0];
        self.pixels[i + 1] = rgb[1];
        self.pixels[i + 2] = rgb[2];
    }

    /// Copies the image into a planar `3 x H x W` buffer appended to `out`
    /// (the layout the embedding network consumes).
    pub fn write_chw(&self, out: &mut Vec<f64>) {
        let plane = self.height * self.width;
        let start = out.len();
        out.resize(start + 3 * plane, 0.0);
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            out[start + i] = px[0];
            out[start + plane + i] = px[1];
            out[start + 2 * plane + i] = px[2];
        }
    }

    /// Mean over all channel values.
    pub fn mean(&self) -> f64 {
        let n = self.pixels.len();
        if n == 0 {
            return 0.0;
        }
        self.pixels.iter().sum::<f64>() / n as f64
    }

    /// Errors unless every pixel is finite and inside `[0, 1]`.
    pub fn validate_range(&self) -> Result<()> {
        for (i, &v) in self.pixels.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!(
                    "pixel value {v} at flat index {i} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Validates a requested square resolution for generated data.
pub fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Config(format!(
            "resolution {resolution} is below the minimum of {MIN_RESOLUTION}"
        )));
    }
    Ok(())
}
