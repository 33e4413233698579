//! Continuous patch parameters and their physical-realizability constraints.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::{tags, RngStream};
use crate::SCHEMA_VERSION;

pub const MIN_INTENSITY: f64 = 0.0;
pub const MAX_INTENSITY: f64 = 255.0;

const INIT_MEAN: f64 = 127.5;
const INIT_SCALE: f64 = 50.0;

/// Optimizable patch: `width × height × 3` intensities in `[0, 255]`,
/// row-major RGB, plus its printed size in meters.
///
/// All constructors clip, so a `Patch` always satisfies the range constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: u32,
    height: u32,
    values: Vec<f64>,
    physical_width: f64,
    physical_height: f64,
}

#[inline]
fn clip_value(v: f64) -> f64 {
    // NaN maps to the lower bound so the range invariant survives bad updates.
    if v.is_nan() {
        MIN_INTENSITY
    } else {
        v.clamp(MIN_INTENSITY, MAX_INTENSITY)
    }
}

/// Rounds half away from zero and clamps into the byte range.
#[inline]
pub fn quantize_value(v: f64) -> u8 {
    clip_value(v).round() as u8
}

impl Patch {
    /// Builds a patch from raw values, hard-clipping each into `[0, 255]`.
    pub fn clipped(
        width: u32,
        height: u32,
        mut values: Vec<f64>,
        physical_width: f64,
        physical_height: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(physical_width > 0.0 && physical_height > 0.0)
            || !physical_width.is_finite()
            || !physical_height.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "physical size must be positive, got {physical_width}x{physical_height} m"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "patch has {} values, expected {expected}",
                values.len()
            )));
        }
        values.iter_mut().for_each(|v| *v = clip_value(*v));
        Ok(Self { width, height, values, physical_width, physical_height })
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3], phys_w: f64, phys_h: f64) -> Result<Self> {
        let n = width as usize * height as usize;
        let values = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::clipped(width, height, values, phys_w, phys_h)
    }

    /// Lifts an 8-bit image to a patch with the given physical size.
    pub fn from_image(img: &ImageBuffer, phys_w: f64, phys_h: f64) -> Result<Self> {
        let values = img.data().iter().map(|&b| b as f64).collect();
        Self::clipped(img.width(), img.height(), values, phys_w, phys_h)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn physical_width(&self) -> f64 {
        self.physical_width
    }

    pub fn physical_height(&self) -> f64 {
        self.physical_height
    }

    /// Same geometry, new values (clipped).
    pub fn with_values(&self, mut values: Vec<f64>) -> Patch {
        assert_eq!(values.len(), self.values.len(), "patch value count changed");
        values.iter_mut().for_each(|v| *v = clip_value(*v));
        Patch {
            width: self.width,
            height: self.height,
            values,
            physical_width: self.physical_width,
            physical_height: self.physical_height,
        }
    }

    #[inline]
    pub fn value(&self, x: u32, y: u32, channel: usize) -> f64 {
        self.values[(y as usize * self.width as usize + x as usize) * 3 + channel]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        quantize_patch(self).save_png(path)
    }

    /// Writes `<stem>.png` and the `<stem>.json` sidecar next to it.
    pub fn export(&self, png_path: &Path, generation: serde_json::Value) -> Result<()> {
        self.save_png(png_path)?;
        let sidecar = PatchSidecar {
            schema_version: SCHEMA_VERSION,
            width: self.width,
            height: self.height,
            physical_width_m: self.physical_width,
            physical_height_m: self.physical_height,
            generation,
        };
        let json_path = png_path.with_extension("json");
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

/// Metadata stored next to every exported patch PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSidecar {
    pub schema_version: u32,
    pub width: u32,
    pub height: u32,
    pub physical_width_m: f64,
    pub physical_height_m: f64,
    #[serde(default)]
    pub generation: serde_json::Value,
}

/// Gaussian-noise initialization: `clip(127.5 + 50·z)` with `z ~ N(0, 1)`
/// drawn from the seed's patch-init stream.
pub fn new_random_patch(seed: u64, width: u32, height: u32, phys_w: f64, phys_h: f64) -> Result<Patch> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch dimensions must be positive, got {width}x{height}"
        )));
    }
    let mut rng = RngStream::new(seed, 0).derive(&[tags::PATCH_INIT]).rng();
    let n = width as usize * height as usize * 3;
    let values = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            INIT_MEAN + INIT_SCALE * z
        })
        .collect();
    Patch::clipped(width, height, values, phys_w, phys_h)
}

/// Hard clip into `[0, 255]`. Idempotent.
pub fn clip_patch(p: &Patch) -> Patch {
    p.with_values(p.values.clone())
}

/// Rounds every value half away from zero into an 8-bit image.
pub fn quantize_patch(p: &Patch) -> ImageBuffer {
    let data = p.values.iter().map(|&v| quantize_value(v)).collect();
    ImageBuffer::new(p.width, p.height, data).expect("patch geometry is valid")
}
