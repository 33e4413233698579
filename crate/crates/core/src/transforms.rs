//! Pinhole projection, patch compositing, and the EoT transform family.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, PixelRect};
use crate::patch::{quantize_value, Patch};
use crate::rng::RngStream;

pub const MAX_SHIFT_PX: i32 = 5;
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.9, 1.1);
pub const CONTRAST_SHIFT_RANGE: (f64, f64) = (-0.05, 0.05);

/// Forward-facing pinhole camera with square pixels and a centered principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub image_width: u32,
    pub image_height: u32,
    /// Degrees, in (0, 180).
    pub horizontal_fov: f64,
    /// Height of the optical center above the road, meters.
    #[serde(default = "default_camera_height")]
    pub height_above_ground: f64,
}

fn default_camera_height() -> f64 {
    1.5
}

impl CameraModel {
    pub fn new(image_width: u32, image_height: u32, horizontal_fov: f64) -> Result<Self> {
        let cam = Self { image_width, image_height, horizontal_fov, height_above_ground: default_camera_height() };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::config("camera.image_width/image_height", "must be positive"));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < 180.0) {
            return Err(Error::config("camera.horizontal_fov", "must lie strictly between 0 and 180 degrees"));
        }
        let f = self.focal_px();
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::config("camera.horizontal_fov", "gives a non-finite focal length"));
        }
        Ok(())
    }

    /// Focal length in pixels: `W / (2·tan(hfov/2))`.
    pub fn focal_px(&self) -> f64 {
        self.image_width as f64 / (2.0 * (self.horizontal_fov.to_radians() / 2.0).tan())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.image_width as f64 / 2.0, self.image_height as f64 / 2.0)
    }

    /// Same optics at a different raster size.
    pub fn with_resolution(&self, width: u32, height: u32) -> Self {
        Self { image_width: width, image_height: height, ..*self }
    }
}

/// Where a planar object sits relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchPlacement {
    /// Signed offset of the object center from the camera axis; positive is right.
    pub mount_center_lateral: f64,
    /// Height of the object center above the road.
    pub mount_height: f64,
    /// Along the camera axis; must be positive.
    pub distance: f64,
}

impl PatchPlacement {
    pub fn at_distance(&self, distance: f64) -> Self {
        Self { distance, ..*self }
    }
}

/// Projected rectangle of a fronto-parallel `phys_w × phys_h` object.
pub fn project_rect(cam: &CameraModel, place: &PatchPlacement, phys_w: f64, phys_h: f64) -> Result<PixelRect> {
    if !(place.distance > 0.0) || !place.distance.is_finite() {
        return Err(Error::InvalidArgument(format!("distance must be positive, got {}", place.distance)));
    }
    let f = cam.focal_px();
    let (cx, cy) = cam.principal_point();
    let w = (f * phys_w / place.distance).round();
    let h = (f * phys_h / place.distance).round();
    let u = cx + f * place.mount_center_lateral / place.distance;
    let v = cy - f * (place.mount_height - cam.height_above_ground) / place.distance;
    let x = (u - w / 2.0).round();
    let y = (v - h / 2.0).round();
    Ok(PixelRect::new(x as i64, y as i64, w.max(0.0) as u32, h.max(0.0) as u32))
}

/// Pixel rectangle the patch occupies at `place.distance`.
pub fn project_patch_rect(cam: &CameraModel, place: &PatchPlacement, patch: &Patch) -> Result<PixelRect> {
    project_rect(cam, place, patch.physical_width(), patch.physical_height())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composite {
    pub image: ImageBuffer,
    /// False when no part of the rectangle lands on the frame.
    pub visible: bool,
}

/// Quantizes the patch, resamples it bilinearly onto `rect` (corner-aligned),
/// and overwrites the on-frame part of `rect` in a copy of `frame`.
pub fn composite_patch(frame: &ImageBuffer, patch: &Patch, rect: PixelRect) -> Composite {
    let mut image = frame.clone();
    let visible = composite_into(&mut image, patch, rect);
    Composite { image, visible }
}

/// In-place variant of [`composite_patch`]; returns visibility.
pub fn composite_into(image: &mut ImageBuffer, patch: &Patch, rect: PixelRect) -> bool {
    let Some(clip) = rect.clip_to(image.width(), image.height()) else {
        return false;
    };
    let pw = patch.width() as usize;
    let ph = patch.height() as usize;
    let scale = |out_len: u32, src_len: usize| -> f64 {
        if out_len <= 1 {
            0.0
        } else {
            (src_len as f64 - 1.0) / (out_len as f64 - 1.0)
        }
    };
    let sx_scale = scale(rect.width, pw);
    let sy_scale = scale(rect.height, ph);
    let src_coord = |local: i64, out_len: u32, src_len: usize, s: f64| -> f64 {
        if out_len <= 1 {
            (src_len as f64 - 1.0) / 2.0
        } else {
            local as f64 * s
        }
    };
    let vals = patch.values();
    let q = |x: usize, y: usize, c: usize| quantize_value(vals[(y * pw + x) * 3 + c]) as f64;

    for y in clip.y..clip.bottom() {
        let sy = src_coord(y - rect.y, rect.height, ph, sy_scale);
        let y0 = (sy.floor() as usize).min(ph - 1);
        let y1 = (y0 + 1).min(ph - 1);
        let fy = sy - y0 as f64;
        for x in clip.x..clip.right() {
            let sx = src_coord(x - rect.x, rect.width, pw, sx_scale);
            let x0 = (sx.floor() as usize).min(pw - 1);
            let x1 = (x0 + 1).min(pw - 1);
            let fx = sx - x0 as f64;
            let mut rgb = [0u8; 3];
            for (c, out) in rgb.iter_mut().enumerate() {
                let top = q(x0, y0, c) * (1.0 - fx) + q(x1, y0, c) * fx;
                let bottom = q(x0, y1, c) * (1.0 - fx) + q(x1, y1, c) * fx;
                *out = quantize_value(top * (1.0 - fy) + bottom * fy);
            }
            image.set_pixel(x as u32, y as u32, rgb);
        }
    }
    true
}

/// One draw from the EoT distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSample {
    pub dx: i32,
    pub dy: i32,
    pub brightness: f64,
    pub contrast_shift: f64,
}

impl TransformSample {
    pub const IDENTITY: TransformSample = TransformSample { dx: 0, dy: 0, brightness: 1.0, contrast_shift: 0.0 };

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let dx = rng.random_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX);
        let dy = rng.random_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX);
        let brightness = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
        let contrast_shift = rng.random_range(CONTRAST_SHIFT_RANGE.0..=CONTRAST_SHIFT_RANGE.1);
        Self { dx, dy, brightness, contrast_shift }
    }

    /// Per-intensity photometric map `round(255·clip(b·p/255 + c, 0, 1))`.
    fn lut(&self) -> [u8; 256] {
        let mut lut = [0u8; 256];
        for (v, out) in lut.iter_mut().enumerate() {
            let p = v as f64 / 255.0;
            let mapped = (self.brightness * p + self.contrast_shift).clamp(0.0, 1.0);
            *out = quantize_value(mapped * 255.0);
        }
        lut
    }
}

/// First sample of `stream`.
pub fn sample_transform(stream: &RngStream) -> TransformSample {
    TransformSample::draw(&mut stream.rng())
}

/// Translates by `(dx, dy)` with replicate-edge fill, then applies
/// brightness and contrast shift in normalized intensity.
pub fn apply_transform(img: &ImageBuffer, t: &TransformSample) -> ImageBuffer {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let lut = t.lut();
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        let sy = (y - t.dy as i64).clamp(0, h - 1);
        let row = (sy * w) as usize * 3;
        for x in 0..w {
            let sx = (x - t.dx as i64).clamp(0, w - 1);
            let o = row + sx as usize * 3;
            data.push(lut[src[o] as usize]);
            data.push(lut[src[o + 1] as usize]);
            data.push(lut[src[o + 2] as usize]);
        }
    }
    ImageBuffer::new(img.width(), img.height(), data).expect("same geometry")
}
