//! Seeded online augmentation: color/intensity jitter, a slight affine warp, flips.

use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ImageTensor;
use crate::error::{Error, Result};

/// Ranges are `[min, max]`, sampled uniformly; flips are probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub brightness_delta: [f32; 2],
    pub color_scale: [f32; 2],
    pub scale_range: [f32; 2],
    pub shear_degrees: [f32; 2],
    pub rotation_degrees: [f32; 2],
    pub flip_horizontal: f32,
    pub flip_vertical: f32,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            brightness_delta: [-0.1, 0.1],
            color_scale: [0.9, 1.1],
            scale_range: [0.95, 1.05],
            shear_degrees: [-5.0, 5.0],
            rotation_degrees: [-10.0, 10.0],
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Every transform collapsed to the identity.
    pub fn identity() -> Self {
        Self {
            brightness_delta: [0.0, 0.0],
            color_scale: [1.0, 1.0],
            scale_range: [1.0, 1.0],
            shear_degrees: [0.0, 0.0],
            rotation_degrees: [0.0, 0.0],
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("brightness_delta", self.brightness_delta),
            ("color_scale", self.color_scale),
            ("scale_range", self.scale_range),
            ("shear_degrees", self.shear_degrees),
            ("rotation_degrees", self.rotation_degrees),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("augmentation {name} [{lo}, {hi}] is not a finite range")));
            }
        }
        if self.scale_range[0] <= 0.0 {
            return Err(Error::invalid("augmentation scale must be positive"));
        }
        if self.shear_degrees[0] <= -90.0 || self.shear_degrees[1] >= 90.0 {
            return Err(Error::invalid("augmentation shear must stay within (-90, 90) degrees"));
        }
        for (name, p) in [("flip_horizontal", self.flip_horizontal), ("flip_vertical", self.flip_vertical)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("augmentation {name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One concrete draw of the random transform parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationDraw {
    pub brightness: f32,
    pub channel_scale: [f32; 3],
    pub scale: f32,
    pub shear_deg: f32,
    pub rotation_deg: f32,
    pub flip_h: bool,
    pub flip_v: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f32; 2]) -> f32 {
    // always consumes exactly one value so the stream stays aligned
    lo + (hi - lo) * rng.random::<f32>()
}

impl AugmentationDraw {
    pub fn sample<R: Rng + ?Sized>(config: &AugmentationConfig, rng: &mut R) -> Self {
        let brightness = uniform(rng, config.brightness_delta);
        let channel_scale = [
            uniform(rng, config.color_scale),
            uniform(rng, config.color_scale),
            uniform(rng, config.color_scale),
        ];
        let scale = uniform(rng, config.scale_range);
        let shear_deg = uniform(rng, config.shear_degrees);
        let rotation_deg = uniform(rng, config.rotation_degrees);
        let flip_h = rng.random::<f32>() < config.flip_horizontal;
        let flip_v = rng.random::<f32>() < config.flip_vertical;
        Self {
            brightness,
            channel_scale,
            scale,
            shear_deg,
            rotation_deg,
            flip_h,
            flip_v,
        }
    }

    /// Applies color jitter, then the affine warp about the image center, then flips.
    pub fn apply(&self, image: &ImageTensor) -> ImageTensor {
        let mut data = image.data().to_owned();
        if self.brightness != 0.0 || self.channel_scale != [1.0; 3] {
            for (c, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
                let s = self.channel_scale[c];
                plane.mapv_inplace(|v| (v * s + self.brightness).clamp(0.0, 1.0));
            }
        }
        if self.scale != 1.0 || self.shear_deg != 0.0 || self.rotation_deg != 0.0 {
            data = self.warp(&data);
        }
        if self.flip_h {
            data.invert_axis(Axis(2));
        }
        if self.flip_v {
            data.invert_axis(Axis(1));
        }
        ImageTensor::new(data.as_standard_layout().into_owned()).expect("augmentation keeps values in [0, 1]")
    }

    fn warp(&self, src: &Array3<f32>) -> Array3<f32> {
        let (channels, h, w) = src.dim();
        let (sin, cos) = (self.rotation_deg as f64).to_radians().sin_cos();
        let shear = (self.shear_deg as f64).to_radians().tan();
        let s = self.scale as f64;
        // forward = rotation * shear * scale
        let m = [[cos * s, (cos * shear - sin) * s], [sin * s, (sin * shear + cos) * s]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);

        let mut out = Array3::zeros((channels, h, w));
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
                let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                let (x0, y0) = (x0 as isize, y0 as isize);
                for c in 0..channels {
                    let at = |yy: isize, xx: isize| -> f32 {
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            0.0
                        } else {
                            src[[c, yy as usize, xx as usize]]
                        }
                    };
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                    out[[c, y, x]] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
                }
            }
        }
        out
    }
}

/// Draws transform parameters from `rng` and applies them. Labels are never touched.
pub fn augment<R: Rng + ?Sized>(image: &ImageTensor, config: &AugmentationConfig, rng: &mut R) -> ImageTensor {
    AugmentationDraw::sample(config, rng).apply(image)
}
