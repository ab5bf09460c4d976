use std::path::Path;

use image::GrayImage;

use crate::datamodel::{LesionClass, LESION_ORDER, N_LESIONS};
use crate::error::{Error, Result};

/// Which gray level marks lesion pixels in a mask file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolarity {
    /// Lesion pixels are dark (< 128) on a white background.
    #[default]
    DarkForeground,
    /// Lesion pixels are bright (≥ 128) on a black background.
    BrightForeground,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_gray(img: &GrayImage, polarity: MaskPolarity) -> Self {
        let bits = img
            .pixels()
            .map(|p| match polarity {
                MaskPolarity::DarkForeground => p[0] < 128,
                MaskPolarity::BrightForeground => p[0] >= 128,
            })
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            bits,
        }
    }

    pub fn load(path: &Path, polarity: MaskPolarity) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_gray(&img.to_luma8(), polarity))
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn foreground(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Per-class pixel masks for one retinography; absent classes are `None`.
#[derive(Clone, Debug, Default)]
pub struct LesionMaskSet {
    pub width: usize,
    pub height: usize,
    pub masks: [Option<BinaryMask>; N_LESIONS],
}

impl LesionMaskSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            masks: Default::default(),
        }
    }

    pub fn with(mut self, class: LesionClass, mask: BinaryMask) -> Self {
        self.masks[class.index()] = Some(mask);
        self
    }
}

/// Reduces pixel masks to image-level labels: a class is present when its mask
/// has at least `min_lesion_pixels` foreground pixels.
pub fn derive_lesion_labels(masks: &LesionMaskSet, min_lesion_pixels: usize) -> Result<[u8; N_LESIONS]> {
    let mut labels = [0u8; N_LESIONS];
    for class in LESION_ORDER {
        let Some(mask) = &masks.masks[class.index()] else {
            continue;
        };
        if mask.dims() != (masks.width, masks.height) {
            let (w, h) = mask.dims();
            return Err(Error::Shape(format!(
                "{class} mask is {w}x{h}, image is {}x{}",
                masks.width, masks.height
            )));
        }
        labels[class.index()] = u8::from(mask.foreground() >= min_lesion_pixels.max(1));
    }
    Ok(labels)
}
