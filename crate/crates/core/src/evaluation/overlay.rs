use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;

use crate::datamodel::{ImageTensor, PredictionRecord, LESION_ORDER};
use crate::error::{Error, Result};
use crate::ingestion::resize_plane;

/// Maps scaled to [0, 1] with one min and max shared by all of them. Constant
/// maps become all zero.
pub fn normalize_shared(maps: &[Array2<f32>]) -> Vec<Array2<f32>> {
    let (lo, hi) = maps
        .iter()
        .flat_map(|m| m.iter())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    maps.iter()
        .map(|m| {
            if range > 0.0 {
                m.mapv(|v| (v - lo) / range)
            } else {
                Array2::zeros(m.dim())
            }
        })
        .collect()
}

/// Image coordinates `(x, y)` of the center of the map cell holding the
/// largest activation (first maximum in row-major order), for a map computed
/// from an image of `height × width` pixels.
pub fn peak_location(map: &Array2<f32>, height: usize, width: usize) -> (f32, f32) {
    let (mh, mw) = map.dim();
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in map.iter().enumerate() {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    let (r, c) = (best.0 / mw, best.0 % mw);
    (
        (c as f32 + 0.5) * width as f32 / mw as f32,
        (r as f32 + 0.5) * height as f32 / mh as f32,
    )
}

/// Piecewise-linear jet colormap.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

const OVERLAY_ALPHA: f32 = 0.5;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<id>_<class>_map.png` (grayscale, map resolution) and
/// `<id>_<class>_overlay.png` (jet map upsampled onto the image) for every
/// lesion channel. Returns the written paths.
pub fn export_activation_overlay(image: &ImageTensor, prediction: &PredictionRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = prediction
        .activation_maps
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("prediction for {} carries no activation maps", prediction.sample_id)))?;
    if maps.len() != LESION_ORDER.len() {
        return Err(Error::Shape(format!(
            "{} activation maps for {} lesion classes",
            maps.len(),
            LESION_ORDER.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (h, w) = (image.height(), image.width());
    let rgb = image.data();
    let mut written = Vec::new();
    for (class, map) in LESION_ORDER.iter().zip(normalize_shared(maps)) {
        let stem = format!("{}_{}", prediction.sample_id, class.name());
        let (mh, mw) = map.dim();
        let gray = GrayImage::from_fn(mw as u32, mh as u32, |x, y| Luma([to_u8(map[[y as usize, x as usize]])]));
        let path = out_dir.join(format!("{stem}_map.png"));
        save(&path, gray.save(&path))?;
        written.push(path);

        let up = resize_plane(map.view(), h, w);
        let overlay = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let color = jet(up[[y, x]]);
            Rgb(std::array::from_fn(|c| {
                to_u8((1.0 - OVERLAY_ALPHA) * rgb[[c, y, x]] + OVERLAY_ALPHA * color[c])
            }))
        });
        let path = out_dir.join(format!("{stem}_overlay.png"));
        save(&path, overlay.save(&path))?;
        written.push(path);
    }
    Ok(written)
}
