use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::datamodel::ImageTensor;
use crate::error::{Error, Result};

/// Height that keeps the aspect ratio when scaling `width` to `target_width`.
pub fn scaled_height(height: usize, width: usize, target_width: usize) -> usize {
    let exact = height as f64 * target_width as f64 / width as f64;
    (exact.round() as usize).max(ImageTensor::MIN_SIDE)
}

/// Rescales to `target_width` with bilinear interpolation, preserving aspect ratio.
pub fn resize_to_width(image: &ImageTensor, target_width: usize) -> Result<ImageTensor> {
    if target_width < ImageTensor::MIN_SIDE {
        return Err(Error::invalid(format!(
            "target width {target_width} below minimum {}",
            ImageTensor::MIN_SIDE
        )));
    }
    let height = scaled_height(image.height(), image.width(), target_width);
    if height == image.height() && target_width == image.width() {
        return Ok(image.clone());
    }
    ImageTensor::new(resize_channels(image.data(), height, target_width))
}

pub fn resize_channels(data: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let mut out = Array3::zeros((data.dim().0, out_h, out_w));
    for (src, mut dst) in data.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        dst.assign(&resize_plane(src, out_h, out_w));
    }
    out
}

/// Bilinear resampling of one plane with pixel-center alignment and edge clamping.
pub fn resize_plane(src: ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    let ys: Vec<_> = (0..out_h).map(|y| source_coord(y, in_h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, in_w, out_w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, (s - lo as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_to_720() {
        assert_eq!(scaled_height(1444, 1444, 720), 720);
    }

    #[test]
    fn non_square_rounding() {
        // 2056 * 720 / 2124 = 696.949...
        assert_eq!(scaled_height(2056, 2124, 720), 697);
        let img = ImageTensor::filled(2056 / 8, 2124 / 8, 0.25);
        let out = resize_to_width(&img, 90).unwrap();
        assert_eq!((out.width(), out.height()), (90, 87));
    }

    #[test]
    fn same_width_is_identity() {
        let img = ImageTensor::from_fn(40, 48, |c, y, x| ((c + y * 3 + x * 5) % 17) as f32 / 16.0);
        assert_eq!(resize_to_width(&img, 48).unwrap(), img);
        // the interpolation itself is also exact at unit scale
        assert_eq!(resize_channels(img.data(), 40, 48), *img.data());
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageTensor::filled(64, 100, 0.375);
        let out = resize_to_width(&img, 37).unwrap();
        assert!(out.data().iter().all(|v| (*v - 0.375).abs() < 1e-6));
    }

    #[test]
    fn rejects_tiny_target() {
        assert!(resize_to_width(&ImageTensor::filled(40, 40, 0.0), 31).is_err());
    }

    proptest! {
        #[test]
        fn aspect_ratio_within_one_pixel(h in 32usize..3000, w in 32usize..3000, t in 32usize..1500) {
            let got = scaled_height(h, w, t) as f64;
            let exact = (h as f64 * t as f64 / w as f64).max(32.0);
            prop_assert!((got - exact).abs() <= 1.0);
        }
    }
}
