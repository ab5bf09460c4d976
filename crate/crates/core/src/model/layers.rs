//! Forward and backward kernels for the layers the network is built from.
//! Feature maps are channel-first `C × H × W` in standard layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis};

use crate::real::Real;

/// Upper bound on im2col buffer elements when no trace is kept.
const MAX_COLS_ELEMENTS: usize = 1 << 24;

/// Fills `cols` (`9·C × rows·W`) with the 3×3, padding-1 neighbourhoods of
/// output rows `y0..y0 + rows`.
pub fn im2col_rows<F: Real>(input: ArrayView3<F>, y0: usize, rows: usize, cols: &mut Array2<F>) {
    let (channels, h, w) = input.dim();
    debug_assert_eq!(cols.dim(), (channels * 9, rows * w));
    let src = input.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let zero = F::zero();
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(c * 9 + ky * 3 + kx);
                let dst = row.as_slice_mut().expect("contiguous row");
                for r in 0..rows {
                    let y = y0 + r;
                    let out = &mut dst[r * w..(r + 1) * w];
                    let Some(sy) = (y + ky).checked_sub(1).filter(|sy| *sy < h) else {
                        out.fill(zero);
                        continue;
                    };
                    let line = &plane[sy * w..(sy + 1) * w];
                    match kx {
                        0 => {
                            out[0] = zero;
                            out[1..].copy_from_slice(&line[..w - 1]);
                        }
                        1 => out.copy_from_slice(line),
                        _ => {
                            out[..w - 1].copy_from_slice(&line[1..]);
                            out[w - 1] = zero;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`] over the full image: accumulates column
/// gradients back onto the input positions they were copied from.
pub fn col2im<F: Real>(cols: ArrayView2<F>, channels: usize, h: usize, w: usize) -> Array3<F> {
    let mut out = Array3::<F>::zeros((channels, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    for c in 0..channels {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row(c * 9 + ky * 3 + kx);
                let src = row.as_slice().expect("contiguous row");
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|sy| *sy < h) else {
                        continue;
                    };
                    let line = &mut plane[sy * w..(sy + 1) * w];
                    let g = &src[y * w..(y + 1) * w];
                    match kx {
                        0 => line[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, s)| *d += *s),
                        1 => line.iter_mut().zip(g).for_each(|(d, s)| *d += *s),
                        _ => line[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
    out
}

/// 3×3 convolution (stride 1, padding 1) followed by ReLU.
///
/// `weight2d` is the `C_out × 9·C_in` flattening of a `[C_out, C_in, 3, 3]`
/// kernel. Returns the activated output and, when `keep_cols`, the im2col
/// matrix needed for the weight gradient.
pub fn conv3x3_relu<F: Real>(
    input: ArrayView3<F>,
    weight2d: ArrayView2<F>,
    bias: &[F],
    keep_cols: bool,
) -> (Array3<F>, Option<Array2<F>>) {
    let (channels, h, w) = input.dim();
    let c_out = weight2d.nrows();
    let mut out = Array2::<F>::zeros((c_out, h * w));
    let band = if keep_cols {
        h
    } else {
        (MAX_COLS_ELEMENTS / (channels * 9 * w).max(1)).clamp(1, h)
    };
    let mut kept = None;
    let mut y0 = 0;
    while y0 < h {
        let rows = band.min(h - y0);
        let mut cols = Array2::<F>::zeros((channels * 9, rows * w));
        im2col_rows(input, y0, rows, &mut cols);
        let mut dst = out.slice_mut(s![.., y0 * w..(y0 + rows) * w]);
        general_mat_mul(F::one(), &weight2d, &cols, F::zero(), &mut dst);
        if keep_cols {
            kept = Some(cols);
        }
        y0 += rows;
    }
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| relu(v + b));
    }
    (out.into_shape_with_order((c_out, h, w)).expect("contiguous"), kept)
}

/// Backward pass of [`conv3x3_relu`].
///
/// `grad_out` is the gradient w.r.t. the activated output; it is masked in
/// place by the ReLU derivative. Weight and bias gradients are accumulated;
/// the input gradient is returned only when `need_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_relu_backward<F: Real>(
    mut grad_out: Array3<F>,
    output: &Array3<F>,
    cols: &Array2<F>,
    weight2d: ArrayView2<F>,
    mut grad_weight2d: ArrayViewMut2<F>,
    grad_bias: &mut [F],
    in_channels: usize,
    need_input: bool,
) -> Option<Array3<F>> {
    let (c_out, h, w) = output.dim();
    ndarray::Zip::from(&mut grad_out)
        .and(output)
        .for_each(|g, &o| if o <= F::zero() { *g = F::zero() });
    let g2 = grad_out.into_shape_with_order((c_out, h * w)).expect("contiguous");
    general_mat_mul(F::one(), &g2, &cols.t(), F::one(), &mut grad_weight2d);
    for (gb, row) in grad_bias.iter_mut().zip(g2.axis_iter(Axis(0))) {
        *gb += row.sum();
    }
    need_input.then(|| {
        let mut dcols = Array2::<F>::zeros((in_channels * 9, h * w));
        general_mat_mul(F::one(), &weight2d.t(), &g2, F::zero(), &mut dcols);
        col2im(dcols.view(), in_channels, h, w)
    })
}

#[inline]
pub fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled maps and, per output element, the flat in-plane index
/// of the selected input.
pub fn max_pool2<F: Real>(input: ArrayView3<F>) -> (Array3<F>, Vec<u32>) {
    let (channels, h, w) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<F>::zeros((channels, oh, ow));
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (2 * y) * w + 2 * x;
                let mut best_v = input[[c, 2 * y, 2 * x]];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let v = input[[c, 2 * y + dy, 2 * x + dx]];
                    if v > best_v {
                        best_v = v;
                        best = (2 * y + dy) * w + 2 * x + dx;
                    }
                }
                out[[c, y, x]] = best_v;
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<F: Real>(grad_out: &Array3<F>, arg: &[u32], in_h: usize, in_w: usize) -> Array3<F> {
    let (channels, oh, ow) = grad_out.dim();
    let mut grad_in = Array3::<F>::zeros((channels, in_h, in_w));
    let g = grad_out.as_slice().expect("standard layout");
    let dst = grad_in.as_slice_mut().expect("fresh array");
    for c in 0..channels {
        for i in 0..oh * ow {
            let k = c * oh * ow + i;
            dst[c * in_h * in_w + arg[k] as usize] += g[k];
        }
    }
    grad_in
}

/// Half-open source window `[⌊i·len/out⌋, ⌈(i+1)·len/out⌉)` of output cell `i`.
#[inline]
pub fn adaptive_window(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, ((i + 1) * len).div_ceil(out))
}

/// Adaptive max pooling of one plane to `out × out`, with the flat index of
/// the selected input for every output cell (first maximum in row-major order).
pub fn adaptive_max_pool_with_argmax<F: Real>(map: ArrayView2<F>, out: usize) -> (Array2<F>, Vec<u32>) {
    let (h, w) = map.dim();
    let cols: Vec<_> = (0..out).map(|j| adaptive_window(j, w, out)).collect();
    let mut pooled = Array2::<F>::zeros((out, out));
    let mut arg = Vec::with_capacity(out * out);
    for i in 0..out {
        let (r0, r1) = adaptive_window(i, h, out);
        for (j, &(c0, c1)) in cols.iter().enumerate() {
            let mut best = r0 * w + c0;
            let mut best_v = map[[r0, c0]];
            for r in r0..r1 {
                for c in c0..c1 {
                    let v = map[[r, c]];
                    if v > best_v {
                        best_v = v;
                        best = r * w + c;
                    }
                }
            }
            pooled[[i, j]] = best_v;
            arg.push(best as u32);
        }
    }
    (pooled, arg)
}
