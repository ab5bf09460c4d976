use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};

use crate::datamodel::{ImageTensor, PredictionRecord, N_OUTPUTS};
use crate::error::{Error, Result};
use crate::model::layers::{
    adaptive_max_pool_with_argmax, conv3x3_relu, conv3x3_relu_backward, max_pool2, max_pool2_backward, relu, sigmoid,
};
use crate::model::params::ModelParams;
use crate::real::Real;

/// Converts an image to the model's element type, applying input
/// normalization when the parameters carry it.
pub fn prepare_input<F: Real>(params: &ModelParams<F>, image: &ImageTensor) -> Result<Array3<F>> {
    let min = params.config.min_input_side();
    if image.height() < min || image.width() < min {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than the {min}x{min} minimum for this trunk",
            image.width(),
            image.height()
        )));
    }
    let mut x = image.data().mapv(|v| F::of(v as f64));
    if let Some(norm) = &params.normalization {
        for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (F::of(norm.mean[c] as f64), F::of(norm.std[c] as f64));
            plane.mapv_inplace(|v| (v - m) / s);
        }
    }
    Ok(x)
}

struct ConvTrace<F> {
    output: Array3<F>,
    cols: Array2<F>,
}

struct PoolTrace {
    arg: Vec<u32>,
    in_h: usize,
    in_w: usize,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct Trace<F> {
    convs: Vec<Vec<ConvTrace<F>>>,
    pools: Vec<PoolTrace>,
    maps: Array3<F>,
    pooled: Array3<F>,
    pooled_arg: Vec<Vec<u32>>,
    pub logits: Array1<F>,
    pub probabilities: Array1<F>,
}

impl<F: Real> Trace<F> {
    pub fn activation_maps(&self) -> &Array3<F> {
        &self.maps
    }

    pub fn pooled(&self) -> &Array3<F> {
        &self.pooled
    }

    pub fn features(&self) -> &Array3<F> {
        &self.convs.last().and_then(|b| b.last()).expect("non-empty trunk").output
    }

    /// ReLU on/off states and max-pool choices of this pass. Two parameter
    /// settings with equal regions lie on the same smooth piece of the network.
    pub fn region(&self) -> Vec<u32> {
        let positive = |a: &Array3<F>| a.iter().map(|v| u32::from(*v > F::zero())).collect::<Vec<_>>();
        let mut out = Vec::new();
        for c in self.convs.iter().flatten() {
            out.extend(positive(&c.output));
        }
        for p in &self.pools {
            out.extend(&p.arg);
        }
        out.extend(positive(&self.maps));
        for a in &self.pooled_arg {
            out.extend(a);
        }
        out
    }
}

fn run_trunk<F: Real>(
    params: &ModelParams<F>,
    input: Array3<F>,
    keep: bool,
) -> (Array3<F>, Vec<Vec<ConvTrace<F>>>, Vec<PoolTrace>) {
    let mut x = input;
    let mut convs = Vec::new();
    let mut pools = Vec::new();
    let last = params.trunk.len() - 1;
    for (b, block) in params.trunk.iter().enumerate() {
        let mut block_trace = Vec::new();
        for conv in block {
            let (out, cols) = conv3x3_relu(
                x.view(),
                conv.weight2d(),
                conv.bias.as_slice().expect("standard layout"),
                keep,
            );
            if let Some(cols) = cols {
                block_trace.push(ConvTrace {
                    output: out.clone(),
                    cols,
                });
            }
            x = out;
        }
        convs.push(block_trace);
        if b < last {
            let (_, in_h, in_w) = x.dim();
            let (pooled, arg) = max_pool2(x.view());
            if keep {
                pools.push(PoolTrace { arg, in_h, in_w });
            }
            x = pooled;
        }
    }
    (x, convs, pools)
}

/// Convolutional trunk: every 3×3 conv is followed by ReLU and every block
/// except the last by 2×2 max pooling.
pub fn trunk_forward<F: Real>(params: &ModelParams<F>, image: &ImageTensor) -> Result<Array3<F>> {
    let input = prepare_input(params, image)?;
    Ok(run_trunk(params, input, false).0)
}

struct HeadOutput<F> {
    maps: Array3<F>,
    pooled: Array3<F>,
    arg: Vec<Vec<u32>>,
}

fn run_head<F: Real>(params: &ModelParams<F>, features: ArrayView3<F>) -> Result<HeadOutput<F>> {
    let (c, h, w) = features.dim();
    if c != params.head.in_channels() {
        return Err(Error::Shape(format!(
            "head expects {} feature channels, got {c}",
            params.head.in_channels()
        )));
    }
    let n = params.config.n_lesions;
    let p = params.config.pool_output;
    let f2 = features
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h * w))
        .expect("contiguous");
    let mut pre = params.head.weight2d().dot(&f2);
    for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(params.head.bias.iter()) {
        row.mapv_inplace(|v| relu(v + b));
    }
    let maps = pre.into_shape_with_order((n, h, w)).expect("contiguous");
    let mut pooled = Array3::zeros((n, p, p));
    let mut arg = Vec::with_capacity(n);
    for (ch, mut dst) in pooled.axis_iter_mut(Axis(0)).enumerate() {
        let (pm, a) = adaptive_max_pool_with_argmax(maps.index_axis(Axis(0), ch), p);
        dst.assign(&pm);
        arg.push(a);
    }
    Ok(HeadOutput { maps, pooled, arg })
}

/// 1×1 convolution with ReLU to `N` activation maps, then adaptive max
/// pooling of each map to `pool_output × pool_output`.
pub fn head_forward<F: Real>(params: &ModelParams<F>, features: ArrayView3<F>) -> Result<(Array3<F>, Array3<F>)> {
    let out = run_head(params, features)?;
    Ok((out.maps, out.pooled))
}

fn dense<F: Real>(params: &ModelParams<F>, pooled: &Array3<F>) -> Array1<F> {
    let flat = pooled.as_slice().expect("standard layout");
    let flat = ArrayView1::from(flat);
    params.fc.weight.dot(&flat) + &params.fc.bias
}

/// Full forward pass keeping everything needed by [`backward`].
pub fn forward_trace<F: Real>(params: &ModelParams<F>, image: &ImageTensor) -> Result<Trace<F>> {
    let input = prepare_input(params, image)?;
    let (features, convs, pools) = run_trunk(params, input, true);
    let head = run_head(params, features.view())?;
    let logits = dense(params, &head.pooled);
    let probabilities = logits.mapv(sigmoid);
    Ok(Trace {
        convs,
        pools,
        maps: head.maps,
        pooled: head.pooled,
        pooled_arg: head.arg,
        logits,
        probabilities,
    })
}

/// Image-level probabilities (index 0 = diagnosis) and the lesion activation maps.
pub fn classify<F: Real>(params: &ModelParams<F>, sample_id: &str, image: &ImageTensor) -> Result<PredictionRecord> {
    if params.config.n_lesions + 1 != N_OUTPUTS {
        return Err(Error::Shape(format!(
            "prediction records hold {N_OUTPUTS} outputs, model has {}",
            params.config.n_lesions + 1
        )));
    }
    let features = trunk_forward(params, image)?;
    let head = run_head(params, features.view())?;
    let logits = dense(params, &head.pooled);
    let mut probabilities = [0.0; N_OUTPUTS];
    for (p, z) in probabilities.iter_mut().zip(logits.iter()) {
        *p = sigmoid(z.as_f64());
    }
    let maps = head
        .maps
        .axis_iter(Axis(0))
        .map(|m| m.mapv(|v| v.as_f64() as f32))
        .collect();
    Ok(PredictionRecord {
        sample_id: sample_id.to_string(),
        probabilities,
        activation_maps: Some(maps),
    })
}

/// Gradients of a scalar loss w.r.t. every parameter, given the loss gradient
/// w.r.t. the output logits.
pub fn backward<F: Real>(params: &ModelParams<F>, trace: &Trace<F>, grad_logits: ArrayView1<F>) -> ModelParams<F> {
    let mut grads = params.zeros_like();
    let n = params.config.n_lesions;
    let p2 = params.config.pool_output * params.config.pool_output;

    // dense layer
    let flat = ArrayView1::from(trace.pooled.as_slice().expect("standard layout"));
    for (mut row, &g) in grads.fc.weight.axis_iter_mut(Axis(0)).zip(grad_logits.iter()) {
        row.scaled_add(g, &flat);
    }
    grads.fc.bias.assign(&grad_logits);
    let grad_flat = params.fc.weight.t().dot(&grad_logits);

    // adaptive max pooling routes each pooled gradient to its argmax
    let (_, h, w) = trace.maps.dim();
    let mut grad_maps = Array3::<F>::zeros((n, h, w));
    {
        let gm = grad_maps.as_slice_mut().expect("fresh array");
        for ch in 0..n {
            let plane = &mut gm[ch * h * w..(ch + 1) * h * w];
            for (k, &a) in trace.pooled_arg[ch].iter().enumerate() {
                plane[a as usize] += grad_flat[ch * p2 + k];
            }
        }
    }
    ndarray::Zip::from(&mut grad_maps)
        .and(&trace.maps)
        .for_each(|g, &m| if m <= F::zero() { *g = F::zero() });

    // 1×1 head convolution
    let features = trace.features();
    let c = features.dim().0;
    let f2 = features.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let gpre = grad_maps.into_shape_with_order((n, h * w)).expect("contiguous");
    let mut gw = grads.head.weight2d_mut();
    ndarray::linalg::general_mat_mul(F::one(), &gpre, &f2.t(), F::one(), &mut gw);
    for (gb, row) in grads.head.bias.iter_mut().zip(gpre.axis_iter(Axis(0))) {
        *gb += row.sum();
    }
    let mut grad = params
        .head
        .weight2d()
        .t()
        .dot(&gpre)
        .into_shape_with_order((c, h, w))
        .expect("contiguous");

    // trunk, last block first
    for b in (0..params.trunk.len()).rev() {
        for ci in (0..params.trunk[b].len()).rev() {
            let conv = &params.trunk[b][ci];
            let tr = &trace.convs[b][ci];
            let first = b == 0 && ci == 0;
            let gconv = &mut grads.trunk[b][ci];
            let mut gb = std::mem::take(&mut gconv.bias);
            let g_in = conv3x3_relu_backward(
                grad,
                &tr.output,
                &tr.cols,
                conv.weight2d(),
                gconv.weight2d_mut(),
                gb.as_slice_mut().expect("standard layout"),
                conv.in_channels(),
                !first,
            );
            gconv.bias = gb;
            match g_in {
                Some(g) => grad = g,
                None => return grads,
            }
        }
        if b > 0 {
            let pool = &trace.pools[b - 1];
            grad = max_pool2_backward(&grad, &pool.arg, pool.in_h, pool.in_w);
        }
    }
    grads
}
