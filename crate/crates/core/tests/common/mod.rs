#![allow(dead_code)]

use amddx_core::datamodel::{ImageTensor, Sample};
use amddx_core::model::{classify, forward_trace, init_params, ModelConfig, ModelParams};
use amddx_core::training::{loss_gradients, total_loss, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        block_channels: vec![vec![4, 4], vec![8, 8]],
        n_lesions: 5,
        pool_output: 31,
    }
}

pub fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(ndarray::Array3::from_shape_fn((3, h, w), |_| rng.random::<f32>())).unwrap()
}

/// He-initialised tiny model with small random biases, so that no ReLU
/// starts out exactly at zero.
pub fn perturbed_params(seed: u64) -> ModelParams<f64> {
    let mut p = init_params::<f64>(&tiny_config(), seed, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for s in p.flat_slices_mut() {
        if s.len() <= 8 {
            for v in s.iter_mut() {
                *v = rng.random_range(-0.05..0.1);
            }
        }
    }
    p
}

pub fn labelled(diagnosis: u8, lesions: Option<Vec<u8>>) -> Sample {
    Sample {
        sample_id: "g".into(),
        image_ref: String::new(),
        diagnosis: Some(diagnosis),
        lesions,
        eye_group_id: "g".into(),
    }
}

fn loss_at(params: &ModelParams<f64>, image: &ImageTensor, sample: &Sample, cfg: &LossConfig) -> f64 {
    let pred = classify(params, &sample.sample_id, image).unwrap();
    total_loss(&pred, sample, cfg).unwrap().total
}

pub struct GradientCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose ±h step crossed a ReLU or max-pool switch.
    pub skipped: usize,
}

/// Central finite differences with step `h` on `count` coordinates, drawn by
/// picking a tensor uniformly and then an element within it. Coordinates where
/// the step leaves the current linear region of the network have no derivative
/// to compare against and are redrawn, up to `count` times.
pub fn gradient_check(
    params: &ModelParams<f64>,
    image: &ImageTensor,
    sample: &Sample,
    cfg: &LossConfig,
    count: usize,
    h: f64,
    seed: u64,
) -> GradientCheck {
    let (_, grads) = loss_gradients(params, image, sample, cfg).unwrap();
    let analytic: Vec<Vec<f64>> = grads.flat_slices().iter().map(|s| s.to_vec()).collect();
    let region = forward_trace(params, image).unwrap().region();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradientCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    while out.checked < count && out.skipped <= count {
        let t = rng.random_range(0..analytic.len());
        let i = rng.random_range(0..analytic[t].len());
        let mut plus = params.clone();
        plus.flat_slices_mut()[t][i] += h;
        let mut minus = params.clone();
        minus.flat_slices_mut()[t][i] -= h;
        let same = |p: &ModelParams<f64>| forward_trace(p, image).unwrap().region() == region;
        if !same(&plus) || !same(&minus) {
            out.skipped += 1;
            continue;
        }
        let numeric = (loss_at(&plus, image, sample, cfg) - loss_at(&minus, image, sample, cfg)) / (2.0 * h);
        let a = analytic[t][i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-10 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        out.worst = out.worst.max(err);
        out.checked += 1;
    }
    out
}
