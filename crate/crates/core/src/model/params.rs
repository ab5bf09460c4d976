use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewD, ArrayViewMut2, ArrayViewMutD};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::real::Real;

/// Per-channel input normalization shipped with pretrained trunk weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<F> {
    /// `[out, in, k, k]`
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Real> ConvParams<F> {
    pub fn zeros(out: usize, inp: usize, k: usize) -> Self {
        Self {
            weight: Array4::zeros((out, inp, k, k)),
            bias: Array1::zeros(out),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn fan_in(&self) -> usize {
        let (_, i, kh, kw) = self.weight.dim();
        i * kh * kw
    }

    /// `out × in·k·k` view for the im2col matrix product.
    pub fn weight2d(&self) -> ArrayView2<'_, F> {
        let rows = self.out_channels();
        let cols = self.fan_in();
        self.weight
            .view()
            .into_shape_with_order((rows, cols))
            .expect("weights are contiguous")
    }

    pub fn weight2d_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let rows = self.out_channels();
        let cols = self.fan_in();
        self.weight
            .view_mut()
            .into_shape_with_order((rows, cols))
            .expect("weights are contiguous")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<F> {
    /// `[out, in]`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// All learnable weights. Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub trunk: Vec<Vec<ConvParams<F>>>,
    pub head: ConvParams<F>,
    pub fc: DenseParams<F>,
    pub normalization: Option<Normalization>,
}

pub fn conv_name(block: usize, conv: usize) -> String {
    format!("block{}_conv{}", block + 1, conv + 1)
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut trunk = Vec::with_capacity(config.block_channels.len());
        let mut in_ch = 3;
        for block in &config.block_channels {
            let mut convs = Vec::with_capacity(block.len());
            for &out in block {
                convs.push(ConvParams::zeros(out, in_ch, 3));
                in_ch = out;
            }
            trunk.push(convs);
        }
        let n = config.n_lesions;
        let fc_in = config.fc_inputs();
        Self {
            config: config.clone(),
            trunk,
            head: ConvParams::zeros(n, in_ch, 1),
            fc: DenseParams {
                weight: Array2::zeros((n + 1, fc_in)),
                bias: Array1::zeros(n + 1),
            },
            normalization: None,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config);
        z.normalization = self.normalization;
        z
    }

    /// Named tensors in a fixed order: trunk convs, head, fc; weight before bias.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        for (b, block) in self.trunk.iter().enumerate() {
            for (c, conv) in block.iter().enumerate() {
                let name = conv_name(b, c);
                out.push((format!("{name}/weight"), conv.weight.view().into_dyn()));
                out.push((format!("{name}/bias"), conv.bias.view().into_dyn()));
            }
        }
        out.push(("head/weight".into(), self.head.weight.view().into_dyn()));
        out.push(("head/bias".into(), self.head.bias.view().into_dyn()));
        out.push(("fc/weight".into(), self.fc.weight.view().into_dyn()));
        out.push(("fc/bias".into(), self.fc.bias.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        for (b, block) in self.trunk.iter_mut().enumerate() {
            for (c, conv) in block.iter_mut().enumerate() {
                let name = conv_name(b, c);
                out.push((format!("{name}/weight"), conv.weight.view_mut().into_dyn()));
                out.push((format!("{name}/bias"), conv.bias.view_mut().into_dyn()));
            }
        }
        out.push(("head/weight".into(), self.head.weight.view_mut().into_dyn()));
        out.push(("head/bias".into(), self.head.bias.view_mut().into_dyn()));
        out.push(("fc/weight".into(), self.fc.weight.view_mut().into_dyn()));
        out.push(("fc/bias".into(), self.fc.bias.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// First tensor containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let conv = |c: &ConvParams<F>| ConvParams {
            weight: c.weight.mapv(|v| G::of(v.as_f64())),
            bias: c.bias.mapv(|v| G::of(v.as_f64())),
        };
        ModelParams {
            config: self.config.clone(),
            trunk: self.trunk.iter().map(|b| b.iter().map(conv).collect()).collect(),
            head: conv(&self.head),
            fc: DenseParams {
                weight: self.fc.weight.mapv(|v| G::of(v.as_f64())),
                bias: self.fc.bias.mapv(|v| G::of(v.as_f64())),
            },
            normalization: self.normalization,
        }
    }

    pub fn flat_slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for conv in self.trunk.iter().flatten().chain(std::iter::once(&self.head)) {
            out.push(conv.weight.as_slice().expect("standard layout"));
            out.push(conv.bias.as_slice().expect("standard layout"));
        }
        out.push(self.fc.weight.as_slice().expect("standard layout"));
        out.push(self.fc.bias.as_slice().expect("standard layout"));
        out
    }

    pub fn flat_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for conv in self.trunk.iter_mut().flatten().chain(std::iter::once(&mut self.head)) {
            out.push(conv.weight.as_slice_mut().expect("standard layout"));
            out.push(conv.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.fc.weight.as_slice_mut().expect("standard layout"));
        out.push(self.fc.bias.as_slice_mut().expect("standard layout"));
        out
    }
}

/// Trunk weights taken from a pretrained archive.
#[derive(Clone, Debug)]
pub struct PretrainedTrunk<F> {
    pub trunk: Vec<Vec<ConvParams<F>>>,
    pub normalization: Option<Normalization>,
}

fn he_uniform<F: Real>(values: &mut [F], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in values {
        *v = F::of(dist.sample(rng));
    }
}

/// Initial parameters.
///
/// The trunk comes from `pretrained` when given, otherwise He-uniform
/// (`±sqrt(6 / fan_in)`, zero biases) from RNG stream 0. The head and the
/// dense layer always use He-uniform from stream 1, so they do not depend on
/// whether a pretrained trunk was supplied.
pub fn init_params<F: Real>(
    config: &ModelConfig,
    seed: u64,
    pretrained: Option<&PretrainedTrunk<F>>,
) -> Result<ModelParams<F>> {
    config.validate()?;
    let mut params = ModelParams::<F>::zeros(config);

    match pretrained {
        Some(p) => {
            let mut bad = Vec::new();
            if p.trunk.len() != params.trunk.len() {
                bad.push(format!("expected {} blocks, file has {}", params.trunk.len(), p.trunk.len()));
            }
            for (b, (want, have)) in params.trunk.iter().zip(&p.trunk).enumerate() {
                for c in 0..want.len().max(have.len()) {
                    match (want.get(c), have.get(c)) {
                        (Some(w), Some(h)) if w.weight.dim() == h.weight.dim() && w.bias.dim() == h.bias.dim() => {}
                        (Some(w), Some(h)) => bad.push(format!(
                            "{}: expected {:?}, file has {:?}",
                            conv_name(b, c),
                            w.weight.dim(),
                            h.weight.dim()
                        )),
                        (Some(_), None) => bad.push(format!("{}: missing from file", conv_name(b, c))),
                        (None, Some(_)) => bad.push(format!("{}: not in model", conv_name(b, c))),
                        (None, None) => {}
                    }
                }
            }
            if !bad.is_empty() {
                return Err(Error::Shape(format!("pretrained trunk mismatch: {}", bad.join("; "))));
            }
            params.trunk = p.trunk.clone();
            params.normalization = p.normalization;
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0);
            for conv in params.trunk.iter_mut().flatten() {
                let fan_in = conv.fan_in();
                he_uniform(conv.weight.as_slice_mut().expect("standard layout"), fan_in, &mut rng);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let fan_in = params.head.fan_in();
    he_uniform(params.head.weight.as_slice_mut().expect("standard layout"), fan_in, &mut rng);
    let fan_in = params.fc.weight.ncols();
    he_uniform(params.fc.weight.as_slice_mut().expect("standard layout"), fan_in, &mut rng);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let p = ModelParams::<f32>::zeros(&ModelConfig::full());
        assert_eq!(p.trunk.len(), 5);
        assert_eq!(p.trunk[0][0].weight.dim(), (64, 3, 3, 3));
        assert_eq!(p.trunk[4][1].weight.dim(), (512, 512, 3, 3));
        assert_eq!(p.head.weight.dim(), (5, 512, 1, 1));
        assert_eq!(p.fc.weight.dim(), (6, 5 * 31 * 31));
        let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "block1_conv1/weight");
        assert_eq!(names.last().unwrap(), "fc/bias");
        assert_eq!(names.len(), 2 * 10 + 4);
    }

    #[test]
    fn he_uniform_bounds_and_determinism() {
        let cfg = ModelConfig::desk();
        let a = init_params::<f64>(&cfg, 11, None).unwrap();
        let b = init_params::<f64>(&cfg, 11, None).unwrap();
        assert_eq!(a, b);
        for conv in a.trunk.iter().flatten().chain([&a.head]) {
            let bound = (6.0 / conv.fan_in() as f64).sqrt();
            assert!(conv.weight.iter().all(|w| w.abs() <= bound));
            assert!(conv.bias.iter().all(|v| *v == 0.0));
            // not degenerate
            assert!(conv.weight.iter().any(|w| w.abs() > bound / 4.0));
        }
        let bound = (6.0 / a.fc.weight.ncols() as f64).sqrt();
        assert!(a.fc.weight.iter().all(|w| w.abs() <= bound));

        let c = init_params::<f64>(&cfg, 12, None).unwrap();
        assert_ne!(a.head, c.head);
        assert_ne!(a.fc, c.fc);
    }

    #[test]
    fn head_independent_of_pretrained_trunk() {
        let cfg = ModelConfig::desk();
        let scratch = init_params::<f64>(&cfg, 5, None).unwrap();
        let donor = init_params::<f64>(&cfg, 99, None).unwrap();
        let pre = PretrainedTrunk {
            trunk: donor.trunk.clone(),
            normalization: None,
        };
        let loaded = init_params(&cfg, 5, Some(&pre)).unwrap();
        assert_eq!(loaded.trunk, donor.trunk);
        assert_eq!(loaded.head, scratch.head);
        assert_eq!(loaded.fc, scratch.fc);
    }

    #[test]
    fn pretrained_shape_mismatch_names_layer() {
        let cfg = ModelConfig::desk();
        let mut donor = init_params::<f64>(&cfg, 1, None).unwrap().trunk;
        donor[0][0] = ConvParams::zeros(8, 4, 3);
        let pre = PretrainedTrunk {
            trunk: donor,
            normalization: None,
        };
        let err = init_params(&cfg, 1, Some(&pre)).unwrap_err().to_string();
        assert!(err.contains("block1_conv1"), "{err}");
    }
}
