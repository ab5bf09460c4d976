//! The network: a VGG-style trunk cut before its last pooling layer, a 1×1
//! convolution producing one activation map per lesion class, adaptive max
//! pooling to a fixed grid, and a dense layer with `N + 1` sigmoid outputs.

mod archive;
mod forward;
pub mod layers;
mod params;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub use archive::{load_params, load_pretrained_trunk, read_archive, save_params, save_pretrained_trunk, Archive};
pub use forward::{backward, classify, forward_trace, head_forward, prepare_input, trunk_forward, Trace};
pub use params::{conv_name, init_params, ConvParams, DenseParams, ModelParams, Normalization, PretrainedTrunk};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of every 3×3 convolution, grouped by block.
    pub block_channels: Vec<Vec<usize>>,
    pub n_lesions: usize,
    /// Side of the adaptive max pooling grid.
    pub pool_output: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// VGG-13 convolutional layout.
    pub fn full() -> Self {
        Self {
            block_channels: vec![vec![64, 64], vec![128, 128], vec![256, 256], vec![512, 512], vec![512, 512]],
            n_lesions: 5,
            pool_output: 31,
        }
    }

    /// Narrow variant that trains from scratch on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            block_channels: vec![vec![8, 8], vec![16, 16], vec![32, 32], vec![32, 32], vec![32, 32]],
            n_lesions: 5,
            pool_output: 31,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::invalid("model needs at least one convolution block"));
        }
        if self.block_channels.iter().any(|b| b.is_empty() || b.contains(&0)) {
            return Err(Error::invalid("every block needs at least one convolution with ≥ 1 channel"));
        }
        if self.n_lesions == 0 || self.pool_output == 0 {
            return Err(Error::invalid("n_lesions and pool_output must be positive"));
        }
        Ok(())
    }

    /// Number of 2×2 poolings between blocks.
    pub fn inter_block_pools(&self) -> usize {
        self.block_channels.len().saturating_sub(1)
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.inter_block_pools()
    }

    /// Smallest accepted input side: 32 for a five-block trunk.
    pub fn min_input_side(&self) -> usize {
        2 * self.downsample_factor()
    }

    pub fn feature_channels(&self) -> usize {
        self.block_channels.last().and_then(|b| b.last()).copied().unwrap_or(0)
    }

    /// Trunk output size for an `h × w` input: one floor-halving per pooling.
    pub fn feature_size(&self, h: usize, w: usize) -> (usize, usize) {
        (0..self.inter_block_pools()).fold((h, w), |(h, w), _| (h / 2, w / 2))
    }

    pub fn fc_inputs(&self) -> usize {
        self.n_lesions * self.pool_output * self.pool_output
    }
}

/// Adaptive max pooling of one map to `out × out`.
///
/// Output cell `(i, j)` is the maximum over rows `[⌊i·h/out⌋, ⌈(i+1)·h/out⌉)`
/// and columns `[⌊j·w/out⌋, ⌈(j+1)·w/out⌉)`. Inputs smaller than the output
/// repeat values.
pub fn adaptive_max_pool<F: Real>(map: ArrayView2<F>, out: usize) -> Result<Array2<F>> {
    if out == 0 {
        return Err(Error::invalid("adaptive pooling output size must be ≥ 1"));
    }
    let (h, w) = map.dim();
    if h == 0 || w == 0 {
        return Err(Error::Shape("adaptive pooling of an empty map".into()));
    }
    Ok(layers::adaptive_max_pool_with_argmax(map, out).0)
}
