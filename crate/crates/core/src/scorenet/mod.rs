//! Trainable complex-valued U-Net score model with Fourier time embeddings,
//! manual backpropagation and a single-file checkpoint format.

mod checkpoint;
pub mod layers;
mod net;
mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{complex_conv, fourier_time_embedding, ConvGeom};
pub use net::{ForwardCache, NetConfig, ScoreNet};
pub use tensor::{FeatureMap, ParamStore, Tensor};

use crate::sampler::ScoreModel;
use crate::{Result, SpecGrid};

/// A network plus one concrete parameter set (raw or EMA weights), usable by
/// the sampler.
#[derive(Debug, Clone)]
pub struct NeuralScore {
    pub net: ScoreNet,
    pub params: ParamStore,
}

impl ScoreModel for NeuralScore {
    fn score(&self, x_t: &SpecGrid, y: &SpecGrid, t: f64) -> Result<SpecGrid> {
        self.net.forward(&self.params, x_t, y, t)
    }
}
