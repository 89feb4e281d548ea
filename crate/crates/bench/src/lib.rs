//! Fixtures shared by the benchmarks.

use gagcn::decoder::{GagcnModel, ModelConfig};
use gagcn::{Result, Rng, Tensor};

/// Random `[N×N]`, `[T×T]` operators and a `[w×N×T]` feature map.
pub fn st_operands(width: usize, joints: usize, frames: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
    let rng = Rng::new(seed);
    (
        rng.split(0).uniform_tensor(&[joints, joints], -1.0, 1.0),
        rng.split(1).uniform_tensor(&[frames, frames], -1.0, 1.0),
        rng.split(2).uniform_tensor(&[width, joints, frames], -1.0, 1.0),
    )
}

/// Default-sized model on the 12-joint synthetic skeleton.
pub fn bench_model(width: usize, layers: usize) -> Result<GagcnModel> {
    GagcnModel::new(ModelConfig::new(12, 3).with_width(width, layers), 0)
}

/// One `[C×N×T]` input window matching `model`.
pub fn bench_window(model: &GagcnModel, seed: u64) -> Tensor {
    let c = &model.config;
    Rng::new(seed).uniform_tensor(&[c.channels, c.joints, c.input_frames], -300.0, 300.0)
}
