//! Gradient-oracle runs at three scales: single ops, one gated layer, a whole model.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::decoder::{GagcnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::gagcn::{GagcnLayer, LayerDims};
use crate::numkernel::op_suite::check_ops;
use crate::numkernel::{check_all_params, Activation, CheckOptions, GradCheckEntry, ParamStore, Precision, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckScale {
    Ops,
    Layer,
    Model,
}

impl fmt::Display for CheckScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckScale::Ops => "ops",
            CheckScale::Layer => "layer",
            CheckScale::Model => "model",
        })
    }
}

impl FromStr for CheckScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(CheckScale::Ops),
            "layer" => Ok(CheckScale::Layer),
            "model" => Ok(CheckScale::Model),
            other => Err(Error::Config(format!("unknown check scale `{other}` (ops, layer, model)"))),
        }
    }
}

/// N = 4 joints, T = 5 → t = 3 frames, width 8, n = m = 2, binary64.
pub fn toy_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 3).with_width(8, 6);
    cfg.input_frames = 5;
    cfg.output_frames = 3;
    cfg.spatial_candidates = 2;
    cfg.temporal_candidates = 2;
    cfg.precision = Precision::Binary64;
    cfg
}

fn check_layer(seed: u64, opts: &CheckOptions) -> Result<Vec<GradCheckEntry>> {
    let rng = Rng::new(seed);
    let mut store = ParamStore::new(Precision::Binary64);
    let dims = LayerDims {
        joints: 4,
        frames: 5,
        in_width: 3,
        out_width: 8,
    };
    let layer = GagcnLayer::new(&mut store, "layer", dims, 2, 2, None, Activation::Tanh, &rng)?;
    let h = rng.split_named("input").uniform_tensor(&[3, 4, 5], -1.0, 1.0);
    let readout = rng.split_named("readout").uniform_tensor(&[8, 4, 5], 0.3, 1.7);
    check_all_params(&store, opts, |g| {
        let x = g.constant(h.clone());
        let (out, _, _) = layer.forward(g, x)?;
        let r = g.constant(readout.clone());
        let prod = g.mul(out, r)?;
        Ok(g.sum(prod))
    })
}

/// The toy model with its zero-initialized output projection randomized so
/// that every upstream parameter receives gradient.
pub fn toy_model(seed: u64) -> Result<GagcnModel> {
    let mut model = GagcnModel::new(toy_model_config(), seed)?;
    let (w, b) = model.decoder.output_param_ids();
    let rng = Rng::new(seed).split_named("gradcheck/out");
    let ws = model.store.value(w).shape().to_vec();
    let bs = model.store.value(b).shape().to_vec();
    model.store.set_value(w, rng.split(0).uniform_tensor(&ws, -0.5, 0.5))?;
    model.store.set_value(b, rng.split(1).uniform_tensor(&bs, -0.5, 0.5))?;
    Ok(model)
}

fn check_model(seed: u64, opts: &CheckOptions) -> Result<Vec<GradCheckEntry>> {
    let model = toy_model(seed)?;
    let rng = Rng::new(seed);
    let window: Tensor = rng.split_named("gradcheck/window").uniform_tensor(&[3, 4, 5], -150.0, 150.0);
    let target: Tensor = rng.split_named("gradcheck/target").uniform_tensor(&[3, 4, 3], -150.0, 150.0);
    check_all_params(&model.store, opts, |g| {
        let out = model.forward(g, &window)?;
        g.mpjpe_loss(out.prediction, &target)
    })
}

/// One entry per parameter at the requested scale.
pub fn run_gradcheck(scale: CheckScale, seed: u64, opts: &CheckOptions) -> Result<Vec<GradCheckEntry>> {
    match scale {
        CheckScale::Ops => check_ops(seed, opts),
        CheckScale::Layer => check_layer(seed, opts),
        CheckScale::Model => check_model(seed, opts),
    }
}
