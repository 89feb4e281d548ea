//! Temporal convolution decoder and full-model assembly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gagcn::{
    features_to_frames, frames_to_features, Encoder, EncoderKind, EncoderSpec, GateTrace, InputEmbedding,
};
use crate::numkernel::{Activation, Graph, ParamId, ParamStore, Precision, Rng, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    /// Blocks applied to the `t` output frames after the expansion.
    pub output_dilations: Vec<usize>,
    pub activation: Activation,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            output_dilations: vec![1, 2],
            activation: Activation::Tanh,
        }
    }
}

impl TcnConfig {
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }
}

#[derive(Debug, Clone)]
struct TcnBlock {
    taps: Vec<ParamId>,
    bias: ParamId,
    dilation: usize,
}

/// Causal dilated convolutions over the observed frames, a learned `T → t`
/// expansion, further convolutions over the output frames and a `w → C`
/// projection.
#[derive(Debug, Clone)]
pub struct TcnDecoder {
    blocks: Vec<TcnBlock>,
    refine: Vec<TcnBlock>,
    kernel_size: usize,
    activation: Activation,
    expand_weight: ParamId,
    expand_bias: ParamId,
    out_weight: ParamId,
    out_bias: ParamId,
    pub width: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    pub channels: usize,
}

impl TcnDecoder {
    /// The output projection starts at zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &TcnConfig,
        width: usize,
        input_frames: usize,
        output_frames: usize,
        channels: usize,
        rng: &Rng,
    ) -> Result<Self> {
        if cfg.kernel_size == 0 || cfg.dilations.contains(&0) || cfg.output_dilations.contains(&0) {
            return Err(Error::Config("tcn kernel size and dilations must be positive".into()));
        }
        if cfg.receptive_field() < input_frames {
            return Err(Error::Config(format!(
                "tcn receptive field {} is shorter than the {input_frames} input frames",
                cfg.receptive_field()
            )));
        }
        let mut make_blocks = |kind: &str, dilations: &[usize]| -> Result<Vec<TcnBlock>> {
            dilations
                .iter()
                .enumerate()
                .map(|(b, &dilation)| {
                    let fan_in = cfg.kernel_size * width;
                    let taps = (0..cfg.kernel_size)
                        .map(|j| store.add_uniform(&format!("{prefix}.{kind}{b}.tap{j}"), &[width, width], fan_in, rng))
                        .collect::<Result<_>>()?;
                    let bias = store.add_uniform(&format!("{prefix}.{kind}{b}.bias"), &[width], fan_in, rng)?;
                    Ok(TcnBlock { taps, bias, dilation })
                })
                .collect()
        };
        let blocks = make_blocks("block", &cfg.dilations)?;
        let refine = make_blocks("refine", &cfg.output_dilations)?;
        let expand_weight = store.add_uniform(
            &format!("{prefix}.expand.weight"),
            &[input_frames, output_frames],
            input_frames,
            rng,
        )?;
        let expand_bias = store.add_uniform(&format!("{prefix}.expand.bias"), &[output_frames], input_frames, rng)?;
        let out_weight = store.add(format!("{prefix}.out.weight"), Tensor::zeros(&[width, channels]))?;
        let out_bias = store.add(format!("{prefix}.out.bias"), Tensor::zeros(&[channels]))?;
        Ok(Self {
            blocks,
            refine,
            kernel_size: cfg.kernel_size,
            activation: cfg.activation,
            expand_weight,
            expand_bias,
            out_weight,
            out_bias,
            width,
            input_frames,
            output_frames,
            channels,
        })
    }

    pub fn output_param_ids(&self) -> (ParamId, ParamId) {
        (self.out_weight, self.out_bias)
    }

    fn block_forward(&self, g: &mut Graph, block: &TcnBlock, h: Var) -> Result<Var> {
        // Tap j looks (k−1−j)·d frames into the past.
        let mut acc: Option<Var> = None;
        for (j, &tap) in block.taps.iter().enumerate() {
            let shifted = g.shift_last_axis(h, (self.kernel_size - 1 - j) * block.dilation);
            let w = g.param(tap);
            let y = g.channel_mix(shifted, w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        let b = g.param(block.bias);
        let y = g.add_channel_bias(acc.expect("kernel_size > 0"), b)?;
        let y = g.activation(y, self.activation);
        g.add(h, y)
    }

    /// Activations after each convolution block, all `[w×N×T]`.
    pub fn block_outputs(&self, g: &mut Graph, z: Var) -> Result<Vec<Var>> {
        self.check_input(g, z)?;
        let mut h = z;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = self.block_forward(g, block, h)?;
            outs.push(h);
        }
        Ok(outs)
    }

    fn check_input(&self, g: &Graph, z: Var) -> Result<()> {
        let shape = g.value(z).shape();
        if shape.len() != 3 || shape[0] != self.width || shape[2] != self.input_frames {
            return Err(Error::Dimension {
                op: "tcn_forward".into(),
                left: format!("[{}×N×{}]", self.width, self.input_frames),
                right: format!("{shape:?}"),
            });
        }
        Ok(())
    }

    /// `z: [w×N×T] → [C×N×t]`.
    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let h = self.block_outputs(g, z)?.last().copied().unwrap_or(z);
        let n = g.value(h).shape()[1];
        let flat = g.reshape(h, &[self.width * n, self.input_frames])?;
        let e = g.param(self.expand_weight);
        let eb = g.param(self.expand_bias);
        let expanded = g.matmul(flat, e)?;
        let expanded = g.add_row_vector(expanded, eb)?;
        let mut expanded = g.reshape(expanded, &[self.width, n, self.output_frames])?;
        for block in &self.refine {
            expanded = self.block_forward(g, block, expanded)?;
        }
        let w = g.param(self.out_weight);
        let b = g.param(self.out_bias);
        let out = g.channel_mix(expanded, w)?;
        g.add_channel_bias(out, b)
    }
}

/// How the decoder output becomes a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Inputs are taken relative to the last observed frame and the output is
    /// an offset added back to it.
    #[default]
    OffsetFromLastFrame,
    /// Inputs and outputs are absolute poses.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub channels: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    /// Encoder widths `[w⁰, …, wᴸ]`.
    pub widths: Vec<usize>,
    pub spatial_candidates: usize,
    pub temporal_candidates: usize,
    pub encoder: EncoderKind,
    pub activation: Activation,
    pub gate_hidden: Option<(usize, usize)>,
    pub tcn: TcnConfig,
    pub residual: ResidualMode,
    /// Raw values are divided by this before entering the network.
    pub input_scale: f64,
    pub precision: Precision,
}

pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_LAYERS: usize = 6;

impl ModelConfig {
    /// Defaults: 10 → 25 frames, widths `[C, 64 ×6]`, n = 4, m = 3.
    pub fn new(joints: usize, channels: usize) -> Self {
        let mut widths = vec![channels];
        widths.extend(std::iter::repeat_n(DEFAULT_WIDTH, DEFAULT_LAYERS));
        Self {
            joints,
            channels,
            input_frames: 10,
            output_frames: 25,
            widths,
            spatial_candidates: 4,
            temporal_candidates: 3,
            encoder: EncoderKind::Gated,
            activation: Activation::Tanh,
            gate_hidden: None,
            tcn: TcnConfig::default(),
            residual: ResidualMode::OffsetFromLastFrame,
            input_scale: 100.0,
            precision: Precision::Binary64,
        }
    }

    /// Uniform hidden width for `layers` encoder layers.
    pub fn with_width(mut self, width: usize, layers: usize) -> Self {
        self.widths = vec![self.channels];
        self.widths.extend(std::iter::repeat_n(width, layers));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.joints == 0 || self.channels == 0 {
            return bad("joints and channels must be positive".into());
        }
        if self.input_frames == 0 || self.output_frames == 0 {
            return bad("input_frames and output_frames must be positive".into());
        }
        if self.widths.len() < 2 {
            return bad("widths must list at least two entries".into());
        }
        if self.encoder == EncoderKind::Gated && (self.spatial_candidates == 0 || self.temporal_candidates == 0) {
            return bad("spatial_candidates and temporal_candidates must be at least 1".into());
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad(format!("input_scale must be positive, got {}", self.input_scale));
        }
        if self.tcn.receptive_field() < self.input_frames {
            return bad(format!(
                "tcn receptive field {} < input_frames {}",
                self.tcn.receptive_field(),
                self.input_frames
            ));
        }
        Ok(())
    }
}

/// Embedding, gated encoder and TCN decoder over one parameter store.
#[derive(Debug, Clone)]
pub struct GagcnModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embed: InputEmbedding,
    pub encoder: Encoder,
    pub decoder: TcnDecoder,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[C×N×t]` prediction.
    pub prediction: Var,
    pub gates: Vec<GateTrace>,
}

impl GagcnModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(seed);
        let mut store = ParamStore::new(config.precision);
        let embed = InputEmbedding::new(&mut store, "embed", config.channels, config.widths[0], &rng)?;
        let spec = EncoderSpec {
            kind: config.encoder,
            joints: config.joints,
            frames: config.input_frames,
            widths: config.widths.clone(),
            spatial_candidates: config.spatial_candidates,
            temporal_candidates: config.temporal_candidates,
            gate_hidden: config.gate_hidden,
            activation: config.activation,
        };
        let encoder = Encoder::new(&mut store, "encoder", &spec, &rng)?;
        let decoder = TcnDecoder::new(
            &mut store,
            "decoder",
            &config.tcn,
            encoder.output_width(),
            config.input_frames,
            config.output_frames,
            config.channels,
            &rng,
        )?;
        Ok(Self {
            config,
            store,
            embed,
            encoder,
            decoder,
        })
    }

    fn check_window(&self, x: &Tensor) -> Result<()> {
        let want = [self.config.channels, self.config.joints, self.config.input_frames];
        if x.shape() != want {
            return Err(Error::Dimension {
                op: "predict".into(),
                left: format!("{want:?}"),
                right: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Records a forward pass for a channel-major window `[C×N×T]`.
    pub fn forward(&self, g: &mut Graph, window: &Tensor) -> Result<ForwardOutput> {
        self.check_window(window)?;
        let (c, n, t_in) = (self.config.channels, self.config.joints, self.config.input_frames);
        let t_out = self.config.output_frames;
        let scale = self.config.input_scale;
        let last: Vec<f64> = (0..c * n).map(|k| window.data()[k * t_in + t_in - 1]).collect();

        let normalized = match self.config.residual {
            ResidualMode::OffsetFromLastFrame => {
                let mut d = window.data().to_vec();
                for (k, row) in d.chunks_mut(t_in).enumerate() {
                    row.iter_mut().for_each(|v| *v = (*v - last[k]) / scale);
                }
                d
            }
            ResidualMode::Absolute => window.data().iter().map(|v| v / scale).collect(),
        };
        let x = g.constant(Tensor::new(vec![c, n, t_in], normalized)?);
        let h0 = self.embed.forward(g, x)?;
        let (z, gates) = self.encoder.forward(g, h0)?;
        let out = self.decoder.forward(g, z)?;
        let scaled = g.scale(out, scale);
        let prediction = match self.config.residual {
            ResidualMode::OffsetFromLastFrame => {
                let mut base = Vec::with_capacity(c * n * t_out);
                for &v in &last {
                    base.extend(std::iter::repeat_n(v, t_out));
                }
                let base = g.constant(Tensor::new(vec![c, n, t_out], base)?);
                g.add(base, scaled)?
            }
            ResidualMode::Absolute => scaled,
        };
        Ok(ForwardOutput { prediction, gates })
    }

    /// `[C×N×T] → [C×N×t]`.
    pub fn predict(&self, window: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, window)?;
        Ok(g.value(out.prediction).clone())
    }

    /// `[T×N×C]` observed frames to `[t×N×C]` predicted frames.
    pub fn predict_frames(&self, frames: &Tensor) -> Result<Tensor> {
        features_to_frames(&self.predict(&frames_to_features(frames)?)?)
    }

    /// Spatial and temporal coefficients of each gated layer for one window.
    pub fn gate_coefficients(&self, window: &Tensor) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, window)?;
        Ok(out
            .gates
            .iter()
            .map(|t| (g.value(t.spatial).data().to_vec(), g.value(t.temporal).data().to_vec()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::finite_diff_check;

    fn toy_decoder(store: &mut ParamStore, rng: &Rng) -> TcnDecoder {
        TcnDecoder::new(store, "dec", &TcnConfig::default(), 4, 5, 3, 3, rng).unwrap()
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut store = ParamStore::new(Precision::Binary64);
        let dec = toy_decoder(&mut store, &Rng::new(1));
        let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
        for name in names.iter().filter(|n| n.ends_with("bias")) {
            let id = store.find(name).unwrap();
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::zeros(&[4, 6, 5]));
        let out = dec.forward(&mut g, z).unwrap();
        assert_eq!(g.value(out), &Tensor::zeros(&[3, 6, 3]));
    }

    #[test]
    fn default_shapes() {
        let mut store = ParamStore::new(Precision::Binary64);
        let dec = TcnDecoder::new(&mut store, "dec", &TcnConfig::default(), 64, 10, 25, 3, &Rng::new(0)).unwrap();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::ones(&[64, 22, 10]));
        let out = dec.forward(&mut g, z).unwrap();
        assert_eq!(g.value(out).shape(), &[3, 22, 25]);
        assert_eq!(TcnConfig::default().receptive_field(), 15);
    }

    #[test]
    fn receptive_field_must_cover_input() {
        let mut store = ParamStore::new(Precision::Binary64);
        let cfg = TcnConfig {
            kernel_size: 2,
            dilations: vec![1],
            ..TcnConfig::default()
        };
        assert!(TcnDecoder::new(&mut store, "d", &cfg, 4, 5, 3, 3, &Rng::new(0)).is_err());
    }

    #[test]
    fn blocks_are_causal() {
        let mut store = ParamStore::new(Precision::Binary64);
        let dec = toy_decoder(&mut store, &Rng::new(2));
        let z = Rng::new(3).uniform_tensor(&[4, 2, 5], -1.0, 1.0);
        for f in 0..5 {
            let mut bumped = z.clone();
            for c in 0..4 {
                for j in 0..2 {
                    let v = bumped.get(&[c, j, f]);
                    bumped.set(&[c, j, f], v + 0.5);
                }
            }
            let mut g = Graph::new(&store);
            let a = g.constant(z.clone());
            let b = g.constant(bumped);
            let oa = dec.block_outputs(&mut g, a).unwrap();
            let ob = dec.block_outputs(&mut g, b).unwrap();
            for (&va, &vb) in oa.iter().zip(&ob) {
                let (ta, tb) = (g.value(va), g.value(vb));
                for c in 0..4 {
                    for j in 0..2 {
                        for ff in 0..f {
                            assert_eq!(ta.get(&[c, j, ff]), tb.get(&[c, j, ff]));
                        }
                    }
                }
                assert_ne!(ta, tb);
            }
        }
    }

    #[test]
    fn decoder_gradients() {
        let mut store = ParamStore::new(Precision::Binary64);
        let dec = toy_decoder(&mut store, &Rng::new(4));
        // Move the output layer off zero so upstream gradients are non-trivial.
        let (w, b) = dec.output_param_ids();
        store.set_value(w, Rng::new(5).uniform_tensor(&[4, 3], -0.5, 0.5)).unwrap();
        store.set_value(b, Rng::new(6).uniform_tensor(&[3], -0.5, 0.5)).unwrap();
        let z = Rng::new(7).uniform_tensor(&[4, 2, 5], -1.0, 1.0);
        let target = Rng::new(8).uniform_tensor(&[3, 2, 3], -1.0, 1.0);
        let f = |g: &mut Graph| {
            let zv = g.constant(z.clone());
            let out = dec.forward(g, zv)?;
            g.mpjpe_loss(out, &target)
        };
        for id in store.ids() {
            let e = finite_diff_check(&store, id, 1e-4, f).unwrap();
            assert!(e.max_rel_err < 1e-4, "{e:?}");
        }
    }

    fn toy_config() -> ModelConfig {
        let mut cfg = ModelConfig::new(4, 3).with_width(8, 2);
        cfg.input_frames = 5;
        cfg.output_frames = 3;
        cfg.spatial_candidates = 2;
        cfg.temporal_candidates = 2;
        cfg
    }

    #[test]
    fn fresh_offset_model_repeats_last_frame() {
        let model = GagcnModel::new(toy_config(), 9).unwrap();
        let window = Rng::new(10).uniform_tensor(&[3, 4, 5], -100.0, 100.0);
        let pred = model.predict(&window).unwrap();
        assert_eq!(pred.shape(), &[3, 4, 3]);
        for c in 0..3 {
            for j in 0..4 {
                for f in 0..3 {
                    assert_eq!(pred.get(&[c, j, f]), window.get(&[c, j, 4]));
                }
            }
        }
        assert_eq!(model.predict(&window).unwrap(), pred);
    }

    #[test]
    fn default_model_matches_protocol_lengths() {
        let cfg = ModelConfig::new(22, 3);
        assert_eq!((cfg.input_frames, cfg.output_frames), (10, 25));
        assert_eq!(cfg.widths, vec![3, 64, 64, 64, 64, 64, 64]);
        let model = GagcnModel::new(cfg, 0).unwrap();
        let mut g = Graph::new(&model.store);
        let x = g.constant(Rng::new(1).uniform_tensor(&[3, 22, 10], -1.0, 1.0));
        let h0 = model.embed.forward(&mut g, x).unwrap();
        let (z, traces) = model.encoder.forward(&mut g, h0).unwrap();
        assert_eq!(g.value(z).shape(), &[64, 22, 10]);
        assert_eq!(traces.len(), 6);
    }

    #[test]
    fn output_shape_is_joint_count_agnostic() {
        for (n, c) in [(1, 1), (4, 3), (7, 2)] {
            let mut cfg = toy_config();
            cfg.joints = n;
            cfg.channels = c;
            cfg.widths[0] = c;
            let model = GagcnModel::new(cfg, 1).unwrap();
            let pred = model.predict(&Tensor::ones(&[c, n, 5])).unwrap();
            assert_eq!(pred.shape(), &[c, n, 3]);
        }
    }

    #[test]
    fn rejects_bad_window() {
        let model = GagcnModel::new(toy_config(), 9).unwrap();
        assert!(matches!(model.predict(&Tensor::ones(&[3, 4, 6])), Err(Error::Dimension { .. })));
    }
}
