//! Gating-adjacency graph convolution layers and the encoder stack.
//!
//! Features are laid out channel-major, `[w×N×T]`. A layer blends a spatial
//! (`N×N`) and a temporal (`T×T`) adjacency from their candidate banks, fuses
//! them with the Kronecker product, mixes channels with `W`, and applies the
//! nonlinearity:
//!
//! ```text
//! out = σ( ((𝒜_s ⊗ 𝒜_t) · H) · W )
//! ```
//!
//! The Kronecker product is never materialized. With the joint-major
//! flattening `index = joint·T + frame`, `(𝒜_s ⊗ 𝒜_t)·vec(H[c]) = vec(𝒜_s·H[c]·𝒜_tᵀ)`,
//! which costs `O(N²T + NT²)` per channel instead of `O(N²T²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{AdjacencyBank, Axis, GatingNetwork};
use crate::numkernel::{Activation, Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Adaptive adjacencies and the coefficients that produced them, for one layer.
#[derive(Debug, Clone, Copy)]
pub struct GateTrace {
    pub layer: usize,
    pub spatial: Var,
    pub temporal: Var,
}

/// One gated layer: two banks, two gates, one channel transform.
#[derive(Debug, Clone)]
pub struct GagcnLayer {
    pub spatial_bank: AdjacencyBank,
    pub temporal_bank: AdjacencyBank,
    pub spatial_gate: GatingNetwork,
    pub temporal_gate: GatingNetwork,
    pub transform: ParamId,
    pub activation: Activation,
    pub in_width: usize,
    pub out_width: usize,
}

/// Layer with a single fixed spatial and temporal adjacency (no gating).
#[derive(Debug, Clone)]
pub struct StableLayer {
    pub spatial: ParamId,
    pub temporal: ParamId,
    pub transform: ParamId,
    pub activation: Activation,
    pub in_width: usize,
    pub out_width: usize,
}

/// Dimensions shared by every layer of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub joints: usize,
    pub frames: usize,
    pub in_width: usize,
    pub out_width: usize,
}

fn transform_param(store: &mut ParamStore, prefix: &str, dims: LayerDims, rng: &Rng) -> Result<ParamId> {
    store.add_uniform(
        &format!("{prefix}.transform"),
        &[dims.in_width, dims.out_width],
        dims.in_width,
        rng,
    )
}

/// `σ(st_apply(As, At, h) · W)`, shared by both layer kinds.
fn graph_conv(
    g: &mut Graph,
    spatial: Var,
    temporal: Var,
    h: Var,
    transform: ParamId,
    activation: Activation,
) -> Result<Var> {
    let fused = g.st_apply(spatial, temporal, h)?;
    let w = g.param(transform);
    let mixed = g.channel_mix(fused, w)?;
    Ok(g.activation(mixed, activation))
}

fn check_input(g: &Graph, h: Var, dims: LayerDims) -> Result<()> {
    let shape = g.value(h).shape();
    if shape != [dims.in_width, dims.joints, dims.frames] {
        return Err(Error::Dimension {
            op: "layer_forward".into(),
            left: format!("[{}×{}×{}]", dims.in_width, dims.joints, dims.frames),
            right: format!("{shape:?}"),
        });
    }
    Ok(())
}

impl GagcnLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: LayerDims,
        spatial_candidates: usize,
        temporal_candidates: usize,
        gate_hidden: Option<(usize, usize)>,
        activation: Activation,
        rng: &Rng,
    ) -> Result<Self> {
        let spatial_bank = AdjacencyBank::new(
            store,
            &format!("{prefix}.spatial"),
            Axis::Spatial,
            dims.joints,
            spatial_candidates,
            rng,
        )?;
        let temporal_bank = AdjacencyBank::new(
            store,
            &format!("{prefix}.temporal"),
            Axis::Temporal,
            dims.frames,
            temporal_candidates,
            rng,
        )?;
        let spatial_gate = GatingNetwork::new(
            store,
            &format!("{prefix}.spatial_gate"),
            dims.in_width,
            gate_hidden,
            spatial_candidates,
            rng,
        )?;
        let temporal_gate = GatingNetwork::new(
            store,
            &format!("{prefix}.temporal_gate"),
            dims.in_width,
            gate_hidden,
            temporal_candidates,
            rng,
        )?;
        let transform = transform_param(store, prefix, dims, rng)?;
        Ok(Self {
            spatial_bank,
            temporal_bank,
            spatial_gate,
            temporal_gate,
            transform,
            activation,
            in_width: dims.in_width,
            out_width: dims.out_width,
        })
    }

    fn dims(&self) -> LayerDims {
        LayerDims {
            joints: self.spatial_bank.size,
            frames: self.temporal_bank.size,
            in_width: self.in_width,
            out_width: self.out_width,
        }
    }

    /// Returns the layer output and the blending coefficients `(ω_s, ω_t)`.
    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<(Var, Var, Var)> {
        check_input(g, h, self.dims())?;
        let ws = self.spatial_gate.forward(g, h)?;
        let wt = self.temporal_gate.forward(g, h)?;
        let a_s = self.spatial_bank.blend(g, ws)?;
        let a_t = self.temporal_bank.blend(g, wt)?;
        let out = graph_conv(g, a_s, a_t, h, self.transform, self.activation)?;
        Ok((out, ws, wt))
    }

    /// The adaptive adjacencies this layer would use for input `h`.
    pub fn adaptive_adjacency(&self, g: &mut Graph, h: Var) -> Result<(Var, Var)> {
        let ws = self.spatial_gate.forward(g, h)?;
        let wt = self.temporal_gate.forward(g, h)?;
        Ok((self.spatial_bank.blend(g, ws)?, self.temporal_bank.blend(g, wt)?))
    }
}

impl StableLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, dims: LayerDims, activation: Activation, rng: &Rng) -> Result<Self> {
        // Same names and init streams as candidate 0 of a gated layer's banks.
        let spatial = AdjacencyBank::new(store, &format!("{prefix}.spatial"), Axis::Spatial, dims.joints, 1, rng)?;
        let temporal = AdjacencyBank::new(store, &format!("{prefix}.temporal"), Axis::Temporal, dims.frames, 1, rng)?;
        let transform = transform_param(store, prefix, dims, rng)?;
        Ok(Self {
            spatial: spatial.candidates[0],
            temporal: temporal.candidates[0],
            transform,
            activation,
            in_width: dims.in_width,
            out_width: dims.out_width,
        })
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let dims = LayerDims {
            joints: g.store().value(self.spatial).shape()[0],
            frames: g.store().value(self.temporal).shape()[0],
            in_width: self.in_width,
            out_width: self.out_width,
        };
        check_input(g, h, dims)?;
        let a_s = g.param(self.spatial);
        let a_t = g.param(self.temporal);
        graph_conv(g, a_s, a_t, h, self.transform, self.activation)
    }
}

/// Which layer type an encoder is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Gated,
    Stable,
}

#[derive(Debug, Clone)]
pub enum EncoderLayer {
    Gated(GagcnLayer),
    Stable(StableLayer),
}

#[derive(Debug, Clone)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub joints: usize,
    pub frames: usize,
    /// `[w⁰, …, wᴸ]`; the encoder has `widths.len() − 1` layers.
    pub widths: Vec<usize>,
    pub spatial_candidates: usize,
    pub temporal_candidates: usize,
    pub gate_hidden: Option<(usize, usize)>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub widths: Vec<usize>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &EncoderSpec, rng: &Rng) -> Result<Self> {
        if spec.widths.len() < 2 {
            return Err(Error::Config("encoder needs at least one layer (two widths)".into()));
        }
        if spec.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let dims = LayerDims {
                    joints: spec.joints,
                    frames: spec.frames,
                    in_width: w[0],
                    out_width: w[1],
                };
                let name = format!("{prefix}.{l}");
                Ok(match spec.kind {
                    EncoderKind::Gated => EncoderLayer::Gated(GagcnLayer::new(
                        store,
                        &name,
                        dims,
                        spec.spatial_candidates,
                        spec.temporal_candidates,
                        spec.gate_hidden,
                        spec.activation,
                        rng,
                    )?),
                    EncoderKind::Stable => {
                        EncoderLayer::Stable(StableLayer::new(store, &name, dims, spec.activation, rng)?)
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            widths: spec.widths.clone(),
        })
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Runs every layer in order; gated layers report their coefficients.
    pub fn forward(&self, g: &mut Graph, h0: Var) -> Result<(Var, Vec<GateTrace>)> {
        let mut h = h0;
        let mut traces = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            h = match layer {
                EncoderLayer::Gated(layer) => {
                    let (out, ws, wt) = layer.forward(g, h)?;
                    traces.push(GateTrace {
                        layer: l,
                        spatial: ws,
                        temporal: wt,
                    });
                    out
                }
                EncoderLayer::Stable(layer) => layer.forward(g, h)?,
            };
        }
        Ok((h, traces))
    }
}

/// Per joint-frame affine lift from raw channels `C` to feature width `w⁰`.
#[derive(Debug, Clone)]
pub struct InputEmbedding {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub width: usize,
}

impl InputEmbedding {
    /// Identity weights and zero bias when `channels == width`, otherwise uniform init.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, width: usize, rng: &Rng) -> Result<Self> {
        let (weight, bias) = if channels == width {
            (
                store.add(format!("{prefix}.weight"), Tensor::eye(width))?,
                store.add(format!("{prefix}.bias"), Tensor::zeros(&[width]))?,
            )
        } else {
            (
                store.add_uniform(&format!("{prefix}.weight"), &[channels, width], channels, rng)?,
                store.add_uniform(&format!("{prefix}.bias"), &[width], channels, rng)?,
            )
        };
        Ok(Self {
            weight,
            bias,
            channels,
            width,
        })
    }

    /// `x: [C×N×T] → [w⁰×N×T]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let c = g.value(x).shape()[0];
        if c != self.channels || g.value(x).ndim() != 3 {
            return Err(Error::Shape(format!(
                "embedding expects {} channels, window has shape {:?}",
                self.channels,
                g.value(x).shape()
            )));
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.channel_mix(x, w)?;
        g.add_channel_bias(y, b)
    }
}

/// `[T×N×C]` frames to channel-major `[C×N×T]` features.
pub fn frames_to_features(frames: &Tensor) -> Result<Tensor> {
    frames.swap_outer_axes()
}

/// Channel-major `[C×N×t]` back to `[t×N×C]` frames.
pub fn features_to_frames(features: &Tensor) -> Result<Tensor> {
    features.swap_outer_axes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_diff_check, kronecker, matmul, st_apply, Precision};

    fn dims(w_in: usize, w_out: usize, n: usize, t: usize) -> LayerDims {
        LayerDims {
            joints: n,
            frames: t,
            in_width: w_in,
            out_width: w_out,
        }
    }

    /// Explicit `(As ⊗ At) · vec(h[c])` for every channel.
    fn kron_reference(a_s: &Tensor, a_t: &Tensor, h: &Tensor) -> Tensor {
        let (w, n, t) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let k = kronecker(a_s, a_t).unwrap();
        let mut out = Vec::with_capacity(w * n * t);
        for c in 0..w {
            let col = Tensor::new(vec![n * t, 1], h.data()[c * n * t..(c + 1) * n * t].to_vec()).unwrap();
            out.extend_from_slice(matmul(&k, &col).unwrap().data());
        }
        Tensor::new(vec![w, n, t], out).unwrap()
    }

    #[test]
    fn st_apply_identity_and_reversal() {
        let mut rng = Rng::new(3);
        let h = rng.uniform_tensor(&[2, 3, 4], -1.0, 1.0);
        assert_eq!(st_apply(&Tensor::eye(3), &Tensor::eye(4), &h).unwrap(), h);

        let mut rev = Tensor::zeros(&[4, 4]);
        for f in 0..4 {
            rev.set(&[f, 3 - f], 1.0);
        }
        let out = st_apply(&Tensor::eye(3), &rev, &h).unwrap();
        for c in 0..2 {
            for j in 0..3 {
                for f in 0..4 {
                    assert_eq!(out.get(&[c, j, f]), h.get(&[c, j, 3 - f]));
                }
            }
        }
    }

    #[test]
    fn st_apply_matches_materialized_kronecker() {
        let mut rng = Rng::new(4);
        let a_s = rng.uniform_tensor(&[2, 2], -1.0, 1.0);
        let a_t = rng.uniform_tensor(&[2, 2], -1.0, 1.0);
        let h = rng.uniform_tensor(&[3, 2, 2], -1.0, 1.0);
        let fast = st_apply(&a_s, &a_t, &h).unwrap();
        assert!(fast.max_abs_diff(&kron_reference(&a_s, &a_t, &h)) < 1e-10);
    }

    #[test]
    fn st_apply_rejects_bad_shapes() {
        let h = Tensor::zeros(&[1, 3, 4]);
        assert!(st_apply(&Tensor::eye(2), &Tensor::eye(4), &h).is_err());
        assert!(st_apply(&Tensor::eye(3), &Tensor::eye(5), &h).is_err());
    }

    fn make_passthrough(store: &mut ParamStore, layer: &GagcnLayer) {
        store.set_value(layer.spatial_bank.candidates[0], Tensor::eye(layer.spatial_bank.size)).unwrap();
        store.set_value(layer.temporal_bank.candidates[0], Tensor::eye(layer.temporal_bank.size)).unwrap();
        store.set_value(layer.transform, Tensor::eye(layer.in_width)).unwrap();
    }

    #[test]
    fn single_candidate_identity_layer_passes_through() {
        let mut store = ParamStore::new(Precision::Binary64);
        let layer = GagcnLayer::new(&mut store, "l", dims(3, 3, 4, 5), 1, 1, None, Activation::Identity, &Rng::new(1)).unwrap();
        make_passthrough(&mut store, &layer);
        let h = Rng::new(2).uniform_tensor(&[3, 4, 5], -1.0, 1.0);
        let mut g = Graph::new(&store);
        let hv = g.constant(h.clone());
        let (out, _, _) = layer.forward(&mut g, hv).unwrap();
        assert_eq!(g.value(out), &h);
    }

    #[test]
    fn layer_output_shape() {
        let mut store = ParamStore::new(Precision::Binary64);
        let layer = GagcnLayer::new(&mut store, "l", dims(3, 7, 4, 5), 4, 3, None, Activation::Tanh, &Rng::new(1)).unwrap();
        let mut g = Graph::new(&store);
        let hv = g.constant(Tensor::ones(&[3, 4, 5]));
        let (out, ws, wt) = layer.forward(&mut g, hv).unwrap();
        assert_eq!(g.value(out).shape(), &[7, 4, 5]);
        assert_eq!(g.value(ws).len(), 4);
        assert_eq!(g.value(wt).len(), 3);
        let bad = g.constant(Tensor::ones(&[2, 4, 5]));
        assert!(layer.forward(&mut g, bad).is_err());
    }

    #[test]
    fn layer_gradients() {
        let mut store = ParamStore::new(Precision::Binary64);
        let layer = GagcnLayer::new(&mut store, "l", dims(3, 2, 4, 5), 2, 2, None, Activation::Tanh, &Rng::new(7)).unwrap();
        let h = Rng::new(8).uniform_tensor(&[3, 4, 5], -1.0, 1.0);
        let probe = Rng::new(9).uniform_tensor(&[2, 4, 5], -1.0, 1.0);
        let f = |g: &mut Graph| {
            let hv = g.constant(h.clone());
            let (out, _, _) = layer.forward(g, hv)?;
            let p = g.constant(probe.clone());
            let m = g.mul(out, p)?;
            Ok(g.sum(m))
        };
        for id in store.ids() {
            let e = finite_diff_check(&store, id, 1e-4, f).unwrap();
            assert!(e.max_rel_err < 1e-4, "{e:?}");
        }
    }

    fn spec(kind: EncoderKind, widths: Vec<usize>, n: usize, m: usize) -> EncoderSpec {
        EncoderSpec {
            kind,
            joints: 4,
            frames: 5,
            widths,
            spatial_candidates: n,
            temporal_candidates: m,
            gate_hidden: None,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn stable_equals_single_candidate_gated() {
        let rng = Rng::new(21);
        let mut gs = ParamStore::new(Precision::Binary64);
        let gated = Encoder::new(&mut gs, "enc", &spec(EncoderKind::Gated, vec![3, 6, 6], 1, 1), &rng).unwrap();
        let mut ss = ParamStore::new(Precision::Binary64);
        let stable = Encoder::new(&mut ss, "enc", &spec(EncoderKind::Stable, vec![3, 6, 6], 1, 1), &rng).unwrap();
        for p in ss.iter() {
            let id = gs.find(&p.name).expect("stable param present in gated store");
            assert_eq!(gs.value(id), &p.value);
        }
        let h = Rng::new(22).uniform_tensor(&[3, 4, 5], -2.0, 2.0);
        let run = |store: &ParamStore, enc: &Encoder| {
            let mut g = Graph::new(store);
            let hv = g.constant(h.clone());
            let (out, _) = enc.forward(&mut g, hv).unwrap();
            g.value(out).clone()
        };
        assert!(run(&gs, &gated).max_abs_diff(&run(&ss, &stable)) <= 1e-12);
    }

    #[test]
    fn encoder_preserves_axes_and_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new(Precision::Binary64);
            let enc = Encoder::new(&mut store, "enc", &spec(EncoderKind::Gated, vec![3, 8, 8, 5], 2, 2), &Rng::new(5)).unwrap();
            let h = Rng::new(6).uniform_tensor(&[3, 4, 5], -1.0, 1.0);
            let mut g = Graph::new(&store);
            let hv = g.constant(h);
            let (out, traces) = enc.forward(&mut g, hv).unwrap();
            assert_eq!(traces.len(), 3);
            g.value(out).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[5, 4, 5]);
        assert_eq!(a, run());
    }

    #[test]
    fn embedding_identity_and_bias() {
        let mut store = ParamStore::new(Precision::Binary64);
        let emb = InputEmbedding::new(&mut store, "emb", 3, 3, &Rng::new(1)).unwrap();
        let x = Rng::new(2).uniform_tensor(&[3, 4, 5], -1.0, 1.0);
        {
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let y = emb.forward(&mut g, xv).unwrap();
            assert_eq!(g.value(y), &x);
        }
        let wide = InputEmbedding::new(&mut store, "wide", 3, 6, &Rng::new(1)).unwrap();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::zeros(&[3, 4, 5]));
        let y = wide.forward(&mut g, z).unwrap();
        let bias = store.value(wide.bias);
        for c in 0..6 {
            for k in 0..20 {
                assert_eq!(g.value(y).data()[c * 20 + k], bias.data()[c]);
            }
        }
        let bad = g.constant(Tensor::zeros(&[2, 4, 5]));
        assert!(matches!(wide.forward(&mut g, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn embedding_gradient() {
        let mut store = ParamStore::new(Precision::Binary64);
        let emb = InputEmbedding::new(&mut store, "emb", 3, 4, &Rng::new(1)).unwrap();
        let x = Rng::new(2).uniform_tensor(&[3, 4, 5], -1.0, 1.0);
        let probe = Rng::new(3).uniform_tensor(&[4, 4, 5], -1.0, 1.0);
        let f = |g: &mut Graph| {
            let xv = g.constant(x.clone());
            let y = emb.forward(g, xv)?;
            let y = g.activation(y, Activation::Tanh);
            let p = g.constant(probe.clone());
            let m = g.mul(y, p)?;
            Ok(g.sum(m))
        };
        for id in store.ids() {
            assert!(finite_diff_check(&store, id, 1e-4, f).unwrap().max_rel_err < 1e-4);
        }
    }
}
