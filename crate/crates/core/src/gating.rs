//! Gating networks and adjacency banks.
//!
//! A [`GatingNetwork`] mean-pools a `[w×N×T]` feature tensor to a `w`-vector,
//! runs it through three affine layers (tanh in between) and a softmax, and
//! produces blending coefficients on the `q`-simplex. An [`AdjacencyBank`]
//! holds `q` trainable square candidates; [`AdjacencyBank::blend`] forms the
//! adaptive adjacency `Σᵢ ωᵢ·Aⁱ`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::numkernel::{Activation, Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Which axis an adjacency acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Spatial,
    Temporal,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Spatial => f.write_str("spatial"),
            Axis::Temporal => f.write_str("temporal"),
        }
    }
}

/// Scale of the uniform noise added to identity candidates at initialization.
pub const CANDIDATE_INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct AdjacencyBank {
    pub axis: Axis,
    pub size: usize,
    pub candidates: Vec<ParamId>,
}

impl AdjacencyBank {
    /// Registers `q` candidates of size `d×d`, each identity plus uniform noise.
    pub fn new(store: &mut ParamStore, prefix: &str, axis: Axis, size: usize, q: usize, rng: &Rng) -> Result<Self> {
        if q == 0 {
            return Err(Error::Config(format!("{prefix}: candidate count must be at least 1")));
        }
        let candidates = (0..q)
            .map(|i| {
                let name = format!("{prefix}.{i}");
                let noise = rng.split_named(&name).uniform_tensor(
                    &[size, size],
                    -CANDIDATE_INIT_NOISE,
                    CANDIDATE_INIT_NOISE,
                );
                store.add(name, Tensor::eye(size).add(&noise)?)
            })
            .collect::<Result<_>>()?;
        Ok(Self { axis, size, candidates })
    }

    pub fn count(&self) -> usize {
        self.candidates.len()
    }

    /// `Σᵢ weights[i]·Aⁱ`, differentiable in both the weights and the candidates.
    pub fn blend(&self, g: &mut Graph, weights: Var) -> Result<Var> {
        let q = g.value(weights).len();
        if q != self.count() || g.value(weights).ndim() != 1 {
            return Err(Error::Config(format!(
                "{} bank has {} candidates but received {} coefficients",
                self.axis,
                self.count(),
                q
            )));
        }
        let items: Vec<Var> = self.candidates.iter().map(|&id| g.param(id)).collect();
        g.weighted_sum(weights, &items)
    }
}

/// Plain-tensor blend, for analysis outside a graph.
pub fn blend_tensors(candidates: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if candidates.len() != weights.len() || candidates.is_empty() {
        return Err(Error::Config(format!(
            "{} candidates but {} coefficients",
            candidates.len(),
            weights.len()
        )));
    }
    let mut out = candidates[0].scale(weights[0]);
    for (c, &w) in candidates.iter().zip(weights).skip(1) {
        out = out.add(&c.scale(w))?;
    }
    Ok(out)
}

/// Mean over joints and frames of a `[w×N×T]` tensor, giving `[w]`.
pub fn pool_features(g: &mut Graph, h: Var) -> Result<Var> {
    let shape = g.value(h).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "pool_features expects [w×N×T], got {shape:?}"
        )));
    }
    let flat = g.reshape(h, &[shape[0], shape[1] * shape[2]])?;
    Ok(g.mean_last_axis(flat))
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &Rng) -> Result<Self> {
        let weight = store.add_uniform(&format!("{prefix}.weight"), &[fan_in, fan_out], fan_in, rng)?;
        let bias = store.add_uniform(&format!("{prefix}.bias"), &[fan_out], fan_in, rng)?;
        Ok(Self { weight, bias })
    }

    /// `x[k] → x·W + b`.
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let k = g.value(x).len();
        let row = g.reshape(x, &[1, k])?;
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(row, w)?;
        let y = g.add_row_vector(y, b)?;
        let n = g.value(y).len();
        g.reshape(y, &[n])
    }
}

/// Three affine layers and a softmax, over mean-pooled features.
#[derive(Debug, Clone)]
pub struct GatingNetwork {
    pub input_width: usize,
    pub hidden: (usize, usize),
    pub outputs: usize,
    layers: [Affine; 3],
    activation: Activation,
}

impl GatingNetwork {
    /// Hidden widths default to twice the input width.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        hidden: Option<(usize, usize)>,
        outputs: usize,
        rng: &Rng,
    ) -> Result<Self> {
        if outputs == 0 || input_width == 0 {
            return Err(Error::Config(format!(
                "{prefix}: gate needs positive input width and output count"
            )));
        }
        let hidden = hidden.unwrap_or((2 * input_width, 2 * input_width));
        let layers = [
            Affine::new(store, &format!("{prefix}.fc0"), input_width, hidden.0, rng)?,
            Affine::new(store, &format!("{prefix}.fc1"), hidden.0, hidden.1, rng)?,
            Affine::new(store, &format!("{prefix}.fc2"), hidden.1, outputs, rng)?,
        ];
        Ok(Self {
            input_width,
            hidden,
            outputs,
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Blending coefficients for features `h: [w×N×T]`.
    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let w = g.value(h).shape()[0];
        if w != self.input_width {
            return Err(Error::Config(format!(
                "gate expects feature width {}, got {w}",
                self.input_width
            )));
        }
        let pooled = pool_features(g, h)?;
        let a = self.layers[0].forward(g, pooled)?;
        let a = g.activation(a, self.activation);
        let a = self.layers[1].forward(g, a)?;
        let a = g.activation(a, self.activation);
        let logits = self.layers[2].forward(g, a)?;
        g.softmax(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_diff_check, Precision, Rng};
    use proptest::prelude::*;

    fn features(rng: &mut Rng, w: usize, n: usize, t: usize, lo: f64, hi: f64) -> Tensor {
        rng.uniform_tensor(&[w, n, t], lo, hi)
    }

    fn gate_coeffs(store: &ParamStore, gate: &GatingNetwork, h: &Tensor) -> Vec<f64> {
        let mut g = Graph::new(store);
        let hv = g.constant(h.clone());
        let w = gate.forward(&mut g, hv).unwrap();
        g.value(w).data().to_vec()
    }

    #[test]
    fn pool_fixtures() {
        let store = ParamStore::new(Precision::Binary64);
        let mut g = Graph::new(&store);
        let ones = g.constant(Tensor::ones(&[2, 3, 4]));
        let p = pool_features(&mut g, ones).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 1.0]);

        let mut data = vec![0.0; 24];
        for (k, v) in data.iter_mut().take(12).enumerate() {
            *v = k as f64 / 12.0;
        }
        for v in data.iter_mut().skip(12) {
            *v = 5.0;
        }
        let h = g.constant(Tensor::new(vec![2, 3, 4], data).unwrap());
        let p = pool_features(&mut g, h).unwrap();
        // (0+1+…+11)/12/12 = 66/144
        assert!((g.value(p).data()[0] - 0.45833).abs() < 1e-5);
        assert_eq!(g.value(p).data()[1], 5.0);

        let mut zero_first = Tensor::ones(&[2, 3, 4]);
        zero_first.data_mut()[..12].iter_mut().for_each(|v| *v = 0.0);
        let h = g.constant(zero_first);
        let p = pool_features(&mut g, h).unwrap();
        assert_eq!(g.value(p).data()[0], 0.0);
    }

    #[test]
    fn zero_gate_is_uniform() {
        let mut store = ParamStore::new(Precision::Binary64);
        let gate = GatingNetwork::new(&mut store, "g", 3, None, 4, &Rng::new(1)).unwrap();
        for id in gate.param_ids() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let h = features(&mut Rng::new(2), 3, 5, 6, -3.0, 3.0);
        assert_eq!(gate_coeffs(&store, &gate, &h), vec![0.25; 4]);
    }

    #[test]
    fn single_output_gate_is_one() {
        let mut store = ParamStore::new(Precision::Binary64);
        let gate = GatingNetwork::new(&mut store, "g", 3, None, 1, &Rng::new(1)).unwrap();
        let h = features(&mut Rng::new(3), 3, 5, 6, -3.0, 3.0);
        assert_eq!(gate_coeffs(&store, &gate, &h), vec![1.0]);
    }

    #[test]
    fn seeded_gate_is_reproducible() {
        let run = || {
            let mut store = ParamStore::new(Precision::Binary64);
            let gate = GatingNetwork::new(&mut store, "g", 3, None, 4, &Rng::new(42)).unwrap();
            let h = features(&mut Rng::new(42), 3, 4, 5, -1.0, 1.0);
            gate_coeffs(&store, &gate, &h)
        };
        let a = run();
        assert_eq!(a.len(), 4);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gate_rejects_width_mismatch() {
        let mut store = ParamStore::new(Precision::Binary64);
        let gate = GatingNetwork::new(&mut store, "g", 3, None, 2, &Rng::new(1)).unwrap();
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::ones(&[4, 2, 2]));
        assert!(matches!(gate.forward(&mut g, h), Err(Error::Config(_))));
    }

    #[test]
    fn gate_is_input_sensitive() {
        let mut store = ParamStore::new(Precision::Binary64);
        let gate = GatingNetwork::new(&mut store, "g", 3, None, 4, &Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        let base = gate_coeffs(&store, &gate, &features(&mut rng, 3, 4, 5, -2.0, 2.0));
        let differs = (0..20).any(|_| {
            let other = gate_coeffs(&store, &gate, &features(&mut rng, 3, 4, 5, -2.0, 2.0));
            other.iter().zip(&base).any(|(a, b)| (a - b).abs() > 1e-6)
        });
        assert!(differs);
    }

    #[test]
    fn blend_fixtures() {
        let mut store = ParamStore::new(Precision::Binary64);
        let bank = AdjacencyBank::new(&mut store, "b", Axis::Spatial, 2, 2, &Rng::new(0)).unwrap();
        store.set_value(bank.candidates[0], Tensor::eye(2)).unwrap();
        store
            .set_value(bank.candidates[1], Tensor::matrix(&[[0.0, 1.0], [1.0, 0.0]]))
            .unwrap();
        let mut g = Graph::new(&store);
        let w = g.constant(Tensor::vector(&[0.25, 0.75]));
        let a = bank.blend(&mut g, w).unwrap();
        assert_eq!(g.value(a), &Tensor::matrix(&[[0.25, 0.75], [0.75, 0.25]]));

        let one_hot = g.constant(Tensor::vector(&[0.0, 1.0]));
        let a = bank.blend(&mut g, one_hot).unwrap();
        assert_eq!(g.value(a), store.value(bank.candidates[1]));

        let wrong = g.constant(Tensor::vector(&[1.0]));
        assert!(matches!(bank.blend(&mut g, wrong), Err(Error::Config(_))));
    }

    #[test]
    fn candidates_start_near_identity() {
        let mut store = ParamStore::new(Precision::Binary64);
        let bank = AdjacencyBank::new(&mut store, "b", Axis::Temporal, 5, 3, &Rng::new(0)).unwrap();
        for &id in &bank.candidates {
            assert!(store.value(id).max_abs_diff(&Tensor::eye(5)) <= CANDIDATE_INIT_NOISE);
        }
        assert!(AdjacencyBank::new(&mut store, "c", Axis::Temporal, 5, 0, &Rng::new(0)).is_err());
    }

    #[test]
    fn gate_and_blend_gradients() {
        let mut store = ParamStore::new(Precision::Binary64);
        let rng = Rng::new(11);
        let gate = GatingNetwork::new(&mut store, "g", 3, None, 3, &rng).unwrap();
        let bank = AdjacencyBank::new(&mut store, "b", Axis::Spatial, 4, 3, &rng).unwrap();
        let h = features(&mut Rng::new(12), 3, 4, 5, -1.0, 1.0);
        let probe = Rng::new(13).uniform_tensor(&[4, 4], -1.0, 1.0);
        let f = |g: &mut Graph| {
            let hv = g.constant(h.clone());
            let w = gate.forward(g, hv)?;
            let a = bank.blend(g, w)?;
            let p = g.constant(probe.clone());
            let m = g.mul(a, p)?;
            Ok(g.sum(m))
        };
        for id in store.ids() {
            let e = finite_diff_check(&store, id, 1e-4, f).unwrap();
            assert!(e.max_rel_err < 1e-4, "{e:?}");
        }
    }

    proptest! {
        #[test]
        fn gate_output_on_simplex(seed in any::<u64>(), w in 1usize..5, q in 1usize..8) {
            let mut store = ParamStore::new(Precision::Binary64);
            let gate = GatingNetwork::new(&mut store, "g", w, None, q, &Rng::new(seed)).unwrap();
            let h = features(&mut Rng::new(seed ^ 1), w, 3, 4, -10.0, 10.0);
            let c = gate_coeffs(&store, &gate, &h);
            prop_assert!(c.iter().all(|&v| v >= 0.0));
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn blend_is_entrywise_convex(seed in any::<u64>(), q in 1usize..=8, d in 1usize..=6) {
            let mut rng = Rng::new(seed);
            let cands: Vec<Tensor> = (0..q).map(|_| rng.uniform_tensor(&[d, d], -5.0, 5.0)).collect();
            let logits: Vec<f64> = (0..q).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let w = crate::numkernel::softmax(&Tensor::vector(&logits)).unwrap();
            let b = blend_tensors(&cands, w.data()).unwrap();
            for k in 0..d * d {
                let lo = cands.iter().map(|c| c.data()[k]).fold(f64::INFINITY, f64::min);
                let hi = cands.iter().map(|c| c.data()[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(b.data()[k] >= lo - 1e-12 && b.data()[k] <= hi + 1e-12);
            }
            let same = vec![cands[0].clone(); q];
            prop_assert!(blend_tensors(&same, w.data()).unwrap().max_abs_diff(&cands[0]) <= 1e-12);
        }
    }
}
