//! Gradient oracle over every differentiable graph operation.

use super::gradcheck::{check_all_params, CheckOptions, GradCheckEntry};
use super::graph::{Graph, Var};
use super::ops::Activation;
use super::param::{ParamId, ParamStore};
use super::rng::Rng;
use super::tensor::{Precision, Tensor};
use crate::error::Result;

type Builder = Box<dyn Fn(&mut Graph, &[ParamId]) -> Result<Var>>;

struct Case {
    op: &'static str,
    shapes: Vec<Vec<usize>>,
    build: Builder,
}

/// Weighted readout so that every output entry carries a distinct sensitivity.
fn readout(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    let shape = g.value(v).shape().to_vec();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7) % 11) as f64 * 0.17).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let prod = g.mul(v, w)?;
    Ok(g.sum(prod))
}

fn cases() -> Vec<Case> {
    let target = |shape: &[usize]| Rng::new(99).uniform_tensor(shape, -1.0, 1.0);
    vec![
        Case {
            op: "matmul",
            shapes: vec![vec![3, 4], vec![4, 2]],
            build: Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let y = g.matmul(a, b)?;
                readout(g, y)
            }),
        },
        Case {
            op: "transpose",
            shapes: vec![vec![2, 3]],
            build: Box::new(|g, p| {
                let a = g.param(p[0]);
                let y = g.transpose(a)?;
                readout(g, y)
            }),
        },
        Case {
            op: "add_sub_mul",
            shapes: vec![vec![2, 3], vec![2, 3]],
            build: Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let s = g.add(a, b)?;
                let d = g.sub(a, b)?;
                let m = g.mul(s, d)?;
                let y = g.scale(m, 1.7);
                readout(g, y)
            }),
        },
        Case {
            op: "add_row_vector",
            shapes: vec![vec![3, 2], vec![2]],
            build: Box::new(|g, p| {
                let (x, b) = (g.param(p[0]), g.param(p[1]));
                let y = g.add_row_vector(x, b)?;
                readout(g, y)
            }),
        },
        Case {
            op: "add_channel_bias",
            shapes: vec![vec![2, 3, 2], vec![2]],
            build: Box::new(|g, p| {
                let (x, b) = (g.param(p[0]), g.param(p[1]));
                let y = g.add_channel_bias(x, b)?;
                readout(g, y)
            }),
        },
        Case {
            op: "tanh",
            shapes: vec![vec![5]],
            build: Box::new(|g, p| {
                let x = g.param(p[0]);
                let y = g.activation(x, Activation::Tanh);
                readout(g, y)
            }),
        },
        Case {
            op: "relu",
            shapes: vec![vec![5]],
            build: Box::new(|g, p| {
                let x = g.param(p[0]);
                let y = g.activation(x, Activation::Relu);
                readout(g, y)
            }),
        },
        Case {
            op: "softmax",
            shapes: vec![vec![4]],
            build: Box::new(|g, p| {
                let x = g.param(p[0]);
                let y = g.softmax(x)?;
                readout(g, y)
            }),
        },
        Case {
            op: "mean_last_axis_reshape",
            shapes: vec![vec![2, 3, 4]],
            build: Box::new(|g, p| {
                let x = g.param(p[0]);
                let r = g.reshape(x, &[6, 4])?;
                let y = g.mean_last_axis(r);
                readout(g, y)
            }),
        },
        Case {
            op: "kronecker",
            shapes: vec![vec![2, 3], vec![2, 2]],
            build: Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let y = g.kronecker(a, b)?;
                readout(g, y)
            }),
        },
        Case {
            op: "weighted_sum",
            shapes: vec![vec![3], vec![2, 2], vec![2, 2], vec![2, 2]],
            build: Box::new(|g, p| {
                let w = g.param(p[0]);
                let items: Vec<Var> = p[1..].iter().map(|&id| g.param(id)).collect();
                let y = g.weighted_sum(w, &items)?;
                readout(g, y)
            }),
        },
        Case {
            op: "st_apply",
            shapes: vec![vec![3, 3], vec![4, 4], vec![2, 3, 4]],
            build: Box::new(|g, p| {
                let (s, t, h) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
                let y = g.st_apply(s, t, h)?;
                readout(g, y)
            }),
        },
        Case {
            op: "channel_mix",
            shapes: vec![vec![3, 2, 4], vec![3, 5]],
            build: Box::new(|g, p| {
                let (x, w) = (g.param(p[0]), g.param(p[1]));
                let y = g.channel_mix(x, w)?;
                readout(g, y)
            }),
        },
        Case {
            op: "shift_last_axis",
            shapes: vec![vec![2, 5]],
            build: Box::new(|g, p| {
                let x = g.param(p[0]);
                let y = g.shift_last_axis(x, 2);
                readout(g, y)
            }),
        },
        Case {
            op: "mpjpe_loss",
            shapes: vec![vec![3, 4, 2]],
            build: Box::new(move |g, p| {
                let x = g.param(p[0]);
                g.mpjpe_loss(x, &target(&[3, 4, 2]))
            }),
        },
        Case {
            op: "mae_loss",
            shapes: vec![vec![3, 4, 2]],
            build: Box::new(move |g, p| {
                let x = g.param(p[0]);
                g.mae_loss(x, &target(&[3, 4, 2]), &[false, true, true, true])
            }),
        },
    ]
}

/// Checks every registered operation; each parameter is reported as `<op>.<k>`.
pub fn check_ops(seed: u64, opts: &CheckOptions) -> Result<Vec<GradCheckEntry>> {
    let rng = Rng::new(seed);
    let mut out = Vec::new();
    for case in cases() {
        let mut store = ParamStore::new(Precision::Binary64);
        let ids: Vec<ParamId> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(k, shape)| {
                let name = format!("{}.{k}", case.op);
                let value = rng.split_named(&name).uniform_tensor(shape, -1.0, 1.0);
                store.add(name, value)
            })
            .collect::<Result<_>>()?;
        let build = &case.build;
        out.extend(check_all_params(&store, opts, |g| build(g, &ids))?);
    }
    Ok(out)
}
