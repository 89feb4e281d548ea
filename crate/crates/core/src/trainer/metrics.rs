use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// Horizons reported by default, in milliseconds.
pub const DEFAULT_HORIZONS_MS: [u32; 6] = [80, 160, 320, 400, 560, 1000];

fn same(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op: op.into(),
            left: format!("{:?}", a.shape()),
            right: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Per-frame mean joint distance for `[t×N×C]` tensors.
pub fn mpjpe_per_frame(pred: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    same("mpjpe", pred, gt)?;
    if pred.ndim() != 3 {
        return Err(Error::Shape(format!("mpjpe expects [t×N×C], got {:?}", pred.shape())));
    }
    let (t, n, c) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let (p, g) = (pred.data(), gt.data());
    Ok((0..t)
        .map(|f| {
            (0..n)
                .map(|j| {
                    let o = (f * n + j) * c;
                    (0..c).map(|k| (p[o + k] - g[o + k]).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Mean per-joint position error over `[t×N×C]`.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let per = mpjpe_per_frame(pred, gt)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Mean absolute error over every element.
pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same("mae", pred, gt)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Per-frame mean absolute error over the joints kept by `mask`, `[t×N×C]`.
pub fn mae_per_frame(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    same("mae", pred, gt)?;
    if pred.ndim() != 3 || pred.shape()[1] != mask.len() {
        return Err(Error::Shape(format!(
            "mae expects [t×{}×C], got {:?}",
            mask.len(),
            pred.shape()
        )));
    }
    let (t, n, c) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Err(Error::Config("joint mask excludes every joint".into()));
    }
    let (p, g) = (pred.data(), gt.data());
    Ok((0..t)
        .map(|f| {
            let mut s = 0.0;
            for j in (0..n).filter(|&j| mask[j]) {
                let o = (f * n + j) * c;
                s += (0..c).map(|k| (p[o + k] - g[o + k]).abs()).sum::<f64>();
            }
            s / (kept * c) as f64
        })
        .collect())
}

/// Frames covered by a horizon at `rate_hz`; the horizon must land on a frame.
pub fn horizon_frames(ms: u32, rate_hz: f64) -> Result<usize> {
    let exact = ms as f64 * rate_hz / 1000.0;
    let frames = exact.round();
    if frames < 1.0 || (exact - frames).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {ms} ms is not a whole number of frames at {rate_hz} Hz"
        )));
    }
    Ok(frames as usize)
}

pub fn horizon_map(horizons_ms: &[u32], rate_hz: f64) -> Result<BTreeMap<u32, usize>> {
    horizons_ms.iter().map(|&h| Ok((h, horizon_frames(h, rate_hz)?))).collect()
}
