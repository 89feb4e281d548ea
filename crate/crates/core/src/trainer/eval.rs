use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{horizon_frames, mae_per_frame, mpjpe_per_frame};
use super::LossKind;
use crate::decoder::GagcnModel;
use crate::error::{Error, Result};
use crate::motiondata::WindowSet;
use crate::numkernel::Tensor;

/// Anything that maps observed frames `[T×N×C]` to `[t×N×C]` future frames.
pub trait Predictor: Sync {
    fn predict_frames(&self, observed: &Tensor, output_frames: usize) -> Result<Tensor>;
}

impl Predictor for GagcnModel {
    fn predict_frames(&self, observed: &Tensor, output_frames: usize) -> Result<Tensor> {
        if output_frames != self.config.output_frames {
            return Err(Error::Config(format!(
                "model predicts {} frames, {output_frames} requested",
                self.config.output_frames
            )));
        }
        GagcnModel::predict_frames(self, observed)
    }
}

/// Repeats the last observed pose.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl Predictor for ZeroVelocity {
    fn predict_frames(&self, observed: &Tensor, output_frames: usize) -> Result<Tensor> {
        if observed.ndim() != 3 || observed.shape()[0] == 0 {
            return Err(Error::Shape(format!("expected [T×N×C], got {:?}", observed.shape())));
        }
        let fs = observed.shape()[1] * observed.shape()[2];
        let last = &observed.data()[observed.len() - fs..];
        let data = last.repeat(output_frames);
        Tensor::new(vec![output_frames, observed.shape()[1], observed.shape()[2]], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    /// Mean over frames 1..=h.
    #[default]
    Cumulative,
    /// Error at frame h only.
    AtHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub horizon_ms: u32,
    pub frames: usize,
    pub metric: LossKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonReport {
    pub mode: AveragingMode,
    pub windows: usize,
    pub rows: Vec<HorizonRow>,
}

impl HorizonReport {
    pub fn value_at(&self, horizon_ms: u32) -> Option<f64> {
        self.rows.iter().find(|r| r.horizon_ms == horizon_ms).map(|r| r.value)
    }
}

/// Per-horizon error of `predictor` over `windows`.
///
/// Horizons longer than the target length are skipped with a warning.
pub fn evaluate_horizons(
    predictor: &dyn Predictor,
    windows: &WindowSet,
    rate_hz: f64,
    horizons_ms: &[u32],
    metric: LossKind,
    mode: AveragingMode,
    joint_mask: &[bool],
) -> Result<HorizonReport> {
    if windows.is_empty() {
        return Err(Error::Config("no windows to evaluate".into()));
    }
    let t = windows.output_frames;
    let per_window = windows
        .windows
        .par_iter()
        .map(|w| {
            let pred = predictor.predict_frames(&w.input, t)?;
            match metric {
                LossKind::Mpjpe => mpjpe_per_frame(&pred, &w.target),
                LossKind::Mae => mae_per_frame(&pred, &w.target, joint_mask),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_frame = vec![0.0; t];
    for errs in &per_window {
        per_frame.iter_mut().zip(errs).for_each(|(a, e)| *a += e);
    }
    per_frame.iter_mut().for_each(|a| *a /= per_window.len() as f64);

    let mut rows = Vec::new();
    for &h in horizons_ms {
        let frames = horizon_frames(h, rate_hz)?;
        if frames > t {
            log::warn!("horizon {h} ms needs {frames} frames but targets have {t}; skipped");
            continue;
        }
        let value = match mode {
            AveragingMode::Cumulative => per_frame[..frames].iter().sum::<f64>() / frames as f64,
            AveragingMode::AtHorizon => per_frame[frames - 1],
        };
        rows.push(HorizonRow {
            horizon_ms: h,
            frames,
            metric,
            value,
        });
    }
    Ok(HorizonReport {
        mode,
        windows: per_window.len(),
        rows,
    })
}
