//! Skeleton descriptions, motion sequences, windowing, CSV loading and a
//! synthetic motion generator.

mod csvio;
mod skeleton;
mod synth;
mod windows;

pub use csvio::{load_coords_csv, load_expmap_csv, load_motion_csv, read_motion_csv, write_motion_csv};
pub use skeleton::{JointEntry, Skeleton, SkeletonDescriptor, SKELETON_SCHEMA_VERSION};
pub use synth::{synth_dataset, synth_generate, synth_skeleton, SynthClass, SYNTH_RATE_HZ};
pub use windows::{make_windows, split_windows, Window, WindowSet};

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Joint positions in millimetres.
    #[default]
    Coords3d,
    /// Per-joint exponential-map rotations in radians.
    Expmap,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Coords3d => "coords3d",
            Representation::Expmap => "expmap",
        })
    }
}

/// Frames stored as `[F × N × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub skeleton: Skeleton,
    pub frames: Tensor,
    pub rate_hz: f64,
    pub representation: Representation,
    pub label: Option<String>,
}

impl MotionSequence {
    pub fn new(
        skeleton: Skeleton,
        frames: Tensor,
        rate_hz: f64,
        representation: Representation,
        label: Option<String>,
    ) -> Result<Self> {
        let want = [skeleton.joints(), skeleton.channels];
        if frames.ndim() != 3 || frames.shape()[1..] != want {
            return Err(Error::Shape(format!(
                "frames must be [F×{}×{}], got {:?}",
                want[0],
                want[1],
                frames.shape()
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {rate_hz}")));
        }
        if !frames.all_finite() {
            return Err(Error::Numeric("motion frames contain non-finite values".into()));
        }
        Ok(Self {
            skeleton,
            frames,
            rate_hz,
            representation,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_size(&self) -> usize {
        self.skeleton.joints() * self.skeleton.channels
    }

    /// Frames `[start, start + count)` as `[count × N × C]`.
    pub fn slice(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.len() {
            return Err(Error::Shape(format!(
                "frame range {start}..{} exceeds sequence of {} frames",
                start + count,
                self.len()
            )));
        }
        let fs = self.frame_size();
        let data = self.frames.data()[start * fs..(start + count) * fs].to_vec();
        Tensor::new(vec![count, self.skeleton.joints(), self.skeleton.channels], data)
    }

    /// Keeps every k-th frame where k = rate / target; k must be an integer.
    pub fn downsample(&self, target_hz: f64) -> Result<MotionSequence> {
        if !(target_hz.is_finite() && target_hz > 0.0) || target_hz > self.rate_hz {
            return Err(Error::Config(format!(
                "cannot resample {} Hz data to {target_hz} Hz",
                self.rate_hz
            )));
        }
        let ratio = self.rate_hz / target_hz;
        let stride = ratio.round();
        if (ratio - stride).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{} Hz to {target_hz} Hz is a non-integer ratio ({ratio:.4}); only integer-stride \
                 downsampling is supported, resample the data externally first",
                self.rate_hz
            )));
        }
        let stride = stride as usize;
        let fs = self.frame_size();
        let kept: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let mut data = Vec::with_capacity(kept.len() * fs);
        for f in &kept {
            data.extend_from_slice(&self.frames.data()[f * fs..(f + 1) * fs]);
        }
        let frames = Tensor::new(vec![kept.len(), self.skeleton.joints(), self.skeleton.channels], data)?;
        MotionSequence::new(
            self.skeleton.clone(),
            frames,
            target_hz,
            self.representation,
            self.label.clone(),
        )
    }
}
