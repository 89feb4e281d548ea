use super::MotionSequence;
use crate::error::{Error, Result};
use crate::numkernel::{Rng, Tensor};

/// One observed/target pair, both `[frames × N × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Tensor,
    pub target: Tensor,
    pub label: Option<String>,
    /// First input frame in the source sequence.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub input_frames: usize,
    pub output_frames: usize,
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn extend(&mut self, other: WindowSet) -> Result<()> {
        if other.input_frames != self.input_frames || other.output_frames != self.output_frames {
            return Err(Error::Config("cannot merge window sets of different lengths".into()));
        }
        self.windows.extend(other.windows);
        Ok(())
    }
}

/// Slides an `input + output` span over the sequence with the given stride.
///
/// Yields `⌊(F − T − t) / stride⌋ + 1` windows; a sequence shorter than
/// `T + t` yields none and logs a warning.
pub fn make_windows(
    seq: &MotionSequence,
    input_frames: usize,
    output_frames: usize,
    stride: usize,
) -> Result<WindowSet> {
    if input_frames == 0 || output_frames == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window lengths and stride must be positive (T={input_frames}, t={output_frames}, stride={stride})"
        )));
    }
    let span = input_frames + output_frames;
    let mut set = WindowSet {
        input_frames,
        output_frames,
        windows: Vec::new(),
    };
    if seq.len() < span {
        log::warn!(
            "sequence{} has {} frames, fewer than the {span} needed for one window; skipped",
            seq.label.as_deref().map(|l| format!(" `{l}`")).unwrap_or_default(),
            seq.len()
        );
        return Ok(set);
    }
    let count = (seq.len() - span) / stride + 1;
    for k in 0..count {
        let start = k * stride;
        set.windows.push(Window {
            input: seq.slice(start, input_frames)?,
            target: seq.slice(start + input_frames, output_frames)?,
            label: seq.label.clone(),
            start,
        });
    }
    Ok(set)
}

/// Shuffles with `rng` and splits off the first `ceil(fraction · len)` windows.
pub fn split_windows(set: &WindowSet, fraction: f64, rng: &mut Rng) -> (WindowSet, WindowSet) {
    let order = rng.permutation(set.len());
    let cut = ((fraction.clamp(0.0, 1.0) * set.len() as f64).ceil() as usize).min(set.len());
    let pick = |idx: &[usize]| WindowSet {
        input_frames: set.input_frames,
        output_frames: set.output_frames,
        windows: idx.iter().map(|&i| set.windows[i].clone()).collect(),
    };
    (pick(&order[..cut]), pick(&order[cut..]))
}
