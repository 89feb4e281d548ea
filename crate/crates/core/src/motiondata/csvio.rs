use std::f64::consts::PI;
use std::path::Path;

use super::{MotionSequence, Representation, SkeletonDescriptor};
use crate::error::{Error, Result};
use crate::numkernel::Tensor;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Reads a motion CSV whose header is `frame,<joint>_<c>,…` in the joint
/// order given by the descriptor.
pub fn read_motion_csv(path: &Path, desc: &SkeletonDescriptor) -> Result<MotionSequence> {
    let skeleton = desc.skeleton()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut expected = vec!["frame".to_string()];
    expected.extend(skeleton.column_names());
    if header.len() != expected.len() {
        return Err(parse_err(
            path,
            1,
            format!("header has {} columns, expected {}", header.len(), expected.len()),
        ));
    }
    for (got, want) in header.iter().zip(&expected) {
        if got != want {
            return Err(parse_err(path, 1, format!("header column `{got}`, expected `{want}`")));
        }
    }

    let width = expected.len() - 1;
    let mut data = Vec::new();
    let mut frames = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width + 1 {
            return Err(parse_err(
                path,
                line,
                format!("row has {} fields, expected {}", record.len(), width + 1),
            ));
        }
        record[0]
            .parse::<u64>()
            .map_err(|_| parse_err(path, line, format!("frame index `{}` is not an integer", &record[0])))?;
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column `{}`: `{field}` is not a number", expected[col])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column `{}` is not finite", expected[col])));
            }
            data.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(parse_err(path, 2, "no frames"));
    }
    let tensor = Tensor::new(vec![frames, skeleton.joints(), skeleton.channels], data)?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    MotionSequence::new(skeleton, tensor, desc.rate_hz, desc.representation, label)
}

fn require(desc: &SkeletonDescriptor, repr: Representation) -> Result<()> {
    if desc.representation != repr || desc.channels != 3 {
        return Err(Error::Config(format!(
            "descriptor declares {} with {} channels, expected {repr} with 3",
            desc.representation, desc.channels
        )));
    }
    Ok(())
}

/// Joint positions in millimetres.
pub fn load_coords_csv(path: &Path, desc: &SkeletonDescriptor) -> Result<MotionSequence> {
    require(desc, Representation::Coords3d)?;
    read_motion_csv(path, desc)
}

/// Exponential-map rotations; warns when a rotation vector norm reaches π.
pub fn load_expmap_csv(path: &Path, desc: &SkeletonDescriptor) -> Result<MotionSequence> {
    require(desc, Representation::Expmap)?;
    let seq = read_motion_csv(path, desc)?;
    let mask = desc.loss_joint_mask();
    let mut large = 0usize;
    for (k, v) in seq.frames.data().chunks_exact(3).enumerate() {
        let joint = k % mask.len();
        if mask[joint] && (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() >= PI {
            large += 1;
        }
    }
    if large > 0 {
        log::warn!(
            "{}: {large} rotation vectors have norm ≥ π; exponential maps near π are ambiguous",
            path.display()
        );
    }
    Ok(seq)
}

pub fn load_motion_csv(path: &Path, desc: &SkeletonDescriptor) -> Result<MotionSequence> {
    match desc.representation {
        Representation::Coords3d => load_coords_csv(path, desc),
        Representation::Expmap => load_expmap_csv(path, desc),
    }
}

/// Writes `frame,<joint>_<c>,…`; values use shortest round-trip formatting.
pub fn write_motion_csv(path: &Path, seq: &MotionSequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["frame".to_string()];
    header.extend(seq.skeleton.column_names());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let fs = seq.frame_size();
    for (f, row) in seq.frames.data().chunks_exact(fs).enumerate() {
        let mut rec = Vec::with_capacity(fs + 1);
        rec.push(f.to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
