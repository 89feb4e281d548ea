//! Parametric motion on a 12-joint toy skeleton.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::{MotionSequence, Representation, Skeleton};
use crate::error::{Error, Result};
use crate::numkernel::{Rng, Tensor};

pub const SYNTH_RATE_HZ: f64 = 25.0;

const JOINTS: usize = 12;
const NAMES: [&str; JOINTS] = [
    "pelvis", "spine", "neck", "head", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_knee", "l_foot", "r_knee",
    "r_foot",
];
const PARENTS: [i64; JOINTS] = [-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10];
// x lateral (left positive), y up, z forward; millimetres.
const OFFSETS: [[f64; 3]; JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, 220.0, 0.0],
    [0.0, 230.0, 0.0],
    [0.0, 130.0, 0.0],
    [170.0, -260.0, 0.0],
    [0.0, -250.0, 0.0],
    [-170.0, -260.0, 0.0],
    [0.0, -250.0, 0.0],
    [100.0, -420.0, 0.0],
    [0.0, -420.0, 0.0],
    [-100.0, -420.0, 0.0],
    [0.0, -420.0, 0.0],
];
const PELVIS_HEIGHT: f64 = 900.0;

const PELVIS: usize = 0;
const SPINE: usize = 1;
const L_ELBOW: usize = 4;
const L_HAND: usize = 5;
const R_ELBOW: usize = 6;
const R_HAND: usize = 7;
const L_KNEE: usize = 8;
const L_FOOT: usize = 9;
const R_KNEE: usize = 10;
const R_FOOT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthClass {
    WalkCycle,
    WaveArm,
    SitDown,
    Figure8Drift,
}

impl SynthClass {
    pub const ALL: [SynthClass; 4] = [
        SynthClass::WalkCycle,
        SynthClass::WaveArm,
        SynthClass::SitDown,
        SynthClass::Figure8Drift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::WalkCycle => "walk_cycle",
            SynthClass::WaveArm => "wave_arm",
            SynthClass::SitDown => "sit_down",
            SynthClass::Figure8Drift => "figure8_drift",
        }
    }

    /// Base period in frames at the synthetic rate, for the periodic classes.
    pub fn period_frames(self) -> Option<usize> {
        match self {
            SynthClass::WalkCycle => Some(25),
            SynthClass::WaveArm => Some(16),
            SynthClass::SitDown => None,
            SynthClass::Figure8Drift => Some(75),
        }
    }
}

impl fmt::Display for SynthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown synthetic class `{s}` (expected one of walk_cycle, wave_arm, sit_down, figure8_drift)"
                ))
            })
    }
}

pub fn synth_skeleton() -> Skeleton {
    Skeleton::new(NAMES.iter().map(|s| s.to_string()).collect(), PARENTS.to_vec(), 3).expect("static skeleton")
}

type Mat3 = [[f64; 3]; 3];

fn rodrigues(v: [f64; 3]) -> Mat3 {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [v[0] / theta, v[1] / theta, v[2] / theta];
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    [
        [c + t * k[0] * k[0], t * k[0] * k[1] - s * k[2], t * k[0] * k[2] + s * k[1]],
        [t * k[1] * k[0] + s * k[2], c + t * k[1] * k[1], t * k[1] * k[2] - s * k[0]],
        [t * k[2] * k[0] - s * k[1], t * k[2] * k[1] + s * k[0], c + t * k[2] * k[2]],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Root placement plus one axis-angle rotation per joint; the rotation at a
/// joint orients the bone arriving at it.
struct Pose {
    root: [f64; 3],
    local: [[f64; 3]; JOINTS],
}

impl Pose {
    fn rest() -> Self {
        Pose {
            root: [0.0, PELVIS_HEIGHT, 0.0],
            local: [[0.0; 3]; JOINTS],
        }
    }

    fn positions(&self) -> [[f64; 3]; JOINTS] {
        let mut global = [[[0.0; 3]; 3]; JOINTS];
        let mut pos = [[0.0; 3]; JOINTS];
        for j in 0..JOINTS {
            let r = rodrigues(self.local[j]);
            match PARENTS[j] {
                -1 => {
                    global[j] = r;
                    pos[j] = self.root;
                }
                p => {
                    let p = p as usize;
                    global[j] = mat_mul(&global[p], &r);
                    let bone = mat_vec(&global[j], &OFFSETS[j]);
                    pos[j] = [pos[p][0] + bone[0], pos[p][1] + bone[1], pos[p][2] + bone[2]];
                }
            }
        }
        pos
    }
}

/// Per-sequence random parameters, drawn before any noise.
struct Style {
    amplitude: f64,
    phase: f64,
    center: f64,
}

fn pose_at(class: SynthClass, f: f64, duration: f64, st: &Style) -> Pose {
    let a = st.amplitude;
    let mut p = Pose::rest();
    match class {
        SynthClass::WalkCycle => {
            let phi = 2.0 * PI * f / 25.0 + st.phase;
            let s = phi.sin();
            p.root = [0.0, PELVIS_HEIGHT + 15.0 * a * (2.0 * phi).cos(), 0.0];
            p.local[PELVIS] = [0.0, 0.08 * a * s, 0.0];
            p.local[SPINE] = [0.05, 0.0, 0.03 * s];
            p.local[L_KNEE] = [0.45 * a * s, 0.0, 0.0];
            p.local[R_KNEE] = [-0.45 * a * s, 0.0, 0.0];
            p.local[L_FOOT] = [0.3 * a * (1.0 - phi.cos()), 0.0, 0.0];
            p.local[R_FOOT] = [0.3 * a * (1.0 + phi.cos()), 0.0, 0.0];
            p.local[L_ELBOW] = [-0.35 * a * s, 0.0, 0.0];
            p.local[R_ELBOW] = [0.35 * a * s, 0.0, 0.0];
            p.local[L_HAND] = [-0.3 - 0.1 * a * s, 0.0, 0.0];
            p.local[R_HAND] = [-0.3 + 0.1 * a * s, 0.0, 0.0];
        }
        SynthClass::WaveArm => {
            let phi = 2.0 * PI * f / 16.0 + st.phase;
            p.local[SPINE] = [0.0, 0.0, 0.05 * a * (phi / 4.0).sin()];
            p.local[R_ELBOW] = [0.0, 0.0, -2.4 * a];
            p.local[R_HAND] = [0.0, 0.0, 0.6 * a * phi.sin()];
            p.local[L_ELBOW] = [0.0, 0.0, 0.1 * (phi / 4.0).sin()];
        }
        SynthClass::SitDown => {
            let tau = (duration / 12.0).max(2.0);
            let sig = 1.0 / (1.0 + (-(f - st.center) / tau).exp());
            p.root = [0.0, PELVIS_HEIGHT - 400.0 * a * sig, -120.0 * a * sig];
            p.local[SPINE] = [-0.4 * a * sig, 0.0, 0.0];
            p.local[L_KNEE] = [-1.45 * a * sig, 0.0, 0.0];
            p.local[R_KNEE] = [-1.45 * a * sig, 0.0, 0.0];
            p.local[L_FOOT] = [1.45 * a * sig, 0.0, 0.0];
            p.local[R_FOOT] = [1.45 * a * sig, 0.0, 0.0];
            p.local[L_ELBOW] = [-0.5 * a * sig, 0.0, 0.0];
            p.local[R_ELBOW] = [-0.5 * a * sig, 0.0, 0.0];
            p.local[L_HAND] = [-0.3 * sig, 0.0, 0.0];
            p.local[R_HAND] = [-0.3 * sig, 0.0, 0.0];
        }
        SynthClass::Figure8Drift => {
            let phi = 2.0 * PI * f / 75.0 + st.phase;
            let psi = 2.0 * PI * f / 20.0 + st.phase;
            let drift = 150.0 * a * f / SYNTH_RATE_HZ;
            p.root = [
                300.0 * a * phi.sin(),
                PELVIS_HEIGHT + 10.0 * (2.0 * psi).cos(),
                200.0 * a * (2.0 * phi).sin() + drift,
            ];
            let heading = (300.0 * phi.cos()).atan2(400.0 * (2.0 * phi).cos() + 150.0 * 75.0 / (2.0 * PI * 25.0));
            p.local[PELVIS] = [0.0, heading, 0.0];
            p.local[L_KNEE] = [0.25 * a * psi.sin(), 0.0, 0.0];
            p.local[R_KNEE] = [-0.25 * a * psi.sin(), 0.0, 0.0];
            p.local[L_FOOT] = [0.2 * (1.0 - psi.cos()), 0.0, 0.0];
            p.local[R_FOOT] = [0.2 * (1.0 + psi.cos()), 0.0, 0.0];
            p.local[L_ELBOW] = [-0.15 * a * psi.sin(), 0.0, 0.0];
            p.local[R_ELBOW] = [0.15 * a * psi.sin(), 0.0, 0.0];
        }
    }
    p
}

/// Generates `duration_frames` frames of `class` at 25 Hz in millimetres.
///
/// Additive Gaussian noise has standard deviation `noise_scale · 100` mm.
pub fn synth_generate(
    class: SynthClass,
    duration_frames: usize,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<MotionSequence> {
    if duration_frames == 0 {
        return Err(Error::Config("synthetic sequence needs at least one frame".into()));
    }
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(Error::Config(format!("noise_scale must be non-negative, got {noise_scale}")));
    }
    let duration = duration_frames as f64;
    let style = Style {
        amplitude: rng.uniform(0.85, 1.15),
        phase: rng.uniform(0.0, 2.0 * PI),
        center: duration * rng.uniform(0.4, 0.6),
    };
    let sigma = noise_scale * 100.0;
    let mut data = Vec::with_capacity(duration_frames * JOINTS * 3);
    for f in 0..duration_frames {
        for joint in pose_at(class, f as f64, duration, &style).positions() {
            for v in joint {
                let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                data.push(v + noise);
            }
        }
    }
    let frames = Tensor::new(vec![duration_frames, JOINTS, 3], data)?;
    MotionSequence::new(
        synth_skeleton(),
        frames,
        SYNTH_RATE_HZ,
        Representation::Coords3d,
        Some(class.name().to_string()),
    )
}

/// `per_class` sequences per class, each from its own named stream of `seed`.
pub fn synth_dataset(
    classes: &[SynthClass],
    per_class: usize,
    duration_frames: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &class in classes {
        for i in 0..per_class {
            let mut rng = root.split_named(&format!("synth/{class}/{i}"));
            out.push(synth_generate(class, duration_frames, noise_scale, &mut rng)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(class: SynthClass, frames: usize, noise: f64, seed: u64) -> MotionSequence {
        synth_generate(class, frames, noise, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn rodrigues_matches_axis_rotation() {
        let r = rodrigues([0.0, 0.0, PI / 2.0]);
        let v = mat_vec(&r, &[1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bone_lengths_are_preserved() {
        for class in SynthClass::ALL {
            let s = gen(class, 60, 0.0, 3);
            for f in 0..60 {
                for j in 1..JOINTS {
                    let p = PARENTS[j] as usize;
                    let d: f64 = (0..3).map(|c| (s.frames.get(&[f, j, c]) - s.frames.get(&[f, p, c])).powi(2)).sum();
                    let rest: f64 = OFFSETS[j].iter().map(|x| x * x).sum();
                    assert!((d.sqrt() - rest.sqrt()).abs() < 1e-9, "{class} f={f} j={j}");
                }
            }
        }
    }

    #[test]
    fn walk_is_periodic_without_noise() {
        let s = gen(SynthClass::WalkCycle, 100, 0.0, 11);
        let fs = s.frame_size();
        let d = s.frames.data();
        for f in 0..75 {
            for k in 0..fs {
                assert!((d[f * fs + k] - d[(f + 25) * fs + k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sit_down_pelvis_descends() {
        let s = gen(SynthClass::SitDown, 120, 0.0, 5);
        for f in 1..120 {
            assert!(s.frames.get(&[f, 0, 1]) < s.frames.get(&[f - 1, 0, 1]));
        }
        assert!(s.frames.get(&[0, 0, 1]) - s.frames.get(&[119, 0, 1]) > 250.0);
    }

    #[test]
    fn seeded_generation_is_bitwise_reproducible() {
        let a = gen(SynthClass::Figure8Drift, 50, 0.05, 9);
        let b = gen(SynthClass::Figure8Drift, 50, 0.05, 9);
        let c = gen(SynthClass::Figure8Drift, 50, 0.05, 10);
        assert!(a.frames.data().iter().zip(b.frames.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn unknown_class_is_a_config_error() {
        assert!(matches!("jump".parse::<SynthClass>(), Err(Error::Config(_))));
        assert_eq!("wave_arm".parse::<SynthClass>().unwrap(), SynthClass::WaveArm);
    }
}
