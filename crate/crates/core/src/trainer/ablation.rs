//! Matched-arm comparisons of gated and fixed adjacency on synthetic motion.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::eval::{evaluate_horizons, AveragingMode, ZeroVelocity};
use super::metrics::DEFAULT_HORIZONS_MS;
use super::report::write_rows;
use super::train::{prepare_windows, train};
use super::{LossKind, TrainConfig};
use crate::decoder::{GagcnModel, ModelConfig};
use crate::error::{Error, Result};
use crate::gagcn::{frames_to_features, EncoderKind};
use crate::motiondata::{make_windows, synth_dataset, MotionSequence, SynthClass, WindowSet, SYNTH_RATE_HZ};

pub const DEFAULT_SWEEP: [(usize, usize); 5] = [(4, 3), (4, 1), (1, 3), (8, 6), (3, 4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// Fixed-adjacency arm against the gated arm, seen and held-out classes.
    #[default]
    GatedVsStableUnseen,
    /// Gated arms over several (n, m) candidate counts.
    CandidateSweep,
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationSuite::GatedVsStableUnseen => "gated_vs_stable_unseen",
            AblationSuite::CandidateSweep => "candidate_sweep",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub suite: AblationSuite,
    pub classes: Vec<SynthClass>,
    /// Excluded from training and reported as the unseen split.
    pub held_out: SynthClass,
    pub seeds: Vec<u64>,
    pub train_sequences_per_class: usize,
    pub test_sequences_per_class: usize,
    pub duration_frames: usize,
    pub noise_scale: f64,
    pub window_stride: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    pub width: usize,
    pub layers: usize,
    /// Candidate counts of the gated arm in the gated/stable suite.
    pub spatial_candidates: usize,
    pub temporal_candidates: usize,
    pub sweep: Vec<(usize, usize)>,
    pub horizons_ms: Vec<u32>,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            suite: AblationSuite::GatedVsStableUnseen,
            classes: SynthClass::ALL.to_vec(),
            held_out: SynthClass::WalkCycle,
            seeds: vec![0, 1, 2, 3, 4],
            train_sequences_per_class: 4,
            test_sequences_per_class: 2,
            duration_frames: 100,
            noise_scale: 0.02,
            window_stride: 5,
            input_frames: 10,
            output_frames: 25,
            width: 32,
            layers: 4,
            spatial_candidates: 4,
            temporal_candidates: 3,
            sweep: DEFAULT_SWEEP.to_vec(),
            horizons_ms: DEFAULT_HORIZONS_MS.to_vec(),
            train: TrainConfig {
                epochs: 30,
                batch_size: 16,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.classes.contains(&self.held_out) {
            return Err(Error::Config(format!("held_out class {} is not in classes", self.held_out)));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("ablation needs at least two classes".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        if self.train_sequences_per_class == 0 || self.test_sequences_per_class == 0 {
            return Err(Error::Config("sequence counts must be positive".into()));
        }
        if self.suite == AblationSuite::CandidateSweep && self.sweep.is_empty() {
            return Err(Error::Config("candidate sweep needs at least one (n, m) row".into()));
        }
        self.model_config(EncoderKind::Gated, 1, 1).validate()
    }

    /// Model for one arm; arms differ only in encoder kind and candidate counts.
    pub fn model_config(&self, kind: EncoderKind, n: usize, m: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(12, 3).with_width(self.width, self.layers);
        cfg.input_frames = self.input_frames;
        cfg.output_frames = self.output_frames;
        cfg.encoder = kind;
        cfg.spatial_candidates = n;
        cfg.temporal_candidates = m;
        cfg
    }

    fn arms(&self) -> Vec<Arm> {
        match self.suite {
            AblationSuite::GatedVsStableUnseen => vec![
                Arm {
                    name: "stable".into(),
                    config: self.model_config(EncoderKind::Stable, 1, 1),
                },
                Arm {
                    name: "gated".into(),
                    config: self.model_config(EncoderKind::Gated, self.spatial_candidates, self.temporal_candidates),
                },
            ],
            AblationSuite::CandidateSweep => self
                .sweep
                .iter()
                .map(|&(n, m)| Arm {
                    name: format!("gated_{n}x{m}"),
                    config: self.model_config(EncoderKind::Gated, n, m),
                })
                .collect(),
        }
    }
}

struct Arm {
    name: String,
    config: ModelConfig,
}

/// Rejects arms that differ in anything but the encoder kind and candidate counts.
pub fn check_fairness(a: &ModelConfig, b: &ModelConfig) -> Result<()> {
    let strip = |c: &ModelConfig| {
        let mut c = c.clone();
        c.encoder = EncoderKind::Gated;
        c.spatial_candidates = 0;
        c.temporal_candidates = 0;
        c
    };
    let (sa, sb) = (strip(a), strip(b));
    if sa != sb {
        let ja = serde_json::to_value(&sa).expect("config serializes");
        let jb = serde_json::to_value(&sb).expect("config serializes");
        let differing: Vec<String> = ja
            .as_object()
            .expect("object")
            .iter()
            .filter(|(k, v)| jb.get(k.as_str()) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        return Err(Error::Config(format!(
            "ablation arms differ beyond the adjacency: {}",
            differing.join(", ")
        )));
    }
    Ok(())
}

/// Seed-averaged errors of one arm at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub arm: String,
    pub spatial_candidates: usize,
    pub temporal_candidates: usize,
    pub horizon_ms: u32,
    pub seen: f64,
    pub unseen: f64,
    pub seen_per_seed: Vec<f64>,
    pub unseen_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub rows: Vec<AblationRow>,
    /// Per seed: largest L1 distance between the class-mean spatial
    /// coefficients of two classes, over layers (first gated arm only).
    pub gate_separation: Vec<f64>,
    /// Per seed and layer: the same distance restricted to one layer.
    pub gate_separation_by_layer: Vec<Vec<f64>>,
}

impl AblationReport {
    pub fn row(&self, arm: &str, horizon_ms: u32) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.arm == arm && r.horizon_ms == horizon_ms)
    }

    pub fn mean_gate_separation(&self) -> f64 {
        self.gate_separation.iter().sum::<f64>() / self.gate_separation.len().max(1) as f64
    }

    /// Machine-readable `key=value` pairs.
    pub fn summary(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("suite", self.suite.to_string());
        let horizon = self.rows.iter().map(|r| r.horizon_ms).max().unwrap_or(0);
        kv.insert("horizon_ms", horizon.to_string());
        if self.suite == AblationSuite::GatedVsStableUnseen {
            if let (Some(g), Some(s)) = (self.row("gated", horizon), self.row("stable", horizon)) {
                kv.insert("gated_unseen", format!("{:.6}", g.unseen));
                kv.insert("stable_unseen", format!("{:.6}", s.unseen));
                kv.insert("gated_seen", format!("{:.6}", g.seen));
                kv.insert("stable_seen", format!("{:.6}", s.seen));
                kv.insert("gated_le_stable_unseen", (g.unseen <= s.unseen).to_string());
            }
        } else {
            let best = self
                .rows
                .iter()
                .filter(|r| r.horizon_ms == horizon && r.arm != "zero_velocity")
                .min_by(|a, b| a.unseen.total_cmp(&b.unseen));
            if let Some(b) = best {
                kv.insert("best_unseen_arm", b.arm.clone());
                kv.insert("best_unseen", format!("{:.6}", b.unseen));
            }
        }
        kv.insert("gate_l1", format!("{:.6}", self.mean_gate_separation()));
        kv.insert("seeds", self.gate_separation.len().to_string());
        kv.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }

    /// `arm,n,m,horizon_ms,seen,unseen`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = ["arm", "n", "m", "horizon_ms", "seen", "unseen"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.arm.clone(),
                    r.spatial_candidates.to_string(),
                    r.temporal_candidates.to_string(),
                    r.horizon_ms.to_string(),
                    r.seen.to_string(),
                    r.unseen.to_string(),
                ]
            })
            .collect();
        write_rows(path, &header, &rows)
    }
}

fn windows_of(seqs: &[&MotionSequence], cfg: &AblationConfig) -> Result<WindowSet> {
    let mut set = WindowSet {
        input_frames: cfg.input_frames,
        output_frames: cfg.output_frames,
        windows: Vec::new(),
    };
    for s in seqs {
        set.extend(make_windows(s, cfg.input_frames, cfg.output_frames, cfg.window_stride)?)?;
    }
    Ok(set)
}

struct SeedData {
    train: WindowSet,
    seen_test: WindowSet,
    unseen_test: WindowSet,
}

fn seed_data(cfg: &AblationConfig, seed: u64) -> Result<SeedData> {
    let per_class = cfg.train_sequences_per_class + cfg.test_sequences_per_class;
    let all = synth_dataset(&cfg.classes, per_class, cfg.duration_frames, cfg.noise_scale, seed)?;
    let held = cfg.held_out.name();
    let (mut train_seqs, mut seen_test, mut unseen) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in all.chunks(per_class) {
        if chunk[0].label.as_deref() == Some(held) {
            unseen.extend(chunk[cfg.train_sequences_per_class..].iter());
        } else {
            train_seqs.extend(chunk[..cfg.train_sequences_per_class].iter());
            seen_test.extend(chunk[cfg.train_sequences_per_class..].iter());
        }
    }
    let data = SeedData {
        train: windows_of(&train_seqs, cfg)?,
        seen_test: windows_of(&seen_test, cfg)?,
        unseen_test: windows_of(&unseen, cfg)?,
    };
    if data.train.is_empty() || data.seen_test.is_empty() || data.unseen_test.is_empty() {
        return Err(Error::Config(format!(
            "duration_frames {} is too short for {}+{} frame windows",
            cfg.duration_frames, cfg.input_frames, cfg.output_frames
        )));
    }
    Ok(data)
}

/// Largest class-pair L1 distance of mean spatial coefficients, per layer.
fn gate_separation(model: &GagcnModel, windows: &[&WindowSet]) -> Result<Vec<f64>> {
    let mut by_class: BTreeMap<String, (usize, Vec<Vec<f64>>)> = BTreeMap::new();
    for set in windows {
        for w in &set.windows {
            let coeffs = model.gate_coefficients(&frames_to_features(&w.input)?)?;
            let entry = by_class
                .entry(w.label.clone().unwrap_or_default())
                .or_insert_with(|| (0, coeffs.iter().map(|(s, _)| vec![0.0; s.len()]).collect()));
            entry.0 += 1;
            for (acc, (s, _)) in entry.1.iter_mut().zip(&coeffs) {
                acc.iter_mut().zip(s).for_each(|(a, v)| *a += v);
            }
        }
    }
    let means: Vec<Vec<Vec<f64>>> = by_class
        .values()
        .map(|(count, layers)| {
            layers
                .iter()
                .map(|l| l.iter().map(|v| v / *count as f64).collect())
                .collect()
        })
        .collect();
    let layers = means.first().map(|m| m.len()).unwrap_or(0);
    Ok((0..layers)
        .map(|l| {
            let mut best = 0.0f64;
            for a in 0..means.len() {
                for b in a + 1..means.len() {
                    let d: f64 = means[a][l].iter().zip(&means[b][l]).map(|(x, y)| (x - y).abs()).sum();
                    best = best.max(d);
                }
            }
            best
        })
        .collect())
}

/// Trains every arm on the seen classes of each seed's dataset and reports
/// seed-averaged errors on held-out sequences of seen classes and on the
/// unseen class. A zero-velocity row is included for scale.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let arms = cfg.arms();
    for pair in arms.windows(2) {
        check_fairness(&pair[0].config, &pair[1].config)?;
    }
    let mask = vec![true; 12];
    let mut names: Vec<(String, usize, usize)> = arms
        .iter()
        .map(|a| {
            let (n, m) = match a.config.encoder {
                EncoderKind::Gated => (a.config.spatial_candidates, a.config.temporal_candidates),
                EncoderKind::Stable => (1, 1),
            };
            (a.name.clone(), n, m)
        })
        .collect();
    names.push(("zero_velocity".into(), 0, 0));
    // results[arm][horizon] -> (seen per seed, unseen per seed)
    let mut results: Vec<BTreeMap<u32, (Vec<f64>, Vec<f64>)>> = vec![BTreeMap::new(); names.len()];
    let mut separation = Vec::new();
    let mut separation_by_layer = Vec::new();

    for &seed in &cfg.seeds {
        let data = seed_data(cfg, seed)?;
        let train_set = prepare_windows(&data.train)?;
        let mut record = |k: usize, seen: &super::HorizonReport, unseen: &super::HorizonReport| {
            for (rs, ru) in seen.rows.iter().zip(&unseen.rows) {
                let e = results[k].entry(rs.horizon_ms).or_default();
                e.0.push(rs.value);
                e.1.push(ru.value);
            }
        };
        let mut gate_done = false;
        for (k, arm) in arms.iter().enumerate() {
            let mut model = GagcnModel::new(arm.config.clone(), seed)?;
            let tcfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let outcome = train(&mut model, &train_set, &[], &tcfg, &mask)?;
            if let Some(msg) = outcome.diverged {
                return Err(Error::Numeric(format!("arm {} seed {seed} diverged: {msg}", arm.name)));
            }
            let eval = |set: &WindowSet| {
                evaluate_horizons(
                    &model,
                    set,
                    SYNTH_RATE_HZ,
                    &cfg.horizons_ms,
                    LossKind::Mpjpe,
                    AveragingMode::Cumulative,
                    &mask,
                )
            };
            let (seen, unseen) = (eval(&data.seen_test)?, eval(&data.unseen_test)?);
            log::info!(
                "seed {seed} arm {}: seen {:.3} unseen {:.3} at the longest horizon",
                arm.name,
                seen.rows.last().map(|r| r.value).unwrap_or(f64::NAN),
                unseen.rows.last().map(|r| r.value).unwrap_or(f64::NAN)
            );
            record(k, &seen, &unseen);
            if !gate_done && arm.config.encoder == EncoderKind::Gated {
                let by_layer = gate_separation(&model, &[&data.seen_test, &data.unseen_test])?;
                separation.push(by_layer.iter().copied().fold(0.0, f64::max));
                separation_by_layer.push(by_layer);
                gate_done = true;
            }
        }
        let zv = |set: &WindowSet| {
            evaluate_horizons(
                &ZeroVelocity,
                set,
                SYNTH_RATE_HZ,
                &cfg.horizons_ms,
                LossKind::Mpjpe,
                AveragingMode::Cumulative,
                &mask,
            )
        };
        let (seen, unseen) = (zv(&data.seen_test)?, zv(&data.unseen_test)?);
        record(names.len() - 1, &seen, &unseen);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut rows = Vec::new();
    for ((name, n, m), per_h) in names.iter().zip(&results) {
        for (&h, (seen, unseen)) in per_h {
            rows.push(AblationRow {
                arm: name.clone(),
                spatial_candidates: *n,
                temporal_candidates: *m,
                horizon_ms: h,
                seen: mean(seen),
                unseen: mean(unseen),
                seen_per_seed: seen.clone(),
                unseen_per_seed: unseen.clone(),
            });
        }
    }
    Ok(AblationReport {
        suite: cfg.suite,
        rows,
        gate_separation: separation,
        gate_separation_by_layer: separation_by_layer,
    })
}
