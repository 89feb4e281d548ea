use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use gagcn::decoder::{ModelConfig, ResidualMode, TcnConfig};
use gagcn::gagcn::EncoderKind;
use gagcn::motiondata::{
    load_motion_csv, make_windows, split_windows, synth_dataset, synth_skeleton, MotionSequence, Representation,
    SkeletonDescriptor, SynthClass, WindowSet, SYNTH_RATE_HZ,
};
use gagcn::trainer::{AblationConfig, LossKind, TrainConfig};
use gagcn::{Activation, Error, Precision, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub classes: Vec<SynthClass>,
    pub sequences_per_class: usize,
    pub duration_frames: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            classes: SynthClass::ALL.to_vec(),
            sequences_per_class: 4,
            duration_frames: 100,
            noise_scale: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    /// Skeleton descriptor, relative to the config file.
    pub descriptor: PathBuf,
    /// Motion CSVs, relative to the config file.
    pub files: Vec<PathBuf>,
    /// Integer-stride downsampling target.
    #[serde(default)]
    pub target_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_stride")]
    pub window_stride: usize,
    /// Fraction of windows held out for validation and evaluation.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub synthetic: Option<SyntheticData>,
    #[serde(default)]
    pub csv: Option<CsvData>,
}

fn default_stride() -> usize {
    5
}

fn default_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub layers: usize,
    pub spatial_candidates: usize,
    pub temporal_candidates: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    pub encoder: EncoderKind,
    pub activation: Activation,
    pub residual: ResidualMode,
    pub input_scale: f64,
    pub precision: Precision,
    pub gate_hidden: Option<(usize, usize)>,
    pub tcn: TcnConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(1, 1);
        Self {
            width: gagcn::decoder::DEFAULT_WIDTH,
            layers: gagcn::decoder::DEFAULT_LAYERS,
            spatial_candidates: base.spatial_candidates,
            temporal_candidates: base.temporal_candidates,
            input_frames: base.input_frames,
            output_frames: base.output_frames,
            encoder: base.encoder,
            activation: base.activation,
            residual: base.residual,
            input_scale: base.input_scale,
            precision: base.precision,
            gate_hidden: base.gate_hidden,
            tcn: base.tcn,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, joints: usize, channels: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(joints, channels).with_width(self.width, self.layers);
        cfg.spatial_candidates = self.spatial_candidates;
        cfg.temporal_candidates = self.temporal_candidates;
        cfg.input_frames = self.input_frames;
        cfg.output_frames = self.output_frames;
        cfg.encoder = self.encoder;
        cfg.activation = self.activation;
        cfg.residual = self.residual;
        cfg.input_scale = self.input_scale;
        cfg.precision = self.precision;
        cfg.gate_hidden = self.gate_hidden;
        cfg.tcn = self.tcn.clone();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Experiment file for `train` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// Experiment file for `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateFile {
    #[serde(default)]
    pub ablation: AblationConfig,
    pub output: OutputConfig,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!("config file {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    /// Parses and resolves data paths against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = base_dir(path);
        if let Some(csv) = &mut cfg.data.csv {
            csv.descriptor = base.join(&csv.descriptor);
            csv.files = csv.files.iter().map(|f| base.join(f)).collect();
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        if d.window_stride == 0 {
            return Err(Error::Config("data.window_stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(Error::Config(format!(
                "data.validation_fraction must be in [0, 1), got {}",
                d.validation_fraction
            )));
        }
        match d.source {
            DataSource::Synthetic => {
                let s = d.synthetic.clone().unwrap_or_default();
                if s.classes.is_empty() || s.sequences_per_class == 0 {
                    return Err(Error::Config("data.synthetic needs at least one class and sequence".into()));
                }
            }
            DataSource::Csv => {
                let csv = d
                    .csv
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.source = \"csv\" requires a [data.csv] section".into()))?;
                if csv.files.is_empty() {
                    return Err(Error::Config("data.csv.files is empty".into()));
                }
                for p in std::iter::once(&csv.descriptor).chain(&csv.files) {
                    if !p.exists() {
                        return Err(Error::Config(format!("data path {} does not exist", p.display())));
                    }
                }
            }
        }
        let (joints, channels) = (1, 3);
        self.model.to_model_config(joints, channels).validate()
    }

    pub fn loss_kind_for(&self, repr: Representation) -> LossKind {
        match repr {
            Representation::Coords3d => LossKind::Mpjpe,
            Representation::Expmap => LossKind::Mae,
        }
    }
}

impl AblateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: AblateFile = read_toml(path)?;
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base_dir(path).join(&cfg.output.dir);
        }
        Ok(cfg)
    }
}

/// Sequences plus their descriptor.
pub struct Dataset {
    pub descriptor: SkeletonDescriptor,
    pub sequences: Vec<MotionSequence>,
}

impl Dataset {
    pub fn load(data: &DataConfig) -> Result<Self> {
        match data.source {
            DataSource::Synthetic => {
                let s = data.synthetic.clone().unwrap_or_default();
                let sequences =
                    synth_dataset(&s.classes, s.sequences_per_class, s.duration_frames, s.noise_scale, s.seed)?;
                let descriptor = SkeletonDescriptor::new(&synth_skeleton(), Representation::Coords3d, SYNTH_RATE_HZ);
                Ok(Self { descriptor, sequences })
            }
            DataSource::Csv => {
                let csv = data.csv.as_ref().expect("validated");
                let mut descriptor = SkeletonDescriptor::load(&csv.descriptor)?;
                let mut sequences = Vec::new();
                for f in &csv.files {
                    let mut seq = load_motion_csv(f, &descriptor)?;
                    if let Some(hz) = csv.target_hz {
                        seq = seq.downsample(hz)?;
                    }
                    sequences.push(seq);
                }
                if let Some(hz) = csv.target_hz {
                    descriptor.rate_hz = hz;
                }
                Ok(Self { descriptor, sequences })
            }
        }
    }

    pub fn joints(&self) -> usize {
        self.descriptor.joints.len()
    }

    /// All windows, shuffled with `seed` and split into (train, validation).
    pub fn windows(
        &self,
        input_frames: usize,
        output_frames: usize,
        stride: usize,
        validation_fraction: f64,
        seed: u64,
    ) -> Result<(WindowSet, WindowSet)> {
        let mut all = WindowSet {
            input_frames,
            output_frames,
            windows: Vec::new(),
        };
        for s in &self.sequences {
            all.extend(make_windows(s, input_frames, output_frames, stride)?)?;
        }
        if all.is_empty() {
            return Err(Error::Config(format!(
                "no sequence is long enough for {input_frames}+{output_frames} frame windows"
            )));
        }
        let mut rng = Rng::new(seed).split_named("validation_split");
        let (val, train) = split_windows(&all, validation_fraction, &mut rng);
        Ok((train, val))
    }
}
