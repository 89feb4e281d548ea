use serde::{Deserialize, Serialize};
use std::path::Path;

use super::Representation;
use crate::error::{Error, Result};

pub const SKELETON_SCHEMA_VERSION: u32 = 1;

/// Joint names, parent links and channel count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Parent index per joint, `-1` for the root.
    pub parents: Vec<i64>,
    pub channels: usize,
}

impl Skeleton {
    pub fn new(joint_names: Vec<String>, parents: Vec<i64>, channels: usize) -> Result<Self> {
        let s = Self {
            joint_names,
            parents,
            channels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Exactly one root, parents in range, no cycles.
    pub fn validate(&self) -> Result<()> {
        let n = self.joints();
        if n == 0 {
            return Err(Error::Config("skeleton has no joints".into()));
        }
        if self.parents.len() != n {
            return Err(Error::Config(format!(
                "{} joint names but {} parent entries",
                n,
                self.parents.len()
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("skeleton channel count must be positive".into()));
        }
        let roots = self.parents.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::Config(format!("skeleton needs exactly one root, found {roots}")));
        }
        for (j, &p) in self.parents.iter().enumerate() {
            if p != -1 && (p < 0 || p as usize >= n || p as usize == j) {
                return Err(Error::Config(format!("joint {j} has invalid parent {p}")));
            }
        }
        for start in 0..n {
            let mut j = start;
            for _ in 0..=n {
                match self.parents[j] {
                    -1 => break,
                    p => j = p as usize,
                }
            }
            if self.parents[j] != -1 {
                return Err(Error::Config(format!("parent links from joint {start} form a cycle")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.joint_names {
            if name.is_empty() || name.contains(',') || !seen.insert(name) {
                return Err(Error::Config(format!("invalid or duplicate joint name `{name}`")));
            }
        }
        Ok(())
    }

    pub fn root(&self) -> usize {
        self.parents.iter().position(|&p| p == -1).expect("validated")
    }

    /// CSV column names, joint-major: `<joint>_<channel>`.
    pub fn column_names(&self) -> Vec<String> {
        self.joint_names
            .iter()
            .flat_map(|j| (0..self.channels).map(move |c| format!("{j}_{c}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub name: String,
    pub parent: i64,
}

/// Sidecar descriptor file accompanying motion CSVs.
///
/// ```toml
/// schema_version = 1
/// channels = 3
/// representation = "coords3d"
/// rate_hz = 25.0
/// root_translation = false
///
/// [[joints]]
/// name = "pelvis"
/// parent = -1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDescriptor {
    pub schema_version: u32,
    pub channels: usize,
    pub representation: Representation,
    pub rate_hz: f64,
    /// For exponential-map data: the root joint's channels carry global
    /// translation and are left out of the angle loss.
    #[serde(default)]
    pub root_translation: bool,
    pub joints: Vec<JointEntry>,
}

impl SkeletonDescriptor {
    pub fn new(skeleton: &Skeleton, representation: Representation, rate_hz: f64) -> Self {
        Self {
            schema_version: SKELETON_SCHEMA_VERSION,
            channels: skeleton.channels,
            representation,
            rate_hz,
            root_translation: false,
            joints: skeleton
                .joint_names
                .iter()
                .zip(&skeleton.parents)
                .map(|(name, &parent)| JointEntry {
                    name: name.clone(),
                    parent,
                })
                .collect(),
        }
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        if self.schema_version != SKELETON_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported skeleton schema version {} (expected {SKELETON_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::Config(format!("rate_hz must be positive, got {}", self.rate_hz)));
        }
        Skeleton::new(
            self.joints.iter().map(|j| j.name.clone()).collect(),
            self.joints.iter().map(|j| j.parent).collect(),
            self.channels,
        )
    }

    /// Joints that count towards the angle loss.
    pub fn loss_joint_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.joints.len()];
        if self.representation == Representation::Expmap && self.root_translation {
            if let Some(root) = self.joints.iter().position(|j| j.parent == -1) {
                mask[root] = false;
            }
        }
        mask
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("skeleton descriptor: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
