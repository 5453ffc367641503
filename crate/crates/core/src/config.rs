//! Versioned experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::MarkKind;
use crate::error::{NilError, Result};
use crate::group::IVec;
use crate::highway::Mode;
use crate::norm::NormSpec;
use crate::shape::TargetScaling;

pub const SCHEMA_VERSION: u32 = 1;

/// Weights used by the simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WeightModel {
    /// The stationary construction.
    Field,
    /// Every edge has weight `value` (oracle mode).
    Uniform { value: f64 },
}

/// Pass bands for the calibrated checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub membership: f64,
    /// Band for the median ratio at the largest scheduled scale.
    pub ratio_band: [f64; 2],
    pub hausdorff: f64,
    pub center_slope: [f64; 2],
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            membership: 1e-9,
            ratio_band: [0.8, 1.3],
            hausdorff: 0.3,
            center_slope: [1.7, 2.6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Random walks for the membership audit (on the first seed).
    pub walks: usize,
    pub max_walk: usize,
    /// Targets of the conjugation-symmetry audit.
    pub symmetry_targets: Vec<IVec>,
    /// Sampled edges per seed for the competition census (0 skips it).
    pub competition_edges: usize,
    /// Radii of the center-growth census (Heisenberg only).
    pub center_radii: Vec<u32>,
    /// Scales of the emitted ball clouds.
    pub cloud_scales: Vec<u32>,
    /// Dump the first seed's weights as CSV.
    pub emit_weights: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            walks: 1000,
            max_walk: 200,
            symmetry_targets: Vec::new(),
            competition_edges: 0,
            center_radii: Vec::new(),
            cloud_scales: Vec::new(),
            emit_weights: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// `zd:<d>`, `heisenberg:XY`, `heisenberg:XYZ` or `semidirect-zi`.
    pub group: String,
    pub norm: NormSpec,
    /// Table mode; the model's default when absent.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default = "default_weights")]
    pub weights: WeightModel,
    #[serde(default = "default_marks")]
    pub marks: MarkKind,
    pub seed: u64,
    /// Seed of the boundary sequence `b_n`; the run seed when absent.
    #[serde(default)]
    pub direction_seed: Option<u64>,
    pub n_max: u32,
    /// Largest scale in the schedule.
    pub target_radius: u32,
    /// Word radius of the simulated ball.
    pub search_radius: u32,
    /// Lattice directions; the default fan when absent.
    #[serde(default)]
    pub directions: Option<Vec<IVec>>,
    #[serde(default)]
    pub scaling: TargetScaling,
    pub schedule: Vec<u32>,
    pub seeds: usize,
    pub vertex_budget: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub audits: AuditConfig,
}

fn default_weights() -> WeightModel {
    WeightModel::Field
}

fn default_marks() -> MarkKind {
    MarkKind::Block
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NilError::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Compact JSON used for the config hash.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn direction_seed(&self) -> u64 {
        self.direction_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NilError::Config(m));
        if self.version != SCHEMA_VERSION {
            return bad(format!(
                "config schema version {} (expected {SCHEMA_VERSION})",
                self.version
            ));
        }
        if self.n_max == 0 || self.n_max > crate::marks::MAX_LEVEL {
            return bad(format!("n_max {} outside 1..={}", self.n_max, crate::marks::MAX_LEVEL));
        }
        if self.seeds == 0 || self.vertex_budget == 0 {
            return bad("seeds and vertex_budget must be positive".into());
        }
        if self.schedule.iter().any(|&t| t == 0 || t > self.target_radius) {
            return bad(format!(
                "schedule {:?} must lie in 1..={}",
                self.schedule, self.target_radius
            ));
        }
        if self.search_radius > 0 && self.search_radius < self.target_radius {
            return bad(format!(
                "search radius {} below target radius {}",
                self.search_radius, self.target_radius
            ));
        }
        if (1u64 << self.n_max.min(62)) < 8 * self.search_radius as u64 {
            return bad(format!(
                "2^n_max = 2^{} is below 8 x search radius {}",
                self.n_max, self.search_radius
            ));
        }
        if let WeightModel::Uniform { value } = self.weights {
            if !(value > 0.0 && value.is_finite()) {
                return bad(format!("uniform weight {value} must be positive"));
            }
        }
        let t = &self.tolerances;
        if !(t.membership >= 0.0 && t.hausdorff > 0.0 && t.ratio_band[0] < t.ratio_band[1]) {
            return bad("tolerances out of range".into());
        }
        if self.audits.max_walk == 0 && self.audits.walks > 0 {
            return bad("max_walk must be positive".into());
        }
        Ok(())
    }
}
