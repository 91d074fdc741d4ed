//! Experiment files: one JSON document with a section per stage. Every
//! stochastic stage draws from a named seed in `seeds`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colmap::{MisalignmentSpec, RegisterConfig};
use crate::fieldgen::FieldSpec;
use crate::io::read_to_string;
use crate::ipp::{MissionConfig, PlannerKind};
use crate::mission::CoordinationScenario;
use crate::posegraph::{DriveSpec, WindowConfig};
use crate::rownav::{SearchGrid, DEFAULT_TOLERANCE};
use crate::spectral::DEFAULT_EXG_THRESHOLD;
use crate::weedops::TreatmentScenario;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub field: u64,
    pub rows: u64,
    pub localize: u64,
    pub register: u64,
    pub plan: u64,
    pub mission: u64,
    pub treat: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { field: 1, rows: 2, localize: 3, register: 4, plan: 5, mission: 6, treat: 7 }
    }
}

impl Seeds {
    pub const NAMES: [&'static str; 7] = ["field", "rows", "localize", "register", "plan", "mission", "treat"];

    fn slot(&mut self, name: &str) -> Option<&mut u64> {
        Some(match name {
            "field" => &mut self.field,
            "rows" => &mut self.rows,
            "localize" => &mut self.localize,
            "register" => &mut self.register,
            "plan" => &mut self.plan,
            "mission" => &mut self.mission,
            "treat" => &mut self.treat,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.clone().slot(name).map(|v| *v)
    }

    pub fn set(&mut self, name: &str, value: u64) -> Result<()> {
        match self.slot(name) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown seed `{name}`; expected one of {}", Seeds::NAMES.join(", ")))),
        }
    }

    /// Applies a `name=value` override.
    pub fn apply_override(&mut self, text: &str) -> Result<()> {
        let (name, value) =
            text.split_once('=').ok_or_else(|| Error::Config(format!("seed override `{text}` is not name=u64")))?;
        let value: u64 =
            value.trim().parse().map_err(|e| Error::Config(format!("seed override `{text}`: {e}")))?;
        self.set(name.trim(), value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenStage {
    /// Raster resolution of the exported grid (m).
    pub cell_size: f64,
    /// Point pitch of the exported surface cloud (m); 0 skips the cloud.
    pub cloud_spacing: f64,
}

impl Default for GenStage {
    fn default() -> Self {
        GenStage { cell_size: 0.02, cloud_spacing: 0.04 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RowsStage {
    pub cell_size: f64,
    pub exg_threshold: f64,
    /// Plant centroids are binned at this resolution before voting (m).
    pub feature_cell: f64,
    pub search: SearchGrid,
    pub tolerance: f64,
}

impl Default for RowsStage {
    fn default() -> Self {
        RowsStage {
            cell_size: 0.01,
            exg_threshold: DEFAULT_EXG_THRESHOLD,
            feature_cell: 0.02,
            search: SearchGrid { spacing_min: 0.3, spacing_max: 0.8, ..Default::default() },
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeStage {
    pub drive: DriveSpec,
    pub window: WindowConfig,
}

impl Default for LocalizeStage {
    fn default() -> Self {
        LocalizeStage { drive: DriveSpec { nodes: 120, ..Default::default() }, window: WindowConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterStage {
    pub case: MisalignmentSpec,
    pub config: RegisterConfig,
    /// Largest accepted RMSE (m); defaults to the matching cell size.
    pub gate: Option<f64>,
}

impl Default for RegisterStage {
    fn default() -> Self {
        RegisterStage { case: MisalignmentSpec::default(), config: RegisterConfig::default(), gate: None }
    }
}

impl RegisterStage {
    pub fn gate(&self) -> f64 {
        self.gate.unwrap_or(self.config.cell_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanStage {
    pub mission: MissionConfig,
    pub budget: f64,
    pub planners: Vec<PlannerKind>,
}

impl Default for PlanStage {
    fn default() -> Self {
        PlanStage {
            mission: MissionConfig { extent: [20.0, 20.0], ..Default::default() },
            budget: 100.0,
            planners: vec![PlannerKind::Cmaes, PlannerKind::Lawnmower],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seeds: Seeds,
    /// Monte Carlo repetitions of `localize`, `register` and `plan`.
    pub trials: usize,
    /// Output root used when neither `--out` nor `AGRISIM_OUT` is given.
    pub output: Option<String>,
    pub field: FieldSpec,
    pub gen: GenStage,
    pub rows: RowsStage,
    pub localize: LocalizeStage,
    pub register: RegisterStage,
    pub plan: PlanStage,
    pub mission: CoordinationScenario,
    pub treat: TreatmentScenario,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seeds: Seeds::default(),
            trials: 1,
            output: None,
            field: FieldSpec::default(),
            gen: GenStage::default(),
            rows: RowsStage::default(),
            localize: LocalizeStage::default(),
            register: RegisterStage::default(),
            plan: PlanStage::default(),
            mission: CoordinationScenario::default(),
            treat: TreatmentScenario::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::parse("scenario", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Scenario::from_json(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::parse(path.display().to_string(), msg),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Content digest of the canonical form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| if e.is_config() { e } else { Error::Config(e.to_string()) };
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.field.validate().map_err(cfg)?;
        if !(self.gen.cell_size > 0.0 && self.gen.cloud_spacing >= 0.0) {
            return Err(Error::Config("gen cell size must be positive".into()));
        }
        if !(self.rows.cell_size > 0.0 && self.rows.feature_cell > 0.0 && self.rows.tolerance >= 0.0) {
            return Err(Error::Config("rows cell sizes must be positive".into()));
        }
        self.rows.search.validate().map_err(cfg)?;
        if self.localize.drive.nodes < 2 || self.localize.window.window_size < 2 {
            return Err(Error::Config("localize needs at least 2 nodes and a window of 2".into()));
        }
        if !(self.register.gate() > 0.0) {
            return Err(Error::Config("register gate must be positive".into()));
        }
        if !(self.plan.budget >= 0.0) || self.plan.planners.is_empty() {
            return Err(Error::Config("plan needs a non-negative budget and at least one planner".into()));
        }
        self.plan.mission.prior().map_err(cfg)?;
        self.mission.validate().map_err(cfg)?;
        self.treat.field.validate().map_err(cfg)?;
        self.treat.bank.validate().map_err(cfg)?;
        if self.treat.speeds.iter().any(|&v| !(v > 0.0)) || self.treat.roughness.iter().any(|&r| !(r >= 0.0)) {
            return Err(Error::Config("treat speeds must be positive and roughness non-negative".into()));
        }
        Ok(())
    }

    /// Seed for repetition `trial` of a stage.
    pub fn trial_seed(base: u64, trial: usize) -> u64 {
        base.wrapping_add(trial as u64)
    }
}
