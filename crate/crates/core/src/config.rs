//! TOML experiment configuration.
//!
//! One file describes the plant, the network channels, the timing data, an
//! optional design (explicit gains with Lyapunov certificates), an optional
//! gain template for synthesis, the pipeline and search knobs and the
//! simulation scenarios. [`ExperimentConfig::resolve`] fills every default
//! explicitly, and reports embed the resolved form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{PipelineKnobs, TimingSpec};
use crate::design::{DesignResult, GainTemplate, SearchConfig};
use crate::error::{Error, Result};
use crate::hybridsim::{InitialCondition, SchedulePolicy, SignalSpec, Signals, SimOptions};
use crate::model::PlantParams;
use crate::protocols::Channels;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignObjective {
    /// Maximize `ε* T*`.
    #[default]
    MaxMati,
    /// Minimize `γ_f`, then `γ_s`.
    MinGamma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub us: Vec<SignalSpec>,
    #[serde(default)]
    pub v1: Vec<SignalSpec>,
    #[serde(default)]
    pub v2: Vec<SignalSpec>,
}

impl Scenario {
    pub fn signals(&self) -> Signals {
        Signals { us: self.us.clone(), v1: self.v1.clone(), v2: self.v2.clone() }
    }
}

fn default_horizon() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub policy: SchedulePolicy,
    pub initial: InitialCondition,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub options: SimOptions,
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantParams,
    /// Defaults to zeroing protocols on every channel.
    #[serde(default)]
    pub channels: Option<Channels>,
    pub timing: TimingSpec,
    /// Explicit gains and certificates, required by `verify`, `mati` and
    /// `simulate`.
    #[serde(default)]
    pub design: Option<DesignResult>,
    /// Gain template, required by `design`.
    #[serde(default)]
    pub template: Option<GainTemplate>,
    #[serde(default)]
    pub objective: Option<DesignObjective>,
    #[serde(default)]
    pub pipeline: Option<PipelineKnobs>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fill every default and check dimensions across sections.
    pub fn resolve(mut self) -> Result<Self> {
        self.plant.validate()?;
        let channels = self.channels.take().unwrap_or_else(|| Channels::zeroing(&self.plant));
        channels.validate(&self.plant)?;
        self.channels = Some(channels);
        self.timing.validate()?;
        let pipeline = self.pipeline.take().unwrap_or_default();
        pipeline.validate()?;
        self.pipeline = Some(pipeline);
        let search = self.search.take().unwrap_or_default();
        search.validate()?;
        self.search = Some(search);
        self.objective = Some(self.objective.unwrap_or_default());
        self.output_dir = Some(self.output_dir.take().unwrap_or_else(|| PathBuf::from("out")));
        if let Some(d) = &self.design {
            d.gains.validate(&self.plant)?;
            let (nx, nz) = (self.plant.nx(), self.plant.nz());
            if d.ps.dim() != nx || d.pf.dim() != nz {
                return Err(Error::DimensionMismatch(format!("Ps must be {nx}x{nx} and Pf {nz}x{nz}")));
            }
        }
        if let Some(t) = &self.template {
            t.validate(&self.plant)?;
        }
        if let Some(s) = &self.simulation {
            s.policy.validate()?;
            if !(s.horizon > 0.0) {
                return Err(Error::InvalidConfig("simulation horizon must be positive".into()));
            }
            if s.scenarios.is_empty() {
                return Err(Error::InvalidConfig("simulation needs at least one scenario".into()));
            }
            let mut names: Vec<&str> = s.scenarios.iter().map(|c| c.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            if names.len() != s.scenarios.len() {
                return Err(Error::InvalidConfig("scenario names must be unique".into()));
            }
            if s.scenarios.iter().any(|c| c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch))) {
                return Err(Error::InvalidConfig("scenario names may only use [A-Za-z0-9._-]".into()));
            }
            let (nx, nz) = (self.plant.nx(), self.plant.nz());
            if s.initial.xp.len() != nx || s.initial.zp.len() != nz {
                return Err(Error::DimensionMismatch("initial condition does not match the plant".into()));
            }
        }
        Ok(self)
    }

    /// Replace every seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.pipeline.get_or_insert_with(Default::default).seed = seed;
        self.search.get_or_insert_with(Default::default).seed = seed;
        if let Some(s) = &mut self.simulation {
            s.policy.seed = seed;
        }
    }

    pub fn channels(&self) -> Channels {
        self.channels.clone().unwrap_or_else(|| Channels::zeroing(&self.plant))
    }

    pub fn pipeline(&self) -> PipelineKnobs {
        self.pipeline.clone().unwrap_or_default()
    }

    pub fn search(&self) -> SearchConfig {
        self.search.clone().unwrap_or_default()
    }

    pub fn require_design(&self) -> Result<&DesignResult> {
        self.design.as_ref().ok_or_else(|| Error::InvalidConfig("missing [design] section".into()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[plant]
A11 = [[0.001, 0.0], [0.0, -1.2]]
A12 = [[0.37, 0.0], [0.0, 0.0]]
A21 = [[0.0, 0.0], [1.1, 0.0]]
A22 = [[-0.37, 0.0], [-0.37, -4.9]]
B1 = [[0.0], [0.97]]
B2 = [[0.0], [0.1]]
C1s = [[-0.03, 1.9]]
C2s = [[-1.0, 0.0]]
C2f = [[0.0, -1.0]]
epsilon = 0.016

[timing]
tau_mati_s = 0.15
tau_miati_s = 0.000149
lambda_s_star = 0.33
lambda_f_star = 0.456
eta_s = [0.1, 0.1, 0.5]
"#;

    #[test]
    fn minimal_config_resolves_with_explicit_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(c.pipeline.as_ref().unwrap().mu_frac, 0.6);
        assert_eq!(c.search.as_ref().unwrap().restarts, 32);
        assert!(c.channels.is_some());
        let again = c.clone().resolve().unwrap();
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bad_plant_shape_is_rejected() {
        let text = MINIMAL.replace("B2 = [[0.0], [0.1]]", "B2 = [[0.0, 1.0], [0.1, 2.0]]");
        assert!(ExperimentConfig::from_toml(&text).unwrap().resolve().is_err());
    }
}
