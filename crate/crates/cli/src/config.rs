//! Run configuration read from TOML.

use famhe_core::bundle::Preset;
use famhe_core::flow::Scheme;
use famhe_core::geometry::{BaseKind, GridSpec};
use famhe_core::verify::VerifyConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] famhe_core::Error),
}

type Matrix = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    pub deformation: DeformationConfig,
    pub flow: FlowSection,
    pub adiabatic: AdiabaticSection,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            grid: GridSpec::torus(16, 16),
            deformation: DeformationConfig::default(),
            flow: FlowSection::default(),
            adiabatic: AdiabaticSection::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// A named preset, or inline constant matrices when `preset = "custom"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationConfig {
    pub preset: String,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub av: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ah: Option<Matrix>,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig { preset: "nilpotent_constant".into(), epsilon: 0.3, av: None, ah: None }
    }
}

impl DeformationConfig {
    pub fn preset(&self) -> Result<Preset, ConfigError> {
        if self.preset == "custom" {
            let av = self.av.clone().ok_or_else(|| ConfigError::Invalid("preset 'custom' needs deformation.av".into()))?;
            return Ok(Preset::Custom { av, ah: self.ah.clone() });
        }
        if self.av.is_some() || self.ah.is_some() {
            return Err(ConfigError::Invalid("deformation.av and deformation.ah are only read for preset 'custom'".into()));
        }
        Ok(Preset::from_name(&self.preset, self.epsilon)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub tol: f64,
    pub scheme: Scheme,
    pub max_steps: usize,
    /// Amplitude of the seeded random initial log-metric.
    pub initial_amplitude: f64,
    /// Highest base Fourier mode of the initial log-metric.
    pub initial_modes: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            lambda: 1.0,
            dt: None,
            t_end: 0.1,
            tol: 1e-8,
            scheme: Scheme::Rk4,
            max_steps: 1_000_000,
            initial_amplitude: 0.3,
            initial_modes: 2,
        }
    }
}

/// Which data the `adiabatic` command sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Testbed {
    /// The configured deformation along a linear path with the flat metric.
    Preset,
    /// A second-order path with a curved vertically flat metric, together
    /// with the approximate solutions built from it.
    SecondOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdiabaticSection {
    pub lambda: f64,
    pub k_list: Vec<f64>,
    pub testbed: Testbed,
}

impl Default for AdiabaticSection {
    fn default() -> Self {
        AdiabaticSection { lambda: 1.0, k_list: vec![16.0, 32.0, 64.0, 128.0], testbed: Testbed::Preset }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} = {v} must be positive and finite")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if g.fibre_n < 4 || g.base_n.iter().any(|n| *n < 4) {
            return Err(ConfigError::Invalid("grid sizes must be at least 4".into()));
        }
        if g.base_kind == BaseKind::Annulus && g.base_n[0] % 2 == 0 {
            return Err(ConfigError::Invalid(format!("annulus radial count {} must be odd", g.base_n[0])));
        }
        positive("grid.k", g.k)?;
        self.deformation.preset()?;
        let f = &self.flow;
        positive("flow.lambda", f.lambda)?;
        positive("flow.t_end", f.t_end)?;
        positive("flow.tol", f.tol)?;
        if let Some(dt) = f.dt {
            positive("flow.dt", dt)?;
        }
        if !(f.initial_amplitude >= 0.0 && f.initial_amplitude.is_finite()) {
            return Err(ConfigError::Invalid("flow.initial_amplitude must be non-negative".into()));
        }
        // Random initial data stay in the well-resolved part of the spectrum.
        let radial_limit = if g.base_kind == BaseKind::Annulus { g.base_n[0] / 6 } else { g.base_n[0] / 3 };
        if f.initial_modes > radial_limit.min(g.base_n[1] / 3) {
            return Err(ConfigError::Invalid(format!("flow.initial_modes = {} is too high for this grid", f.initial_modes)));
        }
        if f.max_steps == 0 {
            return Err(ConfigError::Invalid("flow.max_steps must be positive".into()));
        }
        let a = &self.adiabatic;
        positive("adiabatic.lambda", a.lambda)?;
        if a.k_list.len() < 2 || a.k_list.iter().any(|k| !(*k > 0.0)) || a.k_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::Invalid("adiabatic.k_list needs at least two positive, strictly increasing values".into()));
        }
        Ok(())
    }
}
