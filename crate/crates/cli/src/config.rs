use crate::error::CliError;
use rmt_core::{mesh_disk, mesh_rectangle, validate_params, InitialPreset, LyapunovConfig, Mesh, PlateParams, PresetKind, ThermalBc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometryConfig {
    Disk { radius: f64, h_target: f64 },
    Rectangle { lx: f64, ly: f64, h_target: f64 },
}

impl GeometryConfig {
    pub fn h_target(&self) -> f64 {
        match *self {
            GeometryConfig::Disk { h_target, .. } | GeometryConfig::Rectangle { h_target, .. } => h_target,
        }
    }

    /// Same domain at a different resolution.
    pub fn with_h(&self, h: f64) -> Self {
        match *self {
            GeometryConfig::Disk { radius, .. } => GeometryConfig::Disk { radius, h_target: h },
            GeometryConfig::Rectangle { lx, ly, .. } => GeometryConfig::Rectangle { lx, ly, h_target: h },
        }
    }

    pub fn build(&self) -> Result<Mesh, CliError> {
        match *self {
            GeometryConfig::Disk { radius, h_target } => mesh_disk(radius, h_target),
            GeometryConfig::Rectangle { lx, ly, h_target } => mesh_rectangle(lx, ly, h_target),
        }
        .map_err(|e| CliError::config("geometry", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// Either a fixed step or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Fixed(f64),
    Keyword(AutoKeyword),
}

impl Default for DtSpec {
    fn default() -> Self {
        DtSpec::Keyword(AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub dt: DtSpec,
    pub t_end: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { dt: DtSpec::default(), t_end: 10.0 }
    }
}

fn default_ic() -> InitialPreset {
    InitialPreset::new(PresetKind::RadialGaussian)
}

fn default_params() -> Value {
    Value::Object(Default::default())
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_solver_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default = "default_params")]
    pub params: Value,
    #[serde(default = "default_ic")]
    pub ic: InitialPreset,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub thermal_bc: ThermalBc,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let raw: Value = serde_json::from_str(text).map_err(|e| CliError::config("<document>", e))?;
        Self::from_value(raw)
    }

    /// Parses and validates; `params` is replaced by the full resolved map so
    /// that the echoed config is self-contained.
    pub fn from_value(raw: Value) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(|e| CliError::config(field_of(&e), e))?;
        let p = cfg.plate_params()?;
        cfg.params = p.to_value();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn plate_params(&self) -> Result<PlateParams, CliError> {
        validate_params(&self.params).map_err(|e| CliError::config("params", e))
    }

    fn validate(&self) -> Result<(), CliError> {
        let h = self.geometry.h_target();
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::config("geometry.h_target", "must be positive"));
        }
        if !(self.time.t_end > 0.0 && self.time.t_end.is_finite()) {
            return Err(CliError::config("time.t_end", "must be positive"));
        }
        if let DtSpec::Fixed(dt) = self.time.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::config("time.dt", "must be positive or \"auto\""));
            }
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return Err(CliError::config("solver_tol", "must lie in (0, 1)"));
        }
        self.ic.validate().map_err(|e| CliError::config("ic", e))?;
        self.lyapunov.validate().map_err(|e| CliError::config("lyapunov", e))?;
        Ok(())
    }

    /// Resolved step: the configured value or the dynamics default for the mesh.
    pub fn resolve_dt(&self, p: &PlateParams, mesh: &Mesh) -> f64 {
        match self.time.dt {
            DtSpec::Fixed(dt) => dt,
            DtSpec::Keyword(AutoKeyword::Auto) => p.default_dt(mesh.h),
        }
    }
}

/// Best-effort name of the offending field from a serde message.
fn field_of(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<document>".to_string()
}
