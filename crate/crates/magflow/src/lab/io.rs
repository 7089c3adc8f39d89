//! TOML schemas for models and experiment configs, atomic file output, and
//! the append-only run index.

use super::LabError;
use crate::fourier::{TrigMode, TrigPoly};
use crate::model::{ConformalFactor, MagneticModel, TwoForm};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// One Fourier mode: `a cos(k.q) + b sin(k.q)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpec {
    pub k: Vec<i64>,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PolySpec {
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
}

impl PolySpec {
    fn to_poly(&self, dim: usize) -> Result<TrigPoly, LabError> {
        for m in &self.modes {
            if m.k.len() != dim {
                return Err(LabError::Schema(format!(
                    "wavevector {:?} has length {}, expected {}",
                    m.k,
                    m.k.len(),
                    dim
                )));
            }
        }
        Ok(TrigPoly::from_modes(
            dim,
            self.modes.iter().map(|m| TrigMode { k: m.k.clone(), a: m.a, b: m.b }),
        ))
    }

    fn from_poly(p: &TrigPoly) -> Self {
        PolySpec {
            modes: p
                .modes()
                .iter()
                .map(|m| ModeSpec { k: m.k.clone(), a: m.a, b: m.b })
                .collect(),
        }
    }
}

/// One independent component `beta_{ij}`, `i < j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaComponentSpec {
    pub i: usize,
    pub j: usize,
    pub modes: Vec<ModeSpec>,
}

/// On-disk model: dimension, conformal factor, magnetic 2-form. The gauge
/// data is always recomputed on load, so files stay small and canonical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub schema_version: u32,
    pub dim: usize,
    pub lambda: PolySpec,
    #[serde(default)]
    pub beta: Vec<BetaComponentSpec>,
}

impl ModelSpec {
    pub fn to_model(&self) -> Result<MagneticModel, LabError> {
        if self.schema_version != 1 {
            return Err(LabError::Schema(format!(
                "unsupported model schema_version {}",
                self.schema_version
            )));
        }
        if self.dim < 2 || self.dim > 4 {
            return Err(LabError::Schema(format!("dim {} out of range 2..=4", self.dim)));
        }
        let lambda = ConformalFactor::new(self.lambda.to_poly(self.dim)?)?;
        let mut beta = TwoForm::zero(self.dim);
        for c in &self.beta {
            if c.i >= c.j || c.j >= self.dim {
                return Err(LabError::Schema(format!(
                    "beta component indices ({}, {}) must satisfy i < j < dim",
                    c.i, c.j
                )));
            }
            let p = PolySpec { modes: c.modes.clone() }.to_poly(self.dim)?;
            beta.set(c.i, c.j, beta.component(c.i, c.j).add(&p));
        }
        Ok(MagneticModel::new(lambda, beta)?)
    }

    pub fn from_model(model: &MagneticModel) -> Self {
        let n = model.dim();
        let mut beta = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let c = model.beta().component(i, j);
                if !c.is_zero() {
                    beta.push(BetaComponentSpec {
                        i,
                        j,
                        modes: PolySpec::from_poly(c).modes,
                    });
                }
            }
        }
        ModelSpec {
            schema_version: 1,
            dim: n,
            lambda: PolySpec::from_poly(model.lambda().poly()),
            beta,
        }
    }
}

pub fn load_model(path: &Path) -> Result<MagneticModel, LabError> {
    let text = fs::read_to_string(path)?;
    let spec: ModelSpec = toml::from_str(&text)?;
    spec.to_model()
}

/// Write a model file. `f64` round-trips exactly through the shortest decimal
/// representation used by TOML, so save/load is lossless.
pub fn save_model(model: &MagneticModel, path: &Path) -> Result<(), LabError> {
    let spec = ModelSpec::from_model(model);
    let text = toml::to_string_pretty(&spec).expect("model spec serializes");
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn default_schema() -> u32 {
    1
}
fn default_horizon() -> f64 {
    10.0
}
fn default_tol() -> f64 {
    1e-10
}
fn default_samples() -> usize {
    100
}
fn default_sphere() -> usize {
    16
}
fn default_times() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}

/// Experiment parameters. Every field has a default, so a config file only
/// names what it changes; command-line flags override file values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Bundled model name or path to a model TOML file.
    #[serde(default)]
    pub model: Option<String>,
    /// Inline model, used when `model` is absent.
    #[serde(default)]
    pub model_inline: Option<ModelSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Per-axis torus grid size; `0` picks one from the model's bandwidth.
    #[serde(default)]
    pub grid: usize,
    #[serde(default = "default_sphere")]
    pub sphere: usize,
    /// Backward horizons for the stable-field limit.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Optional explicit initial condition (otherwise seeded draws).
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
    #[serde(default)]
    pub p0: Option<Vec<f64>>,
    /// `"twisted"` (default) or `"gauged"`.
    #[serde(default)]
    pub formulation: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn resolve_model(&self) -> Result<MagneticModel, LabError> {
        if let Some(name) = &self.model {
            if let Some(m) = super::bundled_model(name) {
                return Ok(m);
            }
            let path = Path::new(name);
            if path.exists() {
                return load_model(path);
            }
            return Err(LabError::Schema(format!(
                "model '{name}' is neither a bundled name ({}) nor an existing file",
                super::bundled_model_names().join(", ")
            )));
        }
        if let Some(spec) = &self.model_inline {
            return spec.to_model();
        }
        Ok(super::bundled_model("flat-b1").expect("default model exists"))
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.schema_version != 1 {
            return Err(LabError::Schema(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(LabError::Schema("horizon must be positive".into()));
        }
        if !(1e-13..=1e-4).contains(&self.tol) {
            return Err(LabError::Schema("tol must lie in [1e-13, 1e-4]".into()));
        }
        if self.samples == 0 {
            return Err(LabError::Schema("samples must be positive".into()));
        }
        if self.sphere < 4 || self.sphere % 2 != 0 {
            return Err(LabError::Schema("sphere must be an even count >= 4".into()));
        }
        if self.times.is_empty() || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Schema("times must be strictly increasing".into()));
        }
        if let Some(f) = &self.formulation {
            if f != "twisted" && f != "gauged" {
                return Err(LabError::Schema(format!(
                    "formulation must be \"twisted\" or \"gauged\", got \"{f}\""
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_formulation(&self) -> crate::model::Formulation {
        match self.formulation.as_deref() {
            Some("gauged") => crate::model::Formulation::Gauged,
            _ => crate::model::Formulation::Twisted,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, LabError> {
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Write via a temporary sibling plus rename, so readers never observe a
/// half-written file and a failed run leaves no partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = path.with_extension(format!(
        "{}.tmp-{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// One line of the append-only `runs.jsonl` index. This is the only place a
/// wall-clock time appears; the artifacts themselves are deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub timestamp_unix: u64,
    pub kind: String,
    pub seed: u64,
    pub model_hash: String,
    pub output: Option<String>,
    pub summary: serde_json::Value,
}

pub fn append_run_record(dir: &Path, record: &RunRecord) -> std::io::Result<()> {
    use std::io::Write;
    fs::create_dir_all(dir)?;
    let line = serde_json::to_string(record).expect("record serializes");
    let mut f = fs::OpenOptions::new().create(true).append(true).open(dir.join("runs.jsonl"))?;
    writeln!(f, "{line}")
}
