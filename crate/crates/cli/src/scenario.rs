//! Scenario files: strict TOML schema, SI resolution and validation.

use std::collections::HashMap;
use std::sync::Arc;

use cpforce_core::atomdyn::{AtomSpec, Level, Numerics, ShiftMode};
use cpforce_core::force::ForceMode;
use cpforce_core::greenfunc::{Layer, LayerStack};
use cpforce_core::material::{MaterialModel, Oscillator, TabulatedResponse};
use cpforce_core::nalgebra::Vector3;
use cpforce_core::num_complex::Complex64;
use cpforce_core::quad::QuadOptions;
use cpforce_core::thermalenv::{KernelCache, TemperatureField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::units::{Dipole, Energy, Frequency, Length, Temperature, Time};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub atom: AtomConfig,
    #[serde(default)]
    pub stack: StackConfig,
    pub temperatures: TemperatureConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    /// Height above the top interface.
    pub position: Length,
    pub levels: Vec<LevelConfig>,
    #[serde(default)]
    pub transitions: Vec<TransitionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub label: String,
    pub energy: Energy,
}

/// `<lower| d |upper> = dipole + i dipole_imag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub lower: String,
    pub upper: String,
    pub dipole: [Dipole; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole_imag: Option<[Dipole; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    /// Top layer first; an empty list means empty space.
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
}

/// One layer; `thickness` is omitted for the bottom (semi-infinite) layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "material", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Vacuum {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thickness: Option<Length>,
    },
    PerfectReflector {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thickness: Option<Length>,
    },
    DrudeLorentz {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thickness: Option<Length>,
        #[serde(default = "one")]
        eps_inf: f64,
        #[serde(default)]
        electric: Vec<OscillatorConfig>,
        #[serde(default)]
        magnetic: Vec<OscillatorConfig>,
    },
    Tabulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thickness: Option<Length>,
        frequency: Vec<Frequency>,
        eps_re: Vec<f64>,
        eps_im: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_re: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_im: Option<Vec<f64>>,
    },
}

impl LayerConfig {
    pub fn thickness(&self) -> Option<Length> {
        match self {
            LayerConfig::Vacuum { thickness }
            | LayerConfig::PerfectReflector { thickness }
            | LayerConfig::DrudeLorentz { thickness, .. }
            | LayerConfig::Tabulated { thickness, .. } => *thickness,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub plasma: Frequency,
    /// Zero for a Drude term.
    #[serde(default)]
    pub resonance: Frequency,
    pub damping: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureConfig {
    pub environment: Temperature,
    /// One per layer; omitted means every layer at the environment temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<Temperature>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceModeConfig {
    #[default]
    FullComplex,
    Perturbative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftModeConfig {
    #[default]
    Perturbative,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_matsubara_rel_tol")]
    pub matsubara_rel_tol: f64,
    #[serde(default)]
    pub force_mode: ForceModeConfig,
    #[serde(default)]
    pub shift_mode: ShiftModeConfig,
    /// Integrand evaluations allowed per adaptive integral.
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
}

fn default_max_evaluations() -> usize {
    400_000
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn default_matsubara_rel_tol() -> f64 {
    1e-10
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            matsubara_rel_tol: default_matsubara_rel_tol(),
            force_mode: ForceModeConfig::default(),
            shift_mode: ShiftModeConfig::default(),
            max_evaluations: default_max_evaluations(),
        }
    }
}

/// Uniform time grid `0, t_end/(points-1), ..., t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Label of the initially populated level.
    pub initial: String,
    pub t_end: Time,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    /// Atom heights.
    Position { values: Vec<Length> },
    /// Uniform temperatures applied to the environment and every layer.
    Temperature { values: Vec<Temperature> },
}

/// A failed check, naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub key: String,
    pub message: String,
}

impl ValidationError {
    fn new(key: impl Into<String>, message: impl ToString) -> Self {
        Self { key: key.into(), message: message.to_string() }
    }
}

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Everything the engine needs, in SI.
#[derive(Debug, Clone)]
pub struct Model {
    pub atom: AtomSpec,
    pub stack: LayerStack,
    pub temps: TemperatureField,
    pub num: Numerics,
    pub force_mode: ForceMode,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ValidationError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ValidationError::new("<document>", e.message()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<document>".to_string() } else { path };
            ValidationError::new(key, e.inner().message())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// SHA-256 of the canonical SI serialisation.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.atom.levels.iter().map(|l| l.label.clone()).collect()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.atom.levels.iter().position(|l| l.label == label)
    }

    pub fn build(&self) -> Result<Model, ValidationError> {
        let stack = self.build_stack()?;
        let atom = self.build_atom()?;
        let temps = self.build_temperatures(&stack)?;
        let n = &self.numerics;
        if !(1e-13..=0.1).contains(&n.rel_tol) {
            return Err(ValidationError::new("numerics.rel_tol", format!("must lie in [1e-13, 0.1], got {}", n.rel_tol)));
        }
        if n.max_evaluations < 100 {
            return Err(ValidationError::new("numerics.max_evaluations", "must be at least 100"));
        }
        if !(n.matsubara_rel_tol > 0.0 && n.matsubara_rel_tol < 1.0) {
            return Err(ValidationError::new(
                "numerics.matsubara_rel_tol",
                format!("must lie in (0, 1), got {}", n.matsubara_rel_tol),
            ));
        }
        let num = Numerics {
            quad: QuadOptions { max_evals: n.max_evaluations, ..QuadOptions::with_rel_tol(n.rel_tol) },
            matsubara_rel_tol: n.matsubara_rel_tol,
            shift_mode: match n.shift_mode {
                ShiftModeConfig::Perturbative => ShiftMode::Perturbative,
                ShiftModeConfig::FixedPoint => ShiftMode::FixedPoint,
            },
            cache: Arc::new(KernelCache::new()),
        };
        let force_mode = match n.force_mode {
            ForceModeConfig::FullComplex => ForceMode::FullComplex,
            ForceModeConfig::Perturbative => ForceMode::Perturbative,
        };
        if let Some(d) = &self.dynamics {
            if self.level_index(&d.initial).is_none() {
                return Err(ValidationError::new("dynamics.initial", format!("unknown level {:?}", d.initial)));
            }
            if d.points < 2 {
                return Err(ValidationError::new("dynamics.points", "need at least 2 grid points"));
            }
            if !(d.t_end.0 > 0.0) {
                return Err(ValidationError::new("dynamics.t_end", "must be positive"));
            }
        }
        match &self.sweep {
            Some(SweepConfig::Position { values }) => {
                if values.is_empty() {
                    return Err(ValidationError::new("sweep.values", "empty sweep"));
                }
                if let Some(i) = values.iter().position(|v| !(v.0 > 0.0)) {
                    return Err(ValidationError::new(format!("sweep.values[{i}]"), "height must be positive"));
                }
            }
            Some(SweepConfig::Temperature { values }) => {
                if values.is_empty() {
                    return Err(ValidationError::new("sweep.values", "empty sweep"));
                }
                if let Some(i) = values.iter().position(|v| !(v.0 >= 0.0)) {
                    return Err(ValidationError::new(format!("sweep.values[{i}]"), "temperature must be >= 0"));
                }
            }
            None => {}
        }
        Ok(Model { atom, stack, temps, num, force_mode })
    }

    fn build_atom(&self) -> Result<AtomSpec, ValidationError> {
        let a = &self.atom;
        if !(a.position.0 > 0.0) {
            return Err(ValidationError::new("atom.position", "the atom must sit above the stack (position > 0)"));
        }
        if a.levels.len() < 2 {
            return Err(ValidationError::new("atom.levels", "need at least two levels"));
        }
        let mut index = HashMap::new();
        for (i, l) in a.levels.iter().enumerate() {
            if index.insert(l.label.as_str(), i).is_some() {
                return Err(ValidationError::new(format!("atom.levels[{i}].label"), format!("duplicate label {:?}", l.label)));
            }
        }
        let n = a.levels.len();
        let mut dip = vec![vec![Vector3::<Complex64>::zeros(); n]; n];
        let mut seen = vec![vec![false; n]; n];
        for (i, t) in a.transitions.iter().enumerate() {
            let key = |f: &str| format!("atom.transitions[{i}].{f}");
            let lo = *index.get(t.lower.as_str()).ok_or_else(|| ValidationError::new(key("lower"), format!("unknown level {:?}", t.lower)))?;
            let up = *index.get(t.upper.as_str()).ok_or_else(|| ValidationError::new(key("upper"), format!("unknown level {:?}", t.upper)))?;
            if lo == up {
                return Err(ValidationError::new(key("upper"), "a transition needs two distinct levels"));
            }
            if seen[lo][up] {
                return Err(ValidationError::new(key("upper"), "transition listed twice"));
            }
            seen[lo][up] = true;
            seen[up][lo] = true;
            let im = t.dipole_imag.unwrap_or_default();
            let d = Vector3::from_fn(|k, _| Complex64::new(t.dipole[k].0, im[k].0));
            dip[lo][up] = d;
            dip[up][lo] = d.conjugate();
        }
        let levels = a.levels.iter().map(|l| Level { label: l.label.clone(), energy: l.energy.0 }).collect();
        AtomSpec::new(levels, dip, a.position.0).map_err(|e| ValidationError::new("atom", e))
    }

    fn build_stack(&self) -> Result<LayerStack, ValidationError> {
        if self.stack.layers.is_empty() {
            return Ok(LayerStack::vacuum());
        }
        let mut layers = Vec::new();
        for (i, l) in self.stack.layers.iter().enumerate() {
            let key = |f: &str| format!("stack.layers[{i}].{f}");
            let material = match l {
                LayerConfig::Vacuum { .. } => MaterialModel::Vacuum,
                LayerConfig::PerfectReflector { .. } => MaterialModel::PerfectReflector,
                LayerConfig::DrudeLorentz { eps_inf, electric, magnetic, .. } => {
                    let osc = |v: &[OscillatorConfig]| {
                        v.iter().map(|o| Oscillator::lorentz(o.plasma.0, o.resonance.0, o.damping.0)).collect()
                    };
                    MaterialModel::DrudeLorentz { eps_inf: *eps_inf, electric: osc(electric), magnetic: osc(magnetic) }
                }
                LayerConfig::Tabulated { frequency, eps_re, eps_im, mu_re, mu_im, .. } => {
                    let n = frequency.len();
                    let ones = vec![1.0; n];
                    let zeros = vec![0.0; n];
                    let cols = [
                        ("eps_re", eps_re),
                        ("eps_im", eps_im),
                        ("mu_re", mu_re.as_ref().unwrap_or(&ones)),
                        ("mu_im", mu_im.as_ref().unwrap_or(&zeros)),
                    ];
                    if let Some((name, _)) = cols.iter().find(|(_, c)| c.len() != n) {
                        return Err(ValidationError::new(key(name), format!("needs {n} entries to match frequency")));
                    }
                    let zip = |re: &[f64], im: &[f64]| re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
                    MaterialModel::Tabulated(TabulatedResponse {
                        omega: frequency.iter().map(|f| f.0).collect(),
                        eps: zip(cols[0].1, cols[1].1),
                        mu: zip(cols[2].1, cols[3].1),
                    })
                }
            };
            material.validate().map_err(|e| ValidationError::new(key("material"), e))?;
            layers.push(Layer { material, thickness: l.thickness().map(|t| t.0) });
        }
        LayerStack::new(layers).map_err(|e| ValidationError::new("stack.layers", e))
    }

    fn build_temperatures(&self, stack: &LayerStack) -> Result<TemperatureField, ValidationError> {
        let t = &self.temperatures;
        let n = stack.layers().len();
        let layers = match &t.layers {
            None => vec![t.environment.0; n],
            Some(v) if self.stack.layers.is_empty() && v.is_empty() => vec![t.environment.0; n],
            Some(v) if v.len() == n => v.iter().map(|x| x.0).collect(),
            Some(v) => {
                return Err(ValidationError::new(
                    "temperatures.layers",
                    format!("expected {n} entries (one per layer), got {}", v.len()),
                ))
            }
        };
        TemperatureField::new(t.environment.0, layers).map_err(|e| ValidationError::new("temperatures", e))
    }
}
