//! Flat `section.key = value` run configuration.
//!
//! The document is TOML; dotted keys and `[section]` tables are equivalent.
//! Every key is optional, unknown keys are rejected and errors name the key.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::bounds::default_alpha1;
use crate::error::{Error, Result};
use crate::model::{GridSpec, ModelParams, NoiseScaling, NoiseShape};
use crate::montecarlo::SweepAxis;
use crate::simulator::InitialCondition;

/// Scale presets for the ensemble and time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `N = 2000`, `N_R = 1000`.
    Desk,
    /// `N = 10⁴`, `N_R = 10⁴`.
    Full,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => Err(Error::Config { key: "profile".into(), reason: format!("unknown profile {other:?}") }),
        }
    }

    fn time_steps(self) -> usize {
        match self {
            Self::Desk => 2000,
            Self::Full => 10_000,
        }
    }

    fn realizations(self) -> usize {
        match self {
            Self::Desk => 1000,
            Self::Full => 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub n_realizations: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsConfig {
    /// Defaults to `min(1, H + 0.2)`.
    pub alpha1: Option<f64>,
    /// Amplitude for the `f ≥ b φ₁` and admissibility checks.
    pub b: f64,
    /// Paths for the `N(H)` estimate.
    pub n_paths: usize,
    pub t_sup: f64,
    pub nh_steps: usize,
    pub t_cut: f64,
    /// Number of path seeds to report on.
    pub n_reports: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { alpha1: None, b: 1.5, n_paths: 200, t_sup: 20.0, nh_steps: 4000, t_cut: 1.0, n_reports: 4 }
    }
}

impl BoundsConfig {
    pub fn alpha1_for(&self, hurst: f64) -> f64 {
        self.alpha1.unwrap_or_else(|| default_alpha1(hurst))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    /// Snapshot stride for trajectory output; `None` disables it.
    pub trajectory_stride: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json], trajectory_stride: None }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridSpec,
    pub ic: InitialCondition,
    pub ensemble: EnsembleConfig,
    pub sweep: Option<SweepConfig>,
    pub bounds: BoundsConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            grid: GridSpec::default(),
            ic: InitialCondition::BumpPlusEigen { c: 0.01 },
            ensemble: EnsembleConfig { n_realizations: Profile::Desk.realizations(), master_seed: 0 },
            sweep: None,
            bounds: BoundsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn cfg_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), reason: reason.into() }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out)?,
            other => {
                out.insert(key, other.clone());
            }
        }
    }
    Ok(())
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(cfg_err(key, format!("expected a number, got {}", v.type_str()))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(cfg_err(key, format!("expected a nonnegative integer, got {v}"))),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::String(s) => s.parse().map_err(|_| cfg_err(key, format!("not a u64: {s:?}"))),
        _ => Err(cfg_err(key, format!("expected a nonnegative integer, got {v}"))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| cfg_err(key, format!("expected a string, got {}", v.type_str())))
}

fn as_f64_list(key: &str, v: &Value) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| cfg_err(key, "expected an array"))?;
    arr.iter().map(|x| as_f64(key, x)).collect()
}

fn enum_value<T: serde::de::DeserializeOwned>(key: &str, v: &Value) -> Result<T> {
    let s = as_str(key, v)?;
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| cfg_err(key, format!("unknown value {s:?}")))
}

const MODEL_KEYS: [&str; 10] =
    ["delta", "gamma", "beta", "sigma", "p", "q", "alpha", "hurst", "noise_shape", "noise_scaling"];

fn scope_validation(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => cfg_err(&format!("{section}.{name}"), reason),
        other => other,
    }
}

impl RunConfig {
    /// Defaults with a profile applied.
    pub fn with_profile(profile: Profile) -> Self {
        let mut cfg = Self::default();
        cfg.apply_profile(profile);
        cfg
    }

    pub fn apply_profile(&mut self, profile: Profile) {
        self.grid.n = profile.time_steps();
        self.ensemble.n_realizations = profile.realizations();
    }

    /// Parse a document on top of the defaults.
    pub fn parse(source: &str) -> Result<Self> {
        Self::parse_onto(Self::default(), source)
    }

    /// Parse a document on top of `base`; keys present in the document win.
    pub fn parse_onto(base: Self, source: &str) -> Result<Self> {
        let table: toml::Table = source.parse().map_err(|e: toml::de::Error| cfg_err("<document>", e.message()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat)?;
        let mut cfg = base;
        let mut ic_kind: Option<String> = None;
        let mut ic_c: Option<f64> = None;
        let mut ic_b: Option<f64> = None;
        let mut ic_values: Option<Vec<f64>> = None;
        let mut sweep_axis: Option<SweepAxis> = None;
        let mut sweep_values: Option<Vec<f64>> = None;
        for (key, v) in &flat {
            let k = key.as_str();
            match k {
                "model.delta" => cfg.model.delta = as_f64(k, v)?,
                "model.gamma" => cfg.model.gamma = as_f64(k, v)?,
                "model.beta" => cfg.model.beta = as_f64(k, v)?,
                "model.sigma" => cfg.model.sigma = as_f64(k, v)?,
                "model.p" => cfg.model.p = as_f64(k, v)?,
                "model.q" => cfg.model.q = as_f64(k, v)?,
                "model.alpha" => cfg.model.alpha = as_f64(k, v)?,
                "model.hurst" => cfg.model.hurst = as_f64(k, v)?,
                "model.noise_shape" => cfg.model.noise_shape = enum_value::<NoiseShape>(k, v)?,
                "model.noise_scaling" => cfg.model.noise_scaling = enum_value::<NoiseScaling>(k, v)?,
                "grid.m" => cfg.grid.m = as_usize(k, v)?,
                "grid.n" => cfg.grid.n = as_usize(k, v)?,
                "grid.t_final" => cfg.grid.t_final = as_f64(k, v)?,
                "grid.blowup_threshold" => cfg.grid.blowup_threshold = as_f64(k, v)?,
                "grid.rho_scheme" => cfg.grid.rho_scheme = Some(as_f64(k, v)?),
                "ic.kind" => ic_kind = Some(as_str(k, v)?.to_string()),
                "ic.c" => ic_c = Some(as_f64(k, v)?),
                "ic.b" => ic_b = Some(as_f64(k, v)?),
                "ic.values" => ic_values = Some(as_f64_list(k, v)?),
                "ensemble.n_realizations" => cfg.ensemble.n_realizations = as_usize(k, v)?,
                "ensemble.master_seed" => cfg.ensemble.master_seed = as_u64(k, v)?,
                "sweep.axis" => {
                    sweep_axis = Some(SweepAxis::parse(as_str(k, v)?).map_err(|_| cfg_err(k, format!("unknown axis {v}")))?)
                }
                "sweep.values" => sweep_values = Some(as_f64_list(k, v)?),
                "bounds.alpha1" => cfg.bounds.alpha1 = Some(as_f64(k, v)?),
                "bounds.b" => cfg.bounds.b = as_f64(k, v)?,
                "bounds.n_paths" => cfg.bounds.n_paths = as_usize(k, v)?,
                "bounds.t_sup" => cfg.bounds.t_sup = as_f64(k, v)?,
                "bounds.nh_steps" => cfg.bounds.nh_steps = as_usize(k, v)?,
                "bounds.t_cut" => cfg.bounds.t_cut = as_f64(k, v)?,
                "bounds.n_reports" => cfg.bounds.n_reports = as_usize(k, v)?,
                "output.dir" => cfg.output.dir = PathBuf::from(as_str(k, v)?),
                "output.formats" => {
                    let arr = v.as_array().ok_or_else(|| cfg_err(k, "expected an array"))?;
                    let mut f: Vec<Format> = arr.iter().map(|x| enum_value::<Format>(k, x)).collect::<Result<_>>()?;
                    f.sort();
                    f.dedup();
                    cfg.output.formats = f;
                }
                "output.trajectory_stride" => {
                    let s = as_usize(k, v)?;
                    if s == 0 {
                        return Err(cfg_err(k, "stride must be at least 1"));
                    }
                    cfg.output.trajectory_stride = Some(s);
                }
                _ => return Err(cfg_err(k, "unknown key")),
            }
        }
        cfg.ic = build_ic(&cfg.ic, ic_kind, ic_c, ic_b, ic_values)?;
        match (sweep_axis, sweep_values) {
            (Some(axis), Some(values)) => cfg.sweep = Some(SweepConfig { axis, values }),
            (None, None) => {}
            (Some(_), None) => return Err(cfg_err("sweep.values", "missing (required with sweep.axis)")),
            (None, Some(_)) => return Err(cfg_err("sweep.axis", "missing (required with sweep.values)")),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| scope_validation("model", e))?;
        self.grid.validate().map_err(|e| scope_validation("grid", e))?;
        if self.ensemble.n_realizations == 0 {
            return Err(cfg_err("ensemble.n_realizations", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(cfg_err("sweep.values", "must be nonempty"));
            }
        }
        if let Some(a) = self.bounds.alpha1 {
            if !(a > self.model.hurst && a <= 1.0) {
                return Err(cfg_err("bounds.alpha1", format!("must lie in (H, 1], got {a}")));
            }
        }
        if !(self.bounds.b > 1.0) {
            return Err(cfg_err("bounds.b", "must exceed 1"));
        }
        if self.bounds.n_paths < 2 {
            return Err(cfg_err("bounds.n_paths", "need at least 2 paths"));
        }
        if !(self.bounds.t_sup > 0.0) || !(self.bounds.t_cut > 0.0) {
            return Err(cfg_err("bounds.t_sup", "horizons must be positive"));
        }
        if self.bounds.nh_steps < 2 {
            return Err(cfg_err("bounds.nh_steps", "need at least 2 steps"));
        }
        if self.output.trajectory_stride == Some(0) {
            return Err(cfg_err("output.trajectory_stride", "stride must be at least 1"));
        }
        if self.output.formats.is_empty() {
            return Err(cfg_err("output.formats", "must name at least one format"));
        }
        Ok(())
    }

    /// Flat document that [`RunConfig::parse`] maps back to `self`.
    pub fn to_document(&self) -> String {
        let mut kv: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Value| kv.push((k.to_string(), v));
        let m = &self.model;
        for (k, v) in MODEL_KEYS.iter().zip([m.delta, m.gamma, m.beta, m.sigma, m.p, m.q, m.alpha, m.hurst]) {
            put(&format!("model.{k}"), Value::Float(v));
        }
        put("model.noise_shape", Value::String(enum_name(&m.noise_shape)));
        put("model.noise_scaling", Value::String(enum_name(&m.noise_scaling)));
        let g = &self.grid;
        put("grid.m", Value::Integer(g.m as i64));
        put("grid.n", Value::Integer(g.n as i64));
        put("grid.t_final", Value::Float(g.t_final));
        put("grid.blowup_threshold", Value::Float(g.blowup_threshold));
        if let Some(r) = g.rho_scheme {
            put("grid.rho_scheme", Value::Float(r));
        }
        match &self.ic {
            InitialCondition::BumpPlusEigen { c } => {
                put("ic.kind", Value::String("bump_plus_eigen".into()));
                put("ic.c", Value::Float(*c));
            }
            InitialCondition::PureEigen => put("ic.kind", Value::String("pure_eigen".into())),
            InitialCondition::ScaledEigen { b } => {
                put("ic.kind", Value::String("scaled_eigen".into()));
                put("ic.b", Value::Float(*b));
            }
            InitialCondition::Custom { values } => {
                put("ic.kind", Value::String("custom".into()));
                put("ic.values", Value::Array(values.iter().map(|v| Value::Float(*v)).collect()));
            }
        }
        put("ensemble.n_realizations", Value::Integer(self.ensemble.n_realizations as i64));
        let seed = self.ensemble.master_seed;
        put(
            "ensemble.master_seed",
            i64::try_from(seed).map(Value::Integer).unwrap_or_else(|_| Value::String(seed.to_string())),
        );
        if let Some(s) = &self.sweep {
            put("sweep.axis", Value::String(s.axis.as_str().into()));
            put("sweep.values", Value::Array(s.values.iter().map(|v| Value::Float(*v)).collect()));
        }
        let b = &self.bounds;
        if let Some(a) = b.alpha1 {
            put("bounds.alpha1", Value::Float(a));
        }
        put("bounds.b", Value::Float(b.b));
        put("bounds.n_paths", Value::Integer(b.n_paths as i64));
        put("bounds.t_sup", Value::Float(b.t_sup));
        put("bounds.nh_steps", Value::Integer(b.nh_steps as i64));
        put("bounds.t_cut", Value::Float(b.t_cut));
        put("bounds.n_reports", Value::Integer(b.n_reports as i64));
        put("output.dir", Value::String(self.output.dir.to_string_lossy().into_owned()));
        put(
            "output.formats",
            Value::Array(self.output.formats.iter().map(|f| Value::String(enum_name(f))).collect()),
        );
        if let Some(s) = self.output.trajectory_stride {
            put("output.trajectory_stride", Value::Integer(s as i64));
        }
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialise to strings"),
    }
}

fn build_ic(
    current: &InitialCondition,
    kind: Option<String>,
    c: Option<f64>,
    b: Option<f64>,
    values: Option<Vec<f64>>,
) -> Result<InitialCondition> {
    let kind = kind.unwrap_or_else(|| match current {
        InitialCondition::BumpPlusEigen { .. } => "bump_plus_eigen".into(),
        InitialCondition::PureEigen => "pure_eigen".into(),
        InitialCondition::ScaledEigen { .. } => "scaled_eigen".into(),
        InitialCondition::Custom { .. } => "custom".into(),
    });
    let stray = |key: &str, present: bool| {
        if present {
            Err(cfg_err(key, format!("not used by ic.kind = {kind:?}")))
        } else {
            Ok(())
        }
    };
    let ic = match kind.as_str() {
        "bump_plus_eigen" => {
            stray("ic.b", b.is_some())?;
            stray("ic.values", values.is_some())?;
            let prev = if let InitialCondition::BumpPlusEigen { c } = current { *c } else { 0.01 };
            InitialCondition::BumpPlusEigen { c: c.unwrap_or(prev) }
        }
        "pure_eigen" => {
            stray("ic.c", c.is_some())?;
            stray("ic.b", b.is_some())?;
            stray("ic.values", values.is_some())?;
            InitialCondition::PureEigen
        }
        "scaled_eigen" => {
            stray("ic.c", c.is_some())?;
            stray("ic.values", values.is_some())?;
            let prev = if let InitialCondition::ScaledEigen { b } = current { Some(*b) } else { None };
            InitialCondition::ScaledEigen { b: b.or(prev).ok_or_else(|| cfg_err("ic.b", "missing (required for scaled_eigen)"))? }
        }
        "custom" => {
            stray("ic.c", c.is_some())?;
            stray("ic.b", b.is_some())?;
            let prev = if let InitialCondition::Custom { values } = current { Some(values.clone()) } else { None };
            InitialCondition::Custom {
                values: values.or(prev).ok_or_else(|| cfg_err("ic.values", "missing (required for custom)"))?,
            }
        }
        other => return Err(cfg_err("ic.kind", format!("unknown kind {other:?}"))),
    };
    match &ic {
        InitialCondition::BumpPlusEigen { c } if !(*c >= 0.0) => Err(cfg_err("ic.c", "must be >= 0")),
        InitialCondition::ScaledEigen { b } if !(*b >= 0.0) => Err(cfg_err("ic.b", "must be >= 0")),
        _ => Ok(ic),
    }
}
