//! Flat-key TOML run configuration. The schema is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use heatavg_core::{
    boundary_variance_b, build_basis, BoundaryDriver, Field, ForcingModel, GammaKind,
    MultiscaleConfig, OuParams, RateShape, SpectralBasis,
};
use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleSpec, Experiment, StepRule, TestFunction, MAX_GRID, MAX_REPEATS};

pub const KEYS: &[&str] = &[
    "experiment",
    "master_seed",
    "output_dir",
    "l",
    "n_modes",
    "eps",
    "eps_grid",
    "dt",
    "dt_factor",
    "t_end",
    "n_realizations",
    "u0",
    "gamma",
    "gamma_scale",
    "mu_m",
    "sigma_m",
    "lambda_m",
    "sigma_f",
    "lambda_f",
    "boundary_shape",
    "boundary_bound",
    "limit_b",
    "n_records",
    "observe_modes",
    "kappa",
    "ks_repeats",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Constraint { key: String, reason: String },
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Read { .. } | ConfigError::Parse(_) => 2,
            ConfigError::UnknownKey(_) => 3,
            ConfigError::Constraint { .. } => 4,
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::Constraint { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Constraint { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    BoundaryLimit,
    AveragingRate,
    DeviationLaw,
    FluctuationScaling,
}

impl ExperimentKind {
    pub fn ensemble(self) -> Option<Experiment> {
        match self {
            ExperimentKind::Simulate => None,
            ExperimentKind::BoundaryLimit => Some(Experiment::BoundaryLimit),
            ExperimentKind::AveragingRate => Some(Experiment::AveragingRate),
            ExperimentKind::DeviationLaw => Some(Experiment::DeviationLaw),
            ExperimentKind::FluctuationScaling => Some(Experiment::FluctuationScaling),
        }
    }

    fn uses_grid(self) -> bool {
        matches!(self, ExperimentKind::AveragingRate | ExperimentKind::FluctuationScaling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaName {
    Identity,
    Sine,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryShape {
    Raw,
    Tanh,
}

#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    l: Option<f64>,
    n_modes: Option<usize>,
    eps: Option<f64>,
    eps_grid: Option<Vec<f64>>,
    dt: Option<f64>,
    dt_factor: Option<f64>,
    t_end: Option<f64>,
    n_realizations: Option<usize>,
    u0: Option<Vec<f64>>,
    gamma: Option<GammaName>,
    gamma_scale: Option<f64>,
    mu_m: Option<f64>,
    sigma_m: Option<f64>,
    lambda_m: Option<f64>,
    sigma_f: Option<f64>,
    lambda_f: Option<f64>,
    boundary_shape: Option<BoundaryShape>,
    boundary_bound: Option<f64>,
    limit_b: Option<f64>,
    n_records: Option<usize>,
    observe_modes: Option<Vec<usize>>,
    kappa: Option<f64>,
    ks_repeats: Option<u32>,
}

/// Command-line values that replace configuration keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub master_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub n_realizations: Option<usize>,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub l: f64,
    pub n_modes: usize,
    pub eps: f64,
    pub eps_grid: Vec<f64>,
    pub dt: Option<f64>,
    pub dt_factor: f64,
    pub t_end: f64,
    pub n_realizations: usize,
    pub u0: Vec<f64>,
    pub gamma: GammaName,
    pub gamma_scale: f64,
    pub mu_m: f64,
    pub sigma_m: f64,
    pub lambda_m: f64,
    pub sigma_f: f64,
    pub lambda_f: f64,
    pub boundary_shape: BoundaryShape,
    pub boundary_bound: f64,
    pub limit_b: f64,
    pub n_records: usize,
    pub observe_modes: Vec<usize>,
    pub kappa: f64,
    pub ks_repeats: u32,
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    load_config_with(path, &Overrides::default())
}

pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for (key, value) in &table {
        if value.is_table() {
            return Err(ConfigError::Parse(format!("`{key}`: nested tables are not part of the schema")));
        }
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
    }
    let raw = RawConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(raw, overrides)
}

fn default_grid() -> Vec<f64> {
    (4..=12).map(|p| 2f64.powi(-p)).collect()
}

fn resolve(raw: RawConfig, o: &Overrides) -> Result<RunConfig, ConfigError> {
    use ExperimentKind::*;
    let experiment = raw.experiment.ok_or_else(|| bad("experiment", "required"))?;
    let forced = matches!(experiment, AveragingRate | DeviationLaw | FluctuationScaling);
    let (d_sigma_f, d_mu_m, d_sigma_m) = match experiment {
        BoundaryLimit => (1.0, 0.0, 0.0),
        Simulate => (0.0, 0.0, 0.0),
        _ => (0.0, 1.0, 1.0),
    };
    let eps = raw.eps.unwrap_or(match experiment {
        DeviationLaw => 1e-4,
        _ => 1e-3,
    });
    let eps_grid = match (raw.eps_grid, experiment.uses_grid()) {
        (Some(g), _) => g,
        (None, true) => default_grid(),
        (None, false) => vec![eps],
    };
    let sigma_f = raw.sigma_f.unwrap_or(d_sigma_f);
    let lambda_f = raw.lambda_f.unwrap_or(1.0);
    let cfg = RunConfig {
        experiment,
        master_seed: o.master_seed.or(raw.master_seed).unwrap_or(0),
        output_dir: o.output_dir.clone().or(raw.output_dir).unwrap_or_else(|| PathBuf::from("out")),
        l: raw.l.unwrap_or(1.0),
        n_modes: raw.n_modes.unwrap_or(64),
        eps,
        eps_grid,
        dt: raw.dt,
        dt_factor: raw.dt_factor.unwrap_or(0.1),
        t_end: raw.t_end.unwrap_or(if experiment == DeviationLaw { 0.25 } else { 1.0 }),
        n_realizations: o.n_realizations.or(raw.n_realizations).unwrap_or(match experiment {
            Simulate => 1,
            BoundaryLimit | DeviationLaw => 2000,
            AveragingRate => 64,
            FluctuationScaling => 1000,
        }),
        u0: raw.u0.unwrap_or_else(|| vec![1.0]),
        gamma: raw.gamma.unwrap_or(GammaName::Identity),
        gamma_scale: raw.gamma_scale.unwrap_or(1.0),
        mu_m: raw.mu_m.unwrap_or(d_mu_m),
        sigma_m: raw.sigma_m.unwrap_or(d_sigma_m),
        lambda_m: raw.lambda_m.unwrap_or(1.0),
        sigma_f,
        lambda_f,
        boundary_shape: raw.boundary_shape.unwrap_or(BoundaryShape::Raw),
        boundary_bound: raw.boundary_bound.unwrap_or(1.0),
        limit_b: match (raw.limit_b, OuParams::new(lambda_f, sigma_f, 0.0)) {
            (Some(b), _) => b,
            (None, Ok(p)) => boundary_variance_b(&p),
            (None, Err(_)) => 0.0,
        },
        n_records: raw.n_records.unwrap_or(match experiment {
            Simulate | AveragingRate => 100,
            _ => 1,
        }),
        observe_modes: raw.observe_modes.unwrap_or_else(|| vec![1]),
        kappa: raw.kappa.unwrap_or(0.1),
        ks_repeats: raw.ks_repeats.unwrap_or(1),
    };
    cfg.validate(forced)?;
    Ok(cfg)
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, "must be positive and finite"))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, "must be nonnegative and finite"))
    }
}

impl RunConfig {
    fn validate(&self, forced: bool) -> Result<(), ConfigError> {
        positive("l", self.l)?;
        if self.n_modes == 0 {
            return Err(bad("n_modes", "at least one mode is required"));
        }
        positive("eps", self.eps)?;
        if self.eps_grid.is_empty() || self.eps_grid.len() > MAX_GRID {
            return Err(bad("eps_grid", "must hold between 1 and 4095 values"));
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(bad("eps_grid", "all values must be positive"));
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("eps_grid", "values must be strictly decreasing"));
        }
        if self.experiment.uses_grid() && self.eps_grid.len() < 3 {
            return Err(bad("eps_grid", "rate fits need at least three values"));
        }
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 0.5) {
            return Err(bad("dt_factor", "must lie in (0, 0.5] (multiscale stability rule dt <= 0.5*eps)"));
        }
        for eps in self.all_eps() {
            let dt = self.step().dt(eps);
            if dt > 0.5 * eps * (1.0 + 1e-12) {
                return Err(bad("dt", format!("multiscale stability rule dt <= 0.5*eps violated: dt = {dt}, eps = {eps}")));
            }
        }
        positive("t_end", self.t_end)?;
        if self.t_end < self.all_eps().into_iter().map(|e| self.step().dt(e)).fold(0.0, f64::max) {
            return Err(bad("t_end", "horizon must cover at least one step"));
        }
        let min_real = if self.experiment == ExperimentKind::Simulate { 1 } else { 2 };
        if self.n_realizations < min_real || self.n_realizations > u32::MAX as usize {
            return Err(bad("n_realizations", format!("must be at least {min_real}")));
        }
        if self.u0.is_empty() || self.u0.len() > self.n_modes {
            return Err(bad("u0", "needs between 1 and n_modes coefficients"));
        }
        if self.u0.iter().any(|c| !c.is_finite()) {
            return Err(bad("u0", "coefficients must be finite"));
        }
        positive("gamma_scale", self.gamma_scale)?;
        if !self.mu_m.is_finite() {
            return Err(bad("mu_m", "must be finite"));
        }
        nonnegative("sigma_m", self.sigma_m)?;
        positive("lambda_m", self.lambda_m)?;
        nonnegative("sigma_f", self.sigma_f)?;
        positive("lambda_f", self.lambda_f)?;
        positive("boundary_bound", self.boundary_bound)?;
        nonnegative("limit_b", self.limit_b)?;
        if self.n_records == 0 {
            return Err(bad("n_records", "must be at least 1"));
        }
        if self.observe_modes.is_empty() || self.observe_modes.iter().any(|k| *k == 0 || *k > self.n_modes) {
            return Err(bad("observe_modes", "mode indices must lie in 1..=n_modes"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(bad("kappa", "must lie in (0, 1)"));
        }
        if self.ks_repeats == 0 || self.ks_repeats > MAX_REPEATS {
            return Err(bad("ks_repeats", "must lie in 1..=4096"));
        }
        if forced && self.sigma_f != 0.0 {
            return Err(bad("sigma_f", "this experiment runs without boundary noise"));
        }
        Ok(())
    }

    fn all_eps(&self) -> Vec<f64> {
        match self.experiment {
            ExperimentKind::Simulate => vec![self.eps],
            ExperimentKind::FluctuationScaling => {
                let mut v = self.eps_grid.clone();
                v.push(self.eps);
                v
            }
            _ => self.eps_grid.clone(),
        }
    }

    pub fn step(&self) -> StepRule {
        match self.dt {
            Some(dt) => StepRule::Fixed(dt),
            None => StepRule::Relative(self.dt_factor),
        }
    }

    pub fn basis(&self) -> Result<SpectralBasis, ConfigError> {
        build_basis(self.l, self.n_modes).map_err(core_err)
    }

    pub fn u0_field(&self) -> Result<Field, ConfigError> {
        let mut c = vec![0.0; self.n_modes];
        c[..self.u0.len()].copy_from_slice(&self.u0);
        Field::from_coeffs(c).map_err(core_err)
    }

    pub fn model(&self) -> Result<ForcingModel, ConfigError> {
        let kind = match self.gamma {
            GammaName::Identity => GammaKind::Identity,
            GammaName::Sine => GammaKind::Sine,
            GammaName::Tanh => GammaKind::ScaledTanh,
        };
        let p = OuParams::new(self.lambda_m, self.sigma_m, self.mu_m).map_err(core_err)?;
        ForcingModel::new(p, kind, self.gamma_scale).map_err(core_err)
    }

    pub fn boundary(&self) -> Result<BoundaryDriver, ConfigError> {
        let ou = OuParams::new(self.lambda_f, self.sigma_f, 0.0).map_err(core_err)?;
        let shape = match self.boundary_shape {
            BoundaryShape::Raw => RateShape::Raw,
            BoundaryShape::Tanh => RateShape::ScaledTanh { bound: self.boundary_bound },
        };
        let driver = BoundaryDriver { ou, shape };
        driver.validate().map_err(core_err)?;
        Ok(driver)
    }

    pub fn test_functions(&self) -> Result<Vec<TestFunction>, ConfigError> {
        self.observe_modes.iter().map(|k| TestFunction::mode(self.n_modes, *k).map_err(core_err)).collect()
    }

    /// Single-trajectory setting of the `simulate` experiment.
    pub fn multiscale(&self) -> Result<MultiscaleConfig, ConfigError> {
        Ok(MultiscaleConfig {
            eps: self.eps,
            dt: self.step().dt(self.eps),
            t_end: self.t_end,
            basis: self.basis()?,
            model: self.model()?,
            p_f: self.boundary()?,
            u0: self.u0_field()?,
            observables: self.test_functions()?.into_iter().map(|t| t.field).collect(),
        })
    }

    /// Ensemble setting for repetition `repeat`; `None` for `simulate`.
    pub fn ensemble_spec(&self, repeat: u32) -> Result<Option<EnsembleSpec>, ConfigError> {
        let Some(experiment) = self.experiment.ensemble() else { return Ok(None) };
        Ok(Some(EnsembleSpec {
            experiment,
            n_realizations: self.n_realizations,
            master_seed: self.master_seed,
            repeat,
            eps_grid: self.eps_grid.clone(),
            spot_eps: (experiment == Experiment::FluctuationScaling).then_some(self.eps),
            step: self.step(),
            t_end: self.t_end,
            basis: self.basis()?,
            model: self.model()?,
            boundary: self.boundary()?,
            b: self.limit_b,
            u0: self.u0_field()?,
            test_functions: self.test_functions()?,
            n_records: self.n_records,
            kappa: self.kappa,
        }))
    }
}

fn core_err(e: heatavg_core::Error) -> ConfigError {
    match e {
        heatavg_core::Error::InvalidParameter { name, reason } => bad(name, reason),
        other => bad("config", other.to_string()),
    }
}
