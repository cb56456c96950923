//! Monte Carlo ensembles over a grid of scale parameters.
//!
//! Every realization draws from its own ChaCha8 stream, selected by
//! `(repeat, ε-index, role, realization)`, so results do not depend on the
//! order in which rayon schedules the work.

use heatavg_core::stats::{fit_power_law, ks_two_sample, median, quantile};
use heatavg_core::{
    empirical_moments, estimate_rate, fluctuation_integral, pathwise_error, simulate_limit,
    simulate_multiscale, solve_averaged_deterministic, BoundaryDriver, DeviationConfig, Field,
    ForcingModel, GammaKind, LimitConfig, LimitProblem, MultiscaleConfig, RateFit,
    SpectralBasis, TrajectoryRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    BoundaryLimit,
    AveragingRate,
    DeviationLaw,
    FluctuationScaling,
}

/// Which solver a random stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    EpsSystem = 0,
    Limit = 1,
    Deviation = 2,
    Fluctuation = 3,
}

pub const MAX_REPEATS: u32 = 1 << 12;
pub const MAX_GRID: usize = (1 << 12) - 1;

/// The generator for one realization.
pub fn stream_rng(master_seed: u64, repeat: u32, eps_index: usize, role: Role, realization: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let stream = ((repeat as u64 & 0xfff) << 52)
        | ((eps_index as u64 & 0xfff) << 40)
        | ((role as u64) << 32)
        | (realization as u64 & 0xffff_ffff);
    rng.set_stream(stream);
    rng
}

/// Macro step for a given ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    Relative(f64),
}

impl StepRule {
    pub fn dt(self, eps: f64) -> f64 {
        match self {
            StepRule::Fixed(dt) => dt,
            StepRule::Relative(factor) => factor * eps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub name: String,
    pub field: Field,
}

impl TestFunction {
    /// `e_k` labelled `e{k}`.
    pub fn mode(n_modes: usize, k: usize) -> heatavg_core::Result<Self> {
        Ok(TestFunction { name: format!("e{k}"), field: Field::mode(n_modes, k, 1.0)? })
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub experiment: Experiment,
    pub n_realizations: usize,
    pub master_seed: u64,
    /// Index of an independent repetition of the whole experiment.
    pub repeat: u32,
    pub eps_grid: Vec<f64>,
    /// Extra ε evaluated outside the rate fit (fluctuation spot check).
    pub spot_eps: Option<f64>,
    pub step: StepRule,
    pub t_end: f64,
    pub basis: SpectralBasis,
    pub model: ForcingModel,
    pub boundary: BoundaryDriver,
    /// Noise intensity of the limit SPDE.
    pub b: f64,
    /// Initial field; the frozen field `q` for the fluctuation experiment.
    pub u0: Field,
    pub test_functions: Vec<TestFunction>,
    /// Approximate number of stored records per trajectory (t = 0 excluded).
    pub n_records: usize,
    /// Quantile level `1 − κ` for the secondary error statistic.
    pub kappa: f64,
}

fn invalid(key: &'static str, reason: impl Into<String>) -> RunError {
    RunError::Spec { key, reason: reason.into() }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.n_realizations < 2 {
            return Err(invalid("n_realizations", "at least two realizations are required"));
        }
        if self.repeat >= MAX_REPEATS {
            return Err(invalid("ks_repeats", "too many repetitions"));
        }
        if self.eps_grid.is_empty() || self.eps_grid.len() > MAX_GRID {
            return Err(invalid("eps_grid", "grid must hold between 1 and 4095 values"));
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(invalid("eps_grid", "all values must be positive"));
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("eps_grid", "values must be strictly decreasing"));
        }
        let fitted = matches!(self.experiment, Experiment::AveragingRate | Experiment::FluctuationScaling);
        if fitted && self.eps_grid.len() < 3 {
            return Err(invalid("eps_grid", "rate fits need at least three values"));
        }
        for eps in self.all_eps() {
            let dt = self.step.dt(eps);
            if !(dt > 0.0) || dt > 0.5 * eps * (1.0 + 1e-12) {
                return Err(invalid("dt", format!("multiscale stability rule dt <= 0.5*eps violated at eps = {eps}")));
            }
            if self.t_end < dt {
                return Err(invalid("t_end", "horizon must cover at least one step"));
            }
        }
        if self.n_records == 0 {
            return Err(invalid("n_records", "must be at least 1"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(invalid("kappa", "must lie in (0, 1)"));
        }
        if self.test_functions.is_empty() {
            return Err(invalid("observe_modes", "at least one observable is required"));
        }
        let noisy_boundary = !self.boundary.is_off();
        if noisy_boundary && !matches!(self.experiment, Experiment::BoundaryLimit) {
            return Err(invalid("sigma_f", "this experiment runs without boundary noise"));
        }
        Ok(())
    }

    fn all_eps(&self) -> impl Iterator<Item = f64> + '_ {
        self.eps_grid.iter().copied().chain(self.spot_eps)
    }

    fn n_steps(&self, dt: f64) -> usize {
        ((self.t_end / dt) - 1e-9).ceil().max(1.0) as usize
    }

    fn record_every(&self, dt: f64) -> usize {
        (self.n_steps(dt) / self.n_records).max(1)
    }

    fn names(&self) -> Vec<String> {
        self.test_functions.iter().map(|t| t.name.clone()).collect()
    }

    fn fields(&self) -> Vec<Field> {
        self.test_functions.iter().map(|t| t.field.clone()).collect()
    }

    fn multiscale(&self, eps: f64) -> MultiscaleConfig {
        MultiscaleConfig {
            eps,
            dt: self.step.dt(eps),
            t_end: self.t_end,
            basis: self.basis.clone(),
            model: self.model,
            p_f: self.boundary,
            u0: self.u0.clone(),
            observables: self.fields(),
        }
    }

    fn limit(&self, eps: f64, b: f64) -> LimitConfig {
        LimitConfig {
            basis: self.basis.clone(),
            model: self.model,
            b,
            dt: self.step.dt(eps),
            t_end: self.t_end,
            u0: self.u0.clone(),
            observables: self.fields(),
        }
    }
}

/// One realization: `observables[i][j]` at the series' recorded time `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub index: usize,
    pub observables: Vec<Vec<f64>>,
    /// Sup-in-time error (averaging rate) or fluctuation norm.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// Names of the per-time observables of every realization.
    pub observable_names: Vec<String>,
    pub realizations: Vec<Realization>,
    pub aborted: usize,
}

impl Series {
    /// Values of observable `j` at the last recorded time.
    pub fn final_values(&self, j: usize) -> Vec<f64> {
        self.realizations.iter().map(|r| r.observables.last().map_or(f64::NAN, |o| o[j])).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.realizations.iter().filter_map(|r| r.error).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsEntry {
    pub eps: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub series: Vec<Series>,
}

impl EpsEntry {
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// `eps` is `None` for statistics of the whole grid (fits).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub eps: Option<f64>,
    pub stat_name: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsEntry {
    pub eps: f64,
    pub observable: String,
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub experiment: Experiment,
    pub repeat: u32,
    pub n_realizations: usize,
    pub observable_names: Vec<String>,
    pub per_eps: Vec<EpsEntry>,
    pub spot: Option<EpsEntry>,
    pub summaries: Vec<Summary>,
    pub fit: Option<RateFit>,
    pub quantile_fit: Option<RateFit>,
    pub ks: Vec<KsEntry>,
}

impl EnsembleResult {
    pub fn summary(&self, eps: Option<f64>, stat_name: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.eps == eps && s.stat_name == stat_name)
    }
}

/// Runs `n` realizations in parallel and gathers them in index order. Each
/// realization yields one entry per name in `names`. Non-finite blow-ups are
/// dropped from every series and counted; any other error is fatal.
fn run_series<F>(names: &[&str], observables: &[String], eps: f64, n: usize, f: F) -> Result<Vec<Series>, RunError>
where
    F: Fn(usize) -> heatavg_core::Result<Vec<Realization>> + Sync,
{
    let outcomes: Vec<_> = (0..n).into_par_iter().map(&f).collect();
    let mut series: Vec<Series> = names
        .iter()
        .map(|name| Series {
            name: name.to_string(),
            observable_names: observables.to_vec(),
            realizations: Vec::with_capacity(n),
            aborted: 0,
        })
        .collect();
    let mut aborted = 0;
    for outcome in outcomes {
        match outcome {
            Ok(rs) => {
                for (s, r) in series.iter_mut().zip(rs) {
                    s.realizations.push(r);
                }
            }
            Err(heatavg_core::Error::NonFinite { .. }) => aborted += 1,
            Err(e) => return Err(RunError::Solver(e)),
        }
    }
    if aborted * 100 > n {
        return Err(RunError::TooManyAborts { series: names.join(","), eps, aborted, total: n });
    }
    series.iter_mut().for_each(|s| s.aborted = aborted);
    Ok(series)
}

/// Observables at every `every`-th record and at the last one, matching the
/// times of a run recorded with `record_every = every`.
fn thin(rec: &TrajectoryRecord, every: usize) -> Vec<Vec<f64>> {
    let last = rec.len() - 1;
    (0..rec.len()).filter(|i| i % every == 0 || *i == last).map(|i| rec.observables[i].clone()).collect()
}

/// Observables of the zero-boundary field `û = u − √ε f (1 − x/l)`.
fn lifted_observables(rec: &TrajectoryRecord, lift_dots: &[f64]) -> Vec<Vec<f64>> {
    rec.observables
        .iter()
        .zip(&rec.boundary_values)
        .map(|(obs, bv)| obs.iter().zip(lift_dots).map(|(o, c)| o - bv * c).collect())
        .collect()
}

pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult, RunError> {
    spec.validate()?;
    let mut per_eps = Vec::with_capacity(spec.eps_grid.len());
    for (i, &eps) in spec.eps_grid.iter().enumerate() {
        per_eps.push(run_eps(spec, i, eps)?);
    }
    let spot = match spec.spot_eps {
        Some(eps) => Some(run_eps(spec, spec.eps_grid.len(), eps)?),
        None => None,
    };
    let mut result = EnsembleResult {
        experiment: spec.experiment,
        repeat: spec.repeat,
        n_realizations: spec.n_realizations,
        observable_names: spec.names(),
        per_eps,
        spot,
        summaries: Vec::new(),
        fit: None,
        quantile_fit: None,
        ks: Vec::new(),
    };
    summarize(spec, &mut result)?;
    Ok(result)
}

fn run_eps(spec: &EnsembleSpec, eps_index: usize, eps: f64) -> Result<EpsEntry, RunError> {
    let dt = spec.step.dt(eps);
    let every = spec.record_every(dt);
    let n = spec.n_realizations;
    let rng = |role, r| stream_rng(spec.master_seed, spec.repeat, eps_index, role, r);
    let names = spec.names();
    let mut clock = spec.limit(eps, 0.0);
    clock.model = ForcingModel::off();
    let times = solve_averaged_deterministic(&clock, every)?.times;
    let one = |index, observables, error| vec![Realization { index, observables, error }];
    let series = match spec.experiment {
        Experiment::BoundaryLimit => {
            let cfg = spec.multiscale(eps);
            let lift = spec.basis.lift_profile();
            let lift_dots: Vec<f64> = cfg.observables.iter().map(|phi| phi.dot(&lift)).collect();
            let mut eps_runs = run_series(&["eps_system", "eps_system_physical"], &names, eps, n, |r| {
                let rec = simulate_multiscale(&cfg, &mut rng(Role::EpsSystem, r), every)?;
                let lifted = lifted_observables(&rec, &lift_dots);
                Ok(vec![
                    Realization { index: r, observables: lifted, error: None },
                    Realization { index: r, observables: rec.observables, error: None },
                ])
            })?;
            let problem = LimitProblem::Averaged(spec.limit(eps, spec.b));
            let limit = run_series(&["limit"], &names, eps, n, |r| {
                let rec = simulate_limit(&problem, &mut rng(Role::Limit, r), every)?;
                Ok(one(r, rec.observables, None))
            })?;
            eps_runs.extend(limit);
            eps_runs
        }
        Experiment::AveragingRate => {
            let cfg = spec.multiscale(eps);
            let avg = solve_averaged_deterministic(&spec.limit(eps, 0.0), 1)?;
            run_series(&["eps_system"], &names, eps, n, |r| {
                let rec = simulate_multiscale(&cfg, &mut rng(Role::EpsSystem, r), 1)?;
                let err = pathwise_error(&rec, &avg)?;
                Ok(one(r, thin(&rec, every), Some(err)))
            })?
        }
        Experiment::DeviationLaw => {
            let cfg = spec.multiscale(eps);
            let base = spec.limit(eps, 0.0);
            let avg = solve_averaged_deterministic(&base, every)?;
            let scale = 1.0 / eps.sqrt();
            let mut runs = run_series(&["eps_deviation"], &names, eps, n, |r| {
                let rec = simulate_multiscale(&cfg, &mut rng(Role::EpsSystem, r), every)?;
                if rec.len() != avg.len() {
                    return Err(heatavg_core::Error::GridMismatch);
                }
                let obs = rec
                    .observables
                    .iter()
                    .zip(&avg.observables)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * scale).collect())
                    .collect();
                Ok(one(r, obs, None))
            })?;
            let problem = LimitProblem::Deviation(DeviationConfig::new(base));
            runs.extend(run_series(&["deviation_spde"], &names, eps, n, |r| {
                let rec = simulate_limit(&problem, &mut rng(Role::Deviation, r), every)?;
                Ok(one(r, rec.observables, None))
            })?);
            runs
        }
        Experiment::FluctuationScaling => {
            let runs = run_series(&["fluctuation"], &[], eps, n, |r| {
                let v = fluctuation_integral(
                    &spec.u0,
                    eps,
                    spec.t_end,
                    dt,
                    &spec.model,
                    &spec.basis,
                    &mut rng(Role::Fluctuation, r),
                )?;
                Ok(one(r, Vec::new(), Some(v)))
            })?;
            return Ok(EpsEntry { eps, dt, times: vec![spec.t_end], series: runs });
        }
    };
    Ok(EpsEntry { eps, dt, times, series })
}

fn push(out: &mut Vec<Summary>, eps: Option<f64>, name: String, value: f64, stderr: Option<f64>) {
    out.push(Summary { eps, stat_name: name, value, stderr });
}

/// Final-time mean and variance of every observable of every series.
fn moment_summaries(entry: &EpsEntry, names: &[String], out: &mut Vec<Summary>) -> Result<(), RunError> {
    for s in &entry.series {
        if s.realizations.len() < 2 {
            continue;
        }
        let samples: Vec<Vec<f64>> = (0..names.len()).map(|j| s.final_values(j)).collect();
        let m = empirical_moments(&samples)?;
        for (j, name) in names.iter().enumerate() {
            let e = Some(entry.eps);
            push(out, e, format!("mean[{}:{}]", s.name, name), m.means[j], Some(m.mean_se[j]));
            push(out, e, format!("var[{}:{}]", s.name, name), m.variances[j], Some(m.variance_se[j]));
        }
        for a in 0..names.len() {
            for b in a + 1..names.len() {
                push(
                    out,
                    Some(entry.eps),
                    format!("cov[{}:{},{}]", s.name, names[a], names[b]),
                    m.cov(a, b),
                    Some(m.cov_se(a, b)),
                );
            }
        }
    }
    Ok(())
}

fn ks_between(entry: &EpsEntry, a: &str, b: &str, names: &[String], out: &mut Vec<KsEntry>) -> Result<(), RunError> {
    let (Some(sa), Some(sb)) = (entry.series(a), entry.series(b)) else { return Ok(()) };
    for (j, name) in names.iter().enumerate() {
        let (xa, xb) = (sa.final_values(j), sb.final_values(j));
        out.push(KsEntry {
            eps: entry.eps,
            observable: name.clone(),
            statistic: ks_two_sample(&xa, &xb)?,
            n: xa.len(),
            m: xb.len(),
        });
    }
    Ok(())
}

/// Mode index `k` of a test function that is exactly `e_k`.
fn pure_mode(phi: &Field) -> Option<usize> {
    let nz: Vec<usize> = phi.coeffs().iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, _)| i).collect();
    match nz.as_slice() {
        [i] if phi.coeffs()[*i] == 1.0 => Some(i + 1),
        _ => None,
    }
}

/// `Var⟨u(T), e_k⟩ = b l_k² (1 − e^{−2λ_k T}) / (2λ_k)` for the limit SPDE
/// without body forcing.
pub fn boundary_closed_form_variance(basis: &SpectralBasis, k: usize, b: f64, t: f64) -> f64 {
    let lam = basis.eigenvalues()[k - 1];
    let lk = basis.lift_coeffs()[k - 1];
    b * lk * lk * (-(-2.0 * lam * t).exp_m1()) / (2.0 * lam)
}

/// `Var⟨z(T), e_k⟩ = (σ_m/λ_m)² a_k² T e^{2(μ_m − λ_k)T}` for `γ = id`.
pub fn deviation_closed_form_variance(basis: &SpectralBasis, model: &ForcingModel, a_k: f64, k: usize, t: f64) -> f64 {
    let p = model.m_params;
    let lam = basis.eigenvalues()[k - 1];
    (p.sigma / p.lambda).powi(2) * a_k * a_k * t * (2.0 * (p.mu - lam) * t).exp()
}

/// RMS of `∫₀^t (m(r/ε) − μ) dr` for the stationary OU amplitude.
pub fn fluctuation_closed_form_rms(model: &ForcingModel, eps: f64, t: f64) -> f64 {
    let p = model.m_params;
    let v = p.sigma * p.sigma / (2.0 * p.lambda);
    let tau = eps / p.lambda;
    (2.0 * v * tau * (t + tau * (-t / tau).exp_m1())).sqrt()
}

fn summarize(spec: &EnsembleSpec, res: &mut EnsembleResult) -> Result<(), RunError> {
    let names = spec.names();
    let mut out = Vec::new();
    let mut ks = Vec::new();
    match spec.experiment {
        Experiment::BoundaryLimit => {
            let long_run = heatavg_core::boundary_long_run_variance(&spec.boundary.ou);
            for entry in &res.per_eps {
                moment_summaries(entry, &names, &mut out)?;
                ks_between(entry, "eps_system", "limit", &names, &mut ks)?;
                if spec.model.drift_is_off() && spec.model.m_params.sigma == 0.0 {
                    for (tf, name) in spec.test_functions.iter().zip(&names) {
                        if let Some(k) = pure_mode(&tf.field) {
                            let e = Some(entry.eps);
                            let cf = boundary_closed_form_variance(&spec.basis, k, spec.b, spec.t_end);
                            push(&mut out, e, format!("closed_form_var[{name}]"), cf, None);
                            let cf_lr = boundary_closed_form_variance(&spec.basis, k, long_run, spec.t_end);
                            push(&mut out, e, format!("closed_form_var_long_run[{name}]"), cf_lr, None);
                        }
                    }
                }
            }
        }
        Experiment::AveragingRate => {
            let mut pairs = Vec::new();
            let mut qs = Vec::new();
            for entry in &res.per_eps {
                let errs = entry.series[0].errors();
                let e = Some(entry.eps);
                push(&mut out, e, "median_error".into(), median(&errs)?, None);
                let q = quantile(&errs, 1.0 - spec.kappa)?;
                push(&mut out, e, format!("quantile_error[{}]", 1.0 - spec.kappa), q, None);
                let m = empirical_moments(std::slice::from_ref(&errs))?;
                push(&mut out, e, "mean_error".into(), m.means[0], Some(m.mean_se[0]));
                qs.push(q);
                pairs.push((entry.eps, errs));
            }
            let fit = estimate_rate(&pairs)?;
            let eps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let qfit = fit_power_law(&eps, &qs)?;
            push_fit(&mut out, "", &fit);
            push_fit(&mut out, "quantile_", &qfit);
            res.fit = Some(fit);
            res.quantile_fit = Some(qfit);
        }
        Experiment::DeviationLaw => {
            for entry in &res.per_eps {
                moment_summaries(entry, &names, &mut out)?;
                ks_between(entry, "eps_deviation", "deviation_spde", &names, &mut ks)?;
                if spec.model.gamma_kind == GammaKind::Identity {
                    for (tf, name) in spec.test_functions.iter().zip(&names) {
                        if let Some(k) = pure_mode(&tf.field) {
                            let a_k = spec.u0.coeffs()[k - 1];
                            let cf = deviation_closed_form_variance(&spec.basis, &spec.model, a_k, k, spec.t_end);
                            push(&mut out, Some(entry.eps), format!("closed_form_var[{name}]"), cf, None);
                        }
                    }
                }
            }
        }
        Experiment::FluctuationScaling => {
            let q_norm = spec.model.apply_gamma(&spec.u0, &spec.basis).l2_norm();
            let mut eps = Vec::new();
            let mut rms = Vec::new();
            let grid = res.per_eps.iter().map(|e| (e, true));
            for (entry, fitted) in grid.chain(res.spot.as_ref().map(|e| (e, false))) {
                let r = rms_with_se(&entry.series[0].errors())?;
                push(&mut out, Some(entry.eps), "rms".into(), r.0, Some(r.1));
                let cf = q_norm * fluctuation_closed_form_rms(&spec.model, entry.eps, spec.t_end);
                push(&mut out, Some(entry.eps), "closed_form_rms".into(), cf, None);
                if fitted {
                    eps.push(entry.eps);
                    rms.push(r.0);
                }
            }
            let fit = fit_power_law(&eps, &rms)?;
            push_fit(&mut out, "", &fit);
            res.fit = Some(fit);
        }
    }
    for k in &ks {
        push(&mut out, Some(k.eps), format!("ks[{}]", k.observable), k.statistic, None);
    }
    res.summaries = out;
    res.ks = ks;
    Ok(())
}

/// RMS and its delta-method standard error.
fn rms_with_se(v: &[f64]) -> Result<(f64, f64), RunError> {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    let m = empirical_moments(std::slice::from_ref(&sq))?;
    let rms = m.means[0].sqrt();
    Ok((rms, m.mean_se[0] / (2.0 * rms)))
}

fn push_fit(out: &mut Vec<Summary>, prefix: &str, fit: &RateFit) {
    push(out, None, format!("{prefix}slope"), fit.slope, None);
    push(out, None, format!("{prefix}intercept"), fit.intercept, None);
    push(out, None, format!("{prefix}r2"), fit.r2, None);
}
