//! Limit objects of the averaging theory.
//!
//! * the averaged SPDE `du = [u_xx + ḡ(u)] dt − √b (1 − x/l) dB` (boundary case),
//!   which reduces to `u_t = u_xx + ḡ(u)` when `b = 0` (body-forcing case);
//! * the linear deviation SPDE `dz = [z_xx + f̄′(u) z] dt + dW̃` driven along the
//!   deterministic averaged path `u`, with rank-one covariance `B̃(u)`.
//!
//! Both share the exponential-Euler backbone of the ε-system. Noise is
//! rank-one: one scalar Gaussian per step times a fixed (or `u`-dependent)
//! spatial profile.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{require, Error, Result};
use crate::multiscale::{ExpEuler, TrajectoryRecord};
use crate::noise::{ForcingModel, GammaKind};
use crate::plan::StepPlan;
use crate::spectral::{Field, SpectralBasis};

#[derive(Debug, Clone)]
pub struct LimitConfig {
    pub basis: SpectralBasis,
    pub model: ForcingModel,
    /// Boundary noise intensity; 0 disables the noise term.
    pub b: f64,
    pub dt: f64,
    pub t_end: f64,
    pub u0: Field,
    pub observables: Vec<Field>,
}

impl LimitConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.dt > 0.0 && self.dt.is_finite(), "dt", "time step must be positive")?;
        require(self.b >= 0.0 && self.b.is_finite(), "b", "noise variance must be nonnegative")?;
        require(self.t_end >= self.dt, "t_end", "horizon must cover at least one step")?;
        self.model.validate()?;
        self.basis.check(&self.u0)?;
        for phi in &self.observables {
            self.basis.check(phi)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeviationConfig {
    /// Drives the deterministic averaged path `u(t)`; its `b` is ignored.
    pub base: LimitConfig,
    /// Must be the zero field.
    pub z0: Field,
}

impl DeviationConfig {
    pub fn new(base: LimitConfig) -> Self {
        let z0 = Field::zeros(base.basis.n_modes());
        DeviationConfig { base, z0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.base.basis.check(&self.z0)?;
        require(self.z0.coeffs().iter().all(|c| *c == 0.0), "z0", "deviation starts from zero")
    }
}

#[derive(Debug, Clone)]
pub enum LimitProblem {
    Averaged(LimitConfig),
    Deviation(DeviationConfig),
}

/// Exponential-Euler stepping of the averaged equation.
struct AveragedKernel<'a> {
    cfg: &'a LimitConfig,
    exp: ExpEuler,
    noise_amp: f64,
    gamma: Vec<f64>,
    nodal: Vec<f64>,
}

impl<'a> AveragedKernel<'a> {
    fn new(cfg: &'a LimitConfig, dt: f64) -> Self {
        let n = cfg.basis.n_modes();
        AveragedKernel {
            cfg,
            exp: ExpEuler::new(&cfg.basis, dt),
            noise_amp: libm::sqrt(cfg.b) * libm::sqrt(dt),
            gamma: vec![0.0; n],
            nodal: vec![0.0; n],
        }
    }

    /// `u_k ← e^{−λ_k dt} u_k + φ₁(−λ_k dt) dt ḡ_k(u)`
    fn drift(&mut self, u: &mut [f64]) {
        let mu = self.cfg.model.m_params.mu;
        if mu == 0.0 {
            for (a, d) in u.iter_mut().zip(&self.exp.decay) {
                *a *= d;
            }
            return;
        }
        self.cfg.model.apply_gamma_into(u, &mut self.gamma, &mut self.nodal, &self.cfg.basis);
        for k in 0..u.len() {
            u[k] = self.exp.decay[k] * u[k] + self.exp.phi1_dt[k] * mu * self.gamma[k];
        }
    }

    /// `u_k ← u_k − √b l_k ΔB` with one shared `ΔB = √dt ξ`.
    fn noise(&self, u: &mut [f64], xi: f64) {
        let amp = self.noise_amp * xi;
        for (a, l) in u.iter_mut().zip(self.cfg.basis.lift_coeffs()) {
            *a -= amp * l;
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, u: &mut [f64], rng: &mut R) {
        self.drift(u);
        if self.cfg.b > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            self.noise(u, xi);
        }
    }
}

fn finite_or_abort(u: &[f64], t: f64) -> Result<()> {
    if u.iter().sum::<f64>().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { time: t })
    }
}

/// One step of the averaged SPDE.
pub fn step_averaged<R: Rng + ?Sized>(u: &Field, cfg: &LimitConfig, rng: &mut R) -> Result<Field> {
    cfg.validate()?;
    cfg.basis.check(u)?;
    let mut kernel = AveragedKernel::new(cfg, cfg.dt);
    let mut next = u.clone().into_coeffs();
    kernel.step(&mut next, rng);
    finite_or_abort(&next, cfg.dt)?;
    Field::from_coeffs(next)
}

fn kernels<'a>(cfg: &'a LimitConfig, plan: &StepPlan) -> (AveragedKernel<'a>, Option<AveragedKernel<'a>>) {
    (AveragedKernel::new(cfg, plan.dt), plan.remainder.map(|r| AveragedKernel::new(cfg, r)))
}

/// Noise-free integration of `u_t = u_xx + ḡ(u)`; `cfg.b` is ignored.
pub fn solve_averaged_deterministic(cfg: &LimitConfig, record_every: usize) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    require(record_every >= 1, "record_every", "must be at least 1")?;
    let plan = StepPlan::new(cfg.dt, cfg.t_end);
    let (mut full, mut last) = kernels(cfg, &plan);
    let mut u = cfg.u0.clone().into_coeffs();
    let mut rec = TrajectoryRecord::default();
    rec.push(0.0, cfg.u0.clone(), 0.0, &cfg.observables);
    for i in 0..plan.n_steps() {
        let kernel = if i < plan.n_full { &mut full } else { last.as_mut().expect("remainder step") };
        kernel.drift(&mut u);
        let t = plan.time_after(i + 1, cfg.t_end);
        finite_or_abort(&u, t)?;
        if plan.is_recorded(i + 1, record_every) {
            rec.push(t, Field::from_coeffs(u.clone())?, 0.0, &cfg.observables);
        }
    }
    Ok(rec)
}

/// Deviation stepping along the averaged path.
struct DeviationKernel<'a> {
    path: AveragedKernel<'a>,
    noise_amp: f64,
    direction: Vec<f64>,
    weights: Vec<f64>,
    nodal: Vec<f64>,
    drift: Vec<f64>,
}

impl<'a> DeviationKernel<'a> {
    fn new(cfg: &'a LimitConfig, dt: f64) -> Self {
        let n = cfg.basis.n_modes();
        let p = &cfg.model.m_params;
        DeviationKernel {
            path: AveragedKernel::new(cfg, dt),
            // √scale·√dt with scale = (σ_m/λ_m)²
            noise_amp: p.sigma / p.lambda * libm::sqrt(dt),
            direction: vec![0.0; n],
            weights: vec![0.0; n],
            nodal: vec![0.0; n],
            drift: vec![0.0; n],
        }
    }

    /// Advances `z` by one step using the start-of-step averaged state `u`.
    fn step_z(&mut self, z: &mut [f64], u: &[f64], xi: Option<f64>) {
        let cfg = self.path.cfg;
        let basis = &cfg.basis;
        let model = &cfg.model;
        let mu = model.m_params.mu;
        // f̄′(u) z
        match model.gamma_kind {
            GammaKind::Identity => {
                for (d, a) in self.drift.iter_mut().zip(z.iter()) {
                    *d = mu * a;
                }
            }
            _ => {
                basis.to_nodal(u, &mut self.weights);
                basis.to_nodal(z, &mut self.nodal);
                for (v, w) in self.nodal.iter_mut().zip(&self.weights) {
                    *v *= mu * model.gamma_prime(*w);
                }
                basis.from_nodal(&self.nodal, &mut self.drift);
            }
        }
        let exp = &self.path.exp;
        for k in 0..z.len() {
            z[k] = exp.decay[k] * z[k] + exp.phi1_dt[k] * self.drift[k];
        }
        if let Some(xi) = xi {
            model.apply_gamma_into(u, &mut self.direction, &mut self.nodal, basis);
            let amp = self.noise_amp * xi;
            for (a, d) in z.iter_mut().zip(&self.direction) {
                *a += amp * d;
            }
        }
    }

    fn noisy(&self) -> bool {
        self.noise_amp > 0.0
    }
}

/// One step of the deviation SPDE at the averaged state `u_now`.
pub fn step_deviation<R: Rng + ?Sized>(
    z: &Field,
    u_now: &Field,
    cfg: &DeviationConfig,
    rng: &mut R,
) -> Result<Field> {
    cfg.validate()?;
    cfg.base.basis.check(z)?;
    cfg.base.basis.check(u_now)?;
    let mut kernel = DeviationKernel::new(&cfg.base, cfg.base.dt);
    let xi = kernel.noisy().then(|| rng.sample(StandardNormal));
    let mut next = z.clone().into_coeffs();
    kernel.step_z(&mut next, u_now.coeffs(), xi);
    finite_or_abort(&next, cfg.base.dt)?;
    Field::from_coeffs(next)
}

/// Runs one realization of a limit problem with the same recording contract
/// as the ε-system; deviation runs record `z`.
pub fn simulate_limit<R: Rng + ?Sized>(
    problem: &LimitProblem,
    rng: &mut R,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    require(record_every >= 1, "record_every", "must be at least 1")?;
    match problem {
        LimitProblem::Averaged(cfg) => {
            cfg.validate()?;
            let plan = StepPlan::new(cfg.dt, cfg.t_end);
            let (mut full, mut last) = kernels(cfg, &plan);
            let mut u = cfg.u0.clone().into_coeffs();
            let mut rec = TrajectoryRecord::default();
            rec.push(0.0, cfg.u0.clone(), 0.0, &cfg.observables);
            for i in 0..plan.n_steps() {
                let kernel = if i < plan.n_full { &mut full } else { last.as_mut().expect("remainder step") };
                kernel.step(&mut u, rng);
                let t = plan.time_after(i + 1, cfg.t_end);
                finite_or_abort(&u, t)?;
                if plan.is_recorded(i + 1, record_every) {
                    rec.push(t, Field::from_coeffs(u.clone())?, 0.0, &cfg.observables);
                }
            }
            Ok(rec)
        }
        LimitProblem::Deviation(dev) => {
            dev.validate()?;
            let cfg = &dev.base;
            let plan = StepPlan::new(cfg.dt, cfg.t_end);
            let mut full = DeviationKernel::new(cfg, plan.dt);
            let mut last = plan.remainder.map(|r| DeviationKernel::new(cfg, r));
            let mut u = cfg.u0.clone().into_coeffs();
            let mut z = dev.z0.clone().into_coeffs();
            let mut rec = TrajectoryRecord::default();
            rec.push(0.0, dev.z0.clone(), 0.0, &cfg.observables);
            for i in 0..plan.n_steps() {
                let kernel = if i < plan.n_full { &mut full } else { last.as_mut().expect("remainder step") };
                let xi = kernel.noisy().then(|| rng.sample(StandardNormal));
                kernel.step_z(&mut z, &u, xi);
                kernel.path.drift(&mut u);
                let t = plan.time_after(i + 1, cfg.t_end);
                finite_or_abort(&z, t)?;
                finite_or_abort(&u, t)?;
                if plan.is_recorded(i + 1, record_every) {
                    rec.push(t, Field::from_coeffs(z.clone())?, 0.0, &cfg.observables);
                }
            }
            Ok(rec)
        }
    }
}
