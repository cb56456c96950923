//! The ε-system `u_t = u_xx + g(t/ε, u)`, `u(0, t) = √ε f(t/ε)`, `u(l, t) = 0`.
//!
//! The time-dependent Dirichlet value is removed by the lift
//! `û = u − √ε f(t/ε)(1 − x/l)`, which turns it into the body forcing
//! `−ε^{−1/2} f_t(t/ε)(1 − x/l)` on a zero-boundary problem. `û` is advanced
//! mode by mode with exponential Euler; the physical field is recovered by
//! [`unlift`] whenever a state is recorded.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{require, Error, Result};
use crate::noise::{BoundaryDriver, DriverPropagator, DriverState, ForcingModel};
use crate::plan::StepPlan;
use crate::spectral::{phi1, Field, SpectralBasis};

#[derive(Debug, Clone)]
pub struct MultiscaleConfig {
    pub eps: f64,
    /// Macro step; must satisfy `dt ≤ 0.5 ε`.
    pub dt: f64,
    pub t_end: f64,
    pub basis: SpectralBasis,
    pub model: ForcingModel,
    /// Boundary driver; `sigma = 0` switches the boundary term off.
    pub p_f: BoundaryDriver,
    pub u0: Field,
    /// Test functions `φ_j` whose projections `⟨u, φ_j⟩` are recorded.
    pub observables: Vec<Field>,
}

impl MultiscaleConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.eps > 0.0 && self.eps.is_finite(), "eps", "scale parameter must be positive")?;
        require(self.dt > 0.0 && self.dt.is_finite(), "dt", "time step must be positive")?;
        require(
            self.dt <= 0.5 * self.eps * (1.0 + 1e-12),
            "dt",
            "macro step must resolve the fast clock (dt <= 0.5 eps)",
        )?;
        require(self.t_end >= self.dt, "t_end", "horizon must cover at least one step")?;
        self.model.validate()?;
        self.p_f.validate()?;
        self.basis.check(&self.u0)?;
        require(self.u0.is_finite(), "u0", "initial field must be finite")?;
        for phi in &self.observables {
            self.basis.check(phi)?;
        }
        Ok(())
    }
}

/// Recorded states of one realization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Physical states (for the ε-system: after unlifting).
    pub states: Vec<Field>,
    /// `observables[i][j] = ⟨states[i], φ_j⟩`.
    pub observables: Vec<Vec<f64>>,
    /// Boundary value `√ε f(t/ε)` at each recorded time; zero for limit solvers.
    pub boundary_values: Vec<f64>,
}

impl TrajectoryRecord {
    fn with_capacity(n: usize) -> Self {
        TrajectoryRecord {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            observables: Vec::with_capacity(n),
            boundary_values: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, t: f64, state: Field, boundary: f64, phis: &[Field]) {
        self.observables.push(phis.iter().map(|p| p.dot(&state)).collect());
        self.times.push(t);
        self.states.push(state);
        self.boundary_values.push(boundary);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&Field> {
        self.states.last()
    }

    /// The zero-boundary field `û = u − √ε f (1 − x/l)` at record `i`.
    pub fn lifted_state(&self, i: usize, basis: &SpectralBasis) -> Field {
        let mut u = self.states[i].clone();
        u.add_scaled(-self.boundary_values[i], &basis.lift_profile());
        u
    }
}

/// `û_k = u_k − √ε f l_k`
pub fn lift(u: &Field, f_val: f64, eps: f64, basis: &SpectralBasis) -> Result<Field> {
    shift_by_lift(u, -f_val, eps, basis)
}

/// `u_k = û_k + √ε f l_k`, the inverse of [`lift`].
pub fn unlift(u_hat: &Field, f_val: f64, eps: f64, basis: &SpectralBasis) -> Result<Field> {
    shift_by_lift(u_hat, f_val, eps, basis)
}

fn shift_by_lift(u: &Field, f_val: f64, eps: f64, basis: &SpectralBasis) -> Result<Field> {
    require(eps > 0.0, "eps", "scale parameter must be positive")?;
    basis.check(u)?;
    let mut out = u.clone();
    out.add_scaled(libm::sqrt(eps) * f_val, &basis.lift_profile());
    Ok(out)
}

/// Per-mode exponential Euler coefficients for one step size.
#[derive(Debug, Clone)]
pub(crate) struct ExpEuler {
    pub dt: f64,
    pub decay: Vec<f64>,
    /// `φ₁(−λ_k dt)·dt`
    pub phi1_dt: Vec<f64>,
}

impl ExpEuler {
    pub fn new(basis: &SpectralBasis, dt: f64) -> Self {
        let decay = basis.eigenvalues().iter().map(|lam| libm::exp(-lam * dt)).collect();
        let phi1_dt = basis.eigenvalues().iter().map(|lam| phi1(-lam * dt) * dt).collect();
        ExpEuler { dt, decay, phi1_dt }
    }
}

struct StepKernel {
    exp: ExpEuler,
    drivers: DriverPropagator,
}

impl StepKernel {
    fn new(cfg: &MultiscaleConfig, dt: f64) -> Result<Self> {
        Ok(StepKernel {
            exp: ExpEuler::new(&cfg.basis, dt),
            drivers: DriverPropagator::new(dt, cfg.eps, &cfg.p_f, &cfg.model.m_params)?,
        })
    }
}

/// Reusable stepping machinery for one configuration.
struct Stepper<'a> {
    cfg: &'a MultiscaleConfig,
    sqrt_eps: f64,
    inv_sqrt_eps: f64,
    forcing_on: bool,
    physical: Vec<f64>,
    gamma: Vec<f64>,
    nodal: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a MultiscaleConfig) -> Self {
        let n = cfg.basis.n_modes();
        let m = &cfg.model.m_params;
        Stepper {
            cfg,
            sqrt_eps: libm::sqrt(cfg.eps),
            inv_sqrt_eps: 1.0 / libm::sqrt(cfg.eps),
            forcing_on: !(m.mu == 0.0 && m.sigma == 0.0),
            physical: vec![0.0; n],
            gamma: vec![0.0; n],
            nodal: vec![0.0; n],
        }
    }

    /// One macro step of `û` and the drivers; `t` is only used for diagnostics.
    fn step<R: Rng + ?Sized>(
        &mut self,
        kernel: &StepKernel,
        u_hat: &mut [f64],
        s: &mut DriverState,
        t: f64,
        rng: &mut R,
    ) -> Result<()> {
        let basis = &self.cfg.basis;
        let lk = basis.lift_coeffs();
        // g acts on the physical start-of-step field u = û + √ε f (1 − x/l)
        let forcing_on = self.forcing_on || s.eta_m != 0.0;
        if forcing_on {
            let shift = self.sqrt_eps * s.f_accum;
            for ((p, a), l) in self.physical.iter_mut().zip(u_hat.iter()).zip(lk) {
                *p = a + shift * l;
            }
            self.cfg.model.apply_gamma_into(&self.physical, &mut self.gamma, &mut self.nodal, basis);
        }
        let drv = kernel.drivers.advance(s, rng);
        let amp = drv.mean_amplitude;
        let rate_term = self.inv_sqrt_eps * drv.mean_rate;
        let mut check = 0.0;
        for k in 0..u_hat.len() {
            let g = if forcing_on { amp * self.gamma[k] } else { 0.0 };
            let forcing = g - rate_term * lk[k];
            u_hat[k] = kernel.exp.decay[k] * u_hat[k] + kernel.exp.phi1_dt[k] * forcing;
            check += u_hat[k];
        }
        *s = drv.state;
        if !check.is_finite() || !s.f_accum.is_finite() {
            return Err(Error::NonFinite { time: t + kernel.exp.dt });
        }
        Ok(())
    }

    fn physical_field(&self, u_hat: &[f64], s: &DriverState) -> Field {
        let shift = self.sqrt_eps * s.f_accum;
        let coeffs = u_hat
            .iter()
            .zip(self.cfg.basis.lift_coeffs())
            .map(|(a, l)| a + shift * l)
            .collect();
        Field::from_coeffs(coeffs).expect("finite state")
    }
}

/// One macro step `dt = cfg.dt` of the lifted system.
pub fn step_lifted<R: Rng + ?Sized>(
    u_hat: &Field,
    s: &DriverState,
    cfg: &MultiscaleConfig,
    rng: &mut R,
) -> Result<(Field, DriverState)> {
    cfg.validate()?;
    cfg.basis.check(u_hat)?;
    let kernel = StepKernel::new(cfg, cfg.dt)?;
    let mut stepper = Stepper::new(cfg);
    let mut next = u_hat.clone().into_coeffs();
    let mut state = *s;
    stepper.step(&kernel, &mut next, &mut state, s.fast_time * cfg.eps, rng)?;
    Ok((Field::from_coeffs(next)?, state))
}

/// Runs one realization to `t_end`, recording the physical state every
/// `record_every` steps (and always at `t = 0` and `t = t_end`).
pub fn simulate_multiscale<R: Rng + ?Sized>(
    cfg: &MultiscaleConfig,
    rng: &mut R,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    require(record_every >= 1, "record_every", "must be at least 1")?;
    let plan = StepPlan::new(cfg.dt, cfg.t_end);
    let full = StepKernel::new(cfg, plan.dt)?;
    let last = match plan.remainder {
        Some(rest) => Some(StepKernel::new(cfg, rest)?),
        None => None,
    };
    let mut stepper = Stepper::new(cfg);
    let mut state = DriverState::stationary(&cfg.p_f, &cfg.model.m_params, rng);
    let mut u_hat = lift(&cfg.u0, state.f_accum, cfg.eps, &cfg.basis)?.into_coeffs();
    let n_steps = plan.n_steps();
    let mut rec = TrajectoryRecord::with_capacity(n_steps / record_every + 2);
    let sqrt_eps = libm::sqrt(cfg.eps);
    rec.push(0.0, stepper.physical_field(&u_hat, &state), sqrt_eps * state.f_accum, &cfg.observables);
    for i in 0..n_steps {
        let kernel = if i < plan.n_full { &full } else { last.as_ref().expect("remainder step") };
        let t = plan.time_after(i, cfg.t_end);
        stepper.step(kernel, &mut u_hat, &mut state, t, rng)?;
        if plan.is_recorded(i + 1, record_every) {
            rec.push(
                plan.time_after(i + 1, cfg.t_end),
                stepper.physical_field(&u_hat, &state),
                sqrt_eps * state.f_accum,
                &cfg.observables,
            );
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{GammaKind, OuParams};
    use crate::spectral::{build_basis, evaluate_field, heat_semigroup_apply};
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_boundary() -> BoundaryDriver {
        BoundaryDriver::raw(OuParams::new(1.0, 0.0, 0.0).unwrap())
    }

    fn config(n: usize, eps: f64, dt: f64, t_end: f64, model: ForcingModel, p_f: BoundaryDriver, u0: Field) -> MultiscaleConfig {
        MultiscaleConfig {
            eps,
            dt,
            t_end,
            basis: build_basis(1.0, n).unwrap(),
            model,
            p_f,
            u0,
            observables: vec![Field::mode(n, 1, 1.0).unwrap()],
        }
    }

    #[test]
    fn lift_examples() {
        let b = build_basis(1.0, 8).unwrap();
        let u = Field::mode(8, 2, 0.4).unwrap();
        assert_eq!(lift(&u, 0.0, 0.3, &b).unwrap(), u);
        let l = lift(&Field::zeros(8), 1.0, 1.0, &b).unwrap();
        for (k, c) in l.coeffs().iter().enumerate() {
            assert!((c + libm::sqrt(2.0) / ((k + 1) as f64 * PI)).abs() < 1e-15);
        }
        assert_eq!(unlift(&u, 0.0, 0.3, &b).unwrap(), u);
        assert!(lift(&u, 1.0, 0.0, &b).is_err());
        assert!(unlift(&u, 1.0, -1.0, &b).is_err());
    }

    #[test]
    fn unlift_distance_bound() {
        // ‖1 − x/l‖₀² = l/3; truncation only lowers the coefficient norm
        let b = build_basis(2.0, 64).unwrap();
        let u = Field::mode(64, 1, 1.0).unwrap();
        for &eps in &[1e-1, 1e-2, 1e-4] {
            let d = unlift(&u, 1.7, eps, &b).unwrap().sub(&u).l2_norm();
            assert!(d <= libm::sqrt(eps * 2.0 / 3.0) * 1.7 + 1e-15);
        }
    }

    #[test]
    fn boundary_value_carried_by_lift_term() {
        let b = build_basis(1.0, 64).unwrap();
        let eps = 1e-2;
        let f_val = 0.8;
        // the lift term √ε f (1 − x/l), evaluated pointwise at x = 0
        let direct = libm::sqrt(eps) * f_val * (1.0 - 0.0 / b.length());
        assert!((direct - libm::sqrt(eps) * f_val).abs() < 1e-15);
        // sine modes vanish at the boundary, so the field part contributes nothing there
        let u_hat = Field::mode(64, 3, 1.0).unwrap();
        assert_eq!(evaluate_field(&u_hat, &[0.0], &b).unwrap()[0], 0.0);
    }

    proptest! {
        #[test]
        fn lift_round_trip(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 16),
            f_val in -10.0f64..10.0,
            eps in 1e-6f64..1.0,
        ) {
            let b = build_basis(1.0, 16).unwrap();
            let u = Field::from_coeffs(coeffs).unwrap();
            let back = unlift(&lift(&u, f_val, eps, &b).unwrap(), f_val, eps, &b).unwrap();
            for (a, c) in back.coeffs().iter().zip(u.coeffs()) {
                prop_assert!((a - c).abs() <= 1e-14 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn null_forcing_step_is_heat_semigroup() {
        let u0 = Field::from_coeffs(vec![1.0, 0.5, -0.2, 0.1]).unwrap();
        let cfg = config(4, 0.01, 0.002, 0.1, ForcingModel::off(), quiet_boundary(), u0.clone());
        let s = DriverState { eta_f: 0.0, f_accum: 0.0, eta_m: 0.0, fast_time: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _) = step_lifted(&u0, &s, &cfg, &mut rng).unwrap();
        let heat = heat_semigroup_apply(&u0, 0.002, &cfg.basis).unwrap();
        for (a, c) in next.coeffs().iter().zip(heat.coeffs()) {
            assert!((a - c).abs() < 1e-15);
        }
    }

    #[test]
    fn noise_off_matches_heat_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e1 = Field::mode(64, 1, 1.0).unwrap();
        let cfg = config(64, 0.01, 1e-3, 0.1, ForcingModel::off(), quiet_boundary(), e1);
        let rec = simulate_multiscale(&cfg, &mut rng, 10).unwrap();
        let a1 = rec.final_state().unwrap().coeffs()[0];
        let exact = libm::exp(-0.1 * PI * PI);
        assert!((a1 / exact - 1.0).abs() < 1e-3);
        assert!((a1 - 0.372_707_84).abs() < 1e-4);
        assert_eq!(*rec.times.last().unwrap(), 0.1);
        assert_eq!(rec.times.len(), 11);

        let u0 = Field::from_coeffs({
            let mut c = vec![0.0; 64];
            c[0] = 1.0;
            c[1] = 0.5;
            c
        })
        .unwrap();
        let cfg = config(64, 0.01, 1e-3, 0.1, ForcingModel::off(), quiet_boundary(), u0.clone());
        let rec = simulate_multiscale(&cfg, &mut rng, 100).unwrap();
        let heat = heat_semigroup_apply(&u0, 0.1, &cfg.basis).unwrap();
        assert!(rec.final_state().unwrap().sub(&heat).l2_norm() < 1e-3 * heat.l2_norm());
    }

    #[test]
    fn constant_linear_forcing_matches_scalar_ode() {
        let mu = 1.0;
        let model = ForcingModel::new(OuParams::new(1.0, 0.0, mu).unwrap(), GammaKind::Identity, 1.0).unwrap();
        let e1 = Field::mode(8, 1, 1.0).unwrap();
        let t = 0.5;
        let exact = libm::exp((mu - PI * PI) * t);
        let mut errs = Vec::new();
        for &dt in &[4e-3, 2e-3, 1e-3] {
            let cfg = config(8, 0.01, dt, t, model, quiet_boundary(), e1.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let rec = simulate_multiscale(&cfg, &mut rng, 1000).unwrap();
            let a1 = rec.final_state().unwrap().coeffs()[0];
            let rel = (a1 / exact - 1.0).abs();
            assert!(rel < 2.0 * dt * (1.0 + PI * PI), "dt={dt}: {rel}");
            errs.push(rel);
        }
        // first order under dt-refinement
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
    }

    #[test]
    fn same_seed_same_observables() {
        let model = ForcingModel::new(OuParams::new(1.0, 1.0, 0.5).unwrap(), GammaKind::Sine, 1.0).unwrap();
        let p_f = BoundaryDriver::raw(OuParams::new(1.0, 1.0, 0.0).unwrap());
        let cfg = config(16, 0.01, 1e-3, 0.2, model, p_f, Field::mode(16, 1, 1.0).unwrap());
        let a = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(42), 7).unwrap();
        let b = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(42), 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(43), 7).unwrap();
        assert_ne!(a.observables, c.observables);
    }

    #[test]
    fn recorded_boundary_matches_driver_and_lift() {
        let p_f = BoundaryDriver::raw(OuParams::new(1.0, 1.0, 0.0).unwrap());
        let cfg = config(32, 0.01, 1e-3, 0.05, ForcingModel::off(), p_f, Field::zeros(32));
        let rec = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(5), 5).unwrap();
        assert_eq!(rec.boundary_values[0], 0.0);
        for i in 0..rec.len() {
            let lifted = rec.lifted_state(i, &cfg.basis);
            let back = unlift(&lifted, rec.boundary_values[i] / libm::sqrt(cfg.eps), cfg.eps, &cfg.basis).unwrap();
            assert!(back.sub(&rec.states[i]).l2_norm() < 1e-14);
        }
        assert!(rec.boundary_values.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rejects_under_resolved_step() {
        let cfg = config(4, 0.01, 0.006, 0.1, ForcingModel::off(), quiet_boundary(), Field::zeros(4));
        let err = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(0), 1).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "dt", .. }));
        let ok = config(4, 0.01, 0.001, 0.1, ForcingModel::off(), quiet_boundary(), Field::zeros(4));
        assert!(simulate_multiscale(&ok, &mut ChaCha8Rng::seed_from_u64(0), 0).is_err());
    }

    #[test]
    fn non_finite_state_aborts() {
        let model = ForcingModel::new(OuParams::new(1.0, 0.0, 1e300).unwrap(), GammaKind::Identity, 1.0).unwrap();
        let cfg = config(4, 0.01, 1e-3, 0.1, model, quiet_boundary(), Field::mode(4, 1, 1e10).unwrap());
        let err = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(0), 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn stable_across_scales() {
        let model = ForcingModel::new(OuParams::new(1.0, 1.0, 1.0).unwrap(), GammaKind::ScaledTanh, 1.0).unwrap();
        let p_f = BoundaryDriver::raw(OuParams::new(1.0, 1.0, 0.0).unwrap());
        for &eps in &[1e-1, 1e-2, 1e-3] {
            for seed in 0..10 {
                let cfg = config(16, eps, 0.1 * eps, 1.0, model, p_f, Field::mode(16, 1, 1.0).unwrap());
                let rec = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), 1000).unwrap();
                assert!(rec.states.iter().all(|s| s.is_finite()));
            }
        }
    }

    #[test]
    fn lifted_energy_stays_bounded_with_boundary_noise() {
        let p_f = BoundaryDriver::raw(OuParams::new(1.0, 1.0, 0.0).unwrap());
        let mut means = Vec::new();
        for &eps in &[1e-1, 1e-2, 1e-3] {
            let n_real = 40;
            let mut sup_mean = 0.0;
            for seed in 0..n_real {
                let cfg = config(16, eps, 0.1 * eps, 1.0, ForcingModel::off(), p_f, Field::mode(16, 1, 1.0).unwrap());
                let rec = simulate_multiscale(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), 10).unwrap();
                let sup = (0..rec.len())
                    .map(|i| rec.lifted_state(i, &cfg.basis).l2_norm())
                    .fold(0.0, f64::max);
                sup_mean += sup / n_real as f64;
            }
            means.push(sup_mean);
        }
        // E sup ‖û^ε‖₀ does not blow up as ε shrinks
        let hi = means.iter().cloned().fold(0.0, f64::max);
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi < 2.0 * lo && hi < 3.0, "{means:?}");
    }
}
