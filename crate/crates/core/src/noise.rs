//! Mixing drivers and the separable forcing model.
//!
//! The boundary rate `f_t` and the body-forcing amplitude `m` are stationary
//! Ornstein–Uhlenbeck processes on the fast clock `τ = t/ε`. The boundary
//! value `f(τ) = f(0) + ∫₀^τ f_t` is accumulated by trapezoidal quadrature
//! over exact OU substeps. Body forcing is `g(t, u) = m(t)·γ(u)` with a
//! pointwise nonlinearity `γ`, `γ(0) = 0`, which makes the averaged drift,
//! its derivative and the deviation covariance available in closed form.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{require, Result};
use crate::spectral::{Field, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    /// Mean-reversion (mixing) rate, strictly positive.
    pub lambda: f64,
    pub sigma: f64,
    /// Stationary mean.
    pub mu: f64,
}

impl OuParams {
    pub fn new(lambda: f64, sigma: f64, mu: f64) -> Result<Self> {
        let p = OuParams { lambda, sigma, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.lambda > 0.0 && self.lambda.is_finite(), "lambda", "mixing rate must be positive")?;
        require(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", "diffusion intensity must be nonnegative")?;
        require(self.mu.is_finite(), "mu", "mean must be finite")
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.lambda)
    }

    /// A draw from the stationary law `N(μ, σ²/2λ)`.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu;
        }
        let xi: f64 = rng.sample(StandardNormal);
        self.mu + libm::sqrt(self.stationary_variance()) * xi
    }
}

/// One exact-in-law OU transition over `d_tau` given a standard normal `xi`.
pub fn ou_exact_step(eta: f64, d_tau: f64, p: &OuParams, xi: f64) -> Result<f64> {
    require(d_tau > 0.0, "d_tau", "step must be positive")?;
    Ok(OuTransition::new(p, d_tau).apply(eta, xi))
}

/// Cached coefficients of [`ou_exact_step`] for a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct OuTransition {
    mu: f64,
    decay: f64,
    noise_sd: f64,
}

impl OuTransition {
    pub fn new(p: &OuParams, d_tau: f64) -> Self {
        let decay = libm::exp(-p.lambda * d_tau);
        // 1 − e^{−2λdτ} via expm1 keeps small steps accurate
        let var = -libm::expm1(-2.0 * p.lambda * d_tau) / (2.0 * p.lambda);
        OuTransition { mu: p.mu, decay, noise_sd: p.sigma * libm::sqrt(var) }
    }

    #[inline]
    pub fn apply(&self, eta: f64, xi: f64) -> f64 {
        self.mu + (eta - self.mu) * self.decay + self.noise_sd * xi
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        if self.noise_sd == 0.0 {
            self.apply(eta, 0.0)
        } else {
            self.apply(eta, rng.sample(StandardNormal))
        }
    }
}

/// How the OU state is turned into the boundary rate `f_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateShape {
    /// `f_t = η`
    Raw,
    /// `f_t = c·tanh(η/c)`, bounded by `c`.
    ScaledTanh { bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDriver {
    pub ou: OuParams,
    pub shape: RateShape,
}

impl BoundaryDriver {
    pub fn raw(ou: OuParams) -> Self {
        BoundaryDriver { ou, shape: RateShape::Raw }
    }

    pub fn validate(&self) -> Result<()> {
        self.ou.validate()?;
        require(self.ou.mu == 0.0, "mu_f", "boundary rate must be centred")?;
        if let RateShape::ScaledTanh { bound } = self.shape {
            require(bound > 0.0 && bound.is_finite(), "boundary_bound", "bound must be positive")?;
        }
        Ok(())
    }

    #[inline]
    pub fn rate(&self, eta: f64) -> f64 {
        match self.shape {
            RateShape::Raw => eta,
            RateShape::ScaledTanh { bound } => bound * libm::tanh(eta / bound),
        }
    }

    /// True when the boundary term vanishes identically.
    pub fn is_off(&self) -> bool {
        self.ou.sigma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverState {
    /// OU state behind the boundary rate `f_t`.
    pub eta_f: f64,
    /// `f(τ)`, the boundary value before the `√ε` scaling.
    pub f_accum: f64,
    /// Body-forcing amplitude `m(τ)`.
    pub eta_m: f64,
    pub fast_time: f64,
}

impl DriverState {
    /// `f(0) = 0` with both OU states drawn from their stationary laws.
    pub fn stationary<R: Rng + ?Sized>(p_f: &BoundaryDriver, p_m: &OuParams, rng: &mut R) -> Self {
        DriverState {
            eta_f: p_f.ou.sample_stationary(rng),
            f_accum: 0.0,
            eta_m: p_m.sample_stationary(rng),
            fast_time: 0.0,
        }
    }
}

/// Result of advancing the drivers over one macro step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverStep {
    pub state: DriverState,
    /// Trapezoidal average of `f_t` over the step.
    pub mean_rate: f64,
    /// Trapezoidal average of `m` over the step.
    pub mean_amplitude: f64,
}

/// Driver advance for a fixed macro step `dt` at scale `eps`.
#[derive(Debug, Clone, Copy)]
pub struct DriverPropagator {
    n_sub: usize,
    d_tau: f64,
    trans_f: OuTransition,
    trans_m: OuTransition,
    boundary: BoundaryDriver,
}

impl DriverPropagator {
    /// Substep cap is `0.1/max(λ_f, λ_m)` in fast time.
    pub fn new(dt: f64, eps: f64, p_f: &BoundaryDriver, p_m: &OuParams) -> Result<Self> {
        require(eps > 0.0, "eps", "scale parameter must be positive")?;
        require(dt > 0.0, "dt", "time step must be positive")?;
        let fast = dt / eps;
        let d_tau_max = 0.1 / p_f.ou.lambda.max(p_m.lambda);
        let n_sub = (libm::ceil(fast / d_tau_max - 1e-9) as usize).max(1);
        let d_tau = fast / n_sub as f64;
        Ok(DriverPropagator {
            n_sub,
            d_tau,
            trans_f: OuTransition::new(&p_f.ou, d_tau),
            trans_m: OuTransition::new(p_m, d_tau),
            boundary: *p_f,
        })
    }

    pub fn substeps(&self) -> usize {
        self.n_sub
    }

    pub fn advance<R: Rng + ?Sized>(&self, s: &DriverState, rng: &mut R) -> DriverStep {
        let mut eta_f = s.eta_f;
        let mut eta_m = s.eta_m;
        let mut f_accum = s.f_accum;
        let mut rate = self.boundary.rate(eta_f);
        let mut sum_rate = 0.0;
        let mut sum_m = 0.0;
        for _ in 0..self.n_sub {
            let next_f = self.trans_f.draw(eta_f, rng);
            let next_m = self.trans_m.draw(eta_m, rng);
            let next_rate = self.boundary.rate(next_f);
            let trap = 0.5 * (rate + next_rate);
            f_accum += self.d_tau * trap;
            sum_rate += trap;
            sum_m += 0.5 * (eta_m + next_m);
            eta_f = next_f;
            eta_m = next_m;
            rate = next_rate;
        }
        let n = self.n_sub as f64;
        DriverStep {
            state: DriverState {
                eta_f,
                f_accum,
                eta_m,
                fast_time: s.fast_time + self.d_tau * n,
            },
            mean_rate: sum_rate / n,
            mean_amplitude: sum_m / n,
        }
    }
}

/// Advances both drivers by `dt/eps` of fast time.
pub fn advance_drivers<R: Rng + ?Sized>(
    s: &DriverState,
    dt: f64,
    eps: f64,
    p_f: &BoundaryDriver,
    p_m: &OuParams,
    rng: &mut R,
) -> Result<DriverStep> {
    Ok(DriverPropagator::new(dt, eps, p_f, p_m)?.advance(s, rng))
}

/// `b = E f_t² = σ_f²/(2λ_f)`, the stationary variance of the boundary rate.
pub fn boundary_variance_b(p_f: &OuParams) -> f64 {
    p_f.stationary_variance()
}

/// `2∫₀^∞ E[f_t(0) f_t(τ)] dτ = σ_f²/λ_f²`, the diffusion coefficient that
/// `ε^{−1/2}∫ f_t(s/ε) ds` actually acquires as `ε → 0`.
pub fn boundary_long_run_variance(p_f: &OuParams) -> f64 {
    let r = p_f.sigma / p_f.lambda;
    r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    Identity,
    /// `s·sin(u/s)`
    Sine,
    /// `s·tanh(u/s)`
    ScaledTanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingModel {
    /// Amplitude process `m`; its `mu` is the average amplitude `μ_m`.
    pub m_params: OuParams,
    pub gamma_kind: GammaKind,
    /// Width `s` of the sine / tanh nonlinearities (ignored for identity).
    pub gamma_scale: f64,
}

impl ForcingModel {
    pub fn new(m_params: OuParams, gamma_kind: GammaKind, gamma_scale: f64) -> Result<Self> {
        let m = ForcingModel { m_params, gamma_kind, gamma_scale };
        m.validate()?;
        Ok(m)
    }

    /// `g ≡ 0`
    pub fn off() -> Self {
        ForcingModel {
            m_params: OuParams { lambda: 1.0, sigma: 0.0, mu: 0.0 },
            gamma_kind: GammaKind::Identity,
            gamma_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.m_params.validate()?;
        require(
            self.gamma_scale > 0.0 && self.gamma_scale.is_finite(),
            "gamma_scale",
            "nonlinearity width must be positive",
        )
    }

    /// Lipschitz constant of `γ`; `g` is Lipschitz with `|m|` times this.
    pub fn gamma_lipschitz(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn gamma(&self, u: f64) -> f64 {
        let s = self.gamma_scale;
        match self.gamma_kind {
            GammaKind::Identity => u,
            GammaKind::Sine => s * libm::sin(u / s),
            GammaKind::ScaledTanh => s * libm::tanh(u / s),
        }
    }

    #[inline]
    pub fn gamma_prime(&self, u: f64) -> f64 {
        let s = self.gamma_scale;
        match self.gamma_kind {
            GammaKind::Identity => 1.0,
            GammaKind::Sine => libm::cos(u / s),
            GammaKind::ScaledTanh => {
                let t = libm::tanh(u / s);
                1.0 - t * t
            }
        }
    }

    /// `γ(u)` as a field; identity acts on coefficients, the rest by collocation.
    pub fn apply_gamma(&self, u: &Field, basis: &SpectralBasis) -> Field {
        match self.gamma_kind {
            GammaKind::Identity => u.clone(),
            _ => basis.map_pointwise(u, |v| self.gamma(v)),
        }
    }

    /// Writes `γ(u)` coefficients into `out`, using `nodal` as scratch.
    pub(crate) fn apply_gamma_into(
        &self,
        u: &[f64],
        out: &mut [f64],
        nodal: &mut [f64],
        basis: &SpectralBasis,
    ) {
        match self.gamma_kind {
            GammaKind::Identity => out.copy_from_slice(u),
            _ => {
                basis.to_nodal(u, nodal);
                nodal.iter_mut().for_each(|v| *v = self.gamma(*v));
                basis.from_nodal(nodal, out);
            }
        }
    }

    /// True when the averaged drift `ḡ` vanishes identically.
    pub fn drift_is_off(&self) -> bool {
        self.m_params.mu == 0.0
    }
}

/// `g(τ, u) = m(τ)·γ(u)` at the driver state `s`.
pub fn eval_g(s: &DriverState, u: &Field, model: &ForcingModel, basis: &SpectralBasis) -> Result<Field> {
    basis.check(u)?;
    Ok(model.apply_gamma(u, basis).scaled(s.eta_m))
}

/// `ḡ(u) = E g(t, u) = μ_m·γ(u)`.
pub fn bar_g(u: &Field, model: &ForcingModel, basis: &SpectralBasis) -> Result<Field> {
    basis.check(u)?;
    Ok(model.apply_gamma(u, basis).scaled(model.m_params.mu))
}

/// Pointwise multiplier acting on a field.
#[derive(Debug, Clone, PartialEq)]
pub enum Multiplier {
    Constant(f64),
    /// Values at the basis collocation points.
    Nodal(Vec<f64>),
}

impl Multiplier {
    pub fn apply(&self, z: &Field, basis: &SpectralBasis) -> Field {
        match self {
            Multiplier::Constant(c) => z.scaled(*c),
            Multiplier::Nodal(w) => {
                let mut nodal = alloc::vec![0.0; basis.n_modes()];
                basis.to_nodal(z.coeffs(), &mut nodal);
                for (v, m) in nodal.iter_mut().zip(w) {
                    *v *= m;
                }
                let mut out = Field::zeros(basis.n_modes());
                basis.from_nodal(&nodal, out.coeffs_mut());
                out
            }
        }
    }
}

/// `f̄′(u) = E ∂_u g(t, u) = μ_m·γ′(u)` as a pointwise multiplier.
pub fn averaged_derivative(u: &Field, model: &ForcingModel, basis: &SpectralBasis) -> Result<Multiplier> {
    basis.check(u)?;
    let mu = model.m_params.mu;
    if model.gamma_kind == GammaKind::Identity {
        return Ok(Multiplier::Constant(mu));
    }
    let mut nodal = alloc::vec![0.0; basis.n_modes()];
    basis.to_nodal(u.coeffs(), &mut nodal);
    Ok(Multiplier::Nodal(nodal.iter().map(|v| mu * model.gamma_prime(*v)).collect()))
}

/// `⟨Σφ, φ⟩ = b·⟨1 − x/l, φ⟩² = b·(Σ l_k φ_k)²`.
pub fn sigma_quadratic_form(phi: &Field, b: f64, basis: &SpectralBasis) -> Result<f64> {
    basis.check(phi)?;
    require(b >= 0.0, "b", "variance must be nonnegative")?;
    let p: f64 = phi.coeffs().iter().zip(basis.lift_coeffs()).map(|(a, l)| a * l).sum();
    Ok(b * p * p)
}

/// Rank-one covariance `v ↦ scale·⟨direction, v⟩·direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRep {
    pub scale: f64,
    pub direction: Field,
}

impl CovarianceRep {
    pub fn apply(&self, v: &Field) -> Field {
        self.direction.scaled(self.scale * self.direction.dot(v))
    }

    pub fn quadratic_form(&self, v: &Field) -> f64 {
        let d = self.direction.dot(v);
        self.scale * d * d
    }
}

/// `B̃(u) = 2∫₀^∞ Cov(m(t), m(0)) dt · γ(u)⊗γ(u) = (σ_m/λ_m)²·γ(u)⊗γ(u)`.
pub fn covariance_btilde(u: &Field, model: &ForcingModel, basis: &SpectralBasis) -> Result<CovarianceRep> {
    basis.check(u)?;
    let r = model.m_params.sigma / model.m_params.lambda;
    Ok(CovarianceRep { scale: r * r, direction: model.apply_gamma(u, basis) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_basis;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ou(lambda: f64, sigma: f64, mu: f64) -> OuParams {
        OuParams::new(lambda, sigma, mu).unwrap()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn params_validation() {
        assert!(OuParams::new(0.0, 1.0, 0.0).is_err());
        assert!(OuParams::new(1.0, -1.0, 0.0).is_err());
        assert!((ou(2.0, 1.0, 0.0).stationary_variance() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ou_step_examples() {
        let p = ou(1.0, 0.0, 0.0);
        assert!((ou_exact_step(1.0, core::f64::consts::LN_2, &p, 0.7).unwrap() - 0.5).abs() < 1e-15);
        let q = ou(3.0, 2.0, 0.5);
        assert!((ou_exact_step(3.0, 1e-14, &q, 0.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(ou_exact_step(3.0, 0.0, &q, 0.0).is_err());
    }

    #[test]
    fn ou_long_run_variance() {
        let p = ou(1.0, 1.0, 0.0);
        let tr = OuTransition::new(&p, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut eta = p.sample_stationary(&mut rng);
        let mut xs = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            eta = tr.draw(eta, &mut rng);
            xs.push(eta);
        }
        let (m, v) = mean_var(&xs);
        assert!((v - 0.5).abs() < 0.01, "variance {v}");
        // E f_t = 0: the correlated-sample standard error is √(v·(1+ρ)/(1−ρ)/n)
        let rho = libm::exp(-1.0);
        let se = libm::sqrt(v * (1.0 + rho) / (1.0 - rho) / xs.len() as f64);
        assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn ou_one_step_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(lambda, sigma, mu, eta, dt) in
            &[(1.0, 1.0, 0.0, 1.0, 0.3), (2.5, 0.7, -1.0, 2.0, 1.7), (0.3, 2.0, 0.4, -0.5, 0.01)]
        {
            let p = ou(lambda, sigma, mu);
            let n = 100_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| ou_exact_step(eta, dt, &p, rng.sample(StandardNormal)).unwrap())
                .collect();
            let (m, v) = mean_var(&xs);
            let m_exact = mu + (eta - mu) * libm::exp(-lambda * dt);
            let v_exact = sigma * sigma * (1.0 - libm::exp(-2.0 * lambda * dt)) / (2.0 * lambda);
            let se_m = libm::sqrt(v_exact / n as f64);
            let se_v = v_exact * libm::sqrt(2.0 / (n as f64 - 1.0));
            assert!((m - m_exact).abs() < 3.0 * se_m, "mean {m} vs {m_exact}");
            assert!((v - v_exact).abs() < 3.0 * se_v, "var {v} vs {v_exact}");
        }
    }

    #[test]
    fn null_noise_leaves_state_except_clock() {
        let p_f = BoundaryDriver::raw(ou(1.0, 0.0, 0.0));
        let p_m = ou(2.0, 0.0, 0.0);
        let s = DriverState { eta_f: 0.0, f_accum: 0.0, eta_m: 0.0, fast_time: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = advance_drivers(&s, 0.05, 0.01, &p_f, &p_m, &mut rng).unwrap();
        assert_eq!(next.state.eta_f, 0.0);
        assert_eq!(next.state.eta_m, 0.0);
        assert_eq!(next.state.f_accum, 0.0);
        assert!((next.state.fast_time - 5.0).abs() < 1e-12);
        assert!(advance_drivers(&s, 0.05, 0.0, &p_f, &p_m, &mut rng).is_err());
    }

    #[test]
    fn f_accum_integrates_deterministic_decay() {
        let p_f = BoundaryDriver::raw(ou(1.0, 0.0, 0.0));
        let p_m = ou(1.0, 0.0, 0.0);
        let mut s = DriverState { eta_f: 1.0, f_accum: 0.0, eta_m: 0.0, fast_time: 0.0 };
        let prop = DriverPropagator::new(1.0, 1.0, &p_f, &p_m).unwrap();
        assert_eq!(prop.substeps(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..60 {
            s = prop.advance(&s, &mut rng).state;
        }
        // trapezoid on dτ = 0.1 overestimates ∫e^{−τ} by ~dτ²/12
        assert!((s.f_accum - 1.0).abs() < 1e-3, "f_accum {}", s.f_accum);
        assert!((s.eta_f - libm::exp(-60.0)).abs() < 1e-20);
    }

    #[test]
    fn substep_count_is_robust_to_rounding() {
        let p = BoundaryDriver::raw(ou(1.0, 1.0, 0.0));
        let prop = DriverPropagator::new(1e-4, 1e-3, &p, &ou(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(prop.substeps(), 1);
    }

    #[test]
    fn driver_relaxes_to_stationary_variance() {
        let p_f = BoundaryDriver::raw(ou(1.0, 1.0, 0.0));
        let p_m = ou(1.0, 0.0, 0.0);
        let prop = DriverPropagator::new(1.0, 1.0, &p_f, &p_m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let mut s = DriverState { eta_f: 0.0, f_accum: 0.0, eta_m: 0.0, fast_time: 0.0 };
                for _ in 0..100 {
                    s = prop.advance(&s, &mut rng).state;
                }
                s.eta_f
            })
            .collect();
        let (_, v) = mean_var(&xs);
        assert!((v - 0.5).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn amplitude_autocorrelation_within_envelope() {
        let lambda = 2.0;
        let p = ou(lambda, 1.0, 0.3);
        let d_tau = 0.05;
        let tr = OuTransition::new(&p, d_tau);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut eta = p.sample_stationary(&mut rng);
        let xs: Vec<f64> = (0..400_000)
            .map(|_| {
                eta = tr.draw(eta, &mut rng);
                eta
            })
            .collect();
        let (m, v) = mean_var(&xs);
        let max_lag = libm::ceil(5.0 / lambda / d_tau) as usize;
        for lag in (0..=max_lag).step_by(5) {
            let n = xs.len() - lag;
            let c = (0..n).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / n as f64 / v;
            let env = libm::exp(-lambda * lag as f64 * d_tau);
            // factor-2 envelope; at the tail the envelope is below sampling noise
            assert!(c <= 2.0 * env + 0.02 && c >= 0.5 * env - 0.02, "lag {lag}: {c} vs {env}");
        }
    }

    #[test]
    fn b_examples() {
        assert!((boundary_variance_b(&ou(1.0, 1.0, 0.0)) - 0.5).abs() < 1e-15);
        assert_eq!(boundary_variance_b(&ou(2.0, 0.0, 0.0)), 0.0);
        assert!((boundary_variance_b(&ou(0.5, 1.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((boundary_long_run_variance(&ou(1.0, 1.0, 0.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn b_matches_sample_variance_of_rate() {
        let p = ou(0.5, 1.0, 0.0);
        let tr = OuTransition::new(&p, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut eta = p.sample_stationary(&mut rng);
        let xs: Vec<f64> = (0..400_000)
            .map(|_| {
                eta = tr.draw(eta, &mut rng);
                eta
            })
            .collect();
        let (_, v) = mean_var(&xs);
        assert!((v - boundary_variance_b(&p)).abs() < 0.03, "{v}");
    }

    #[test]
    fn gamma_vanishes_at_zero_and_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [GammaKind::Identity, GammaKind::Sine, GammaKind::ScaledTanh] {
            let model = ForcingModel::new(ou(1.0, 1.0, 0.5), kind, 0.7).unwrap();
            assert_eq!(model.gamma(0.0), 0.0);
            for _ in 0..10_000 {
                let u: f64 = rng.random_range(-5.0..5.0);
                let v: f64 = rng.random_range(-5.0..5.0);
                let lhs = (model.gamma(u) - model.gamma(v)).abs();
                assert!(lhs <= model.gamma_lipschitz() * (u - v).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn eval_g_examples() {
        let b = build_basis(1.0, 16).unwrap();
        let e1 = Field::mode(16, 1, 1.0).unwrap();
        let model = ForcingModel::new(ou(1.0, 1.0, 0.0), GammaKind::Identity, 1.0).unwrap();
        let s = DriverState { eta_f: 0.0, f_accum: 0.0, eta_m: 2.0, fast_time: 0.0 };
        assert_eq!(eval_g(&s, &e1, &model, &b).unwrap(), e1.scaled(2.0));
        for kind in [GammaKind::Identity, GammaKind::Sine, GammaKind::ScaledTanh] {
            let m = ForcingModel::new(ou(1.0, 1.0, 0.0), kind, 1.0).unwrap();
            let z = eval_g(&s, &Field::zeros(16), &m, &b).unwrap();
            assert!(z.coeffs().iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn eval_g_lipschitz_in_l2() {
        let b = build_basis(1.0, 32).unwrap();
        let model = ForcingModel::new(ou(1.0, 1.0, 0.0), GammaKind::Sine, 1.0).unwrap();
        let s = DriverState { eta_f: 0.0, f_accum: 0.0, eta_m: 1.0, fast_time: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base = Field::mode(32, 1, 0.1).unwrap();
        for _ in 0..200 {
            let mut u = base.clone();
            let mut v = Field::zeros(32);
            for k in 0..32 {
                u.coeffs_mut()[k] += rng.random_range(-1.0..1.0) / (k + 1) as f64;
                v.coeffs_mut()[k] = rng.random_range(-1.0..1.0) / (k + 1) as f64;
            }
            let gu = eval_g(&s, &u, &model, &b).unwrap();
            let gv = eval_g(&s, &v, &model, &b).unwrap();
            // discrete Parseval on the collocation grid makes the bound exact
            assert!(gu.sub(&gv).l2_norm() <= u.sub(&v).l2_norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bar_g_examples() {
        let b = build_basis(1.0, 8).unwrap();
        let e1 = Field::mode(8, 1, 1.0).unwrap();
        let centred = ForcingModel::new(ou(1.0, 1.0, 0.0), GammaKind::Sine, 1.0).unwrap();
        assert!(bar_g(&e1, &centred, &b).unwrap().coeffs().iter().all(|c| *c == 0.0));
        let unit = ForcingModel::new(ou(1.0, 1.0, 1.0), GammaKind::Identity, 1.0).unwrap();
        assert_eq!(bar_g(&e1, &unit, &b).unwrap(), e1);
    }

    // (1/T)∫₀^T g(s/ε, u) ds on the macro grid dt = 0.1ε.
    fn time_average(model: &ForcingModel, u: &Field, b: &SpectralBasis, eps: f64, t: f64, seed: u64) -> Field {
        let p_f = BoundaryDriver::raw(ou(1.0, 0.0, 0.0));
        let dt = 0.1 * eps;
        let prop = DriverPropagator::new(dt, eps, &p_f, &model.m_params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = DriverState::stationary(&p_f, &model.m_params, &mut rng);
        let n = libm::round(t / dt) as usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let step = prop.advance(&s, &mut rng);
            acc += step.mean_amplitude * dt;
            s = step.state;
        }
        model.apply_gamma(u, b).scaled(acc / t)
    }

    #[test]
    fn bar_g_is_ergodic_limit() {
        let b = build_basis(1.0, 8).unwrap();
        let e1 = Field::mode(8, 1, 1.0).unwrap();
        let model = ForcingModel::new(ou(1.0, 1.0, 0.7), GammaKind::Identity, 1.0).unwrap();
        let target = bar_g(&e1, &model, &b).unwrap();
        let avg = time_average(&model, &e1, &b, 1e-3, 50.0, 77);
        assert!(avg.sub(&target).l2_norm() < 0.02);

        // deviation shrinks with the fast horizon T/ε ∈ {10, 100, 1000}; RMS over seeds
        let mut rms = Vec::new();
        for &t in &[0.01, 0.1, 1.0] {
            let ss: f64 = (0..200)
                .map(|seed| {
                    let d = time_average(&model, &e1, &b, 1e-3, t, 1000 + seed).sub(&target).l2_norm();
                    d * d
                })
                .sum();
            rms.push(libm::sqrt(ss / 200.0));
        }
        assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    }

    #[test]
    fn averaged_derivative_examples() {
        let b = build_basis(1.0, 16).unwrap();
        let lin = ForcingModel::new(ou(1.0, 1.0, 0.8), GammaKind::Identity, 1.0).unwrap();
        let u = Field::mode(16, 2, 0.3).unwrap();
        assert_eq!(averaged_derivative(&u, &lin, &b).unwrap(), Multiplier::Constant(0.8));
        let sine = ForcingModel::new(ou(1.0, 1.0, 0.8), GammaKind::Sine, 1.0).unwrap();
        match averaged_derivative(&Field::zeros(16), &sine, &b).unwrap() {
            Multiplier::Nodal(w) => assert!(w.iter().all(|v| (*v - 0.8).abs() < 1e-15)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_prime_matches_finite_differences() {
        let h = 1e-6;
        for kind in [GammaKind::Identity, GammaKind::Sine, GammaKind::ScaledTanh] {
            let m = ForcingModel::new(ou(1.0, 1.0, 0.0), kind, 0.9).unwrap();
            for i in -20..=20 {
                let u = i as f64 * 0.17;
                let fd = (m.gamma(u + h) - m.gamma(u)) / h;
                assert!((fd - m.gamma_prime(u)).abs() < 1e-5, "{kind:?} at {u}");
            }
        }
    }

    // Direct 2D Simpson quadrature of b∫∫(1−x/l)φ(x)(1−y/l)φ(y) dx dy.
    fn sigma_by_2d_quadrature(phi: &Field, b: f64, basis: &SpectralBasis) -> f64 {
        let l = basis.length();
        let n = 512;
        let h = l / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let vals: Vec<f64> = (0..=n)
            .map(|i| {
                let x = i as f64 * h;
                let p: f64 = phi.coeffs().iter().enumerate().map(|(k, a)| a * basis.eigenfunction(k + 1, x)).sum();
                (1.0 - x / l) * p
            })
            .collect();
        let mut s = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                s += w(i) * w(j) * vals[i] * vals[j];
            }
        }
        b * s * (h / 3.0) * (h / 3.0)
    }

    #[test]
    fn sigma_form_examples() {
        let basis = build_basis(1.0, 8).unwrap();
        let e1 = Field::mode(8, 1, 1.0).unwrap();
        let v = sigma_quadratic_form(&e1, 0.5, &basis).unwrap();
        assert!((v - 1.0 / (PI * PI)).abs() < 1e-15);
        assert!((v - 0.101321).abs() < 1e-6);
        let q = sigma_by_2d_quadrature(&e1, 0.5, &basis);
        assert!((v - q).abs() < 1e-6 * v);
        assert_eq!(sigma_quadratic_form(&Field::zeros(8), 0.5, &basis).unwrap(), 0.0);
        assert_eq!(sigma_quadratic_form(&e1, 0.0, &basis).unwrap(), 0.0);
    }

    #[test]
    fn sigma_form_matches_quadrature_for_random_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let basis = build_basis(1.6, 6).unwrap();
        for _ in 0..20 {
            let phi = Field::from_coeffs((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let b: f64 = rng.random_range(0.1..2.0);
            let v = sigma_quadratic_form(&phi, b, &basis).unwrap();
            let q = sigma_by_2d_quadrature(&phi, b, &basis);
            assert!((v - q).abs() <= 1e-6 * v.abs().max(1e-12), "{v} vs {q}");
        }
    }

    #[test]
    fn btilde_examples() {
        let b = build_basis(1.0, 8).unwrap();
        let e1 = Field::mode(8, 1, 1.0).unwrap();
        let model = ForcingModel::new(ou(1.0, 1.0, 0.0), GammaKind::Identity, 1.0).unwrap();
        let c = covariance_btilde(&e1, &model, &b).unwrap();
        assert!((c.scale - 1.0).abs() < 1e-15);
        assert_eq!(c.direction, e1);
        let quiet = ForcingModel::new(ou(1.0, 0.0, 0.0), GammaKind::Identity, 1.0).unwrap();
        assert_eq!(covariance_btilde(&e1, &quiet, &b).unwrap().scale, 0.0);
        let fast = ForcingModel::new(ou(2.0, 1.0, 0.0), GammaKind::Identity, 1.0).unwrap();
        assert!((covariance_btilde(&e1, &fast, &b).unwrap().scale - 0.25).abs() < 1e-15);
    }

    // 2∫₀^∞ of the empirical autocovariance of m, integrated by trapezoid.
    #[test]
    fn btilde_scale_matches_empirical_autocovariance() {
        for &(lambda, expected) in &[(1.0, 1.0), (2.0, 0.25)] {
            let p = ou(lambda, 1.0, 0.0);
            let d_tau = 0.05;
            let tr = OuTransition::new(&p, d_tau);
            let mut rng = ChaCha8Rng::seed_from_u64(40);
            let mut eta = p.sample_stationary(&mut rng);
            let xs: Vec<f64> = (0..1_000_000)
                .map(|_| {
                    eta = tr.draw(eta, &mut rng);
                    eta
                })
                .collect();
            let max_lag = libm::ceil(8.0 / lambda / d_tau) as usize;
            let acov: Vec<f64> = (0..=max_lag)
                .map(|lag| {
                    let n = xs.len() - lag;
                    (0..n).map(|i| xs[i] * xs[i + lag]).sum::<f64>() / n as f64
                })
                .collect();
            let mut integral = 0.0;
            for w in acov.windows(2) {
                integral += 0.5 * d_tau * (w[0] + w[1]);
            }
            let scale = 2.0 * integral;
            assert!((scale - expected).abs() < 0.05 * expected, "λ={lambda}: {scale}");
            let model = ForcingModel::new(p, GammaKind::Identity, 1.0).unwrap();
            let basis = build_basis(1.0, 4).unwrap();
            let rep = covariance_btilde(&Field::mode(4, 1, 1.0).unwrap(), &model, &basis).unwrap();
            assert!((rep.scale - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let basis = build_basis(1.0, 8).unwrap();
        let model = ForcingModel::new(ou(1.3, 0.9, 0.2), GammaKind::ScaledTanh, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let rand_field = |rng: &mut ChaCha8Rng| {
            Field::from_coeffs((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let u = rand_field(&mut rng);
        let c = covariance_btilde(&u, &model, &basis).unwrap();
        for _ in 0..50 {
            let v = rand_field(&mut rng);
            let w = rand_field(&mut rng);
            assert!((c.apply(&v).dot(&w) - v.dot(&c.apply(&w))).abs() < 1e-12);
            assert!(c.quadratic_form(&v) >= 0.0);
        }
    }

    #[test]
    fn squashed_rate_is_bounded() {
        let d = BoundaryDriver { ou: ou(1.0, 1.0, 0.0), shape: RateShape::ScaledTanh { bound: 0.8 } };
        d.validate().unwrap();
        for i in -100..=100 {
            assert!(d.rate(i as f64 * 0.3).abs() <= 0.8);
        }
        assert_eq!(d.rate(0.0), 0.0);
        let bad = BoundaryDriver { ou: ou(1.0, 1.0, 0.5), shape: RateShape::Raw };
        assert!(bad.validate().is_err());
    }
}
