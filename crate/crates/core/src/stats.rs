//! Statistics used to judge the ensembles: sup-in-time errors, power-law
//! fits, two-sample Kolmogorov–Smirnov distances, the frozen-field
//! fluctuation integral and jackknifed moments.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{require, Error, Result};
use crate::multiscale::TrajectoryRecord;
use crate::noise::{BoundaryDriver, DriverPropagator, DriverState, ForcingModel, OuParams};
use crate::plan::StepPlan;
use crate::spectral::{Field, SpectralBasis};

/// `max_i ‖a(t_i) − b(t_i)‖₀` over the shared recorded times.
pub fn pathwise_error(traj_eps: &TrajectoryRecord, traj_avg: &TrajectoryRecord) -> Result<f64> {
    if traj_eps.len() != traj_avg.len()
        || traj_eps
            .times
            .iter()
            .zip(&traj_avg.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch);
    }
    let mut worst: f64 = 0.0;
    for (a, b) in traj_eps.states.iter().zip(&traj_avg.states) {
        if a.len() != b.len() {
            return Err(Error::BasisMismatch { expected: a.len(), found: b.len() });
        }
        worst = worst.max(a.sub(b).l2_norm());
    }
    Ok(worst)
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `log y = intercept + slope·log x`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    require(xs.len() == ys.len(), "errors", "abscissae and ordinates differ in length")?;
    if xs.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, found: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateFit);
    }
    let lx: Vec<f64> = xs.iter().map(|x| libm::log(*x)).collect();
    let ly: Vec<f64> = ys.iter().map(|y| libm::log(*y)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| {
        let r = y - (intercept + slope * x);
        r * r
    }).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit { slope, intercept, r2 })
}

/// Fits the median error of each `(ε, sample)` pair against `ε` on log-log axes.
pub fn estimate_rate(errors: &[(f64, Vec<f64>)]) -> Result<RateFit> {
    let mut xs = Vec::with_capacity(errors.len());
    let mut ys = Vec::with_capacity(errors.len());
    for (eps, sample) in errors {
        xs.push(*eps);
        ys.push(median(sample)?);
    }
    fit_power_law(&xs, &ys)
}

fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(sample: &[f64]) -> Result<f64> {
    quantile(sample, 0.5)
}

/// Linearly interpolated sample quantile (the usual "type 7" rule).
pub fn quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    require((0.0..=1.0).contains(&q), "q", "quantile level must lie in [0, 1]")?;
    let v = sorted(sample);
    let h = (v.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // step past every copy of the smallest remaining value in both samples
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic critical value `c(α)·√((n+m)/(nm))`, `c(α) = √(−ln(α/2)/2)`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = libm::sqrt(-libm::log(alpha / 2.0) / 2.0);
    c * libm::sqrt((n + m) as f64 / (n as f64 * m as f64))
}

/// `‖∫₀^t [g(r/ε, q) − ḡ(q)] dr‖₀` for a frozen field `q`.
///
/// Only the amplitude driver is simulated; the integral is the trapezoidal
/// sum of `m − μ_m` on the macro grid of step `dt`, times `γ(q)`.
pub fn fluctuation_integral<R: Rng + ?Sized>(
    q: &Field,
    eps: f64,
    t_end: f64,
    dt: f64,
    model: &ForcingModel,
    basis: &SpectralBasis,
    rng: &mut R,
) -> Result<f64> {
    basis.check(q)?;
    require(eps > 0.0, "eps", "scale parameter must be positive")?;
    require(dt > 0.0 && t_end >= dt, "dt", "time step must be positive and not exceed t_end")?;
    let p_m = model.m_params;
    let quiet = BoundaryDriver::raw(OuParams { lambda: p_m.lambda, sigma: 0.0, mu: 0.0 });
    let plan = StepPlan::new(dt, t_end);
    let full = DriverPropagator::new(plan.dt, eps, &quiet, &p_m)?;
    let last = match plan.remainder {
        Some(r) => Some((r, DriverPropagator::new(r, eps, &quiet, &p_m)?)),
        None => None,
    };
    let mut s = DriverState::stationary(&quiet, &p_m, rng);
    let mu = p_m.mu;
    let mut integral = 0.0;
    for i in 0..plan.n_steps() {
        let (h, prop) = if i < plan.n_full {
            (plan.dt, &full)
        } else {
            let (r, p) = last.as_ref().expect("remainder step");
            (*r, p)
        };
        let next = prop.advance(&s, rng).state;
        integral += h * 0.5 * ((s.eta_m - mu) + (next.eta_m - mu));
        s = next;
    }
    if !integral.is_finite() {
        return Err(Error::NonFinite { time: t_end });
    }
    Ok(integral.abs() * model.apply_gamma(q, basis).l2_norm())
}

/// Sample moments across observables with jackknife standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub means: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Unbiased variances (diagonal of `covariance`).
    pub variances: Vec<f64>,
    pub variance_se: Vec<f64>,
    /// Row-major `d × d` unbiased covariance matrix.
    pub covariance: Vec<f64>,
    pub covariance_se: Vec<f64>,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim() + j]
    }

    pub fn cov_se(&self, i: usize, j: usize) -> f64 {
        self.covariance_se[i * self.dim() + j]
    }
}

/// Means, variances and covariances of equally sized samples.
///
/// Standard errors are delete-one jackknife estimates. For `n = 2` the
/// variance jackknife is undefined and is reported as NaN.
pub fn empirical_moments(samples: &[Vec<f64>]) -> Result<Moments> {
    if samples.is_empty() || samples.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySample);
    }
    let n = samples[0].len();
    require(samples.iter().all(|s| s.len() == n), "samples", "observables must have equal sample counts")?;
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let d = samples.len();
    let nf = n as f64;
    let means: Vec<f64> = samples.iter().map(|s| s.iter().sum::<f64>() / nf).collect();
    let centred: Vec<Vec<f64>> = samples
        .iter()
        .zip(&means)
        .map(|(s, m)| s.iter().map(|x| x - m).collect())
        .collect();
    // jackknife of the mean reduces to s/√n
    let mean_se: Vec<f64> = centred
        .iter()
        .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum::<f64>() / (nf - 1.0) / nf))
        .collect();
    let mut covariance = vec![0.0; d * d];
    let mut covariance_se = vec![f64::NAN; d * d];
    for a in 0..d {
        for b in a..d {
            let (x, y) = (&centred[a], &centred[b]);
            let sxy: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let cov = sxy / (nf - 1.0);
            covariance[a * d + b] = cov;
            covariance[b * d + a] = cov;
            if n >= 3 {
                // leave-one-out covariances in O(n) from the centred sums (Σx = Σy = 0)
                let loo: Vec<f64> = x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| (sxy - p * q - p * q / (nf - 1.0)) / (nf - 2.0))
                    .collect();
                let mean_loo = loo.iter().sum::<f64>() / nf;
                let var_jk = (nf - 1.0) / nf * loo.iter().map(|v| (v - mean_loo) * (v - mean_loo)).sum::<f64>();
                let se = libm::sqrt(var_jk);
                covariance_se[a * d + b] = se;
                covariance_se[b * d + a] = se;
            }
        }
    }
    let variances = (0..d).map(|a| covariance[a * d + a]).collect();
    let variance_se = (0..d).map(|a| covariance_se[a * d + a]).collect();
    Ok(Moments { n, means, mean_se, variances, variance_se, covariance, covariance_se })
}
