//! Dirichlet sine eigensystem of `-∂xx` on `(0, l)`.
//!
//! Mode index `k` runs from 1; slot `i` of every coefficient vector holds
//! mode `k = i + 1`. Eigenfunctions are `e_k(x) = √(2/l) sin(kπx/l)` with
//! eigenvalues `λ_k = (kπ/l)²`, so a field's L² structure is the Euclidean
//! structure of its coefficient vector.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{require, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    length: f64,
    eigenvalues: Vec<f64>,
    lift_coeffs: Vec<f64>,
    // sin(kπj/(n+1)), row k-1, column j-1; the DST-I collocation table.
    sine_table: Vec<f64>,
}

/// Builds the basis with `n_modes` modes on `(0, l)`.
pub fn build_basis(l: f64, n_modes: usize) -> Result<SpectralBasis> {
    SpectralBasis::new(l, n_modes)
}

impl SpectralBasis {
    pub fn new(length: f64, n_modes: usize) -> Result<Self> {
        require(length > 0.0 && length.is_finite(), "l", "domain length must be positive")?;
        require(n_modes >= 1, "n_modes", "at least one mode is required")?;
        let eigenvalues = (1..=n_modes)
            .map(|k| {
                let w = k as f64 * PI / length;
                w * w
            })
            .collect();
        let lift_coeffs = (1..=n_modes)
            .map(|k| libm::sqrt(2.0 * length) / (k as f64 * PI))
            .collect();
        let denom = (n_modes + 1) as f64;
        let mut sine_table = vec![0.0; n_modes * n_modes];
        for k in 1..=n_modes {
            for j in 1..=n_modes {
                sine_table[(k - 1) * n_modes + (j - 1)] =
                    libm::sin(k as f64 * PI * j as f64 / denom);
            }
        }
        Ok(SpectralBasis { length, eigenvalues, lift_coeffs, sine_table })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `l_k = ⟨1 − x/l, e_k⟩ = √(2l)/(kπ)`: coefficients of the boundary lift profile.
    pub fn lift_coeffs(&self) -> &[f64] {
        &self.lift_coeffs
    }

    /// `e_k(x)` for 1-based `k`.
    pub fn eigenfunction(&self, k: usize, x: f64) -> f64 {
        libm::sqrt(2.0 / self.length) * libm::sin(k as f64 * PI * x / self.length)
    }

    /// The lift profile `1 − x/l` as a field.
    pub fn lift_profile(&self) -> Field {
        Field { coeffs: self.lift_coeffs.clone() }
    }

    pub fn check(&self, u: &Field) -> Result<()> {
        if u.len() == self.n_modes() {
            Ok(())
        } else {
            Err(Error::BasisMismatch { expected: self.n_modes(), found: u.len() })
        }
    }

    /// Interior collocation nodes `x_j = j l/(n+1)`, `j = 1..=n`.
    pub fn collocation_points(&self) -> Vec<f64> {
        let n = self.n_modes();
        (1..=n).map(|j| j as f64 * self.length / (n + 1) as f64).collect()
    }

    /// Nodal values at the collocation points.
    pub fn to_nodal(&self, coeffs: &[f64], nodal: &mut [f64]) {
        let n = self.n_modes();
        let scale = libm::sqrt(2.0 / self.length);
        nodal.iter_mut().for_each(|v| *v = 0.0);
        for (k, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.sine_table[k * n..(k + 1) * n];
            for (v, s) in nodal.iter_mut().zip(row) {
                *v += a * s;
            }
        }
        nodal.iter_mut().for_each(|v| *v *= scale);
    }

    /// Exact inverse of [`to_nodal`](Self::to_nodal) (discrete sine transform).
    pub fn from_nodal(&self, nodal: &[f64], coeffs: &mut [f64]) {
        let n = self.n_modes();
        let scale = libm::sqrt(2.0 * self.length) / (n + 1) as f64;
        for (k, c) in coeffs.iter_mut().enumerate() {
            let row = &self.sine_table[k * n..(k + 1) * n];
            *c = scale * row.iter().zip(nodal).map(|(s, v)| s * v).sum::<f64>();
        }
    }

    /// Applies a pointwise map `u(x) ↦ h(u(x))` by collocation.
    pub fn map_pointwise(&self, u: &Field, h: impl Fn(f64) -> f64) -> Field {
        let mut nodal = vec![0.0; self.n_modes()];
        self.to_nodal(&u.coeffs, &mut nodal);
        nodal.iter_mut().for_each(|v| *v = h(*v));
        let mut out = Field::zeros(self.n_modes());
        self.from_nodal(&nodal, &mut out.coeffs);
        out
    }
}

/// A function in `L²(0, l)` held as its sine-mode coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(n_modes: usize) -> Self {
        Field { coeffs: vec![0.0; n_modes] }
    }

    /// `amplitude · e_k`, 1-based `k`.
    pub fn mode(n_modes: usize, k: usize, amplitude: f64) -> Result<Self> {
        require((1..=n_modes).contains(&k), "k", "mode index out of range")?;
        let mut f = Field::zeros(n_modes);
        f.coeffs[k - 1] = amplitude;
        Ok(f)
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        require(!coeffs.is_empty(), "coeffs", "a field needs at least one mode")?;
        require(coeffs.iter().all(|c| c.is_finite()), "coeffs", "coefficients must be finite")?;
        Ok(Field { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field { coeffs: self.coeffs.iter().map(|a| s * a).collect() }
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: f64, other: &Field) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() }
    }
}

/// Sobolev-type order `α ≥ 0` of `‖u‖_α = ‖(−A)^{α/2} u‖₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOrder(f64);

impl NormOrder {
    pub const L2: NormOrder = NormOrder(0.0);
    pub const H1: NormOrder = NormOrder(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        require(alpha >= 0.0 && alpha.is_finite(), "alpha", "norm order must be nonnegative")?;
        Ok(NormOrder(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// Point values `Σ a_k e_k(x)`; the endpoints evaluate to exactly zero.
pub fn evaluate_field(u: &Field, x_grid: &[f64], basis: &SpectralBasis) -> Result<Vec<f64>> {
    basis.check(u)?;
    let l = basis.length();
    x_grid
        .iter()
        .map(|&x| {
            if !(0.0..=l).contains(&x) {
                return Err(Error::OutOfDomain { x });
            }
            if x == 0.0 || x == l {
                return Ok(0.0);
            }
            Ok(u
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| a * basis.eigenfunction(i + 1, x))
                .sum())
        })
        .collect()
}

/// `(Σ λ_k^α a_k²)^{1/2}`.
pub fn norm(u: &Field, order: NormOrder, basis: &SpectralBasis) -> Result<f64> {
    basis.check(u)?;
    let alpha = order.alpha();
    let sum: f64 = if alpha == 0.0 {
        u.coeffs.iter().map(|a| a * a).sum()
    } else {
        u.coeffs
            .iter()
            .zip(basis.eigenvalues())
            .map(|(a, lam)| libm::pow(*lam, alpha) * a * a)
            .sum()
    };
    Ok(libm::sqrt(sum))
}

/// `S(t)u`: each mode decays as `e^{−λ_k t}`.
pub fn heat_semigroup_apply(u: &Field, t: f64, basis: &SpectralBasis) -> Result<Field> {
    basis.check(u)?;
    require(t >= 0.0, "t", "semigroup time must be nonnegative")?;
    let coeffs = u
        .coeffs
        .iter()
        .zip(basis.eigenvalues())
        .map(|(a, lam)| a * libm::exp(-lam * t))
        .collect();
    Ok(Field { coeffs })
}

/// `φ₁(z) = (e^z − 1)/z`, with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-300 {
        1.0
    } else {
        libm::expm1(z) / z
    }
}
