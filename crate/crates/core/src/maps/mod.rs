//! Explicit model maps: bumps, the critical-value map `ψ`, the piecewise-affine
//! extension `β`, the translation blend `ρ_w`, their composition `ι`, the strip
//! map and the symmetric assembly of the quasiregular model `g`.

mod beta;
mod disc;
mod model;

pub use beta::{beta, beta_rescaled, Beta};
pub use disc::{iota, rho, DiscMap, DiscParams};
pub use model::{disc_center, sigma, GValue, HalfStrip, Model, ModelParams, Piece, Region};

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// The standard bump `exp(1 + 1/(x²−1))` on `[0, 1)`, zero beyond.
pub fn bump(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain(format!("bump argument {x} is negative")));
    }
    Ok(bump_raw(x))
}

#[inline]
pub(crate) fn bump_raw(x: f64) -> f64 {
    if x < 1.0 {
        (1.0 + 1.0 / (x * x - 1.0)).exp()
    } else {
        0.0
    }
}

/// Inner radius `1 − 4δ/m` of the transition annulus of `η`.
pub fn eta_radius(delta: f64, m: u32) -> f64 {
    1.0 - 4.0 * delta / m as f64
}

/// Radial cutoff: 1 on `|z| ≤ r`, bump-interpolated on `[r, 1]`, 0 beyond.
pub fn eta(z: Complex64, delta: f64, m: u32) -> f64 {
    eta_hat(z.norm(), eta_radius(delta, m))
}

pub(crate) fn eta_hat(x: f64, r: f64) -> f64 {
    if x <= r {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        bump_raw((x - r) / (1.0 - r))
    }
}

/// `ψ(z) = z^m + δ·z·η(z)` on the closed unit disc.
pub fn psi(z: Complex64, delta: f64, m: u32) -> Result<Complex64> {
    let mod_z = z.norm();
    if mod_z > 1.0 + 1e-12 {
        return Err(Error::domain(format!("psi needs |z| <= 1, got {mod_z}")));
    }
    Ok(psi_raw(z, delta, m))
}

#[inline]
pub(crate) fn psi_raw(z: Complex64, delta: f64, m: u32) -> Complex64 {
    let zm = z.powu(m);
    if delta == 0.0 {
        return zm;
    }
    zm + z * (delta * eta_hat(z.norm(), eta_radius(delta, m)))
}

/// `Λ(δ, m) = δ (δ/m)^{1/(m−1)} (m−1)/m`, the modulus of the critical values of `ψ`.
pub fn lambda_of(delta: f64, m: u32) -> f64 {
    let mf = m as f64;
    delta * (delta / mf).powf(1.0 / (mf - 1.0)) * (mf - 1.0) / mf
}

/// The `k` roots of `z^k = −1`, `ξ_j = exp(iπ(2j−1)/k)` for `j = 1..k`, counter-clockwise.
pub fn roots_of_minus_one(k: usize) -> Vec<Complex64> {
    (1..=k)
        .map(|j| Complex64::from_polar(1.0, PI * (2 * j - 1) as f64 / k as f64))
        .collect()
}

/// One critical point of `ψ` with its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalDatum {
    pub point: Complex64,
    pub value: Complex64,
    /// Order of vanishing of `ψ′` at `point`.
    pub multiplicity: u32,
}

/// Critical points `c^{m−1} = −δ/m` of `ψ` and their values `δ c (m−1)/m`.
///
/// The `j`-th entry sits on the ray of the `j`-th root of `−1` of order `m−1`.
/// For `δ = 0` the single datum `(0, 0)` of multiplicity `m−1` is returned.
pub fn psi_critical_data(delta: f64, m: u32) -> Vec<CriticalDatum> {
    let mf = m as f64;
    if delta == 0.0 {
        return vec![CriticalDatum {
            point: Complex64::new(0.0, 0.0),
            value: Complex64::new(0.0, 0.0),
            multiplicity: m - 1,
        }];
    }
    let modulus = (delta / mf).powf(1.0 / (mf - 1.0));
    roots_of_minus_one(m as usize - 1)
        .into_iter()
        .map(|xi| {
            let c = xi * modulus;
            CriticalDatum {
                point: c,
                value: c * (delta * (mf - 1.0) / mf),
                multiplicity: 1,
            }
        })
        .collect()
}
