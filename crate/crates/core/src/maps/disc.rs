use super::{beta_rescaled, eta_radius, lambda_of, psi, psi_raw, Beta};
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Translation by `w` near the origin, blended radially back to the identity on `|z| = 1`.
pub fn rho(z: Complex64, w: Complex64) -> Result<Complex64> {
    if w.norm() > 0.75 + 1e-12 {
        return Err(Error::param(format!("|w| = {} exceeds 3/4", w.norm())));
    }
    Ok(rho_raw(z, w))
}

#[inline]
pub(crate) fn rho_raw(z: Complex64, w: Complex64) -> Complex64 {
    let s = z.norm();
    if s <= 0.125 {
        z + w
    } else if s >= 1.0 {
        z
    } else {
        // z(8|z|−1)/7 + (z+w)(8−8|z|)/7, collected
        z + w * ((8.0 - 8.0 * s) / 7.0)
    }
}

/// Parameters of one disc block.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    pub index: usize,
    pub m: u32,
    pub delta: f64,
    pub big_r: f64,
    pub r: Vec<Complex64>,
    pub w: Complex64,
}

impl DiscParams {
    /// The inactive block `z ↦ z^m`.
    pub fn inactive(index: usize, m: u32) -> DiscParams {
        DiscParams {
            index,
            m,
            delta: 0.0,
            big_r: 1.0,
            r: vec![Complex64::new(1.0, 0.0); m.saturating_sub(1) as usize],
            w: Complex64::new(0.0, 0.0),
        }
    }

    pub fn is_inactive(&self) -> bool {
        self.delta == 0.0
            && self.w == Complex64::new(0.0, 0.0)
            && self.big_r == 1.0
            && self.r.iter().all(|&x| x == Complex64::new(1.0, 0.0))
    }

    pub fn lambda(&self) -> f64 {
        lambda_of(self.delta, self.m)
    }

    /// Range checks on every field; `r ∈ E_ε` is checked when the block is built.
    pub fn validate(&self) -> Result<()> {
        if self.index < 1 {
            return Err(Error::param("disc index must be >= 1"));
        }
        if self.m < 3 {
            return Err(Error::param(format!("disc {}: m = {} < 3", self.index, self.m)));
        }
        if !(0.0..=1.0 / 16.0).contains(&self.delta) {
            return Err(Error::param(format!(
                "disc {}: delta = {} outside [0, 1/16]",
                self.index, self.delta
            )));
        }
        if !(1.0..1.5).contains(&self.big_r) {
            return Err(Error::param(format!(
                "disc {}: R = {} outside [1, 3/2)",
                self.index, self.big_r
            )));
        }
        if self.w.norm() > 0.75 || !self.w.is_finite() {
            return Err(Error::param(format!(
                "disc {}: |w| = {} exceeds 3/4",
                self.index,
                self.w.norm()
            )));
        }
        if self.r.len() + 1 != self.m as usize {
            return Err(Error::param(format!(
                "disc {}: {} factors for m = {}",
                self.index,
                self.r.len(),
                self.m
            )));
        }
        Ok(())
    }
}

/// A disc block prepared for repeated evaluation of `ι = ρ_w ∘ β^Λ ∘ ψ`.
#[derive(Debug, Clone)]
pub struct DiscMap {
    params: DiscParams,
    beta: Beta,
    lambda: f64,
}

impl DiscMap {
    pub fn new(params: DiscParams, n0: u32) -> Result<DiscMap> {
        params.validate()?;
        let beta = Beta::new(params.big_r, params.r.clone(), n0)?;
        let lambda = params.lambda();
        Ok(DiscMap { params, beta, lambda })
    }

    pub fn params(&self) -> &DiscParams {
        &self.params
    }

    pub fn beta(&self) -> &Beta {
        &self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() > 1.0 + 1e-12 {
            return Err(Error::domain(format!("iota needs |z| <= 1, got {}", z.norm())));
        }
        Ok(self.eval_raw(z))
    }

    #[inline]
    pub(crate) fn eval_raw(&self, z: Complex64) -> Complex64 {
        let p = &self.params;
        let s = psi_raw(z, p.delta, p.m);
        let b = beta_rescaled(s, self.lambda, &self.beta);
        rho_raw(b, p.w)
    }

    /// Smooth piece of `ι` at `z`: inside the `η` ring, the `β` triangle, and the `ρ_w` zone (0, 1, 2 outward).
    pub(crate) fn piece(&self, z: Complex64) -> (bool, Option<usize>, u8) {
        let p = &self.params;
        let ring = p.delta > 0.0 && z.norm() > eta_radius(p.delta, p.m);
        let s = psi_raw(z, p.delta, p.m);
        let tri = if self.lambda == 0.0 || self.beta.is_identity() { None } else { self.beta.locate(s / self.lambda) };
        let b = beta_rescaled(s, self.lambda, &self.beta).norm();
        let zone = if b <= 0.125 { 0 } else if b < 1.0 { 1 } else { 2 };
        (ring, tri, if p.w.norm() == 0.0 { 0 } else { zone })
    }

    /// Critical values `w + r_j Λ ξ_j` in root order.
    pub fn critical_values(&self) -> Vec<Complex64> {
        let p = &self.params;
        if p.delta == 0.0 {
            return vec![p.w];
        }
        self.beta
            .roots()
            .iter()
            .zip(&p.r)
            .map(|(xi, rj)| p.w + rj * xi * self.lambda)
            .collect()
    }
}

/// One-shot `ι(z)` for a disc block.
pub fn iota(z: Complex64, disc: &DiscParams, n0: u32) -> Result<Complex64> {
    psi(z, disc.delta, disc.m)?;
    DiscMap::new(disc.clone(), n0)?.eval(z)
}
