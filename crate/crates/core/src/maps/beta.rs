use super::roots_of_minus_one;
use crate::eeps::{e_eps_membership, epsilon_for};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

const BARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Triangle {
    src: [Complex64; 3],
    dst: [Complex64; 3],
    det: f64,
}

#[inline]
fn cross(a: Complex64, b: Complex64) -> f64 {
    a.re * b.im - a.im * b.re
}

impl Triangle {
    fn new(src: [Complex64; 3], dst: [Complex64; 3]) -> Self {
        let det = cross(src[1] - src[0], src[2] - src[0]);
        Triangle { src, dst, det }
    }

    fn barycentric(&self, p: Complex64) -> [f64; 3] {
        let [v0, v1, v2] = self.src;
        let l1 = cross(p - v0, v2 - v0) / self.det;
        let l2 = cross(v1 - v0, p - v0) / self.det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Coefficients of the affine map `ζ ↦ aζ + b·conj(ζ) + c` sending `src` to `dst`.
    fn affine(&self) -> (Complex64, Complex64) {
        let d1 = self.src[1] - self.src[0];
        let d2 = self.src[2] - self.src[0];
        let e1 = self.dst[1] - self.dst[0];
        let e2 = self.dst[2] - self.dst[0];
        let det = d1 * d2.conj() - d1.conj() * d2;
        let a = (e1 * d2.conj() - e2 * d1.conj()) / det;
        let b = (d1 * e2 - d2 * e1) / det;
        (a, b)
    }
}

/// Piecewise-affine extension of `ξ_j ↦ r_j ξ_j` to the annulus `R⁻¹ ≤ |z| ≤ R`.
///
/// Built in the logarithmic lift: the left triangulation has columns at
/// `log R⁻¹`, `0`, `log R` and rows at the arguments of the `k`-th roots of `−1`;
/// the right one moves the middle column to `log(r_j ξ_j)`.  Outside the annulus
/// the map is the identity.
#[derive(Debug, Clone)]
pub struct Beta {
    big_r: f64,
    k: usize,
    r: Vec<Complex64>,
    tris: Vec<Triangle>,
}

impl Beta {
    /// Validates `r ∈ E_ε` with `ε = log(R)/n₀` and builds both triangulations.
    pub fn new(big_r: f64, r: Vec<Complex64>, n0: u32) -> Result<Beta> {
        if !(1.0..1.5).contains(&big_r) {
            return Err(Error::param(format!("R = {big_r} outside [1, 3/2)")));
        }
        if r.is_empty() {
            return Err(Error::param("beta needs at least one root"));
        }
        if big_r == 1.0 {
            if r.iter().any(|&x| x != Complex64::new(1.0, 0.0)) {
                return Err(Error::param("R = 1 forces r = (1, ..., 1)"));
            }
            return Ok(Beta { big_r, k: r.len(), r, tris: Vec::new() });
        }
        let eps = epsilon_for(big_r, n0);
        let mem = e_eps_membership(&r, eps)?;
        if !mem.member {
            return Err(Error::param(format!(
                "r not in E_eps (eps = {eps:.4e}, margin {:.3e})",
                mem.margin
            )));
        }
        Self::build(big_r, r)
    }

    /// Builds the triangulations without the `E_ε` check.
    pub fn new_unchecked(big_r: f64, r: Vec<Complex64>) -> Result<Beta> {
        Self::build(big_r, r)
    }

    fn build(big_r: f64, r: Vec<Complex64>) -> Result<Beta> {
        let k = r.len();
        let lr = big_r.ln();
        let step = 2.0 * PI / k as f64;
        let theta = |j: usize| PI / k as f64 + step * j as f64;
        let mid = |j: usize| {
            let lift = r[j % k].ln();
            Complex64::new(lift.re, theta(j) + lift.im)
        };
        let mut tris = Vec::with_capacity(4 * k);
        for j in 0..k {
            let (t0, t1) = (theta(j), theta(j + 1));
            let a0 = Complex64::new(-lr, t0);
            let a1 = Complex64::new(-lr, t1);
            let b0 = Complex64::new(0.0, t0);
            let b1 = Complex64::new(0.0, t1);
            let c0 = Complex64::new(lr, t0);
            let c1 = Complex64::new(lr, t1);
            let (m0, m1) = (mid(j), mid(j + 1));
            tris.push(Triangle::new([b0, b1, a0], [m0, m1, a0]));
            tris.push(Triangle::new([b1, a1, a0], [m1, a1, a0]));
            tris.push(Triangle::new([b0, c0, b1], [m0, c0, m1]));
            tris.push(Triangle::new([b1, c0, c1], [m1, c0, c1]));
        }
        let beta = Beta { big_r, k, r, tris };
        if let Some((i, j)) = beta.worst_jacobian() {
            if !(j > 1e-12) {
                return Err(Error::Geometry(format!(
                    "triangle {i} collapses (jacobian {j:.3e})"
                )));
            }
        }
        Ok(beta)
    }

    pub fn big_r(&self) -> f64 {
        self.big_r
    }

    pub fn roots(&self) -> Vec<Complex64> {
        roots_of_minus_one(self.k)
    }

    pub fn factors(&self) -> &[Complex64] {
        &self.r
    }

    pub fn is_identity(&self) -> bool {
        self.tris.is_empty()
    }

    /// Affine coefficients `(a, b)` of every triangle in the lift, in triangle order.
    pub fn affine_coefficients(&self) -> Vec<(Complex64, Complex64)> {
        self.tris.iter().map(Triangle::affine).collect()
    }

    /// Dilatation `b/a` of every triangle.
    pub fn triangle_dilatations(&self) -> Vec<Complex64> {
        self.affine_coefficients().into_iter().map(|(a, b)| b / a).collect()
    }

    /// Triangle index with the smallest Jacobian `|a|² − |b|²`, and that Jacobian.
    pub fn worst_jacobian(&self) -> Option<(usize, f64)> {
        self.affine_coefficients()
            .into_iter()
            .map(|(a, b)| a.norm_sqr() - b.norm_sqr())
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(&y.1))
    }

    /// Index of the triangle used for `z`, if `z` lies in the open annulus.
    pub fn locate(&self, z: Complex64) -> Option<usize> {
        self.locate_lift(z).map(|(i, _)| i)
    }

    fn locate_lift(&self, z: Complex64) -> Option<(usize, Complex64)> {
        if self.tris.is_empty() {
            return None;
        }
        let rho = z.norm();
        if rho >= self.big_r || rho <= 1.0 / self.big_r {
            return None;
        }
        let k = self.k;
        let step = 2.0 * PI / k as f64;
        let t_first = PI / k as f64;
        let mut theta = z.arg();
        while theta < t_first {
            theta += 2.0 * PI;
        }
        while theta >= t_first + 2.0 * PI {
            theta -= 2.0 * PI;
        }
        let row = (((theta - t_first) / step).floor() as usize).min(k - 1);
        let base = Complex64::new(rho.ln(), theta);
        let mut best: Option<(usize, Complex64)> = None;
        for d in [-1i64, 0, 1] {
            let raw = row as i64 + d;
            let (rr, shift) = if raw < 0 {
                (k - 1, 2.0 * PI)
            } else if raw as usize >= k {
                (0, -2.0 * PI)
            } else {
                (raw as usize, 0.0)
            };
            let p = base + Complex64::new(0.0, shift);
            for local in 0..4 {
                let idx = 4 * rr + local;
                let l = self.tris[idx].barycentric(p);
                if l.iter().all(|&x| x >= -BARY_TOL) && best.is_none_or(|(b, _)| idx < b) {
                    best = Some((idx, p));
                }
            }
        }
        best
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        match self.locate_lift(z) {
            None => z,
            Some((idx, p)) => {
                let t = &self.tris[idx];
                let l = t.barycentric(p);
                (t.dst[0] * l[0] + t.dst[1] * l[1] + t.dst[2] * l[2]).exp()
            }
        }
    }
}

/// One-shot evaluation of `β_{R, m, r}(z)`; `m` must equal `r.len()`.
pub fn beta(z: Complex64, big_r: f64, m: usize, r: &[Complex64], n0: u32) -> Result<Complex64> {
    if r.len() != m {
        return Err(Error::param(format!("expected {m} factors, got {}", r.len())));
    }
    Ok(Beta::new(big_r, r.to_vec(), n0)?.eval(z))
}

/// `δ·β(z/δ)`, with the identity for `δ = 0`.
pub fn beta_rescaled(z: Complex64, scale: f64, beta: &Beta) -> Complex64 {
    if scale == 0.0 || beta.is_identity() {
        return z;
    }
    let s = z.norm();
    if s >= scale * beta.big_r || s <= scale / beta.big_r {
        z
    } else {
        beta.eval(z / scale) * scale
    }
}
