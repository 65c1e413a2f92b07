//! Beltrami coefficients of sampled maps.

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridSpec};
use crate::maps::{sigma, Model, Region};
use crate::par::Exec;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Central-difference Wirtinger derivatives `(g_z, g_z̄)` on the 4-point stencil `z ± h`, `z ± ih`.
pub fn wirtinger<F>(f: F, z: Complex64, h: f64) -> Result<(Complex64, Complex64)>
where
    F: Fn(Complex64) -> Option<Complex64>,
{
    if !(h > 0.0) {
        return Err(Error::param(format!("stencil width {h} must be positive")));
    }
    let at = |p: Complex64| {
        f(p).filter(|v| v.is_finite())
            .ok_or_else(|| Error::domain(format!("map not evaluable at {p}")))
    };
    let dh = Complex64::new(h, 0.0);
    let dv = Complex64::new(0.0, h);
    let gx = (at(z + dh)? - at(z - dh)?) / (2.0 * h);
    let gy = (at(z + dv)? - at(z - dv)?) / (2.0 * h);
    let i = Complex64::i();
    Ok(((gx - i * gy) * 0.5, (gx + i * gy) * 0.5))
}

/// Knobs for sampling Beltrami coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeltramiOptions {
    /// Stencil width; `None` means one grid cell.
    pub h: Option<f64>,
    /// Stencil width on active discs; `None` means `h`.
    pub disc_h: Option<f64>,
    pub support_threshold: f64,
    pub singular_threshold: f64,
    pub max_singular_fraction: f64,
    pub exec: Exec,
}

impl Default for BeltramiOptions {
    fn default() -> Self {
        BeltramiOptions {
            h: None,
            disc_h: Some(1e-5),
            support_threshold: 1e-10,
            singular_threshold: 1e-14,
            max_singular_fraction: 0.01,
            exec: Exec::default(),
        }
    }
}

/// Grid-sampled dilatation with its sup-norm and support.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiField {
    grid: ComplexGrid,
    supnorm: f64,
    support: Vec<bool>,
    singular: usize,
    support_threshold: f64,
}

impl BeltramiField {
    /// Wraps already-sampled values.
    pub fn from_grid(grid: ComplexGrid, support_threshold: f64) -> BeltramiField {
        Self::assemble(grid, 0, support_threshold)
    }

    fn assemble(grid: ComplexGrid, singular: usize, support_threshold: f64) -> BeltramiField {
        let support: Vec<bool> = grid.values().iter().map(|v| v.norm() > support_threshold).collect();
        let supnorm = grid.max_abs();
        BeltramiField { grid, supnorm, support, singular, support_threshold }
    }

    pub fn zero(spec: GridSpec) -> BeltramiField {
        Self::from_grid(ComplexGrid::zeros(spec), 1e-10)
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn supnorm(&self) -> f64 {
        self.supnorm
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn support_threshold(&self) -> f64 {
        self.support_threshold
    }

    pub fn singular_count(&self) -> usize {
        self.singular
    }

    /// True when no support cell lies on the outermost ring of the grid.
    pub fn support_inside(&self, ring: usize) -> bool {
        let n = self.spec().n;
        self.support.iter().enumerate().all(|(idx, &s)| {
            let (i, j) = (idx / n, idx % n);
            !s || (i >= ring && j >= ring && i < n - ring && j < n - ring)
        })
    }
}

enum Cell {
    Value(Complex64),
    Singular,
}

fn collect_field<F>(spec: GridSpec, opts: &BeltramiOptions, cell: F) -> Result<BeltramiField>
where
    F: Fn(Complex64) -> Result<Cell> + Sync + Send,
{
    let cells = opts.exec.map(spec.len(), |idx| cell(spec.node_at(idx)));
    let mut values = Vec::with_capacity(spec.len());
    let mut singular = 0;
    for c in cells {
        match c? {
            Cell::Value(v) => values.push(v),
            Cell::Singular => {
                singular += 1;
                values.push(Complex64::new(0.0, 0.0));
            }
        }
    }
    if singular as f64 > opts.max_singular_fraction * spec.len() as f64 {
        return Err(Error::Quality { singular, total: spec.len() });
    }
    let grid = ComplexGrid::new(spec, values)?;
    Ok(BeltramiField::assemble(grid, singular, opts.support_threshold))
}

fn ratio(d: (Complex64, Complex64), singular_threshold: f64) -> Cell {
    if d.0.norm() < singular_threshold {
        Cell::Singular
    } else {
        Cell::Value(d.1 / d.0)
    }
}

/// `μ = g_z̄ / g_z` at every node where `mask` holds (zero elsewhere).
pub fn beltrami_of<F, M>(f: F, spec: GridSpec, opts: &BeltramiOptions, mask: M) -> Result<BeltramiField>
where
    F: Fn(Complex64) -> Option<Complex64> + Sync + Send,
    M: Fn(Complex64) -> bool + Sync + Send,
{
    let h = opts.h.unwrap_or_else(|| spec.h());
    collect_field(spec, opts, |z| {
        if !mask(z) {
            return Ok(Cell::Value(Complex64::new(0.0, 0.0)));
        }
        Ok(ratio(wirtinger(&f, z, h)?, opts.singular_threshold))
    })
}

/// Dilatation of the strip map `σ` at `v`, from a well-resolved stencil in the `v`-plane.
pub fn sigma_dilatation(v: Complex64) -> Complex64 {
    if v.re <= PI || v.re >= 2.0 * PI {
        return Complex64::new(0.0, 0.0);
    }
    match wirtinger(|p| Some(sigma(p)), v, 1e-5) {
        Ok((dz, dzb)) if dz.norm() > 0.0 => dzb / dz,
        _ => Complex64::new(0.0, 0.0),
    }
}

/// `μ_g` of the model on a grid, zero off the strip and the active discs.
///
/// On the strip `g = σ ∘ (λ sinh)` with a holomorphic inner map, so
/// `μ_g(z) = μ_σ(v)·e^{−2i arg v_z}`; this stays exact where the blend band is
/// thinner than a grid cell.  On active discs the map is differentiated on a fine local stencil,
/// so nodes sample the pointwise μ of the ψ transition ring.
pub fn model_beltrami(model: &Model, spec: GridSpec, opts: &BeltramiOptions) -> Result<BeltramiField> {
    let h = opts.h.unwrap_or_else(|| spec.h());
    let lam = model.lambda();
    collect_field(spec, opts, |z| match model.eval_region(z) {
        Region::Strip => {
            let q = Complex64::new(z.re.abs(), z.im.abs());
            let v = q.sinh() * lam;
            let mu_s = sigma_dilatation(v);
            if mu_s == Complex64::new(0.0, 0.0) {
                return Ok(Cell::Value(mu_s));
            }
            let vz = q.cosh() * lam;
            let mu_q = compose_dilatation(Complex64::new(0.0, 0.0), mu_s, vz.arg())?;
            // μ is even and picks up a conjugate under z ↦ z̄
            let flipped = (z.re < 0.0) != (z.im < 0.0);
            Ok(Cell::Value(if flipped { mu_q.conj() } else { mu_q }))
        }
        Region::Disc(n) if model.disc_map(n).is_some() => {
            let g = |p: Complex64| Some(model.g(p));
            Ok(ratio(wirtinger(g, z, opts.disc_h.unwrap_or(h))?, opts.singular_threshold))
        }
        _ => Ok(Cell::Value(Complex64::new(0.0, 0.0))),
    })
}

/// Minimum `|z − center|` over support cells, `∞` for empty support.
pub fn support_radius(field: &BeltramiField, center: Complex64) -> f64 {
    let spec = field.spec();
    field
        .support()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(idx, _)| (spec.node_at(idx) - center).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Dilatation `b/a` of the affine map `L(z) = az + b z̄ + c` with
/// `L(z1) = w1`, `L(z2) = w2`, `L(z3) = z3`.
///
/// When `z3 − z1` is real and `z2 − z1` imaginary this reduces to
/// `a = ½[(z3−w1)/(z3−z1) + (w2−w1)/(z2−z1)]`, `b = ½[(z3−w1)/(z3−z1) − (w2−w1)/(z2−z1)]`.
pub fn affine_dilatation(
    z1: Complex64,
    z2: Complex64,
    z3: Complex64,
    w1: Complex64,
    w2: Complex64,
) -> Result<Complex64> {
    let (a, b) = affine_coefficients(z1, z2, z3, w1, w2)?;
    if a.norm() == 0.0 {
        return Err(Error::Singularity("affine map has a = 0".into()));
    }
    Ok(b / a)
}

/// The pair `(a, b)` behind [`affine_dilatation`].
pub fn affine_coefficients(
    z1: Complex64,
    z2: Complex64,
    z3: Complex64,
    w1: Complex64,
    w2: Complex64,
) -> Result<(Complex64, Complex64)> {
    let d1 = z3 - z1;
    let d2 = z2 - z1;
    let area = d1.re * d2.im - d1.im * d2.re;
    let scale = d1.norm() * d2.norm();
    if !(area.abs() > 1e-14 * scale) {
        return Err(Error::Geometry("collinear triangle".into()));
    }
    let e1 = z3 - w1;
    let e2 = w2 - w1;
    let det = d1 * d2.conj() - d1.conj() * d2;
    let a = (e1 * d2.conj() - e2 * d1.conj()) / det;
    let b = (d1 * e2 - d2 * e1) / det;
    Ok((a, b))
}

/// The upper bound `(s + t)/(2 − s − t)` on `|μ|`, with `s = |(z1−w1)/(z3−z1)|` and
/// `t = |1 − (w2−w1)/(z2−z1)|`.
pub fn affine_dilatation_bound(
    z1: Complex64,
    z2: Complex64,
    z3: Complex64,
    w1: Complex64,
    w2: Complex64,
) -> f64 {
    let s = ((z1 - w1) / (z3 - z1)).norm();
    let t = (1.0 - (w2 - w1) / (z2 - z1)).norm();
    (s + t) / (2.0 - s - t)
}

/// Dilatation of `φ ∘ χ` at a point from `μ_χ`, `μ_φ(χ)` and `arg χ_z`.
pub fn compose_dilatation(mu_chi: Complex64, mu_phi_at_chi: Complex64, arg_chi_z: f64) -> Result<Complex64> {
    let rot = Complex64::from_polar(1.0, -2.0 * arg_chi_z);
    let num = mu_chi + mu_phi_at_chi * rot;
    let den = 1.0 + mu_chi.conj() * mu_phi_at_chi * rot;
    if den.norm() < 1e-14 {
        return Err(Error::Singularity(format!("composition denominator {den}")));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{eta_radius, psi_raw, ModelParams};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wirtinger_on_simple_maps() {
        let z = c(0.3, -0.7);
        let (a, b) = wirtinger(Some, z, 1e-3).unwrap();
        assert!((a - 1.0).norm() < 1e-12 && b.norm() < 1e-12);
        let (a, b) = wirtinger(|p| Some(p.conj()), z, 1e-3).unwrap();
        assert!(a.norm() < 1e-12 && (b - 1.0).norm() < 1e-12);
        let k = c(0.2, 0.1);
        let (a, b) = wirtinger(|p| Some(p + k * p.conj()), z, 0.1).unwrap();
        assert!((a - 1.0).norm() < 1e-14 && (b - k).norm() < 1e-14);
        assert!(wirtinger(|p| (p.re < 0.3).then_some(p), z, 0.1).is_err());
    }

    #[test]
    fn wirtinger_is_second_order() {
        let f = |p: Complex64| Some(p * p.conj() * p + p.exp().conj());
        let z = c(0.4, 0.2);
        // exact: g_z = 2 z z̄, g_z̄ = z² + conj(e^z)
        let exact = (z * z.conj() * 2.0, z * z + z.exp().conj());
        let err = |h: f64| {
            let (a, b) = wirtinger(f, z, h).unwrap();
            (a - exact.0).norm() + (b - exact.1).norm()
        };
        let slope = (err(1e-2) / err(5e-3)).log2();
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn k_affine_field() {
        let spec = GridSpec::new(c(0.0, 0.0), 2.0, 64).unwrap();
        let k = c(0.3, 0.0);
        let f = |p: Complex64| Some(p + k * p.conj());
        let field = beltrami_of(f, spec, &BeltramiOptions::default(), |p| p.norm() < 1.0).unwrap();
        assert!((field.supnorm() - 0.3).abs() < 1e-12);
        assert!(field.support().iter().any(|&s| s));
        assert!((support_radius(&field, c(0.0, 0.0))).abs() < 1e-12);
        assert_eq!(support_radius(&BeltramiField::zero(spec), c(0.0, 0.0)), f64::INFINITY);
    }

    #[test]
    fn holomorphic_zone_of_psi() {
        let (d, m) = (0.05, 9);
        let r = eta_radius(d, m);
        let spec = GridSpec::new(c(0.0, 0.0), 1.0, 64).unwrap();
        let opts = BeltramiOptions { h: Some(1e-5), ..Default::default() };
        let field = beltrami_of(|p| Some(psi_raw(p, d, m)), spec, &opts, |p| p.norm() < r - 1e-4).unwrap();
        assert!(field.supnorm() < 1e-6, "{}", field.supnorm());
    }

    #[test]
    fn quality_error_on_constant_map() {
        let spec = GridSpec::new(c(0.0, 0.0), 1.0, 16).unwrap();
        let err = beltrami_of(|_| Some(c(1.0, 0.0)), spec, &BeltramiOptions::default(), |_| true);
        assert!(matches!(err, Err(Error::Quality { .. })));
    }

    #[test]
    fn exp_zone_of_model_is_holomorphic() {
        let model = Model::new(ModelParams::bare(1.6, 9)).unwrap();
        let spec = GridSpec::new(c(4.0, 0.0), 1.0, 32).unwrap();
        let field = model_beltrami(&model, spec, &BeltramiOptions::default()).unwrap();
        assert_eq!(field.supnorm(), 0.0);
    }

    #[test]
    fn model_strip_dilatation_matches_direct_differencing() {
        // Sample a low, well-resolved part of the blend band and compare.
        let model = Model::new(ModelParams::bare(1.6, 9)).unwrap();
        let spec = GridSpec::new(c(1.5, 0.0), 0.5, 32).unwrap();
        let field = model_beltrami(&model, spec, &BeltramiOptions::default()).unwrap();
        assert!(field.supnorm() > 0.05 && field.supnorm() < 0.5);
        for idx in (0..spec.len()).step_by(37) {
            let z = spec.node_at(idx);
            let (a, b) = wirtinger(|p| Some(model.g(p)), z, 1e-5).unwrap();
            let got = field.grid().values()[idx];
            assert!((got - b / a).norm() < 1e-6, "{z}: {got} vs {}", b / a);
        }
        // and at reflected points
        let zr = c(-1.3, -0.2);
        let (a, b) = wirtinger(|p| Some(model.g(p)), zr, 1e-5).unwrap();
        let spec_r = GridSpec::new(zr, 0.5, 16).unwrap();
        let fr = model_beltrami(&model, spec_r, &BeltramiOptions::default()).unwrap();
        assert!((fr.grid().get(8, 8) - b / a).norm() < 1e-6);
    }

    #[test]
    fn affine_identity_and_bound() {
        let (z1, z2, z3) = (c(0.0, 0.0), c(0.0, 1.0), c(1.0, 0.0));
        assert_eq!(affine_dilatation(z1, z2, z3, z1, z2).unwrap(), c(0.0, 0.0));
        assert!(affine_dilatation(z1, c(0.5, 0.0), z3, z1, z2).is_err());
        let bound = affine_dilatation_bound(z1, z2, z3, c(-0.1, 0.0), c(-0.1, 1.1));
        assert!((bound - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn lemma_configuration_formula() {
        // z1, z2 on the imaginary axis, z3 level with z1
        let (z1, z2, z3) = (c(0.0, 0.3), c(0.0, 1.1), c(0.7, 0.3));
        let (w1, w2) = (c(0.02, 0.31), c(-0.03, 1.05));
        let p = (z3 - w1) / (z3 - z1);
        let q = (w2 - w1) / (z2 - z1);
        let mu = (p - q) / (p + q);
        assert!((affine_dilatation(z1, z2, z3, w1, w2).unwrap() - mu).norm() < 1e-14);
    }

    fn real_affine_fit(z: [Complex64; 3], w: [Complex64; 3]) -> (f64, f64, f64, f64) {
        // u = p x + q y + r, v = s x + t y + u0; solve two 3x3 systems by Cramer's rule
        let m = [[z[0].re, z[0].im, 1.0], [z[1].re, z[1].im, 1.0], [z[2].re, z[2].im, 1.0]];
        let det3 = |a: [[f64; 3]; 3]| {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let d = det3(m);
        let solve = |rhs: [f64; 3], col: usize| {
            let mut a = m;
            for r in 0..3 {
                a[r][col] = rhs[r];
            }
            det3(a) / d
        };
        let u = [w[0].re, w[1].re, w[2].re];
        let v = [w[0].im, w[1].im, w[2].im];
        (solve(u, 0), solve(u, 1), solve(v, 0), solve(v, 1))
    }

    proptest! {
        #[test]
        fn affine_matches_real_fit(
            pts in proptest::collection::vec(-2.0f64..2.0, 6),
            pert in proptest::collection::vec(-0.2f64..0.2, 4),
        ) {
            let z1 = c(pts[0], pts[1]);
            let z2 = c(pts[2], pts[3]);
            let z3 = c(pts[4], pts[5]);
            let area = ((z3 - z1).re * (z2 - z1).im - (z3 - z1).im * (z2 - z1).re).abs();
            prop_assume!(area > 0.1);
            let w1 = z1 + c(pert[0], pert[1]);
            let w2 = z2 + c(pert[2], pert[3]);
            let (p, q, s, t) = real_affine_fit([z1, z2, z3], [w1, w2, z3]);
            // a = ½[(p + t) + i(s − q)], b = ½[(p − t) + i(s + q)]
            let a = c(p + t, s - q) * 0.5;
            let b = c(p - t, s + q) * 0.5;
            prop_assume!(a.norm() > 1e-3);
            let mu = affine_dilatation(z1, z2, z3, w1, w2).unwrap();
            prop_assert!((mu.norm() - b.norm() / a.norm()).abs() < 1e-10);
        }

        #[test]
        fn composition_matches_sampled_affine_maps(
            a1 in (0.5f64..2.0, -3.0f64..3.0), k1 in (0.0f64..0.6, -3.0f64..3.0),
            a2 in (0.5f64..2.0, -3.0f64..3.0), k2 in (0.0f64..0.6, -3.0f64..3.0),
        ) {
            let a1 = Complex64::from_polar(a1.0, a1.1);
            let b1 = a1 * Complex64::from_polar(k1.0, k1.1);
            let a2 = Complex64::from_polar(a2.0, a2.1);
            let b2 = a2 * Complex64::from_polar(k2.0, k2.1);
            let chi = move |z: Complex64| a1 * z + b1 * z.conj();
            let phi = move |w: Complex64| a2 * w + b2 * w.conj();
            let z = c(0.3, -0.4);
            let (dz, dzb) = wirtinger(|p| Some(phi(chi(p))), z, 0.1).unwrap();
            let got = compose_dilatation(b1 / a1, b2 / a2, a1.arg()).unwrap();
            prop_assert!((got - dzb / dz).norm() < 1e-8);
        }
    }

    #[test]
    fn composition_trivial_cases() {
        let mu = c(0.2, 0.1);
        assert_eq!(compose_dilatation(mu, c(0.0, 0.0), 0.7).unwrap(), mu);
        let got = compose_dilatation(c(0.0, 0.0), mu, 0.7).unwrap();
        assert!((got - mu * Complex64::from_polar(1.0, -1.4)).norm() < 1e-15);
    }
}
