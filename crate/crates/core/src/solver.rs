//! Numerical straightening: the Cauchy and Beurling transforms on a zero-padded
//! grid, the Neumann iteration for `φ_z̄ = μ φ_z`, and evaluation/inversion of `φ`.

use crate::dilatation::BeltramiField;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridSpec};
use crate::par::Exec;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Two-dimensional FFT on an `m × m` row-major buffer.
struct Fft2 {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(m: usize) -> Fft2 {
        let mut planner = FftPlanner::new();
        Fft2 { m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    fn transform(&self, data: &mut Vec<Complex64>, inverse: bool, exec: Exec) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let m = self.m;
        let rows = |buf: &mut [Complex64]| {
            exec.for_each_chunk(buf, m * 16, |_, chunk| {
                let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
                for row in chunk.chunks_mut(m) {
                    plan.process_with_scratch(row, &mut scratch);
                }
            })
        };
        rows(data);
        let mut t = transpose(data, m, exec);
        rows(&mut t);
        *data = transpose(&t, m, exec);
        if inverse {
            let s = 1.0 / (m * m) as f64;
            exec.for_each_chunk(data, m * 16, |_, c| c.iter_mut().for_each(|v| *v *= s));
        }
    }
}

fn transpose(data: &[Complex64], m: usize, exec: Exec) -> Vec<Complex64> {
    let mut out = vec![ZERO; m * m];
    exec.for_each_chunk(&mut out, m, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data[j * m + i];
        }
    });
    out
}

/// `∫∫_{[x1,x2]×[y1,y2]} dA(t)/t`, by the real antiderivatives of `x/|t|²` and `y/|t|²`.
fn inv_rect_integral(x1: f64, x2: f64, y1: f64, y2: f64) -> Complex64 {
    fn p(x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        let at = if x == 0.0 { 0.0 } else { x * (y / x).atan() };
        let lg = if r2 == 0.0 { 0.0 } else { 0.5 * y * r2.ln() };
        at + lg - y
    }
    let corner = |f: &dyn Fn(f64, f64) -> f64| f(x2, y2) - f(x1, y2) - f(x2, y1) + f(x1, y1);
    let re = corner(&|x, y| p(x, y));
    let im = corner(&|x, y| p(y, x));
    Complex64::new(re, -im)
}

/// Cell-integrated Cauchy kernel `(1/π)∫∫_cell dA(s)/(d − s)` for a square cell of side `h`.
fn cauchy_cell_kernel(d: Complex64, h: f64) -> Complex64 {
    if d.norm() >= 16.0 * h {
        return d.inv() * (h * h / PI);
    }
    let hh = 0.5 * h;
    inv_rect_integral(d.re - hh, d.re + hh, d.im - hh, d.im + hh) / PI
}

/// Precomputed transforms for one grid geometry.
pub struct Transforms {
    spec: GridSpec,
    m: usize,
    fft: Fft2,
    cauchy_hat: Vec<Complex64>,
    beurling_mult: Vec<Complex64>,
    exec: Exec,
}

impl Transforms {
    pub fn new(spec: GridSpec, exec: Exec) -> Transforms {
        let n = spec.n;
        let m = 2 * n;
        let h = spec.h();
        let fft = Fft2::new(m);
        let mut kernel = exec.map(m * m, |idx| {
            let (i, j) = (idx / m, idx % m);
            let di = if i < n { i as i64 } else if i > n { i as i64 - m as i64 } else { return ZERO };
            let dj = if j < n { j as i64 } else if j > n { j as i64 - m as i64 } else { return ZERO };
            cauchy_cell_kernel(Complex64::new(dj as f64 * h, di as f64 * h), h)
        });
        fft.transform(&mut kernel, false, exec);
        let freq = |k: usize| {
            let s = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
            2.0 * PI * s / (m as f64 * h)
        };
        let beurling_mult = exec.map(m * m, |idx| {
            let xi = Complex64::new(freq(idx % m), freq(idx / m));
            if xi == ZERO {
                ZERO
            } else {
                xi.conj() / xi
            }
        });
        Transforms { spec, m, fft, cauchy_hat: kernel, beurling_mult, exec }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn pad(&self, f: &[Complex64]) -> Vec<Complex64> {
        let (n, m) = (self.spec.n, self.m);
        let mut out = vec![ZERO; m * m];
        for i in 0..n {
            out[i * m..i * m + n].copy_from_slice(&f[i * n..(i + 1) * n]);
        }
        out
    }

    fn crop(&self, big: &[Complex64]) -> Vec<Complex64> {
        let (n, m) = (self.spec.n, self.m);
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.extend_from_slice(&big[i * m..i * m + n]);
        }
        out
    }

    fn apply(&self, f: &[Complex64], mult: &[Complex64]) -> Vec<Complex64> {
        let mut buf = self.pad(f);
        self.fft.transform(&mut buf, false, self.exec);
        self.exec.for_each_chunk(&mut buf, self.m, |i, row| {
            let off = i * self.m;
            for (k, v) in row.iter_mut().enumerate() {
                *v *= mult[off + k];
            }
        });
        self.fft.transform(&mut buf, true, self.exec);
        self.crop(&buf)
    }

    /// Solid Cauchy transform `(1/π)∫ f(w)/(z − w) dA(w)` of node values, read as cell averages.
    pub fn cauchy(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply(f, &self.cauchy_hat)
    }

    /// Beurling transform via the multiplier `conj(ξ)/ξ` on the padded spectrum.
    pub fn beurling(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.apply(f, &self.beurling_mult)
    }
}

fn check_interior_support(f: &ComplexGrid) -> Result<()> {
    let n = f.spec().n;
    let v = f.values();
    for k in 0..n {
        for idx in [k, (n - 1) * n + k, k * n, k * n + n - 1] {
            if v[idx] != ZERO {
                return Err(Error::domain(format!(
                    "support touches the grid boundary at node {idx}"
                )));
            }
        }
    }
    Ok(())
}

pub fn cauchy_transform(f: &ComplexGrid) -> Result<ComplexGrid> {
    check_interior_support(f)?;
    let t = Transforms::new(*f.spec(), Exec::default());
    ComplexGrid::new(*f.spec(), t.cauchy(f.values()))
}

pub fn beurling_transform(f: &ComplexGrid) -> Result<ComplexGrid> {
    check_interior_support(f)?;
    let t = Transforms::new(*f.spec(), Exec::default());
    ComplexGrid::new(*f.spec(), t.beurling(f.values()))
}

/// Area of `{|z − c| ≤ r}` inside the rectangle `[x1,x2]×[y1,y2]`.
pub fn disc_rect_area(c: Complex64, r: f64, x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
    let (x1, x2, y1, y2) = (x1 - c.re, x2 - c.re, y1 - c.im, y2 - c.im);
    let lo = x1.max(-r);
    let hi = x2.min(r);
    if lo >= hi {
        return 0.0;
    }
    let half = |x: f64| (r * r - x * x).max(0.0).sqrt();
    // ∫ √(r² − x²) dx
    let g = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * half(x) + r * r * (x / r).asin())
    };
    let mut cuts = vec![lo, hi];
    for y in [y1, y2] {
        if y.abs() < r {
            let x = (r * r - y * y).sqrt();
            for p in [-x, x] {
                if p > lo && p < hi {
                    cuts.push(p);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let s = half(0.5 * (a + b));
        let top_is_circle = s < y2;
        let bottom_is_circle = -s > y1;
        let top = if top_is_circle { s } else { y2 };
        let bottom = if bottom_is_circle { -s } else { y1 };
        if top <= bottom {
            continue;
        }
        let circ = (g(b) - g(a)) * (top_is_circle as u8 + bottom_is_circle as u8) as f64;
        let flat = (b - a) * (if top_is_circle { 0.0 } else { y2 } - if bottom_is_circle { 0.0 } else { y1 });
        area += circ + flat;
    }
    area
}

/// `μ = k·𝟙_{|z − c| < r}` sampled by exact cell-area fractions.
pub fn disc_field(spec: GridSpec, c: Complex64, r: f64, k: Complex64) -> BeltramiField {
    let h = spec.h();
    let values = Exec::default().map(spec.len(), |idx| {
        let z = spec.node_at(idx);
        let frac = disc_rect_area(c, r, z.re - 0.5 * h, z.re + 0.5 * h, z.im - 0.5 * h, z.im + 0.5 * h) / (h * h);
        k * frac
    });
    BeltramiField::from_grid(ComplexGrid::new(spec, values).expect("finite"), 1e-10)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub maxit: usize,
    /// Width in nodes of the boundary ring used to fit the hydrodynamic coefficient.
    pub fit_ring: usize,
    pub exec: Exec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, maxit: 200, fit_ring: 2, exec: Exec::default() }
    }
}

/// Grid-sampled normalized solution `φ = z + C[h]` with its far-field coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiconformalMap {
    displacement: ComplexGrid,
    pub a: Complex64,
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

impl QuasiconformalMap {
    pub fn identity(spec: GridSpec) -> QuasiconformalMap {
        QuasiconformalMap {
            displacement: ComplexGrid::zeros(spec),
            a: ZERO,
            residual: 0.0,
            iterations: 0,
            history: Vec::new(),
        }
    }

    pub fn from_displacement(displacement: ComplexGrid, a: Complex64) -> QuasiconformalMap {
        QuasiconformalMap { displacement, a, residual: 0.0, iterations: 0, history: Vec::new() }
    }

    pub fn displacement(&self) -> &ComplexGrid {
        &self.displacement
    }

    pub fn spec(&self) -> &GridSpec {
        self.displacement.spec()
    }

    /// Ratios of successive updates, a proxy for the contraction rate.
    pub fn rates(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        match self.displacement.bilinear(z) {
            Some(d) => z + d,
            None if z == ZERO => z,
            None => z + self.a / z,
        }
    }

    /// Real Jacobian `[[u_x, u_y], [v_x, v_y]]` of the interpolated map.
    pub fn jacobian(&self, z: Complex64) -> [[f64; 2]; 2] {
        let spec = self.spec();
        let n = spec.n;
        let (x, y) = spec.coords(z);
        let top = (n - 1) as f64;
        let (dx, dy) = if (0.0..=top).contains(&x) && (0.0..=top).contains(&y) {
            let g = &self.displacement;
            let j = (x.floor() as usize).min(n - 2);
            let i = (y.floor() as usize).min(n - 2);
            let (tx, ty) = (x - j as f64, y - i as f64);
            let h = spec.h();
            let (v00, v01, v10, v11) = (g.get(i, j), g.get(i, j + 1), g.get(i + 1, j), g.get(i + 1, j + 1));
            let dx = ((v01 - v00) * (1.0 - ty) + (v11 - v10) * ty) / h;
            let dy = ((v10 - v00) * (1.0 - tx) + (v11 - v01) * tx) / h;
            (dx, dy)
        } else {
            // z + a/z has derivative 1 − a/z²
            let d = -self.a / (z * z);
            (d, d * Complex64::i())
        };
        [[1.0 + dx.re, dy.re], [dx.im, 1.0 + dy.im]]
    }

    /// Damped Newton solve of `φ(z) = target`, seeded at the target.
    pub fn invert(&self, target: Complex64, tol: f64) -> Result<Complex64> {
        let mut z = target;
        let mut res = (self.eval(z) - target).norm();
        for _ in 0..100 {
            if res < tol {
                return Ok(z);
            }
            let f = self.eval(z) - target;
            let j = self.jacobian(z);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det.abs() > 1e-300) {
                break;
            }
            let sx = (j[1][1] * f.re - j[0][1] * f.im) / det;
            let sy = (-j[1][0] * f.re + j[0][0] * f.im) / det;
            let step = Complex64::new(sx, sy);
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = z - step * t;
                let r = (self.eval(cand) - target).norm();
                if r < res {
                    z = cand;
                    res = r;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if res < tol {
            Ok(z)
        } else {
            Err(Error::Inversion { best: z, residual: res })
        }
    }

    /// `(sup |φ(z) − z|, sup_{|z| > T} |z|·|φ(z) − z|)` over the grid nodes.
    pub fn displacement_bounds(&self, t: f64) -> (f64, f64) {
        let spec = *self.spec();
        let v = self.displacement.values();
        let mut sup = 0.0f64;
        let mut tail = 0.0f64;
        for (idx, d) in v.iter().enumerate() {
            let z = spec.node_at(idx);
            sup = sup.max(d.norm());
            if z.norm() > t {
                tail = tail.max(z.norm() * d.norm());
            }
        }
        (sup, tail)
    }

    /// Writes the displacement grid in the binary grid format.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        self.displacement.write_binary(w)
    }

    /// Plain-text sidecar with the scalar diagnostics.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{{")?;
        writeln!(w, "  \"a_re\": {:?},", self.a.re)?;
        writeln!(w, "  \"a_im\": {:?},", self.a.im)?;
        writeln!(w, "  \"residual\": {:?},", self.residual)?;
        writeln!(w, "  \"iterations\": {}", self.iterations)?;
        writeln!(w, "}}")?;
        Ok(())
    }

    pub fn read<R: std::io::Read, S: BufRead>(grid: R, sidecar: S) -> Result<QuasiconformalMap> {
        let displacement = ComplexGrid::read_binary(grid)?;
        let mut map = QuasiconformalMap::from_displacement(displacement, ZERO);
        for line in sidecar.lines() {
            let line = line?;
            let Some((k, v)) = line.split_once(':') else { continue };
            let k = k.trim().trim_matches('"');
            let v = v.trim().trim_end_matches(',');
            let bad = |_| Error::Format(format!("bad sidecar value for {k}: {v}"));
            match k {
                "a_re" => map.a.re = v.parse().map_err(bad)?,
                "a_im" => map.a.im = v.parse().map_err(bad)?,
                "residual" => map.residual = v.parse().map_err(bad)?,
                "iterations" => map.iterations = v.parse().map_err(|_| Error::Format(format!("bad iterations {v}")))?,
                _ => return Err(Error::Format(format!("unknown sidecar key {k}"))),
            }
        }
        Ok(map)
    }
}

pub fn evaluate_phi(map: &QuasiconformalMap, z: Complex64) -> Complex64 {
    map.eval(z)
}

pub fn invert_phi(map: &QuasiconformalMap, target: Complex64, tol: f64) -> Result<Complex64> {
    map.invert(target, tol)
}

pub fn phi_displacement_bounds(map: &QuasiconformalMap) -> (f64, f64) {
    map.displacement_bounds(1.0)
}

/// Solves `φ_z̄ = μ φ_z` by iterating `h ← μ(1 + S h)` from `h₀ = μ`.
pub fn solve_mrt(mu: &BeltramiField, opts: &SolverOptions) -> Result<QuasiconformalMap> {
    let t = Transforms::new(*mu.spec(), opts.exec);
    solve_with(&t, mu, opts)
}

/// [`solve_mrt`] reusing precomputed transforms.
pub fn solve_with(t: &Transforms, mu: &BeltramiField, opts: &SolverOptions) -> Result<QuasiconformalMap> {
    if mu.spec() != t.spec() {
        return Err(Error::param("field and transforms disagree on the grid"));
    }
    if !(mu.supnorm() < 1.0) {
        return Err(Error::param(format!("supnorm {} is not below 1", mu.supnorm())));
    }
    check_interior_support(mu.grid())?;
    let spec = *mu.spec();
    let m = mu.grid().values();
    let mut h: Vec<Complex64> = m.to_vec();
    let mut history = Vec::new();
    let mut converged = m.iter().all(|v| *v == ZERO);
    let mut iterations = 0;
    while !converged && iterations < opts.maxit {
        let sh = t.beurling(&h);
        let next: Vec<Complex64> = m.iter().zip(&sh).map(|(mu, s)| mu * (1.0 + s)).collect();
        let delta = next.iter().zip(&h).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        h = next;
        iterations += 1;
        history.push(delta);
        converged = delta < opts.tol;
    }
    let residual = history.last().copied().unwrap_or(0.0);
    if !converged {
        return Err(Error::Convergence { iterations, residual, history });
    }
    let disp = ComplexGrid::new(spec, t.cauchy(&h))?;
    let a = fit_far_field(&disp, opts.fit_ring);
    Ok(QuasiconformalMap { displacement: disp, a, residual, iterations, history })
}

/// Least-squares `a` in `φ(z) − z ≈ a/z` over the outer ring of nodes.
fn fit_far_field(disp: &ComplexGrid, ring: usize) -> Complex64 {
    let spec = disp.spec();
    let n = spec.n;
    let ring = ring.max(1).min(n / 2);
    let mut num = ZERO;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i >= ring && j >= ring && i < n - ring && j < n - ring {
                continue;
            }
            let z = spec.node(i, j);
            if z == ZERO {
                continue;
            }
            let basis = z.inv();
            num += basis.conj() * disp.get(i, j);
            den += basis.norm_sqr();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        ZERO
    }
}
