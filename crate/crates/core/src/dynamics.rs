//! Dynamics of `f = g∘φ⁻¹`: forward orbits with an exponential-tower representation
//! for huge real values, local inverse branches along the real orbit of `1/2`,
//! pull-backs, derivative bounds, the wandering inclusion test and singular orbits.

use crate::error::{Error, Result};
use crate::maps::{disc_center, Model, ModelParams, Region};
use crate::solver::QuasiconformalMap;
use num_complex::Complex64;
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Write;

/// Values above this are stored in the log domain.
pub const LOG_SCALE: f64 = 1e100;
const LN_LOG_SCALE: f64 = 230.258_509_299_404_57;
/// `ε₀` of the derivative estimates.
pub const EPS0: f64 = 1.0 / 32.0;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn exp_iter(h: u32, t: f64) -> f64 {
    (0..h).fold(t, |x, _| x.exp())
}

/// A positive real `exp^height(top)`, kept canonical: `height = 0` for values up to
/// [`LOG_SCALE`], otherwise `top ∈ (ln LOG_SCALE, LOG_SCALE]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tower {
    height: u32,
    top: f64,
}

impl Tower {
    pub fn new(mut height: u32, mut top: f64) -> Tower {
        loop {
            if top > LOG_SCALE {
                top = top.ln();
                height += 1;
            } else if height > 0 && top <= LN_LOG_SCALE {
                top = top.exp();
                height -= 1;
            } else {
                return Tower { height, top };
            }
        }
    }

    pub fn from_value(x: f64) -> Tower {
        Tower::new(0, x)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    /// The value in `f64` (`inf` once it overflows).
    pub fn value(&self) -> f64 {
        exp_iter(self.height, self.top)
    }

    pub fn ln(&self) -> Tower {
        if self.height == 0 {
            Tower::new(0, self.top.ln())
        } else {
            Tower::new(self.height - 1, self.top)
        }
    }

    /// `ln` of the value in `f64` (`inf` once that overflows).
    pub fn ln_value(&self) -> f64 {
        self.ln().value()
    }

    pub fn add(&self, c: f64) -> Tower {
        if self.height == 0 {
            Tower::new(0, self.top + c)
        } else {
            Tower::new(self.height, add_top(self.height, self.top, c))
        }
    }
}

impl PartialOrd for Tower {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.height.cmp(&other.height) {
            Ordering::Equal => self.top.partial_cmp(&other.top),
            o => Some(o),
        }
    }
}

/// Top of `exp^h(t) + c` for `h ≥ 1`, using `e^h(t) + c = exp(e^{h−1}(t) + ln(1 + c/e^h(t)))`.
fn add_top(h: u32, t: f64, c: f64) -> f64 {
    let x = exp_iter(h, t);
    if c == 0.0 || !x.is_finite() {
        return t;
    }
    let c1 = (c / x).ln_1p();
    if h == 1 {
        t + c1
    } else {
        add_top(h - 1, t, c1)
    }
}

/// A point of an orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrbitPoint {
    Plain(Complex64),
    /// A positive real above [`LOG_SCALE`].
    Huge(Tower),
}

impl OrbitPoint {
    pub fn real(x: f64) -> OrbitPoint {
        OrbitPoint::Plain(c(x, 0.0))
    }

    fn from_tower(t: Tower) -> OrbitPoint {
        if t.height() == 0 {
            OrbitPoint::Plain(c(t.top(), 0.0))
        } else {
            OrbitPoint::Huge(t)
        }
    }

    pub fn modulus(&self) -> Tower {
        match self {
            OrbitPoint::Plain(z) => Tower::from_value(z.norm()),
            OrbitPoint::Huge(t) => *t,
        }
    }

    /// The plain value; huge values come back as `+inf` on the real axis.
    pub fn value(&self) -> Complex64 {
        match self {
            OrbitPoint::Plain(z) => *z,
            OrbitPoint::Huge(t) => c(t.value(), 0.0),
        }
    }

    pub fn plain(&self) -> Option<Complex64> {
        match self {
            OrbitPoint::Plain(z) => Some(*z),
            OrbitPoint::Huge(_) => None,
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            OrbitPoint::Plain(z) => z.im == 0.0,
            OrbitPoint::Huge(_) => true,
        }
    }

    pub fn log_modulus(&self) -> f64 {
        self.modulus().ln_value()
    }
}

/// `σ'(t)` for real `t > 0`.
fn sigma_real_derivative(t: f64) -> f64 {
    if t <= PI {
        t.sinh()
    } else if t >= 2.0 * PI {
        t.exp()
    } else {
        let s = (t - PI) / PI;
        let b = (1.0 + 1.0 / (s * s - 1.0)).exp();
        let xi = 1.0 - b;
        let dxi = 2.0 * s / ((s * s - 1.0) * (s * s - 1.0)) * b / PI;
        dxi * (t.exp() - t.cosh()) + xi * t.exp() + (1.0 - xi) * t.sinh()
    }
}

/// `g'(x)` along the positive real axis.
pub fn g_real_derivative(model: &Model, x: f64) -> f64 {
    let lam = model.lambda();
    sigma_real_derivative(lam * x.sinh()) * lam * x.cosh()
}

/// `ln g'(x)` along the positive real axis, valid where `g'(x)` overflows.
pub fn g_real_log_derivative(model: &Model, x: f64) -> f64 {
    let lam = model.lambda();
    let t = lam * x.sinh();
    if t >= 2.0 * PI {
        t + (lam * x.cosh()).ln()
    } else {
        g_real_derivative(model, x).ln()
    }
}

/// Forward step of `g` at a positive real, switching to the tower once `g` is huge.
fn g_real_point(model: &Model, x: f64) -> OrbitPoint {
    let lam = model.lambda();
    let t = lam * x.sinh();
    if t < 2.0 * PI {
        return OrbitPoint::Plain(model.g(c(x, 0.0)));
    }
    if t.is_finite() {
        OrbitPoint::from_tower(Tower::new(1, t))
    } else {
        // ln(λ sinh x) = x + ln(λ/2) up to e^{−2x}
        OrbitPoint::from_tower(Tower::new(2, x + (lam / 2.0).ln()))
    }
}

/// Forward step of `g` on a tower, where `g(x) = exp(exp(x + ln(λ/2)))` to working precision.
fn g_tower_step(model: &Model, t: Tower) -> OrbitPoint {
    let c2 = (model.lambda() / 2.0).ln();
    OrbitPoint::from_tower(Tower::new(t.height() + 2, add_top(t.height(), t.top(), c2)))
}

fn g_point(model: &Model, w: Complex64) -> Result<OrbitPoint> {
    if w.im == 0.0 && w.re != 0.0 {
        return Ok(g_real_point(model, w.re.abs()));
    }
    let v = model.g(w);
    if v.is_finite() && v.norm() <= LOG_SCALE {
        Ok(OrbitPoint::Plain(v))
    } else {
        Err(Error::Model(format!("non-real orbit point {w} leaves the representable range")))
    }
}

/// The local inverse of `g` on `(0, ∞)`, where `g` increases from 1.
pub fn g_real_inverse(model: &Model, y: f64) -> Result<f64> {
    if !(y > 1.0) || y.is_nan() {
        return Err(Error::Branch(format!("{y} has no positive real preimage")));
    }
    let lam = model.lambda();
    let mut hi = (y.ln() / lam).asinh() + 1.0;
    while model.g(c(hi, 0.0)).re < y {
        hi *= 2.0;
    }
    if !hi.is_finite() {
        return Err(Error::Branch(format!("no bracket for {y}")));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if model.g(c(mid, 0.0)).re < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Real inverse of `g` at a tower: `asinh(ln y/λ)` in the exponential zone.
pub fn g_tower_inverse(model: &Model, y: Tower) -> OrbitPoint {
    let lam = model.lambda();
    match y.height() {
        0 => OrbitPoint::real(g_real_inverse(model, y.top()).unwrap_or(f64::NAN)),
        1 => OrbitPoint::real((y.top() / lam).asinh()),
        h => OrbitPoint::from_tower(Tower::new(h - 2, y.top()).add((2.0 / lam).ln())),
    }
}

fn in_half_strip(z: Complex64) -> bool {
    z.re > 0.0 && z.im.abs() < PI / 2.0
}

/// Damped Newton on `F(z) = target` with a central-difference real Jacobian.
fn newton_solve<F>(f: &F, target: Complex64, seed: Complex64, tol: f64) -> Option<Complex64>
where
    F: Fn(Complex64) -> Complex64,
{
    let mut z = seed;
    let mut res = (f(z) - target).norm();
    for _ in 0..80 {
        if res <= tol {
            return Some(z);
        }
        let h = 1e-7 * z.norm().max(1.0);
        let fx = (f(z + h) - f(z - h)) / (2.0 * h);
        let fy = (f(z + c(0.0, h)) - f(z - c(0.0, h))) / (2.0 * h);
        let det = fx.re * fy.im - fy.re * fx.im;
        if !(det.abs() > 0.0) || !det.is_finite() {
            return None;
        }
        let r = f(z) - target;
        let step = c((fy.im * r.re - fy.re * r.im) / det, (-fx.im * r.re + fx.re * r.im) / det);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = z - step * t;
            let rc = (f(cand) - target).norm();
            if rc < res {
                z = cand;
                res = rc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (res <= tol).then_some(z)
}

/// Local inverse of `g` near the anchor, landing in `S⁺`.
pub fn inverse_branch_g(y: Complex64, anchor: f64, model: &Model, tol: f64) -> Result<Complex64> {
    if y.im == 0.0 && anchor > 0.0 && y.re > 1.0 {
        return Ok(c(g_real_inverse(model, y.re)?, 0.0));
    }
    let lam = model.lambda();
    let g = |z: Complex64| model.g(z);
    let scale = tol * y.norm().max(1.0);
    let mut found = None;
    if lam * anchor.sinh() >= 2.0 * PI {
        found = newton_solve(&g, y, (y.ln() / lam).asinh(), scale);
    }
    if found.is_none() {
        // continuation from g(anchor) to y keeps the branch of the chain
        let y0 = model.g(c(anchor, 0.0));
        'outer: for pieces in [8usize, 32, 128] {
            let mut z = c(anchor, 0.0);
            for s in 1..=pieces {
                let t = s as f64 / pieces as f64;
                let target = y0 + (y - y0) * t;
                let tol_s = if s == pieces { scale } else { 1e-9 * target.norm().max(1.0) };
                match newton_solve(&g, target, z, tol_s) {
                    Some(next) => z = next,
                    None => continue 'outer,
                }
            }
            found = Some(z);
            break;
        }
    }
    let z = found.ok_or_else(|| Error::Branch(format!("Newton failed for g(z) = {y} near {anchor}")))?;
    if !in_half_strip(z) {
        return Err(Error::Branch(format!("preimage {z} of {y} left the half-strip")));
    }
    Ok(z)
}

/// Minimal interface shared by the straightened model and the test controls.
pub trait Dynamics {
    fn phi(&self, z: Complex64) -> Complex64;
    fn phi_inv(&self, z: Complex64) -> Result<Complex64>;
    fn g(&self, z: Complex64) -> Complex64;
    /// Local inverse of `g` near a positive real anchor.
    fn g_inv(&self, y: Complex64, anchor: f64) -> Result<Complex64>;

    fn f(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.g(self.phi_inv(z)?))
    }

    /// One step of `f⁻¹ = φ∘g⁻¹` on the branch anchored at `anchor`.
    fn f_inv(&self, y: Complex64, anchor: f64) -> Result<Complex64> {
        Ok(self.phi(self.g_inv(y, anchor)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsOptions {
    pub inversion_tol: f64,
    pub branch_tol: f64,
    /// Relative step of the finite-difference derivatives.
    pub fd_step: f64,
    pub escape_radius: f64,
    pub tail: usize,
    /// Depth of the anchor orbit of `1/2`.
    pub depth: usize,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            inversion_tol: 1e-12,
            branch_tol: 1e-13,
            fd_step: 1e-5,
            escape_radius: 1e6,
            tail: 10,
            depth: 6,
        }
    }
}

/// The straightened model: `g`, the solved `φ`, and the real orbit of `1/2` under `g`.
#[derive(Debug, Clone)]
pub struct Context {
    model: Model,
    map: QuasiconformalMap,
    anchors: Vec<OrbitPoint>,
    opts: DynamicsOptions,
}

impl Context {
    pub fn new(model: Model, map: QuasiconformalMap, opts: DynamicsOptions) -> Result<Context> {
        let anchors = anchor_orbit(&model, opts.depth)?;
        Ok(Context { model, map, anchors, opts })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn map(&self) -> &QuasiconformalMap {
        &self.map
    }

    pub fn options(&self) -> &DynamicsOptions {
        &self.opts
    }

    /// `g^k(1/2)` for `k = 0..=depth`.
    pub fn anchors(&self) -> &[OrbitPoint] {
        &self.anchors
    }

    fn anchor(&self, k: usize) -> Result<OrbitPoint> {
        self.anchors
            .get(k)
            .copied()
            .ok_or_else(|| Error::param(format!("anchor depth {k} beyond {}", self.anchors.len() - 1)))
    }

    fn plain_anchor(&self, k: usize) -> Result<f64> {
        self.anchor(k)?
            .plain()
            .map(|z| z.re)
            .ok_or_else(|| Error::Branch(format!("g^{k}(1/2) is only known in the log domain")))
    }

    /// One forward step of `f`, keeping exactly real points real.
    pub fn step(&self, p: OrbitPoint) -> Result<OrbitPoint> {
        match p {
            OrbitPoint::Huge(t) => Ok(g_tower_step(&self.model, t)),
            OrbitPoint::Plain(z) => g_point(&self.model, self.phi_inv(z)?),
        }
    }

    pub fn f_eval(&self, z: Complex64) -> Result<Complex64> {
        self.f(z)
    }

    /// `f⁻ⁿ(z)` along the real branch chain, with every intermediate image.
    pub fn pull_back_chain(&self, z: Complex64, n: usize) -> Result<BranchChain> {
        let mut images = vec![z];
        let mut y = z;
        for k in (0..n).rev() {
            y = self.f_inv(y, self.plain_anchor(k)?)?;
            images.push(y);
        }
        Ok(BranchChain { anchors: self.anchors[..=n.min(self.anchors.len() - 1)].to_vec(), depth: n, images })
    }

    pub fn pull_back_f(&self, z: Complex64, n: usize) -> Result<Complex64> {
        Ok(*self.pull_back_chain(z, n)?.images.last().expect("nonempty"))
    }

    /// `ln |(f⁻ⁿ)'(gⁿ(1/2))|` by central differences along the real axis.
    ///
    /// When `gⁿ(1/2)` is a tower the difference is taken in `u = ln y` through the
    /// exponential-zone inverse `asinh(u/λ)` and the factor `1/y` is applied in the log domain.
    pub fn log_derivative_fd(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        match self.anchor(n)? {
            OrbitPoint::Plain(y) => {
                let s = self.opts.fd_step * y.norm().max(1.0);
                let a = self.pull_back_f(y + s, n)?;
                let b = self.pull_back_f(y - s, n)?;
                Ok(((a - b) / (2.0 * s)).norm().ln())
            }
            OrbitPoint::Huge(t) => {
                if t.height() != 1 {
                    return Err(Error::Evaluation(format!("g^{n}(1/2) is beyond one logarithm")));
                }
                let u = t.top();
                let lam = self.model.lambda();
                let anchor = self.plain_anchor(n - 1)?;
                let pull = |u: f64| -> Result<Complex64> {
                    let x = (u / lam).asinh();
                    if (x - anchor).abs() > 1.0 {
                        return Err(Error::Branch("exponential-zone inverse left the anchor".into()));
                    }
                    self.pull_back_f(self.phi(c(x, 0.0)), n - 1)
                };
                let s = self.opts.fd_step * u;
                let d = (pull(u + s)? - pull(u - s)?) / (2.0 * s);
                Ok(d.norm().ln() - u)
            }
        }
    }

    pub fn derivative_bounds(&self, n: usize) -> Result<DerivativeBounds> {
        derivative_bounds(&self.model, &self.anchors, n)
    }

    pub fn p_tilde(&self, n: usize) -> Result<PIndex> {
        Ok(p_tilde_of(&self.anchor(n)?))
    }
}

impl Dynamics for Context {
    fn phi(&self, z: Complex64) -> Complex64 {
        let w = self.map.eval(z);
        // φ commutes with conjugation, so it preserves the real axis
        if z.im == 0.0 {
            c(w.re, 0.0)
        } else {
            w
        }
    }

    fn phi_inv(&self, z: Complex64) -> Result<Complex64> {
        let w = self.map.invert(z, self.opts.inversion_tol * z.norm().max(1.0))?;
        Ok(if z.im == 0.0 { c(w.re, 0.0) } else { w })
    }

    fn g(&self, z: Complex64) -> Complex64 {
        self.model.g(z)
    }

    fn g_inv(&self, y: Complex64, anchor: f64) -> Result<Complex64> {
        inverse_branch_g(y, anchor, &self.model, self.opts.branch_tol)
    }
}

/// `g^k(1/2)` for `k = 0..=depth` under `g` alone.
fn anchor_orbit(model: &Model, depth: usize) -> Result<Vec<OrbitPoint>> {
    let mut out = vec![OrbitPoint::real(0.5)];
    for _ in 0..depth {
        let p = *out.last().expect("nonempty");
        out.push(model_step(model, p)?);
    }
    Ok(out)
}

fn model_step(model: &Model, p: OrbitPoint) -> Result<OrbitPoint> {
    match p {
        OrbitPoint::Huge(t) => Ok(g_tower_step(model, t)),
        OrbitPoint::Plain(z) => g_point(model, z),
    }
}

/// Inverse images along the real branch chain: `images[0] = z`, `images[k] = f⁻ᵏ(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchChain {
    pub anchors: Vec<OrbitPoint>,
    pub depth: usize,
    pub images: Vec<Complex64>,
}

impl BranchChain {
    /// Largest `|f(images[k+1]) − images[k]|` relative to `max(1, |images[k]|)`.
    pub fn consistency<D: Dynamics>(&self, dynamics: &D) -> Result<f64> {
        let mut worst = 0.0f64;
        for w in self.images.windows(2) {
            let back = dynamics.f(w[1])?;
            worst = worst.max((back - w[0]).norm() / w[0].norm().max(1.0));
        }
        Ok(worst)
    }
}

/// Generic `f⁻ⁿ` along given real anchors `anchors[k] = g^k(1/2)`.
pub fn pull_back<D: Dynamics>(dynamics: &D, anchors: &[f64], z: Complex64, n: usize) -> Result<Complex64> {
    if n > anchors.len() {
        return Err(Error::param(format!("pull-back depth {n} beyond {} anchors", anchors.len())));
    }
    let mut y = z;
    for k in (0..n).rev() {
        y = dynamics.f_inv(y, anchors[k])?;
    }
    Ok(y)
}

/// `g(φ⁻¹(z))`.
pub fn f_eval(z: Complex64, model: &Model, phi: &QuasiconformalMap) -> Result<Complex64> {
    Ok(model.g(phi.invert(z, 1e-12 * z.norm().max(1.0))?))
}

/// Disc index nearest to an orbit point of `1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PIndex {
    Index(usize),
    /// Too large for an integer; `ln` of the index.
    Beyond { ln_index: f64 },
}

impl PIndex {
    pub fn index(&self) -> Option<usize> {
        match self {
            PIndex::Index(k) => Some(*k),
            PIndex::Beyond { .. } => None,
        }
    }
}

/// `argmin_k |z_k − x|` over `z_k = kπ + iπ`, ties to the smaller index.
pub fn nearest_disc(x: f64) -> usize {
    let base = (x / PI).floor().max(1.0) as usize;
    let mut best = base;
    let mut best_d = (base as f64 * PI - x).abs();
    for k in [base.saturating_sub(1).max(1), base + 1] {
        let d = (k as f64 * PI - x).abs();
        let tie = (d - best_d).abs() <= 1e-12 * (1.0 + x.abs());
        if (!tie && d < best_d) || (tie && k < best) {
            best = k;
            best_d = d;
        }
    }
    best
}

fn p_tilde_of(p: &OrbitPoint) -> PIndex {
    match p {
        OrbitPoint::Plain(z) if z.re / PI < 1e15 => PIndex::Index(nearest_disc(z.re)),
        other => PIndex::Beyond { ln_index: other.log_modulus() - PI.ln() },
    }
}

/// `p̃_n` for the model `g`.
pub fn p_tilde(n: usize, model: &Model) -> Result<PIndex> {
    let orbit = anchor_orbit(model, n)?;
    Ok(p_tilde_of(&orbit[n]))
}

/// The two sides of the derivative sandwich, in the log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeBounds {
    pub n: usize,
    pub ln_lower: f64,
    pub ln_upper: f64,
}

impl DerivativeBounds {
    pub fn lower(&self) -> f64 {
        self.ln_lower.exp()
    }

    pub fn upper(&self) -> f64 {
        self.ln_upper.exp()
    }

    pub fn contains_ln(&self, ln_value: f64) -> bool {
        self.ln_lower <= ln_value && ln_value <= self.ln_upper
    }
}

/// Lower `Aⁿ Π (g⁻¹)'(gᵏ(1/2) + 2ε₀)` and upper `(B/λ)ⁿ / (λ − ε₀/λ^{n−2})` bounds for
/// `|(f⁻ⁿ)'(gⁿ(1/2))|`; the upper bound is `+∞` when its denominator is not positive.
pub fn derivative_bounds(model: &Model, anchors: &[OrbitPoint], n: usize) -> Result<DerivativeBounds> {
    if n >= anchors.len() {
        return Err(Error::param(format!("derivative bounds need g^{n}(1/2)")));
    }
    let lam = model.lambda();
    let a = (1.0f64 / 64.0) * (0.25 - 2.0 * EPS0) / ((9.0 / 64.0) * 0.25);
    let b = (25.0f64 / 64.0) * (0.25 + 2.0 * EPS0) / ((9.0 / 64.0) * 0.25);
    let mut ln_lower = n as f64 * a.ln();
    for k in 1..=n {
        let y = anchors[k].modulus().add(2.0 * EPS0);
        let ln_inv_derivative = match g_tower_inverse(model, y) {
            OrbitPoint::Plain(x) => -g_real_log_derivative(model, x.re),
            OrbitPoint::Huge(_) => {
                return Err(Error::Evaluation(format!("g^{k}(1/2) is beyond the tower inverse range")))
            }
        };
        ln_lower += ln_inv_derivative;
    }
    let den = lam - EPS0 / lam.powi(n as i32 - 2);
    let ln_upper = if den > 0.0 {
        n as f64 * (b / lam).ln() - den.ln()
    } else {
        f64::INFINITY
    };
    Ok(DerivativeBounds { n, ln_lower, ln_upper })
}

/// One disc-to-disc hop tested by [`check_inclusion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub from: Complex64,
    pub from_radius: f64,
    pub to: Complex64,
    pub to_radius: f64,
    pub iterations: usize,
}

impl Hop {
    /// Hop `k`: `D(z_{p_k}, k/(k+1))` to `D(z_{p_{k+1}}, (k+1)/(k+2))` in `n_{k+1} + 1` steps.
    pub fn for_level(k: usize, p_k: usize, p_next: usize, n_next: usize) -> Result<Hop> {
        let kf = k as f64;
        Ok(Hop {
            from: disc_center(p_k)?,
            from_radius: kf / (kf + 1.0),
            to: disc_center(p_next)?,
            to_radius: (kf + 1.0) / (kf + 2.0),
            iterations: n_next + 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionVerdict {
    Inside,
    Outside,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionReport {
    pub verdict: InclusionVerdict,
    /// `min (to_radius − |φ⁻¹(image) − to|)`, positive when every image is inside.
    pub margin: f64,
    pub worst_sample: Option<Complex64>,
    pub samples: usize,
    pub note: String,
}

/// Iterates `f` on boundary samples of `φ(D(from, from_radius))` and tests membership
/// in `φ(D(to, to_radius))` through `φ⁻¹`.
pub fn check_inclusion<D: Dynamics>(dynamics: &D, hop: &Hop, samples: usize) -> InclusionReport {
    let mut margin = f64::INFINITY;
    let mut worst = None;
    for s in 0..samples {
        let theta = 2.0 * PI * s as f64 / samples as f64;
        let start = hop.from + Complex64::from_polar(hop.from_radius, theta);
        let mut z = dynamics.phi(start);
        let mut failure = None;
        for _ in 0..hop.iterations {
            match dynamics.f(z) {
                Ok(v) if v.is_finite() => z = v,
                Ok(v) => {
                    failure = Some(format!("overflow at {v}"));
                    break;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        let pre = failure.is_none().then(|| dynamics.phi_inv(z));
        let m = match pre {
            Some(Ok(w)) => hop.to_radius - (w - hop.to).norm(),
            Some(Err(e)) => {
                failure = Some(e.to_string());
                f64::NAN
            }
            None => f64::NAN,
        };
        if let Some(note) = failure {
            return InclusionReport {
                verdict: InclusionVerdict::Indeterminate,
                margin: f64::NAN,
                worst_sample: Some(start),
                samples,
                note,
            };
        }
        if m < margin {
            margin = m;
            worst = Some(start);
        }
    }
    InclusionReport {
        verdict: if margin > 0.0 { InclusionVerdict::Inside } else { InclusionVerdict::Outside },
        margin,
        worst_sample: worst,
        samples,
        note: String::new(),
    }
}

/// Final classification of an orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Escaping,
    BoundedHorizon,
    ReturnedToDisc(usize),
    Overflow,
}

impl Verdict {
    pub fn as_str(&self) -> String {
        match self {
            Verdict::Escaping => "escaping".into(),
            Verdict::BoundedHorizon => "bounded-horizon".into(),
            Verdict::ReturnedToDisc(n) => format!("returned-to-disc({n})"),
            Verdict::Overflow => "overflow".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitStep {
    pub point: OrbitPoint,
    pub logscale: bool,
    pub logvalue: f64,
}

impl OrbitStep {
    fn new(point: OrbitPoint, logscale: bool) -> OrbitStep {
        OrbitStep { point, logscale, logvalue: point.log_modulus() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitRecord {
    pub start: Complex64,
    pub steps: Vec<OrbitStep>,
    pub verdict: Verdict,
    /// Step at which the escape radius was first exceeded.
    pub onset: Option<usize>,
    /// True when the orbit was exactly real from the onset on, so the monotone tail is
    /// an exact orbit rather than the log-domain recurrence of the modulus.
    pub tail_exact: bool,
    /// `(step, |fˢ(v) − 1|)` when a proximity target was requested.
    pub hit: Option<(usize, f64)>,
    pub note: String,
}

impl OrbitRecord {
    /// CSV with columns `step,re,im,logscale,logvalue`; step 0 is the start.
    /// Rows stop once `ln|v|` itself leaves `f64`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,re,im,logscale,logvalue")?;
        writeln!(w, "0,{:?},{:?},false,{:?}", self.start.re, self.start.im, self.start.norm().ln())?;
        for (k, s) in self.steps.iter().enumerate().take_while(|(_, s)| s.logvalue.is_finite()) {
            let v = s.point.value();
            writeln!(w, "{},{:?},{:?},{},{:?}", k + 1, v.re, v.im, s.logscale, s.logvalue)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&OrbitPoint> {
        self.steps.last().map(|s| &s.point)
    }
}

struct OrbitRun<'a, S: Fn(OrbitPoint) -> Result<OrbitPoint>> {
    step: S,
    region: &'a dyn Fn(Complex64) -> Region,
    escape: f64,
    tail: usize,
    horizon: usize,
}

impl<S: Fn(OrbitPoint) -> Result<OrbitPoint>> OrbitRun<'_, S> {
    fn run(&self, start: OrbitPoint, target: Option<usize>) -> OrbitRecord {
        let mut rec = OrbitRecord {
            start: start.value(),
            steps: Vec::new(),
            verdict: Verdict::BoundedHorizon,
            onset: None,
            tail_exact: false,
            hit: None,
            note: String::new(),
        };
        let escape = Tower::from_value(self.escape);
        let mut p = start;
        let mut logscale = false;
        let mut last_disc = None;
        let mut tail_ok = 0usize;
        while rec.steps.len() < self.horizon {
            let next = if rec.onset.is_some() && !p.is_real() {
                // modulus recurrence past the escape radius
                (self.step)(OrbitPoint::from_tower(p.modulus()))
            } else {
                (self.step)(p)
            };
            let next = match next {
                Ok(q) => q,
                Err(e) => {
                    rec.verdict = Verdict::Overflow;
                    rec.note = e.to_string();
                    return rec;
                }
            };
            logscale |= next.modulus() > Tower::from_value(LOG_SCALE);
            rec.steps.push(OrbitStep::new(next, logscale));
            let k = rec.steps.len();
            if Some(k) == target {
                if let Some(z) = next.plain() {
                    rec.hit = Some((k, (z - 1.0).norm()));
                }
            }
            if let Some(z) = next.plain() {
                if let Region::Disc(n) = (self.region)(z) {
                    last_disc = Some(n);
                }
            }
            match rec.onset {
                None if next.modulus() > escape => {
                    rec.onset = Some(k);
                    rec.tail_exact = next.is_real();
                }
                Some(_) => {
                    if next.modulus() > p.modulus() {
                        tail_ok += 1;
                        if tail_ok >= self.tail {
                            rec.verdict = Verdict::Escaping;
                            return rec;
                        }
                    } else {
                        tail_ok = 0;
                        rec.onset = None;
                    }
                }
                None => {}
            }
            p = next;
        }
        if let Some(n) = last_disc {
            if rec.onset.is_none() {
                rec.verdict = Verdict::ReturnedToDisc(n);
            }
        }
        rec
    }
}

/// Orbit of `x0 > 0` under `g` along `ℝ⁺`.
pub fn real_orbit(x0: f64, horizon: usize, model: &Model) -> Result<OrbitRecord> {
    if !(x0 > 0.0) {
        return Err(Error::domain(format!("real orbit needs x0 > 0, got {x0}")));
    }
    let region = |z: Complex64| model.eval_region(z);
    let run = OrbitRun {
        step: |p: OrbitPoint| {
            let q = model_step(model, p)?;
            match q {
                OrbitPoint::Plain(z) if !(z.re > 0.0) || z.im != 0.0 || z.re.is_nan() => {
                    Err(Error::Model(format!("real orbit produced {z}")))
                }
                q => Ok(q),
            }
        },
        region: &region,
        escape: 1e6,
        tail: 10,
        horizon,
    };
    Ok(run.run(OrbitPoint::real(x0), None))
}

/// Forward orbit of a singular value under `f`, with an optional proximity target
/// `|fˢ(v) − 1|` at step `s`.
pub fn singular_orbit(v: Complex64, horizon: usize, ctx: &Context, target: Option<usize>) -> OrbitRecord {
    let region = |z: Complex64| ctx.model.eval_region(z);
    let run = OrbitRun {
        step: |p| ctx.step(p),
        region: &region,
        escape: ctx.opts.escape_radius,
        tail: ctx.opts.tail,
        horizon,
    };
    run.run(OrbitPoint::Plain(v), target)
}

/// Smallest `λ` in `lambdas` (scanned in the given order) for which the real orbit
/// of `x0` escapes within `horizon`.
pub fn lambda_threshold(base: &ModelParams, lambdas: &[f64], x0: f64, horizon: usize) -> Result<Option<f64>> {
    for &lam in lambdas {
        let mut p = base.clone();
        p.lambda = lam;
        let model = Model::new(p)?;
        if real_orbit(x0, horizon, &model)?.verdict == Verdict::Escaping {
            return Ok(Some(lam));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::maps::DiscParams;

    fn bare() -> Model {
        Model::new(ModelParams::bare(1.6, 30)).unwrap()
    }

    struct Identity(Model);

    impl Dynamics for Identity {
        fn phi(&self, z: Complex64) -> Complex64 {
            z
        }
        fn phi_inv(&self, z: Complex64) -> Result<Complex64> {
            Ok(z)
        }
        fn g(&self, z: Complex64) -> Complex64 {
            self.0.g(z)
        }
        fn g_inv(&self, y: Complex64, anchor: f64) -> Result<Complex64> {
            inverse_branch_g(y, anchor, &self.0, 1e-13)
        }
    }

    fn identity_context() -> Context {
        let spec = GridSpec::new(c(0.0, 0.0), 6.0 * PI, 64).unwrap();
        Context::new(bare(), QuasiconformalMap::identity(spec), DynamicsOptions::default()).unwrap()
    }

    #[test]
    fn tower_arithmetic() {
        let t = Tower::from_value(1e150);
        assert_eq!(t.height(), 1);
        assert!((t.top() - 1e150f64.ln()).abs() < 1e-12);
        assert!((t.value() / 1e150 - 1.0).abs() < 1e-12);
        assert_eq!(Tower::new(1, 10.0), Tower::from_value(10f64.exp()));
        let big = Tower::new(3, 500.0);
        assert!(big > Tower::new(2, 1e99));
        assert!(Tower::new(2, 300.0) < Tower::new(2, 301.0));
        // E(t) + c at height one
        let x = Tower::new(1, 240.0);
        let y = x.add(5.0);
        assert!((y.top() - (240.0 + (5.0 * (-240f64).exp()).ln_1p())).abs() < 1e-15);
        assert_eq!(Tower::new(4, 1e50).add(1.0), Tower::new(4, 1e50));
    }

    #[test]
    fn tower_step_matches_direct_logs() {
        let g = bare();
        // for x = 500, ln ln g(x) = ln(λ sinh 500)
        let p = g_real_point(&g, 500.0);
        let t = match p {
            OrbitPoint::Huge(t) => t,
            _ => panic!(),
        };
        let direct = (1.6 * 500f64.sinh()).ln();
        assert!((t.ln().ln_value() - direct).abs() < 1e-12);
        // towers grow by two heights per step of g
        let next = g_tower_step(&g, Tower::new(1, 1000.0));
        assert_eq!(next, OrbitPoint::Huge(Tower::new(3, 1000.0 + (0.8f64.ln()) * (-1000f64).exp())));
    }

    #[test]
    fn real_orbit_of_one_half_escapes() {
        let g = bare();
        let rec = real_orbit(0.5, 30, &g).unwrap();
        assert_eq!(rec.verdict, Verdict::Escaping);
        let vals: Vec<Tower> = rec.steps.iter().map(|s| s.point.modulus()).collect();
        for w in vals.windows(2) {
            assert!(w[1] > w[0]);
        }
        let x1 = rec.steps[0].point.value().re;
        assert!((x1 - (1.6 * 0.5f64.sinh()).cosh()).abs() < 1e-14);
        // logscale stays set once reached
        let first = rec.steps.iter().position(|s| s.logscale).unwrap();
        assert!(rec.steps[first..].iter().all(|s| s.logscale));
        assert!(real_orbit(-1.0, 5, &g).is_err());
    }

    #[test]
    fn g_is_increasing_on_the_real_axis() {
        let g = bare();
        let mut last = g.g(c(1.0 / 32.0, 0.0)).re;
        for k in 1..400 {
            let x = 1.0 / 32.0 + k as f64 * 0.015;
            let v = g.g(c(x, 0.0)).re;
            assert!(v > last);
            last = v;
            let h = 1e-6;
            let fd = (g.g(c(x + h, 0.0)).re - g.g(c(x - h, 0.0)).re) / (2.0 * h);
            assert!((fd - g_real_derivative(&g, x)).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn lambda_scan() {
        let base = ModelParams::bare(1.0, 30);
        let lams: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let found = lambda_threshold(&base, &lams, 0.5, 60).unwrap().unwrap();
        // brute force: the last non-escaping λ on the grid lies just below
        let below = Model::new(ModelParams { lambda: found - 0.05, ..base.clone() }).unwrap();
        assert_ne!(real_orbit(0.5, 60, &below).unwrap().verdict, Verdict::Escaping);
        assert!(found > 0.3 && found < 1.6, "{found}");
    }

    #[test]
    fn p_tilde_rules() {
        assert_eq!(nearest_disc(1.0), 1);
        assert_eq!(nearest_disc(0.2), 1);
        assert_eq!(nearest_disc(2.5 * PI), 2);
        assert_eq!(nearest_disc(3.02 * PI), 3);
        let g = bare();
        assert_eq!(p_tilde(1, &g).unwrap(), PIndex::Index(1));
        assert_eq!(p_tilde(2, &g).unwrap(), PIndex::Index(3));
        assert!(matches!(p_tilde(3, &g).unwrap(), PIndex::Beyond { .. }));
        // brute-force argmin over candidates, and invariance under scaling the distances
        for k in 0..200 {
            let x = 0.1 + 0.37 * k as f64;
            let brute = (1..200)
                .map(|j| (j, ((j as f64 * PI - x).powi(2) + PI * PI).sqrt()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            let scaled = (1..200)
                .map(|j| (j, 7.5 * ((j as f64 * PI - x).powi(2) + PI * PI).sqrt()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(nearest_disc(x), brute);
            assert_eq!(brute, scaled);
        }
    }

    #[test]
    fn inverse_branches() {
        let g = bare();
        let x = 1.2;
        let y = g.g(c(x, 0.0));
        assert!((inverse_branch_g(y, x, &g, 1e-13).unwrap().re - x).abs() < 1e-12);
        // exponential zone closed form
        let x = 3.0;
        let y = g.g(c(x, 0.05)) ;
        let closed = (y.ln() / 1.6).asinh();
        let got = inverse_branch_g(y, x, &g, 1e-13).unwrap();
        assert!((got - closed).norm() < 1e-10);
        assert!((g.g(got) - y).norm() < 1e-12 * y.norm());
        // complex targets off the axis
        for &(anchor, target) in &[(1.37, c(9.4, 3.1)), (0.5, c(1.4, 0.2)), (0.5, c(0.9, 2.5))] {
            let z = inverse_branch_g(target, anchor, &g, 1e-13).unwrap();
            assert!((g.g(z) - target).norm() < 1e-12 * target.norm());
            assert!(in_half_strip(z));
        }
        assert!(matches!(g_real_inverse(&g, 0.5), Err(Error::Branch(_))));
    }

    #[test]
    fn identity_phi_gives_f_equal_g() {
        let ctx = identity_context();
        for &z in &[c(0.3, 0.2), c(2.0, -0.4), c(PI + 0.2, PI - 0.1), c(-1.0, 0.3)] {
            assert_eq!(ctx.f_eval(z).unwrap(), ctx.model().g(z));
        }
        let z = c(3.5, 0.0);
        let expected = (1.6 * 3.5f64.sinh()).exp();
        assert!((ctx.f_eval(z).unwrap().re / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pull_back_chain_is_consistent() {
        let ctx = identity_context();
        assert_eq!(ctx.pull_back_f(c(0.7, 0.1), 0).unwrap(), c(0.7, 0.1));
        let target = c(3.0 * PI, PI) + Complex64::from_polar(0.7, 0.4);
        let chain = ctx.pull_back_chain(target, 2).unwrap();
        assert!(chain.consistency(&ctx).unwrap() < 1e-10);
        let end = chain.images[2];
        assert!((end - 0.5).norm() < 0.25, "{end}");
        let anchors: Vec<f64> = ctx.anchors()[..2].iter().map(|p| p.value().re).collect();
        assert_eq!(pull_back(&Identity(bare()), &anchors, target, 2).unwrap(), end);
    }

    #[test]
    fn derivative_sandwich_for_identity_phi() {
        let ctx = identity_context();
        for n in 1..=3 {
            let b = ctx.derivative_bounds(n).unwrap();
            let fd = ctx.log_derivative_fd(n).unwrap();
            assert!(b.ln_lower <= b.ln_upper);
            assert!(b.contains_ln(fd), "n={n}: {} <= {fd} <= {}", b.ln_lower, b.ln_upper);
        }
        // the exact derivative of g⁻ⁿ along the orbit
        let g = ctx.model();
        let x: Vec<f64> = ctx.anchors()[..3].iter().map(|p| p.value().re).collect();
        let exact: f64 = x[..2].iter().map(|&t| -g_real_derivative(g, t).ln()).sum();
        assert!((ctx.log_derivative_fd(2).unwrap() - exact).abs() < 1e-6);
        let b0 = ctx.derivative_bounds(0).unwrap();
        assert!((b0.lower() - 1.0).abs() < 1e-15);
        assert!((b0.upper() - 1.0 / (1.6 - EPS0 * 1.6 * 1.6)).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_decays_for_large_lambda() {
        let lam = 40.0f64;
        let g = Model::new(ModelParams::bare(lam, 30)).unwrap();
        let anchors = vec![OrbitPoint::real(3.0); 30];
        let bs: Vec<DerivativeBounds> = (1..30).map(|n| derivative_bounds(&g, &anchors, n).unwrap()).collect();
        assert!(bs.windows(2).all(|w| w[1].ln_upper < w[0].ln_upper));
        let b = (25.0f64 / 64.0) * (0.25 + 2.0 * EPS0) / ((9.0 / 64.0) * 0.25);
        let direct = (b / lam).powi(5) / (lam - EPS0 / lam.powi(3));
        assert!((bs[4].upper() / direct - 1.0).abs() < 1e-12);
        assert!(bs.iter().all(|b| b.ln_lower < b.ln_upper));
    }

    struct Translate {
        by: Complex64,
    }

    impl Dynamics for Translate {
        fn phi(&self, z: Complex64) -> Complex64 {
            z
        }
        fn phi_inv(&self, z: Complex64) -> Result<Complex64> {
            Ok(z)
        }
        fn g(&self, z: Complex64) -> Complex64 {
            z + self.by
        }
        fn g_inv(&self, y: Complex64, _: f64) -> Result<Complex64> {
            Ok(y - self.by)
        }
    }

    struct Contract {
        to: Complex64,
    }

    impl Dynamics for Contract {
        fn phi(&self, z: Complex64) -> Complex64 {
            z
        }
        fn phi_inv(&self, z: Complex64) -> Result<Complex64> {
            Ok(z)
        }
        fn g(&self, z: Complex64) -> Complex64 {
            self.to + (z - self.to) * 0.05
        }
        fn g_inv(&self, y: Complex64, _: f64) -> Result<Complex64> {
            Ok(self.to + (y - self.to) / 0.05)
        }
    }

    #[test]
    fn inclusion_controls() {
        let hop = Hop::for_level(1, 1, 3, 2).unwrap();
        let rep = check_inclusion(&Contract { to: hop.to }, &hop, 64);
        assert_eq!(rep.verdict, InclusionVerdict::Inside);
        assert!(rep.margin > 0.0);
        let shift = Translate { by: hop.to - hop.from };
        let one = Hop { iterations: 1, ..hop };
        assert_eq!(check_inclusion(&shift, &one, 64).verdict, InclusionVerdict::Inside);
        let reversed = Hop { from_radius: one.to_radius, to_radius: one.from_radius, ..one };
        let rep = check_inclusion(&shift, &reversed, 64);
        assert_eq!(rep.verdict, InclusionVerdict::Outside);
        assert!(rep.margin < 0.0);
    }

    #[test]
    fn singular_orbits_of_real_values_escape() {
        let ctx = identity_context();
        for v in [0.0, 1.0, -1.0] {
            let rec = singular_orbit(c(v, 0.0), 40, &ctx, None);
            assert_eq!(rec.verdict, Verdict::Escaping, "{v}: {}", rec.note);
            assert!(rec.tail_exact);
        }
        let mut out = Vec::new();
        singular_orbit(c(1.0, 0.0), 40, &ctx, None).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("step,re,im,logscale,logvalue\n"));
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert!(rows.len() >= 3);
        assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap().is_finite()));
    }

    #[test]
    fn real_axis_stays_real() {
        let mut p = ModelParams::bare(1.6, 30);
        p.discs.insert(
            1,
            DiscParams { index: 1, m: 9, delta: 0.04, big_r: 1.45, r: vec![c(1.0, 0.0); 8], w: c(0.5, 0.0) },
        );
        p.n0 = 2;
        let ctx = Context::new(
            Model::new(p).unwrap(),
            QuasiconformalMap::identity(GridSpec::new(c(0.0, 0.0), 6.0 * PI, 64).unwrap()),
            DynamicsOptions::default(),
        )
        .unwrap();
        for k in 0..50 {
            let x = 0.05 + 0.04 * k as f64;
            assert!(ctx.f_eval(c(x, 0.0)).unwrap().im.abs() < 1e-9);
        }
    }
}
