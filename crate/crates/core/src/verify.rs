//! Inequality checkers and the estimate battery.

use crate::dilatation::{affine_dilatation, affine_dilatation_bound, wirtinger, BeltramiField};
use crate::dynamics::{Context, Dynamics};
use crate::eeps::{e_eps_convexity_probe, e_eps_membership, epsilon_for};
use crate::error::{Error, Result};
use crate::maps::{disc_center, roots_of_minus_one, ModelParams, Piece};
use crate::par::Exec;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

/// Outcome class of a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inapplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inapplicable => "INAPPLICABLE",
        }
    }
}

/// One named check with its worst margin (non-negative means passed).
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub margin: f64,
    pub witness: String,
    pub samples: usize,
}

impl CheckReport {
    pub fn from_margin(name: impl Into<String>, margin: f64, witness: impl Into<String>, samples: usize) -> Self {
        CheckReport {
            name: name.into(),
            status: if margin >= 0.0 { Status::Pass } else { Status::Fail },
            margin,
            witness: witness.into(),
            samples,
        }
    }

    pub fn inapplicable(name: impl Into<String>, reason: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            status: Status::Inapplicable,
            margin: f64::NAN,
            witness: reason.into(),
            samples: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Sampling controls shared by [`koebe_check`] and [`grunsky_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionOptions {
    pub samples: usize,
    pub seed: u64,
    /// Added to every margin as a finite-difference allowance.
    pub slack: f64,
    /// Central-difference step relative to `r`.
    pub fd_step: f64,
    /// Points on the circle used for the winding-number injectivity test.
    pub circle: usize,
    /// Sub-steps for unwrapping arguments along each radius.
    pub radial_steps: usize,
}

impl Default for DistortionOptions {
    fn default() -> Self {
        DistortionOptions { samples: 1000, seed: 0, slack: 1e-6, fd_step: 1e-4, circle: 720, radial_steps: 8 }
    }
}

/// Sampled data of `F` on `D(a, 0.9r)`.
struct Sampled {
    a: Complex64,
    r: f64,
    fa: Complex64,
    dfa: Complex64,
    points: Vec<Complex64>,
}

fn derivative<F: Fn(Complex64) -> Option<Complex64>>(f: &F, z: Complex64, h: f64) -> Option<Complex64> {
    let d = (f(z + h)? - f(z - h)?) / (2.0 * h);
    d.is_finite().then_some(d)
}

/// Winding number of the closed sampled curve around `p`.
fn winding(curve: &[Complex64], p: Complex64) -> i64 {
    let mut total = 0.0;
    for k in 0..curve.len() {
        let a = curve[k] - p;
        let b = curve[(k + 1) % curve.len()] - p;
        total += (b / a).arg();
    }
    (total / (2.0 * PI)).round() as i64
}

/// Draws the samples and checks numerical injectivity: every sampled image is wound
/// around exactly once by the image of the circle of radius `0.95r`.
fn sample_map<F>(f: &F, a: Complex64, r: f64, opts: &DistortionOptions) -> std::result::Result<Sampled, String>
where
    F: Fn(Complex64) -> Option<Complex64>,
{
    if !(r > 0.0) {
        return Err(format!("radius {r} is not positive"));
    }
    let h = opts.fd_step * r;
    let fa = f(a).ok_or("F undefined at the centre")?;
    let dfa = derivative(f, a, h).ok_or("F' undefined at the centre")?;
    if dfa.norm() == 0.0 {
        return Err("F'(a) = 0".into());
    }
    let mut curve = Vec::with_capacity(opts.circle);
    for k in 0..opts.circle {
        let z = a + Complex64::from_polar(0.95 * r, 2.0 * PI * k as f64 / opts.circle as f64);
        curve.push(f(z).ok_or_else(|| format!("F undefined at {z}"))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let rho = 0.9 * r * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        points.push(a + Complex64::from_polar(rho, theta));
    }
    for &z in points.iter().chain(std::iter::once(&a)) {
        let w = f(z).ok_or_else(|| format!("F undefined at {z}"))?;
        let n = winding(&curve, w);
        if n != 1 {
            return Err(format!("not injective: winding {n} around F({z})"));
        }
    }
    Ok(Sampled { a, r, fa, dfa, points })
}

fn witness(z: Complex64) -> String {
    format!("z={:?},{:?}", z.re, z.im)
}

fn finish(name: &str, worst: f64, at: Option<Complex64>, samples: usize, slack: f64) -> CheckReport {
    match at {
        Some(z) => CheckReport::from_margin(name, worst + slack, witness(z), samples),
        None => CheckReport::inapplicable(name, "no samples"),
    }
}

/// Distortion bounds for univalent `F` on `D(a, r)`: for `z ∈ D(a, 0.9r)`, `ρ = |z−a|/r`,
/// `r²/(r+|z−a|)² ≤ |(F(z)−F(a))/(F'(a)(z−a))| ≤ r²/(r−|z−a|)²` and
/// `(1−ρ)/(1+ρ)³ ≤ |F'(z)/F'(a)| ≤ (1+ρ)/(1−ρ)³`.
pub fn koebe_check<F>(name: &str, f: F, a: Complex64, r: f64, opts: &DistortionOptions) -> CheckReport
where
    F: Fn(Complex64) -> Option<Complex64>,
{
    let s = match sample_map(&f, a, r, opts) {
        Ok(s) => s,
        Err(why) => return CheckReport::inapplicable(name, why),
    };
    let h = opts.fd_step * s.r;
    let mut worst = f64::INFINITY;
    let mut at = None;
    for &z in &s.points {
        let d = (z - s.a).norm();
        if d == 0.0 {
            continue;
        }
        let rho = d / s.r;
        let (Some(fz), Some(dfz)) = (f(z), derivative(&f, z, h)) else {
            return CheckReport::inapplicable(name, format!("F undefined near {z}"));
        };
        let q = ((fz - s.fa) / (s.dfa * (z - s.a))).norm();
        let p = (dfz / s.dfa).norm();
        let margins = [
            q - 1.0 / ((1.0 + rho) * (1.0 + rho)),
            1.0 / ((1.0 - rho) * (1.0 - rho)) - q,
            p - (1.0 - rho) / (1.0 + rho).powi(3),
            (1.0 + rho) / (1.0 - rho).powi(3) - p,
        ];
        let m = margins.iter().copied().fold(f64::INFINITY, f64::min);
        if m < worst {
            worst = m;
            at = Some(z);
        }
    }
    finish(name, worst, at, s.points.len(), opts.slack)
}

/// Argument bounds for univalent `F` on `D(a, r)`:
/// `|arg((F(z)−F(a))/(F'(a)(z−a)))| ≤ log((r+|z−a|)/(r−|z−a|))` and
/// `|arg(F'(z)/F'(a))| ≤ 2 log((r+|z−a|)/(r−|z−a|))`, with arguments continued from `a` along the radius.
pub fn grunsky_check<F>(name: &str, f: F, a: Complex64, r: f64, opts: &DistortionOptions) -> CheckReport
where
    F: Fn(Complex64) -> Option<Complex64>,
{
    let s = match sample_map(&f, a, r, opts) {
        Ok(s) => s,
        Err(why) => return CheckReport::inapplicable(name, why),
    };
    let h = opts.fd_step * s.r;
    let steps = opts.radial_steps.max(1);
    let mut worst = f64::INFINITY;
    let mut at = None;
    for &z in &s.points {
        let d = (z - s.a).norm();
        if d == 0.0 {
            continue;
        }
        let (mut arg_q, mut arg_p) = (0.0f64, 0.0f64);
        let (mut last_q, mut last_p) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        for k in 1..=steps {
            let zt = s.a + (z - s.a) * (k as f64 / steps as f64);
            let (Some(fz), Some(dfz)) = (f(zt), derivative(&f, zt, h)) else {
                return CheckReport::inapplicable(name, format!("F undefined near {zt}"));
            };
            let q = (fz - s.fa) / (s.dfa * (zt - s.a));
            let p = dfz / s.dfa;
            arg_q += (q / last_q).arg();
            arg_p += (p / last_p).arg();
            last_q = q;
            last_p = p;
        }
        let bound = ((s.r + d) / (s.r - d)).ln();
        let m = (bound - arg_q.abs()).min(2.0 * bound - arg_p.abs());
        if m < worst {
            worst = m;
            at = Some(z);
        }
    }
    finish(name, worst, at, s.points.len(), opts.slack)
}

/// Writes one report per line: name, status, margin, witness, samples (tab separated).
pub fn write_reports<W: Write>(mut w: W, reports: &[CheckReport]) -> Result<()> {
    for r in reports {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        writeln!(w, "{}\t{}\t{:?}\t{}\t{}", clean(&r.name), r.status.as_str(), r.margin, clean(&r.witness), r.samples)?;
    }
    Ok(())
}

pub fn read_reports<R: BufRead>(r: R) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("report line {}: {line:?}", k + 1));
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        let status = match parts[1] {
            "PASS" => Status::Pass,
            "FAIL" => Status::Fail,
            "INAPPLICABLE" => Status::Inapplicable,
            _ => return Err(bad()),
        };
        out.push(CheckReport {
            name: parts[0].to_string(),
            status,
            margin: parts[2].parse().map_err(|_| bad())?,
            witness: parts[3].to_string(),
            samples: parts[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryOptions {
    /// Points on `∂𝔻` for the boundary estimates.
    pub boundary_samples: usize,
    /// Support radius floor `s₀(n)` used by the first estimate, the same for every disc.
    pub s0: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions { boundary_samples: 64, s0: 0.5 }
    }
}

/// Smallest `|z − z_n|` over support nodes of `μ` inside the closed disc `D_n`.
fn disc_support_radius(field: &BeltramiField, n: usize) -> Result<f64> {
    let zc = disc_center(n)?;
    let spec = field.spec();
    Ok(field
        .support()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(idx, _)| (spec.node_at(idx) - zc).norm())
        .filter(|&d| d <= 1.0)
        .fold(f64::INFINITY, f64::min))
}

fn eq2_log_value(m: u32, ln_d: f64) -> f64 {
    let m = m as f64;
    m.ln() / m + (m - 1.0) / m * ((m / (m - 1.0)).ln() + ln_d)
}

fn log_tube_margin(v: Complex64, eps: f64) -> f64 {
    if v.norm() == 0.0 || !v.is_finite() {
        return f64::NEG_INFINITY;
    }
    eps - v.ln().norm()
}

/// What the battery needs from a straightened model.
pub trait BatteryContext {
    fn params(&self) -> &ModelParams;
    /// `f⁻ⁿ(φ(z))` along the real branch chain.
    fn pulled(&self, z: Complex64, n: usize) -> Result<Complex64>;
    /// `ln |(f⁻ⁿ)'(gⁿ(1/2))|`.
    fn ln_derivative(&self, n: usize) -> Result<f64>;
    /// `ln` of the lower derivative bound at `n`.
    fn ln_lower_bound(&self, n: usize) -> Result<f64>;
}

impl BatteryContext for Context {
    fn params(&self) -> &ModelParams {
        self.model().params()
    }

    fn pulled(&self, z: Complex64, n: usize) -> Result<Complex64> {
        self.pull_back_f(self.phi(z), n)
    }

    fn ln_derivative(&self, n: usize) -> Result<f64> {
        self.log_derivative_fd(n)
    }

    fn ln_lower_bound(&self, n: usize) -> Result<f64> {
        Ok(self.derivative_bounds(n)?.ln_lower)
    }
}

/// The estimates `(eq0)`–`(eq4)` at every active block.
///
/// `nseq` must hold `n_1..n_{L+1}`; estimates that need `p_{L+1}` are inapplicable,
/// and `(eq0)` is skipped without a field.
pub fn estimate_battery<B: BatteryContext>(ctx: &B, field: Option<&BeltramiField>, opts: &BatteryOptions) -> Vec<CheckReport> {
    let params = ctx.params().clone();
    let level = params.level;
    let mut out = Vec::new();
    let nseq = &params.nseq;
    let pseq = &params.pseq;
    let disc_count = pseq.len().min(level);
    let m_of = |k: usize| params.m_of(pseq[k - 1]);
    let tube = |k: usize| epsilon_for(params.disc(pseq[k - 1]).big_r, params.n0);

    for k in (1..=disc_count).filter(|_| field.is_some()) {
        let field = field.expect("filtered");
        let name = format!("eq0 disc {}", pseq[k - 1]);
        match disc_support_radius(field, pseq[k - 1]) {
            Ok(s) if s.is_infinite() => out.push(CheckReport::from_margin(name, 1.0 - opts.s0, "empty support", field.spec().len())),
            Ok(s) => out.push(CheckReport::from_margin(name, s - opts.s0, format!("support radius {s:?}"), field.spec().len())),
            Err(e) => out.push(CheckReport::inapplicable(name, e.to_string())),
        }
    }

    let ln_d = |k: usize| -> Result<f64> {
        let n = *nseq.get(k - 1).ok_or_else(|| Error::param(format!("n_{k} not configured")))?;
        ctx.ln_derivative(n)
    };
    let pulled = |k: usize, z: Complex64| -> Result<Complex64> { ctx.pulled(z, nseq[k - 1]) };
    let boundary: Vec<Complex64> = (0..opts.boundary_samples)
        .map(|s| Complex64::from_polar(1.0, 2.0 * PI * s as f64 / opts.boundary_samples as f64))
        .collect();

    // (eq1), (eq1'), (eq3) for 2 ≤ k ≤ L
    for k in 2..=disc_count {
        let zc = match disc_center(pseq[k - 1]) {
            Ok(z) => z,
            Err(e) => {
                out.push(CheckReport::inapplicable(format!("eq1 k={k}"), e.to_string()));
                continue;
            }
        };
        let eps = tube(k - 1);
        let eval = || -> Result<(f64, Complex64, f64, Complex64, f64)> {
            let d = ln_d(k)?.exp();
            let base = pulled(k, zc)?;
            let mut m1 = (f64::INFINITY, Complex64::new(0.0, 0.0));
            for &xi in &boundary {
                let v = (pulled(k, zc + xi)? - base) / (xi * d);
                let m = log_tube_margin(v, eps);
                if m < m1.0 {
                    m1 = (m, xi);
                }
            }
            let roots = roots_of_minus_one(m_of(k - 1) as usize - 1);
            let images: Vec<Complex64> = roots.iter().map(|&x| pulled(k, zc + x)).collect::<Result<_>>()?;
            let mut m2 = (f64::INFINITY, Complex64::new(0.0, 0.0));
            for j in 0..roots.len() {
                let jn = (j + 1) % roots.len();
                let v = (images[jn] - images[j]) / (d * (roots[jn] - roots[j]));
                let m = log_tube_margin(v, eps);
                if m < m2.0 {
                    m2 = (m, roots[j]);
                }
            }
            Ok((m1.0, m1.1, m2.0, m2.1, 0.75 - base.norm()))
        };
        match eval() {
            Ok((a, xa, b, xb, c3)) => {
                out.push(CheckReport::from_margin(format!("eq1 k={k}"), a, witness(xa), boundary.len()));
                out.push(CheckReport::from_margin(format!("eq1' k={k}"), b, witness(xb), m_of(k - 1) as usize - 1));
                out.push(CheckReport::from_margin(format!("eq3 k={k}"), c3, "|f^-n(phi(z_p))| margin", 1));
            }
            Err(e) => {
                for nm in ["eq1", "eq1'", "eq3"] {
                    out.push(CheckReport::inapplicable(format!("{nm} k={k}"), e.to_string()));
                }
            }
        }
    }

    // (eq2), (eq4) for 1 ≤ k ≤ L
    for k in 1..=disc_count {
        let m = m_of(k);
        let name2 = format!("eq2 k={k}");
        let value = ln_d(k + 1).map(|l| eq2_log_value(m, l));
        let lower = nseq
            .get(k)
            .ok_or_else(|| Error::param(format!("n_{} not configured", k + 1)))
            .and_then(|&n| ctx.ln_lower_bound(n));
        match (value, lower) {
            (Ok(v), Ok(lo)) => {
                let margin = (v - lo).min((1.0f64 / 16.0).ln() - v);
                out.push(CheckReport::from_margin(name2, margin, format!("ln value {v:?}, ln C {lo:?}"), 1));
            }
            (Err(e), _) | (_, Err(e)) => out.push(CheckReport::inapplicable(name2, e.to_string())),
        }

        let name4 = format!("eq4 k={k}");
        let Some(p_next) = pseq.get(k).copied() else {
            out.push(CheckReport::inapplicable(name4, format!("p_{} is not representable", k + 1)));
            continue;
        };
        let eval4 = || -> Result<(f64, Complex64)> {
            let kf = k as f64;
            let v = eq2_log_value(m, ln_d(k + 1)?).exp();
            let lhs = (kf / (kf + 1.0)).powi(m as i32) + kf / (kf + 1.0) * v;
            let zc = disc_center(p_next)?;
            let base = pulled(k + 1, zc)?;
            let mut inf = (f64::INFINITY, Complex64::new(0.0, 0.0));
            for &xi in &boundary {
                let d = (pulled(k + 1, zc + xi * ((kf + 1.0) / (kf + 2.0)))? - base).norm();
                if d < inf.0 {
                    inf = (d, xi);
                }
            }
            Ok((inf.0 - lhs, inf.1))
        };
        match eval4() {
            Ok((margin, xi)) => out.push(CheckReport::from_margin(name4, margin, witness(xi), boundary.len())),
            Err(e) => out.push(CheckReport::inapplicable(name4, e.to_string())),
        }
    }
    out
}

/// Measured `|μ_f|` for `f = g∘φ⁻¹` over grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct StraighteningReport {
    pub max: f64,
    /// Cell centre (in the `z`-plane) where `max` is attained.
    pub at: Option<Complex64>,
    pub evaluated: usize,
    /// Cells whose centre lies in a modeled piece of `g`.
    pub modeled: usize,
    /// Modeled cells skipped because `|g_z| < 1e-10`, as on the flat `z^m` interiors.
    pub flat: usize,
    /// Modeled cells skipped because `g` leaves `f64` on the stencil.
    pub overflow: usize,
}

impl StraighteningReport {
    pub fn report(&self, name: &str, bound: f64) -> CheckReport {
        match self.at {
            Some(z) => CheckReport::from_margin(
                name,
                bound - self.max,
                format!(
                    "{} evaluated of {} modeled ({} flat, {} overflow), {}",
                    self.evaluated,
                    self.modeled,
                    self.flat,
                    self.overflow,
                    witness(z)
                ),
                self.evaluated,
            ),
            None => CheckReport::inapplicable(name, "no cell away from seams"),
        }
    }
}

/// `|μ_f(φ(z)))| = |μ_g − μ_φ| / |1 − conj(μ_φ) μ_g|` at the centres of grid cells whose
/// nodes, padded by `guard` cells on each side, all lie in one modeled piece of `g`.
///
/// `μ_φ` is the exact dilatation of the bilinear interpolant at the cell centre,
/// `μ_g` a central difference of step `h`.
pub fn straightening_residual(ctx: &Context, guard: usize, h: f64, exec: Exec) -> StraighteningReport {
    let spec = *ctx.map().spec();
    let model = ctx.model();
    let n = spec.n;
    let pieces = exec.map(n * n, |idx| model.piece(spec.node_at(idx)));
    let modeled = |p: &Piece| !matches!(p, Piece::Collar(_) | Piece::Residual);
    let one = Complex64::new(1.0, 0.0);
    // per row: (max, at, evaluated, modeled, flat, overflow)
    let rows = exec.map(n - 1, |i| {
        let mut acc = (f64::NEG_INFINITY, None, 0usize, 0usize, 0usize, 0usize);
        for j in 0..n - 1 {
            let p = pieces[i * n + j];
            let z = spec.node(i, j) + Complex64::new(0.5, 0.5) * spec.h();
            if !modeled(&p) || model.piece(z) != p {
                continue;
            }
            acc.3 += 1;
            if i < guard || j < guard || i + 1 + guard >= n || j + 1 + guard >= n {
                continue;
            }
            let uniform = (i - guard..=i + 1 + guard).all(|a| (j - guard..=j + 1 + guard).all(|b| pieces[a * n + b] == p));
            if !uniform {
                continue;
            }
            let Ok((gz, gzb)) = wirtinger(|q| Some(model.g(q)), z, h) else {
                acc.5 += 1;
                continue;
            };
            if !(gz.norm() > 1e-10) {
                acc.4 += 1;
                continue;
            }
            let mu_g = gzb / gz;
            let jm = ctx.map().jacobian(z);
            let pz = Complex64::new(0.5 * (jm[0][0] + jm[1][1]), 0.5 * (jm[1][0] - jm[0][1]));
            let pzb = Complex64::new(0.5 * (jm[0][0] - jm[1][1]), 0.5 * (jm[1][0] + jm[0][1]));
            let mu_phi = pzb / pz;
            let r = ((mu_g - mu_phi) / (one - mu_phi.conj() * mu_g)).norm();
            acc.2 += 1;
            if r > acc.0 {
                acc.0 = r;
                acc.1 = Some(z);
            }
        }
        acc
    });
    let mut out = StraighteningReport { max: f64::NEG_INFINITY, at: None, evaluated: 0, modeled: 0, flat: 0, overflow: 0 };
    for (m, at, e, md, f, o) in rows {
        if m > out.max {
            out.max = m;
            out.at = at;
        }
        out.evaluated += e;
        out.modeled += md;
        out.flat += f;
        out.overflow += o;
    }
    out
}

/// Koebe and argument checks for `f⁻ⁿ` on `D(z_{p̃_n}, 1 + π/2)`.
pub fn branch_distortion_checks(ctx: &Context, n: usize, opts: &DistortionOptions) -> Vec<CheckReport> {
    let name_k = format!("koebe f^-{n}");
    let name_g = format!("grunsky f^-{n}");
    let centre = match ctx.p_tilde(n).map(|p| p.index()) {
        Ok(Some(p)) => disc_center(p),
        Ok(None) => Err(Error::Evaluation(format!("p~_{n} is not representable"))),
        Err(e) => Err(e),
    };
    let a = match centre {
        Ok(a) => a,
        Err(e) => return vec![CheckReport::inapplicable(name_k, e.to_string()), CheckReport::inapplicable(name_g, e.to_string())],
    };
    let f = |z: Complex64| ctx.pull_back_f(z, n).ok();
    let r = 1.0 + PI / 2.0;
    vec![koebe_check(&name_k, f, a, r, opts), grunsky_check(&name_g, f, a, r, opts)]
}

/// `E_ε` membership of each active block's `r` vector.
pub fn r_vector_checks(ctx: &Context) -> Vec<CheckReport> {
    let params = ctx.model().params();
    let mut out = Vec::new();
    for (&n, d) in &params.discs {
        let eps = epsilon_for(d.big_r, params.n0);
        let name = format!("E_eps disc {n}");
        match e_eps_membership(&d.r, eps) {
            Ok(m) => out.push(CheckReport::from_margin(name, m.margin, format!("eps {eps:?}"), d.r.len())),
            Err(e) => out.push(CheckReport::inapplicable(name, e.to_string())),
        }
    }
    out
}

/// Worst `|μ|` of the affine map over symmetric perturbations of size `1/10`, against `1/9`.
pub fn affine_constant_check(samples: usize) -> CheckReport {
    let (z1, z2, z3) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0));
    let mut worst = (0.0f64, String::new());
    for a in 0..samples {
        for b in 0..samples {
            let u = Complex64::from_polar(0.1, 2.0 * PI * a as f64 / samples as f64);
            let v = Complex64::from_polar(0.1, 2.0 * PI * b as f64 / samples as f64);
            let w1 = z1 - u;
            let w2 = w1 + (z2 - z1) * (1.0 - v);
            let mu = affine_dilatation(z1, z2, z3, w1, w2).map(|m| m.norm()).unwrap_or(f64::INFINITY);
            let bound = affine_dilatation_bound(z1, z2, z3, w1, w2);
            let worst_here = mu.max(bound);
            if worst_here > worst.0 {
                worst = (worst_here, format!("u={:?},{:?} v={:?},{:?}", u.re, u.im, v.re, v.im));
            }
        }
    }
    CheckReport::from_margin("affine dilatation <= 1/9", 1.0 / 9.0 + 1e-12 - worst.0, worst.1, samples * samples)
}

/// Checks that need no solve: the affine constant, `E_ε` convexity, and Koebe/Grunsky on a Möbius map.
pub fn lemma_suite(opts: &DistortionOptions) -> Result<Vec<CheckReport>> {
    let mut out = vec![affine_constant_check(64)];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (m, eps) in [(8, 0.05), (16, 0.02)] {
        out.push(e_eps_convexity_probe(m, eps, 1000, &mut rng)?);
    }
    let q = Complex64::new(0.3, 0.1);
    let mobius = move |z: Complex64| Some(z / (1.0 - q * z));
    out.push(koebe_check("koebe mobius", mobius, Complex64::new(0.0, 0.0), 1.0, opts));
    out.push(grunsky_check("grunsky mobius", mobius, Complex64::new(0.0, 0.0), 1.0, opts));
    Ok(out)
}

/// A vector at twice the tube radius, reported against `E_ε`; fails by construction.
pub fn negative_control() -> CheckReport {
    let eps = 0.05f64;
    let r = vec![Complex64::from_polar((2.0 * eps).exp(), 0.0); 8];
    match e_eps_membership(&r, eps) {
        Ok(m) => CheckReport::from_margin("negative control: r outside E_eps", m.margin, format!("|log r_j| = {:?}", 2.0 * eps), 1),
        Err(e) => CheckReport::inapplicable("negative control: r outside E_eps", e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::DiscParams;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn quick(samples: usize) -> DistortionOptions {
        DistortionOptions { samples, slack: 0.0, ..DistortionOptions::default() }
    }

    fn koebe_margin_of_one(rho: f64) -> f64 {
        [
            1.0 - 1.0 / ((1.0 + rho) * (1.0 + rho)),
            1.0 / ((1.0 - rho) * (1.0 - rho)) - 1.0,
            1.0 - (1.0 - rho) / (1.0 + rho).powi(3),
            (1.0 + rho) / (1.0 - rho).powi(3) - 1.0,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    fn parse_witness(w: &str) -> Complex64 {
        let body = w.strip_prefix("z=").unwrap();
        let (a, b) = body.split_once(',').unwrap();
        c(a.parse().unwrap(), b.parse().unwrap())
    }


    #[test]
    fn straightening_residual_on_the_exp_zone() {
        use crate::dynamics::DynamicsOptions;
        use crate::grid::{ComplexGrid, GridSpec};
        use crate::maps::Model;
        use crate::solver::QuasiconformalMap;
        let spec = GridSpec::new(Complex64::new(4.0, 0.0), 0.5, 32).unwrap();
        let model = || Model::new(ModelParams::bare(1.6, 9)).unwrap();
        let id = Context::new(model(), QuasiconformalMap::identity(spec), DynamicsOptions::default()).unwrap();
        let rep = straightening_residual(&id, 1, 1e-5, Exec::default());
        assert!(rep.evaluated > 0 && rep.overflow == 0 && rep.max < 1e-6, "{rep:?}");
        // φ = z + k z̄ is reproduced exactly by the bilinear interpolant
        let k = Complex64::new(0.2, -0.1);
        let disp = ComplexGrid::new(spec, (0..spec.len()).map(|i| k * spec.node_at(i).conj()).collect()).unwrap();
        let affine = Context::new(model(), QuasiconformalMap::from_displacement(disp, Complex64::new(0.0, 0.0)), DynamicsOptions::default()).unwrap();
        let rep = straightening_residual(&affine, 1, 1e-5, Exec::default());
        assert!((rep.max - k.norm()).abs() < 1e-6, "{rep:?}");
    }
    #[test]
    fn identity_margins_are_distances_to_the_bounds() {
        let a = c(0.3, -0.2);
        let rep = koebe_check("id", Some, a, 2.0, &quick(300));
        assert!(rep.passed());
        let z = parse_witness(&rep.witness);
        let expected = koebe_margin_of_one((z - a).norm() / 2.0);
        assert!((rep.margin - expected).abs() < 1e-8, "{} vs {expected}", rep.margin);
        let rep = grunsky_check("id", Some, a, 2.0, &quick(300));
        assert!(rep.passed());
        let z = parse_witness(&rep.witness);
        let d = (z - a).norm();
        assert!((rep.margin - ((2.0 + d) / (2.0 - d)).ln()).abs() < 1e-8);
    }

    #[test]
    fn square_on_a_disc_away_from_zero() {
        let sq = |z: Complex64| Some(z * z);
        assert!(koebe_check("sq", sq, c(3.0, 0.0), 1.0, &quick(1000)).passed());
        assert!(grunsky_check("sq", sq, c(3.0, 0.0), 1.0, &quick(1000)).passed());
        let rep = koebe_check("sq0", sq, c(0.0, 0.0), 1.0, &quick(100));
        assert_eq!(rep.status, Status::Inapplicable);
        assert!(rep.margin.is_nan());
        assert_eq!(grunsky_check("sq0", sq, c(0.0, 0.0), 1.0, &quick(100)).status, Status::Inapplicable);
    }

    #[test]
    fn rotation_and_small_quadratic() {
        let rot = Complex64::from_polar(1.0, 0.7);
        let rep = grunsky_check("rot", move |z| Some(rot * z), c(0.0, 0.0), 1.0, &quick(500));
        assert!(rep.passed());
        let quad = |z: Complex64| Some(z + 0.05 * z * z);
        let rep = grunsky_check("quad", quad, c(0.0, 0.0), 1.0, &quick(1000));
        assert!(rep.passed() && rep.margin > 0.0);
        assert!(koebe_check("quad", quad, c(0.0, 0.0), 1.0, &quick(1000)).passed());
    }

    #[test]
    fn checks_are_deterministic_per_seed() {
        let f = |z: Complex64| Some(z + 0.1 * z * z);
        let a = koebe_check("f", f, c(0.0, 0.0), 1.0, &quick(200));
        let b = koebe_check("f", f, c(0.0, 0.0), 1.0, &quick(200));
        assert_eq!(a, b);
        let other = koebe_check("f", f, c(0.0, 0.0), 1.0, &DistortionOptions { seed: 9, ..quick(200) });
        assert_ne!(a.witness, other.witness);
    }

    #[test]
    fn report_round_trip() {
        let reports = vec![
            CheckReport::from_margin("a b", 0.125, "z=1,2", 10),
            CheckReport::from_margin("neg", -3.0e-17, "tab\there", 1),
            CheckReport::inapplicable("na", "why\nnot"),
            CheckReport::from_margin("inf", f64::INFINITY, "", 0),
        ];
        let mut buf = Vec::new();
        write_reports(&mut buf, &reports).unwrap();
        let back = read_reports(&buf[..]).unwrap();
        assert_eq!(back.len(), 4);
        for (x, y) in reports.iter().zip(&back) {
            assert_eq!(x.status, y.status);
            assert_eq!(x.margin.to_bits(), y.margin.to_bits());
            assert_eq!(x.samples, y.samples);
        }
        assert_eq!(back[0], reports[0]);
        assert_eq!(back[1].witness, "tab here");
        assert!(read_reports(&b"x\tMAYBE\t1\tw\t1\n"[..]).is_err());
    }

    /// Affine pull-backs around `1/2` with derivative `a`.
    struct Toy {
        params: ModelParams,
        a: f64,
    }

    impl BatteryContext for Toy {
        fn params(&self) -> &ModelParams {
            &self.params
        }
        fn pulled(&self, z: Complex64, n: usize) -> Result<Complex64> {
            let p = self.params.pseq[n.min(2) - 1];
            Ok(c(0.5, 0.0) + (z - disc_center(p)?) * self.a.powi(n as i32))
        }
        fn ln_derivative(&self, n: usize) -> Result<f64> {
            Ok(n as f64 * self.a.ln())
        }
        fn ln_lower_bound(&self, n: usize) -> Result<f64> {
            Ok(n as f64 * self.a.ln() - 1.0)
        }
    }

    fn toy(m: u32, a: f64) -> Toy {
        let mut params = ModelParams::bare(1.6, 30);
        params.level = 2;
        params.nseq = vec![1, 2, 3];
        params.pseq = vec![1, 3];
        params.n0 = 2;
        for &p in &[1usize, 3] {
            params.discs.insert(
                p,
                DiscParams { index: p, m, delta: 0.03, big_r: 1.45, r: vec![c(1.0, 0.0); m as usize - 1], w: c(0.0, 0.0) },
            );
        }
        Toy { params, a }
    }

    #[test]
    fn battery_on_an_affine_control() {
        let t = toy(64, 0.2);
        let reports = estimate_battery(&t, None, &BatteryOptions::default());
        let get = |name: &str| reports.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("{name}"));
        // affine pull-backs are exact multiples of the derivative
        assert!(get("eq1 k=2").passed());
        assert!((get("eq1 k=2").margin - epsilon_for(1.45, 2)).abs() < 1e-12);
        assert!(get("eq1' k=2").passed());
        assert!(get("eq3 k=2").passed());
        assert!(get("eq4 k=1").passed(), "{:?}", get("eq4 k=1"));
        assert_eq!(get("eq4 k=2").status, Status::Inapplicable);
        // eq2 value: m^{1/m}(m/(m−1)·a²)^{(m−1)/m}
        let v = 64f64.powf(1.0 / 64.0) * (64.0 / 63.0 * 0.04f64).powf(63.0 / 64.0);
        let margin = (v.ln() - (0.04f64.ln() - 1.0)).min((1.0f64 / 16.0).ln() - v.ln());
        assert!((get("eq2 k=1").margin - margin).abs() < 1e-12);
        assert!(!reports.iter().any(|r| r.name.starts_with("eq0")));
        // weak contraction fails the wandering estimate
        let weak = estimate_battery(&toy(4, 0.2), None, &BatteryOptions::default());
        assert_eq!(weak.iter().find(|r| r.name == "eq4 k=1").unwrap().status, Status::Fail);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]
        #[test]
        fn koebe_holds_for_mobius_maps(re in -0.9f64..0.9, im in -0.9f64..0.9, seed in 0u64..1000) {
            let q = c(re, im);
            prop_assume!(q.norm() < 0.95);
            let f = move |z: Complex64| Some(z / (1.0 - q * z));
            let opts = DistortionOptions { samples: 200, seed, ..DistortionOptions::default() };
            let k = koebe_check("m", f, c(0.0, 0.0), 1.0, &opts);
            let g = grunsky_check("m", f, c(0.0, 0.0), 1.0, &opts);
            prop_assert!(k.passed(), "{:?}", k);
            prop_assert!(g.passed(), "{:?}", g);
        }
    }

    #[test]
    fn lemma_suite_passes_and_control_fails() {
        let reports = lemma_suite(&DistortionOptions { samples: 200, ..DistortionOptions::default() }).unwrap();
        assert_eq!(reports.len(), 5);
        assert!(reports.iter().all(|r| r.passed()), "{reports:?}");
        // the bound is attained, so the margin sits at the tolerance
        assert!(reports[0].margin <= 1e-12 + 1e-15);
        assert_eq!(negative_control().status, Status::Fail);
    }
}
