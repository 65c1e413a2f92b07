//! Parameter search: permissibility, the constants `C_k`, the choice of `n_k`,
//! the block fixpoint map and its damped iteration, and checkpoints.

use crate::dilatation::{model_beltrami, BeltramiField, BeltramiOptions};
use crate::dynamics::{g_real_derivative, singular_orbit, Context, Dynamics, DynamicsOptions, OrbitRecord, PIndex, Verdict};
use crate::eeps::{e_eps_membership, epsilon_for, project_radially};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::maps::{disc_center, roots_of_minus_one, DiscParams, Model, ModelParams};
use crate::solver::{solve_mrt, SolverOptions};
use crate::verify::{CheckReport, Status};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Thresholds for the finitely checkable permissibility clauses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermissibilityConfig {
    /// Surrogate for `λ₀`.
    pub lambda0: f64,
    /// Floor for every `m(k)`, standing in for `m₀(k)`.
    pub m_floor: u32,
    /// Strict upper bound `δ₀` on every `δ(k)`.
    pub delta0: f64,
}

impl Default for PermissibilityConfig {
    fn default() -> Self {
        PermissibilityConfig { lambda0: 1.0, m_floor: 3, delta0: 0.25 }
    }
}

fn clause(name: String, ok: bool, margin: f64, witness: String) -> CheckReport {
    let margin = if ok { margin.max(0.0) } else { margin.min(-f64::MIN_POSITIVE) };
    CheckReport::from_margin(name, margin, witness, 1)
}

/// One row per checkable clause; existential thresholds are listed as checked-by-consequence.
pub fn permissibility_ledger(params: &ModelParams, cfg: &PermissibilityConfig) -> Vec<CheckReport> {
    let mut out = vec![clause(
        "lambda > lambda0".into(),
        params.lambda > cfg.lambda0,
        params.lambda - cfg.lambda0,
        format!("lambda {:?}", params.lambda),
    )];
    out.push(clause(
        format!("inactive m >= {}", cfg.m_floor),
        params.inactive_m >= cfg.m_floor,
        params.inactive_m as f64 - cfg.m_floor as f64,
        format!("m {}", params.inactive_m),
    ));
    for (&n, d) in &params.discs {
        out.push(clause(
            format!("disc {n}: m >= {}", cfg.m_floor),
            d.m >= cfg.m_floor,
            d.m as f64 - cfg.m_floor as f64,
            format!("m {}", d.m),
        ));
        let upper = cfg.delta0.min(1.0 / 16.0);
        out.push(clause(
            format!("disc {n}: 0 <= delta <= 1/16, delta < delta0"),
            d.delta >= 0.0 && d.delta <= 1.0 / 16.0 && d.delta < cfg.delta0,
            d.delta.min(upper - d.delta),
            format!("delta {:?}", d.delta),
        ));
        out.push(clause(
            format!("disc {n}: 1 <= R < 3/2"),
            d.big_r >= 1.0 && d.big_r < 1.5,
            (d.big_r - 1.0).min(1.5 - d.big_r),
            format!("R {:?}", d.big_r),
        ));
        out.push(clause(
            format!("disc {n}: |w| <= 3/4"),
            d.w.norm() <= 0.75,
            0.75 - d.w.norm(),
            format!("w {:?},{:?}", d.w.re, d.w.im),
        ));
        let eps = epsilon_for(d.big_r, params.n0);
        let name = format!("disc {n}: r in E_eps");
        if d.r.len() + 1 != d.m as usize {
            out.push(clause(name, false, -1.0, format!("{} factors for m {}", d.r.len(), d.m)));
        } else if d.r.iter().all(|&x| x == c(1.0, 0.0)) {
            out.push(clause(name, true, eps, "r = 1".into()));
        } else {
            match e_eps_membership(&d.r, eps) {
                Ok(m) => out.push(clause(name, m.member, m.margin, format!("eps {eps:?}"))),
                Err(e) => out.push(clause(name, false, -1.0, e.to_string())),
            }
        }
    }
    let active: Vec<&DiscParams> = params.pseq.iter().filter_map(|p| params.discs.get(p)).collect();
    for w in active.windows(2) {
        let step = 2 * (w[0].m - 1);
        out.push(clause(
            format!("2(m(p_k)-1) | m(p_k+1) for discs {} -> {}", w[0].index, w[1].index),
            w[1].m % step == 0,
            if w[1].m % step == 0 { 0.0 } else { -((w[1].m % step) as f64) },
            format!("{} | {}", step, w[1].m),
        ));
    }
    for name in ["m > m0 (existential threshold)", "delta0, n0 of the extension theorem", "s0 schedule"] {
        out.push(CheckReport::inapplicable(name, "checked-by-consequence"));
    }
    out
}

/// True when no permissibility clause failed.
pub fn permissible(ledger: &[CheckReport]) -> bool {
    ledger.iter().all(|r| r.status != Status::Fail)
}

/// Hypotheses of the derivative estimates, measured rather than assumed.
pub fn hypothesis_checks(model: &Model) -> Vec<CheckReport> {
    let mut worst = (f64::INFINITY, 0.0);
    for k in 0..=4000 {
        let x = 1.0 / 32.0 + k as f64 * 1e-3;
        let d = g_real_derivative(model, x);
        if d < worst.0 {
            worst = (d, x);
        }
    }
    vec![CheckReport::from_margin(
        "g'(x) >= 2 for x >= 1/32",
        worst.0 - 2.0,
        format!("x {:?}", worst.1),
        4001,
    )]
}

/// `C_{k+1}`: the lower derivative bound at `n_{k+1}`.
pub fn compute_ck(ctx: &Context, n_next: usize) -> Result<f64> {
    Ok(ctx.derivative_bounds(n_next)?.lower())
}

/// Loosened tubes for the choice of `n_k`; `None` means the `ln R^{1/n₀}` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionTolerances {
    pub tube: Option<f64>,
    /// Lower threshold for the wandering estimate.
    pub wandering: f64,
    /// Tube for the product of the Koebe factors in the convexity estimate; `None` means half of `tube`.
    pub convexity_tube: Option<f64>,
    /// `η` for the `φ` divided differences.
    pub eta: f64,
    pub n_max: usize,
    pub samples: usize,
}

impl Default for SelectionTolerances {
    fn default() -> Self {
        SelectionTolerances { tube: None, wandering: 7.0 / 12.0, convexity_tube: None, eta: 0.1, n_max: 8, samples: 64 }
    }
}

/// Measured distortion terms at one candidate `n`; margins are non-negative when the condition holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTerms {
    pub n: usize,
    pub p: usize,
    /// `tube − max |log Q(ξ)|` for the distortion quantity `Q`.
    pub distortion: f64,
    /// `min_ξ |f⁻ⁿ(φ(z_p + 2ξ/3)) − f⁻ⁿ(φ(z_p))| / |(f⁻ⁿ)'(gⁿ(1/2))|` minus the threshold.
    pub wandering: f64,
    /// `tube/2 − max |log|` of the Koebe factor product over consecutive roots.
    pub convexity: f64,
    /// `η − max(|arg|, ||·| − 1|)` of the `φ` divided differences.
    pub phi_differences: f64,
    /// `3/4 − |f⁻ⁿ(φ(z_p))|`.
    pub near_half: f64,
}

impl SelectionTerms {
    pub fn accepted(&self) -> bool {
        [self.distortion, self.wandering, self.convexity, self.phi_differences, self.near_half]
            .iter()
            .all(|&m| m >= 0.0)
    }

    pub fn summary(&self) -> String {
        format!(
            "n={} p={} distortion={:.4e} wandering={:.4e} convexity={:.4e} phi={:.4e} near_half={:.4e}",
            self.n, self.p, self.distortion, self.wandering, self.convexity, self.phi_differences, self.near_half
        )
    }
}

/// The terms for `n` with `ξ_j` the roots of `−1` of order `roots`.
pub fn selection_terms(ctx: &Context, n: usize, roots: usize, tube: f64, tol: &SelectionTolerances) -> Result<SelectionTerms> {
    let p = match ctx.p_tilde(n)? {
        PIndex::Index(p) => p,
        PIndex::Beyond { ln_index } => {
            return Err(Error::Selection(format!("p~_{n} = exp({ln_index:.4e}) is not representable")))
        }
    };
    let zc = disc_center(p)?;
    let d = ctx.log_derivative_fd(n)?.exp();
    let pull = |z: Complex64| ctx.pull_back_f(z, n);
    let base_phi = ctx.phi(zc);
    let base = pull(base_phi)?;
    let conv_tube = tol.convexity_tube.unwrap_or(tube / 2.0);

    let mut distortion = f64::INFINITY;
    let mut wandering = f64::INFINITY;
    for s in 0..tol.samples {
        let xi = Complex64::from_polar(1.0, 2.0 * PI * s as f64 / tol.samples as f64);
        let q = (pull(ctx.phi(zc + xi))? - base) / (xi * d);
        distortion = distortion.min(tube - q.ln().norm());
        let w = (pull(ctx.phi(zc + xi * (2.0 / 3.0)))? - base).norm() / d;
        wandering = wandering.min(w - tol.wandering);
    }

    let xs = roots_of_minus_one(roots);
    let phis: Vec<Complex64> = xs.iter().map(|&x| ctx.phi(zc + x)).collect();
    let pulls: Vec<Complex64> = phis.iter().map(|&w| pull(w)).collect::<Result<_>>()?;
    let mut convexity = f64::INFINITY;
    let mut phi_differences = f64::INFINITY;
    for j in 0..xs.len() {
        let jn = (j + 1) % xs.len();
        let dphi = phis[jn] - phis[j];
        let koebe = (pulls[jn] - pulls[j]) / (dphi * d);
        convexity = convexity.min(conv_tube - koebe.ln().norm());
        let t = dphi / (xs[jn] - xs[j]);
        phi_differences = phi_differences.min(tol.eta - t.arg().abs().max((t.norm() - 1.0).abs()));
    }
    Ok(SelectionTerms { n, p, distortion, wandering, convexity, phi_differences, near_half: 0.75 - base.norm() })
}

/// Smallest `n > n_prev` whose terms pass, for block `k` with previous block data `(R, m)`.
pub fn select_nk(
    ctx: &Context,
    n_prev: usize,
    prev_big_r: f64,
    prev_m: u32,
    tol: &SelectionTolerances,
) -> Result<SelectionTerms> {
    let tube = tol.tube.unwrap_or_else(|| epsilon_for(prev_big_r, ctx.model().params().n0));
    let mut tried = Vec::new();
    for n in n_prev + 1..=tol.n_max {
        match selection_terms(ctx, n, prev_m as usize - 1, tube, tol) {
            Ok(t) if t.accepted() => return Ok(t),
            Ok(t) => tried.push(t.summary()),
            Err(e) => {
                tried.push(format!("n={n}: {e}"));
                break;
            }
        }
    }
    Err(Error::Selection(format!("no n in ({n_prev}, {}]: {}", tol.n_max, tried.join("; "))))
}

/// Smallest multiple of `2(m_prev − 1)` that is at least `floor`.
pub fn next_m(m_prev: u32, floor: u32) -> u32 {
    let step = 2 * (m_prev - 1);
    floor.div_ceil(step).max(1) * step
}

/// State of one active block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub k: usize,
    pub disc: usize,
    pub m: u32,
    pub w: Complex64,
    pub delta: f64,
    pub r: Vec<Complex64>,
}

impl BlockState {
    fn distance(&self, other: &BlockState) -> f64 {
        let dr = self.r.iter().zip(&other.r).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        (self.w - other.w).norm().max((self.delta - other.delta).abs()).max(dr)
    }

    fn blend(&self, other: &BlockState, gamma: f64) -> BlockState {
        BlockState {
            w: self.w * (1.0 - gamma) + other.w * gamma,
            delta: self.delta * (1.0 - gamma) + other.delta * gamma,
            r: self.r.iter().zip(&other.r).map(|(a, b)| a * (1.0 - gamma) + b * gamma).collect(),
            ..self.clone()
        }
    }
}

/// Domain `D̄(0, 3/4) × [C_{k+1}, 1/16] × E_ε` of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDomain {
    pub c_lower: f64,
    pub eps: f64,
}

impl BlockDomain {
    pub fn contains(&self, b: &BlockState) -> bool {
        b.w.norm() <= 0.75
            && b.delta >= self.c_lower
            && b.delta <= 1.0 / 16.0
            && e_eps_membership(&b.r, self.eps).map(|m| m.member).unwrap_or(false)
    }

    /// Nearest-point projection for `w` and `δ`, radial projection toward `(1, …, 1)` for `r`.
    pub fn project(&self, b: &BlockState) -> Result<BlockState> {
        let w = if b.w.norm() > 0.75 { b.w * (0.75 / b.w.norm()) } else { b.w };
        Ok(BlockState {
            w,
            delta: b.delta.clamp(self.c_lower, 1.0 / 16.0),
            r: project_radially(&b.r, self.eps)?,
            ..b.clone()
        })
    }

    /// The most symmetric point: `w = 0`, `δ` mid-interval, `r = 1`.
    pub fn initial(&self, k: usize, disc: usize, m: u32) -> BlockState {
        BlockState { k, disc, m, w: c(0.0, 0.0), delta: 0.5 * (self.c_lower + 1.0 / 16.0), r: vec![c(1.0, 0.0); m as usize - 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixpointState {
    pub blocks: Vec<BlockState>,
    pub residual: f64,
    pub history: Vec<f64>,
    pub damping: f64,
}

impl FixpointState {
    pub fn new(blocks: Vec<BlockState>, damping: f64) -> FixpointState {
        FixpointState { blocks, residual: f64::INFINITY, history: Vec::new(), damping }
    }

    pub fn distance(&self, other: &FixpointState) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.distance(b)).fold(0.0, f64::max)
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([b.w.re, b.w.im, b.delta]);
            for r in &b.r {
                v.extend([r.re, r.im]);
            }
        }
        v
    }

    fn with_vec(&self, v: &[f64]) -> FixpointState {
        let mut out = self.clone();
        let mut i = 0;
        for b in &mut out.blocks {
            b.w = c(v[i], v[i + 1]);
            b.delta = v[i + 2];
            i += 3;
            for r in &mut b.r {
                *r = c(v[i], v[i + 1]);
                i += 2;
            }
        }
        out
    }

    /// Writes the resumable checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "residual = {:?}", self.residual)?;
        writeln!(w, "damping = {:?}", self.damping)?;
        let hist: Vec<String> = self.history.iter().map(|h| format!("{h:?}")).collect();
        writeln!(w, "history = {}", hist.join(" "))?;
        for b in &self.blocks {
            writeln!(w)?;
            writeln!(w, "[block {}]", b.k)?;
            writeln!(w, "disc = {}", b.disc)?;
            writeln!(w, "m = {}", b.m)?;
            writeln!(w, "w = {:?} {:?}", b.w.re, b.w.im)?;
            writeln!(w, "delta = {:?}", b.delta)?;
            let r: Vec<String> = b.r.iter().map(|x| format!("{:?} {:?}", x.re, x.im)).collect();
            writeln!(w, "r = {}", r.join(" "))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<FixpointState> {
        let bad = |msg: String| Error::Format(format!("checkpoint: {msg}"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let mut state = FixpointState::new(Vec::new(), 0.5);
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(head) = line.strip_prefix("[block ").and_then(|s| s.strip_suffix(']')) {
                let k = head.trim().parse().map_err(|_| bad(format!("bad block header {line:?}")))?;
                state.blocks.push(BlockState { k, disc: 0, m: 0, w: c(0.0, 0.0), delta: 0.0, r: Vec::new() });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value: {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let nums = || value.split_whitespace().map(num).collect::<Result<Vec<f64>>>();
            match (state.blocks.last_mut(), key) {
                (None, "residual") => state.residual = num(value)?,
                (None, "damping") => state.damping = num(value)?,
                (None, "history") => state.history = nums()?,
                (Some(b), "disc") => b.disc = value.parse().map_err(|_| bad(format!("bad disc {value:?}")))?,
                (Some(b), "m") => b.m = value.parse().map_err(|_| bad(format!("bad m {value:?}")))?,
                (Some(b), "w") => match nums()?.as_slice() {
                    [re, im] => b.w = c(*re, *im),
                    _ => return Err(bad("w needs two numbers".into())),
                },
                (Some(b), "delta") => b.delta = num(value)?,
                (Some(b), "r") => {
                    let v = nums()?;
                    if v.len() % 2 != 0 {
                        return Err(bad("r needs pairs".into()));
                    }
                    b.r = v.chunks(2).map(|p| c(p[0], p[1])).collect();
                }
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        for b in &state.blocks {
            if b.m < 3 || b.r.len() + 1 != b.m as usize {
                return Err(bad(format!("block {} has {} factors for m = {}", b.k, b.r.len(), b.m)));
            }
        }
        Ok(state)
    }
}

/// A self-map of the block domain.
pub trait FixpointMap {
    fn domains(&self) -> &[BlockDomain];
    fn eval(&mut self, state: &FixpointState) -> Result<FixpointState>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateOptions {
    pub tol: f64,
    pub maxit: usize,
    pub damping: f64,
    /// Map evaluations allowed for the pattern-search fallback.
    pub fallback_budget: usize,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions { tol: 1e-6, maxit: 40, damping: 0.5, fallback_budget: 0 }
    }
}

/// Result of a search run: the last state, and the error when it did not converge.
#[derive(Debug)]
pub struct SearchOutcome {
    pub state: FixpointState,
    pub converged: bool,
    pub error: Option<Error>,
}

fn project_state(state: &FixpointState, domains: &[BlockDomain]) -> Result<FixpointState> {
    let mut out = state.clone();
    for (b, d) in out.blocks.iter_mut().zip(domains) {
        *b = d.project(b)?;
    }
    Ok(out)
}

/// Damped Picard iteration with projection, followed by an optional pattern search on the residual.
pub fn search<M: FixpointMap>(init: &FixpointState, map: &mut M, opts: &IterateOptions) -> SearchOutcome {
    let domains = map.domains().to_vec();
    if domains.len() != init.blocks.len() {
        return SearchOutcome {
            state: init.clone(),
            converged: false,
            error: Some(Error::param("state and domain disagree on the number of blocks")),
        };
    }
    let mut x = match project_state(init, &domains) {
        Ok(x) => x,
        Err(e) => return SearchOutcome { state: init.clone(), converged: false, error: Some(e) },
    };
    x.damping = opts.damping;
    for _ in 0..opts.maxit {
        let fx = match map.eval(&x) {
            Ok(fx) => fx,
            Err(e) => return SearchOutcome { state: x, converged: false, error: Some(e) },
        };
        x.residual = x.distance(&fx);
        x.history.push(x.residual);
        if x.residual < opts.tol {
            return SearchOutcome { state: x, converged: true, error: None };
        }
        let mut next = x.clone();
        for (b, f) in next.blocks.iter_mut().zip(&fx.blocks) {
            *b = b.blend(f, opts.damping);
        }
        x = match project_state(&next, &domains) {
            Ok(p) => p,
            Err(e) => return SearchOutcome { state: x, converged: false, error: Some(e) },
        };
    }
    if opts.fallback_budget > 0 {
        if let Some(found) = pattern_search(&x, map, &domains, opts) {
            if found.residual < opts.tol {
                return SearchOutcome { state: found, converged: true, error: None };
            }
            if found.residual < x.residual {
                x = found;
            }
        }
    }
    let error = Error::Convergence { iterations: x.history.len(), residual: x.residual, history: x.history.clone() };
    SearchOutcome { state: x, converged: false, error: Some(error) }
}

/// Compass search on `|x − F(x)|` over the real coordinates of the state.
fn pattern_search<M: FixpointMap>(
    start: &FixpointState,
    map: &mut M,
    domains: &[BlockDomain],
    opts: &IterateOptions,
) -> Option<FixpointState> {
    let mut evals = 0usize;
    // squared Euclidean objective; the max-norm residual is flat along most coordinates
    let mut residual = |s: &FixpointState, evals: &mut usize| -> Option<(f64, f64)> {
        *evals += 1;
        let f = map.eval(s).ok()?;
        let sq = s.to_vec().iter().zip(f.to_vec()).map(|(a, b)| (a - b).powi(2)).sum();
        Some((sq, s.distance(&f)))
    };
    let mut best = start.clone();
    let (mut best_sq, res0) = residual(&best, &mut evals)?;
    best.residual = res0;
    let mut step = best.residual.max(opts.tol);
    let dim = best.to_vec().len();
    while evals < opts.fallback_budget && step > opts.tol * 1e-3 {
        let mut improved = false;
        'dirs: for i in 0..dim {
            for sign in [1.0, -1.0] {
                if evals >= opts.fallback_budget {
                    break 'dirs;
                }
                let mut v = best.to_vec();
                v[i] += sign * step;
                let Ok(cand) = project_state(&best.with_vec(&v), domains) else { continue };
                if let Some((sq, res)) = residual(&cand, &mut evals) {
                    if sq < best_sq {
                        best_sq = sq;
                        best = cand;
                        best.residual = res;
                        best.history.push(res);
                        improved = true;
                        if res < opts.tol {
                            return Some(best);
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some(best)
}

/// [`search`] as a `Result`: the converged state, or the failure with its residual history.
pub fn fixpoint_iterate<M: FixpointMap>(init: &FixpointState, map: &mut M, opts: &IterateOptions) -> Result<FixpointState> {
    let out = search(init, map, opts);
    match out.error {
        None => Ok(out.state),
        Some(e) => Err(e),
    }
}

/// Contraction `x ↦ x* + ρ(x − x*)` toward `w* = 0.2 − 0.1i`, `δ* = 0.02`, `r* = 1`.
pub struct AffineControl {
    pub domains: Vec<BlockDomain>,
    pub rate: f64,
}

impl AffineControl {
    pub const W: Complex64 = Complex64 { re: 0.2, im: -0.1 };
    pub const DELTA: f64 = 0.02;

    pub fn new(domains: Vec<BlockDomain>) -> AffineControl {
        AffineControl { domains, rate: 0.25 }
    }
}

impl FixpointMap for AffineControl {
    fn domains(&self) -> &[BlockDomain] {
        &self.domains
    }

    fn eval(&mut self, s: &FixpointState) -> Result<FixpointState> {
        let q = self.rate;
        let mut out = s.clone();
        for b in &mut out.blocks {
            b.w = Self::W + (b.w - Self::W) * q;
            b.delta = Self::DELTA + (b.delta - Self::DELTA) * q;
            b.r = b.r.iter().map(|&x| 1.0 + (x - 1.0) * q).collect();
        }
        Ok(out)
    }
}

/// Grid, solver and orbit settings for straightening a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub grid_n: usize,
    /// `None` means `max(2·p_L·π, 16)`.
    pub half_width: Option<f64>,
    pub beltrami: BeltramiOptions,
    pub solver: SolverOptions,
    pub dynamics: DynamicsOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            grid_n: 1024,
            half_width: None,
            beltrami: BeltramiOptions::default(),
            solver: SolverOptions::default(),
            dynamics: DynamicsOptions::default(),
        }
    }
}

impl PipelineOptions {
    pub fn grid_for(&self, params: &ModelParams) -> Result<GridSpec> {
        let p_last = params.pseq.iter().copied().max().unwrap_or(1);
        let hw = self.half_width.unwrap_or_else(|| (2.0 * p_last as f64 * PI).max(16.0));
        GridSpec::new(c(0.0, 0.0), hw, self.grid_n)
    }
}

/// Assembles `μ_g`, solves for `φ` and returns the dynamics context with the field.
pub fn build_context(params: ModelParams, opts: &PipelineOptions) -> Result<(Context, BeltramiField)> {
    let spec = opts.grid_for(&params)?;
    let model = Model::new(params)?;
    let field = model_beltrami(&model, spec, &opts.beltrami)?;
    let map = solve_mrt(&field, &opts.solver)?;
    Ok((Context::new(model, map, opts.dynamics)?, field))
}

/// How an instance is laid out: real-orbit data, `n`, `p`, `m`, and the domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub lambda: f64,
    pub level: usize,
    pub n0: u32,
    pub big_r: f64,
    /// `n_1..n_{L+1}`; the last entry is only a candidate when `p_{L+1}` is not representable.
    pub nseq: Vec<usize>,
    pub pseq: Vec<usize>,
    pub mseq: Vec<u32>,
    pub inactive_m: u32,
    pub domains: Vec<BlockDomain>,
}

/// Inputs for [`Plan::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub lambda: f64,
    pub level: usize,
    pub n0: u32,
    pub big_r: f64,
    pub m_first: u32,
    pub m_cap: u32,
    /// `n_2..n_{L+1}`; missing entries default to consecutive integers.
    pub nseq: Vec<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { lambda: 1.6, level: 2, n0: 2, big_r: 1.45, m_first: 9, m_cap: 33, nseq: Vec::new() }
    }
}

impl Plan {
    pub fn new(cfg: &PlanConfig) -> Result<Plan> {
        if cfg.level < 1 {
            return Err(Error::param("level must be >= 1"));
        }
        let bare = Model::new(ModelParams::bare(cfg.lambda, 30))?;
        let mut nseq = vec![1];
        for k in 1..=cfg.level {
            let next = cfg.nseq.get(k - 1).copied().unwrap_or(nseq[k - 1] + 1);
            if next <= nseq[k - 1] {
                return Err(Error::param("n_k must increase"));
            }
            nseq.push(next);
        }
        let depth = *nseq.last().expect("nonempty");
        let anchors_ctx = Context::new(
            bare.clone(),
            crate::solver::QuasiconformalMap::identity(GridSpec::new(c(0.0, 0.0), 16.0, 16)?),
            DynamicsOptions { depth, ..DynamicsOptions::default() },
        )?;
        let mut pseq = Vec::new();
        for &n in &nseq[..cfg.level] {
            match anchors_ctx.p_tilde(n)? {
                PIndex::Index(p) => pseq.push(p),
                PIndex::Beyond { ln_index } => {
                    return Err(Error::Selection(format!("p~_{n} = exp({ln_index:.4e}) is not representable")))
                }
            }
        }
        if pseq.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Selection(format!("disc indices {pseq:?} are not increasing")));
        }
        let mut mseq = vec![cfg.m_first];
        for k in 1..cfg.level {
            mseq.push(next_m(mseq[k - 1], mseq[k - 1] + 1));
        }
        if let Some(&m) = mseq.iter().find(|&&m| m > cfg.m_cap) {
            return Err(Error::param(format!("m = {m} exceeds the cap {}", cfg.m_cap)));
        }
        let inactive_m = next_m(*mseq.last().expect("nonempty"), 3);
        let mut domains = Vec::new();
        for k in 1..=cfg.level {
            let c_lower = anchors_ctx.derivative_bounds(nseq[k])?.lower();
            if !(c_lower < 1.0 / 16.0) {
                return Err(Error::param(format!("C_{} = {c_lower:e} leaves an empty delta interval", k + 1)));
            }
            domains.push(BlockDomain { c_lower, eps: epsilon_for(cfg.big_r, cfg.n0) });
        }
        Ok(Plan { lambda: cfg.lambda, level: cfg.level, n0: cfg.n0, big_r: cfg.big_r, nseq, pseq, mseq, inactive_m, domains })
    }

    pub fn initial_state(&self, damping: f64) -> FixpointState {
        let blocks = (0..self.level).map(|i| self.domains[i].initial(i + 1, self.pseq[i], self.mseq[i])).collect();
        FixpointState::new(blocks, damping)
    }

    pub fn params_for(&self, state: &FixpointState) -> ModelParams {
        let mut p = ModelParams::bare(self.lambda, self.inactive_m);
        p.level = self.level;
        p.n0 = self.n0;
        p.nseq = self.nseq.clone();
        p.pseq = self.pseq.clone();
        p.cseq = self.domains.iter().map(|d| d.c_lower).collect();
        for b in &state.blocks {
            p.discs.insert(b.disc, DiscParams { index: b.disc, m: b.m, delta: b.delta, big_r: self.big_r, r: b.r.clone(), w: b.w });
        }
        p
    }
}

/// Outcome of choosing `n_k` for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub k: usize,
    pub tube: f64,
    pub result: std::result::Result<SelectionTerms, String>,
}

/// A plan whose `n_2..n_L` passed selection on the solved baseline model.
pub struct Schedule {
    pub plan: Plan,
    pub selections: Vec<Selection>,
    pub baseline: (Context, BeltramiField),
}

/// Selects `n_2..n_{L+1}` on the baseline (initial-state) model, rebuilding the plan until it is consistent.
///
/// A failure for `k ≤ L` is an error; for `k = L + 1` it is recorded and the plan keeps its candidate.
pub fn schedule(cfg: &PlanConfig, pipeline: &PipelineOptions, tol: &SelectionTolerances) -> Result<Schedule> {
    let mut cfg = cfg.clone();
    for _ in 0..4 {
        let plan = Plan::new(&cfg)?;
        let (ctx, field) = build_context(plan.params_for(&plan.initial_state(0.5)), pipeline)?;
        let tube = tol.tube.unwrap_or_else(|| epsilon_for(plan.big_r, plan.n0));
        let mut selections = Vec::new();
        let mut nseq = plan.nseq.clone();
        for k in 2..=plan.level + 1 {
            let res = select_nk(&ctx, nseq[k - 2], plan.big_r, plan.mseq[k - 2], tol);
            if let Ok(t) = &res {
                nseq[k - 1] = t.n;
            } else if k <= plan.level {
                return Err(res.unwrap_err());
            }
            selections.push(Selection { k, tube, result: res.map_err(|e| e.to_string()) });
        }
        if nseq == plan.nseq {
            return Ok(Schedule { plan, selections, baseline: (ctx, field) });
        }
        cfg.nseq = nseq[1..].to_vec();
    }
    Err(Error::Selection("n_k selection did not settle".into()))
}

/// Image of one block under the fixpoint map, given the straightened context.
pub fn block_image(ctx: &Context, block: &BlockState, n_next: usize, p_next: usize) -> Result<BlockState> {
    let zc = disc_center(p_next)?;
    let pull = |z: Complex64| ctx.pull_back_f(ctx.phi(z), n_next);
    let w = pull(zc)?;
    let d = ctx.log_derivative_fd(n_next)?.exp();
    let m = block.m as f64;
    let delta = m.powf(1.0 / m) * (m / (m - 1.0) * d).powf((m - 1.0) / m);
    let r = roots_of_minus_one(block.m as usize - 1)
        .into_iter()
        .map(|xi| Ok((pull(zc + xi)? - w) / (xi * d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockState { w, delta, r, ..block.clone() })
}

/// The block fixpoint map of the model: build `g`, straighten, pull back.
pub struct ModelMap {
    pub plan: Plan,
    pub pipeline: PipelineOptions,
    /// Trailing blocks held at their current value instead of mapped.
    pub frozen: usize,
    pub last: Option<(Context, BeltramiField)>,
    pub evaluations: usize,
}

impl ModelMap {
    pub fn new(plan: Plan, pipeline: PipelineOptions) -> ModelMap {
        ModelMap { plan, pipeline, frozen: 0, last: None, evaluations: 0 }
    }

    /// Rebuilds the context for a state without evaluating the map.
    pub fn context_for(&self, state: &FixpointState) -> Result<(Context, BeltramiField)> {
        build_context(self.plan.params_for(state), &self.pipeline)
    }
}

impl FixpointMap for ModelMap {
    fn domains(&self) -> &[BlockDomain] {
        &self.plan.domains
    }

    fn eval(&mut self, state: &FixpointState) -> Result<FixpointState> {
        let (ctx, field) = self.context_for(state)?;
        self.evaluations += 1;
        let mut image = state.clone();
        let mapped = state.blocks.len().saturating_sub(self.frozen);
        let mut failures = Vec::new();
        for (i, b) in state.blocks.iter().enumerate().take(mapped) {
            let next = match self.plan.pseq.get(i + 1) {
                Some(&p) => block_image(&ctx, b, self.plan.nseq[i + 1], p),
                None => Err(Error::Evaluation(format!(
                    "block {}: p_{} = p~_{} is not representable",
                    b.k,
                    b.k + 1,
                    self.plan.nseq[i + 1]
                ))),
            };
            match next {
                Ok(nb) => image.blocks[i] = nb,
                Err(Error::Evaluation(m)) => failures.push(m),
                Err(e) => failures.push(e.to_string()),
            }
        }
        self.last = Some((ctx, field));
        if failures.is_empty() {
            Ok(image)
        } else {
            let partial: Vec<String> = image.blocks.iter().map(|b| format!("block {} w={:.6}", b.k, b.w)).collect();
            Err(Error::Evaluation(format!("{} (partial image: {})", failures.join("; "), partial.join(", "))))
        }
    }
}

/// Forward orbit of a critical value and its proximity to `+1` at the target step.
#[derive(Debug, Clone, PartialEq)]
pub struct Consequence {
    pub block: usize,
    pub j: usize,
    pub value: Complex64,
    pub target_step: Option<usize>,
    pub orbit: OrbitRecord,
}

impl Consequence {
    pub fn hit(&self) -> Option<f64> {
        self.orbit.hit.map(|(_, d)| d)
    }

    pub fn escapes(&self) -> bool {
        self.orbit.verdict == Verdict::Escaping
    }
}

/// Orbits of every active-block critical value, with the `n_{k+1} + 1` target where `p_{k+1}` exists.
pub fn consequences(ctx: &Context, plan: &Plan, horizon: usize) -> Vec<Consequence> {
    let mut out = Vec::new();
    for (i, &p) in plan.pseq.iter().enumerate() {
        let Some(map) = ctx.model().disc_map(p) else { continue };
        let target = plan.pseq.get(i + 1).map(|_| plan.nseq[i + 1] + 1);
        for (j, v) in map.critical_values().into_iter().enumerate() {
            let orbit = singular_orbit(v, horizon, ctx, target);
            out.push(Consequence { block: i + 1, j: j + 1, value: v, target_step: target, orbit });
        }
    }
    out
}

/// Orbits of the remaining singular values `0, +1, −1`.
pub fn real_singular_orbits(ctx: &Context, horizon: usize) -> Vec<(f64, OrbitRecord)> {
    [0.0, 1.0, -1.0].into_iter().map(|v| (v, singular_orbit(c(v, 0.0), horizon, ctx, None))).collect()
}
