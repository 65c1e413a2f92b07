//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported as they are measured and do not fail
//! the process; any other failure, or a panic, does.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};
use wandering::config::RunConfig;
use wandering::dilatation::{affine_dilatation, beltrami_of, BeltramiOptions};
use wandering::dynamics::{check_inclusion, Context, Hop, InclusionVerdict, Verdict};
use wandering::eeps::{e_eps_convexity_probe, e_eps_membership};
use wandering::grid::GridSpec;
use wandering::maps::{eta_radius, psi};
use wandering::search::{
    build_context, consequences, real_singular_orbits, search, FixpointState, IterateOptions, ModelMap, Plan, PlanConfig,
};
use wandering::solver::{disc_field, solve_mrt, SolverOptions};
use wandering::verify::{affine_constant_check, branch_distortion_checks, straightening_residual, DistortionOptions, Status};
use wandering::Exec;

/// Criteria that fail on the desk instance for reasons recorded with the project notes.
const KNOWN_RED: &[usize] = &[4, 6, 8, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(t: Duration, secs: f64) -> bool {
    t.as_secs_f64() < secs
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn in_disc<R: Rng>(rng: &mut R, radius: f64) -> Complex64 {
    Complex64::from_polar(radius * rng.gen::<f64>().sqrt(), 2.0 * PI * rng.gen::<f64>())
}

fn affine_constant() -> Outcome {
    let t = Instant::now();
    let grid = affine_constant_check(256);
    // closed form for L(0) = −u, L(i) = −u + i(1 − v), L(1) = 1: μ = (u + v)/(2 + u − v)
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut mismatch) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (u, v) = (in_disc(&mut rng, 0.1), in_disc(&mut rng, 0.1));
        let mu = affine_dilatation(c(0.0, 0.0), c(0.0, 1.0), c(1.0, 0.0), -u, -u + c(0.0, 1.0) * (1.0 - v)).unwrap();
        mismatch = mismatch.max((mu - (u + v) / (2.0 + u - v)).norm());
        worst = worst.max(mu.norm());
    }
    let pass = grid.status == Status::Pass && worst <= 1.0 / 9.0 + 1e-12 && mismatch < 1e-12 && within(t.elapsed(), 1.0);
    outcome(pass, format!("max |mu| {worst:.6} (1/9 = {:.6}), oracle mismatch {mismatch:.1e}, boundary grid margin {:.1e}", 1.0 / 9.0, grid.margin))
}

fn psi_dilatation() -> Outcome {
    let mut worst_sup = 0.0f64;
    let mut confined = true;
    let mut slowest = Duration::ZERO;
    let mut note = String::new();
    for m in [9u32, 17, 33] {
        for delta in [0.01, 0.05] {
            let t = Instant::now();
            let spec = GridSpec::new(c(0.0, 0.0), 1.0, 512).unwrap();
            // the stencil reaches past |z| = 1, where η = 0 and ψ continues as z^m
            let f = |z: Complex64| Some(if z.norm() <= 1.0 { psi(z, delta, m).unwrap() } else { z.powu(m) });
            let opts = BeltramiOptions { h: Some(1e-6), support_threshold: 1e-6, ..Default::default() };
            let field = beltrami_of(f, spec, &opts, |z| z.norm() <= 1.0).unwrap();
            let r = eta_radius(delta, m);
            let (lo, hi) = field
                .support()
                .iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(i, _)| spec.node_at(i).norm())
                .fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
            if lo < r - 1e-6 || hi > 1.0 {
                confined = false;
                note = format!("m={m} delta={delta}: support [{lo:.6}, {hi:.6}] against r={r:.6}");
            }
            worst_sup = worst_sup.max(field.supnorm());
            slowest = slowest.max(t.elapsed());
        }
    }
    let pass = worst_sup < 1.0 - 1e-2 && confined && within(slowest, 10.0);
    outcome(pass, format!("max sup|mu_psi| {worst_sup:.4}, support confined {confined} {note}, slowest case {slowest:.2?}"))
}

fn e_eps_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut members = 0;
    let (m, eps) = (8usize, 0.05);
    let inside = |v: Complex64| v.norm().ln().hypot(v.arg()) <= eps;
    for _ in 0..10_000 {
        let scale = 1.5 * eps * rng.gen::<f64>();
        let r: Vec<Complex64> = (0..m).map(|_| in_disc(&mut rng, scale).exp()).collect();
        let xi: Vec<Complex64> = (1..=m).map(|j| Complex64::from_polar(1.0, PI * (2 * j - 1) as f64 / m as f64)).collect();
        let brute = r.iter().all(|&v| inside(v))
            && (0..m).all(|j| {
                let n = (j + 1) % m;
                inside((r[n] * xi[n] - r[j] * xi[j]) / (xi[n] - xi[j]))
            });
        members += brute as usize;
        if e_eps_membership(&r, eps).unwrap().member != brute {
            mismatches += 1;
        }
    }
    let mut probes = Vec::new();
    for (pm, pe) in [(8usize, 0.05), (16, 0.02)] {
        probes.push(e_eps_convexity_probe(pm, pe, 1000, &mut rng).unwrap());
    }
    let probes_ok = probes.iter().all(|p| p.status == Status::Pass);
    let pass = mismatches == 0 && probes_ok && within(t.elapsed(), 5.0);
    outcome(
        pass,
        format!(
            "{mismatches} mismatches in 10000 ({members} members), probes {}, {:.2?}",
            probes.iter().map(|p| format!("{:.2e}", p.margin)).collect::<Vec<_>>().join(" "),
            t.elapsed()
        ),
    )
}

fn solver_exactness() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for k in [0.1, 0.3, 0.5] {
        let t = Instant::now();
        let mut errors = Vec::new();
        let mut a_err = 0.0;
        for n in [256, 512, 1024] {
            let spec = GridSpec::new(c(0.0, 0.0), 2.0, n).unwrap();
            let map = solve_mrt(&disc_field(spec, c(0.0, 0.0), 1.0, c(k, 0.0)), &SolverOptions::default()).unwrap();
            let exact = |z: Complex64| if z.norm() < 1.0 { z + k * z.conj() } else { z + k / z };
            errors.push((0..spec.len()).map(|i| (map.eval(spec.node_at(i)) - exact(spec.node_at(i))).norm()).fold(0.0, f64::max));
            a_err = (map.a - k).norm();
        }
        let order = (errors[1] / errors[2]).log2();
        let ok = errors[2] <= 5e-3 && order >= 1.8 && a_err <= 1e-3 && within(t.elapsed(), 60.0);
        pass &= ok;
        lines.push(format!("k={k}: err {:.2e} order {order:.2} |a-k| {a_err:.1e} {:.1?}", errors[2], t.elapsed()));
    }
    outcome(pass, lines.join("; "))
}

fn straightening(ctx: &Context, built: Duration) -> Outcome {
    let t = Instant::now();
    let rep = straightening_residual(ctx, 1, 1e-5, Exec::default());
    let pass = rep.at.is_some() && rep.max < 5e-2 && within(built + t.elapsed(), 300.0);
    outcome(
        pass,
        format!(
            "max |mu_f| {:.4} at {:.3?} over {} of {} modeled cells away from seams ({} flat, {} overflow skipped)",
            rep.max,
            rep.at,
            rep.evaluated,
            rep.modeled,
            rep.flat,
            rep.overflow
        ),
    )
}

fn koebe_grunsky(ctx: &Context, plan: &Plan) -> Outcome {
    let t = Instant::now();
    let opts = DistortionOptions { samples: 1000, slack: 0.0, ..Default::default() };
    let n_last = *plan.nseq.last().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in 1..=n_last {
        for r in branch_distortion_checks(ctx, n, &opts) {
            let ok = r.status != Status::Inapplicable && r.margin >= -1e-6;
            pass &= ok;
            parts.push(match r.status {
                Status::Inapplicable => format!("{} inapplicable ({})", r.name, r.witness),
                _ => format!("{} {:.3}", r.name, r.margin),
            });
        }
    }
    outcome(pass && within(t.elapsed(), 120.0), parts.join(", "))
}

fn derivative_sandwich(ctx: &Context) -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in 1..=3 {
        match (ctx.derivative_bounds(n), ctx.log_derivative_fd(n)) {
            (Ok(b), Ok(l)) => {
                pass &= b.contains_ln(l);
                parts.push(format!("n={n}: ln {l:.4} in [{:.4}, {:.4}]", b.ln_lower, b.ln_upper));
            }
            (Err(e), _) | (_, Err(e)) => {
                pass = false;
                parts.push(format!("n={n}: {e}"));
            }
        }
    }
    outcome(pass && within(t.elapsed(), 120.0), parts.join("; "))
}

fn fixpoint_consequence(plan: &Plan, cfg: &RunConfig, init: &FixpointState) -> Outcome {
    let t = Instant::now();
    let opts = IterateOptions { tol: 1e-6, ..cfg.iterate };
    let mut map = ModelMap::new(plan.clone(), cfg.pipeline.clone());
    let honest = search(init, &mut map, &opts);
    let mut detail = format!(
        "converged {} residual {:.3e}{}",
        honest.converged,
        honest.state.residual,
        honest.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
    );
    let mut pass = false;
    if honest.converged && honest.state.residual < 1e-6 {
        let (ctx, _) = build_context(plan.params_for(&honest.state), &cfg.pipeline).unwrap();
        let cons = consequences(&ctx, plan, cfg.horizon);
        pass = cons.iter().all(|c| c.escapes() && c.target_step.is_none_or(|_| c.hit().is_some_and(|d| d < 1e-3)));
        detail.push_str(&format!(", {} critical values checked", cons.len()));
    } else {
        // last block held fixed: how far the remaining blocks are from a fixpoint
        let mut frozen = ModelMap::new(plan.clone(), cfg.pipeline.clone());
        frozen.frozen = 1;
        let diag = search(init, &mut frozen, &IterateOptions { maxit: 3, ..opts });
        let hist: Vec<String> = diag.state.history.iter().map(|r| format!("{r:.3}")).collect();
        detail.push_str(&format!("; block 1 alone: residuals [{}]", hist.join(", ")));
    }
    outcome(pass && within(t.elapsed(), 1800.0), format!("{detail}, {:.1?}", t.elapsed()))
}

fn wandering_hop(ctx: &Context, plan: &Plan) -> Outcome {
    let hop = Hop::for_level(1, plan.pseq[0], plan.pseq[1], plan.nseq[1]).unwrap();
    let rep = check_inclusion(ctx, &hop, 64);
    let pass = rep.verdict == InclusionVerdict::Inside && rep.margin > 0.0;
    outcome(pass, format!("{:?} margin {:.4} over {} samples {}", rep.verdict, rep.margin, rep.samples, rep.note))
}

fn singular_escape(ctx: &Context, plan: &Plan, horizon: usize) -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (v, o) in real_singular_orbits(ctx, horizon) {
        pass &= o.verdict == Verdict::Escaping;
        parts.push(format!("{v}: {} onset {:?}", o.verdict.as_str(), o.onset));
    }
    for cv in consequences(ctx, plan, horizon) {
        pass &= cv.escapes();
        parts.push(format!("cv {}.{}: {}", cv.block, cv.j, cv.orbit.verdict.as_str()));
    }
    outcome(pass && within(t.elapsed(), 60.0), parts.join(", "))
}

fn report(results: &mut Vec<(usize, bool)>, k: usize, name: &str, o: Outcome) {
    println!("criterion {k:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((k, o.pass));
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and friends
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut results = Vec::new();
    report(&mut results, 1, "affine dilatation constant", affine_constant());
    report(&mut results, 2, "psi dilatation", psi_dilatation());
    report(&mut results, 3, "E_eps suite", e_eps_suite());
    report(&mut results, 4, "MRT solver exactness", solver_exactness());

    let cfg = RunConfig::default();
    let plan = Plan::new(&PlanConfig::default()).unwrap();
    let init = plan.initial_state(cfg.iterate.damping);
    let t = Instant::now();
    let (ctx, _) = build_context(plan.params_for(&init), &cfg.pipeline).unwrap();
    let built = t.elapsed();
    report(&mut results, 5, "straightening quality", straightening(&ctx, built));
    report(&mut results, 6, "Koebe/Grunsky battery", koebe_grunsky(&ctx, &plan));
    report(&mut results, 7, "derivative sandwich", derivative_sandwich(&ctx));
    report(&mut results, 8, "fixpoint consequence", fixpoint_consequence(&plan, &cfg, &init));
    report(&mut results, 9, "wandering hop", wandering_hop(&ctx, &plan));
    report(&mut results, 10, "singular escape", singular_escape(&ctx, &plan, cfg.horizon));

    let unexpected: Vec<usize> = results.iter().filter(|(k, p)| !p && !KNOWN_RED.contains(k)).map(|r| r.0).collect();
    let recovered: Vec<usize> = results.iter().filter(|(k, p)| *p && KNOWN_RED.contains(k)).map(|r| r.0).collect();
    let passed = results.iter().filter(|r| r.1).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !recovered.is_empty() {
        println!("acceptance: known-red criteria now pass: {recovered:?}");
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
