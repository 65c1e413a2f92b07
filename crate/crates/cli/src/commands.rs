use crate::{Failure, EXIT_CONFIG, EXIT_IO, EXIT_PERMISSIBILITY, EXIT_SEARCH, EXIT_SOLVER, EXIT_VERIFY};
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use wandering::config::{Mode, RunConfig};
use wandering::dilatation::{model_beltrami, BeltramiField};
use wandering::dynamics::{check_inclusion, Context, Hop, InclusionVerdict, Verdict};
use wandering::grid::GridSpec;
use wandering::maps::{Model, ModelParams};
use wandering::search::{
    build_context, consequences, hypothesis_checks, permissibility_ledger, permissible, real_singular_orbits, schedule,
    search as run_search, AffineControl, FixpointState, ModelMap, Plan, Schedule,
};
use wandering::solver::{disc_field, phi_displacement_bounds, solve_mrt, QuasiconformalMap};
use wandering::verify::{
    branch_distortion_checks, estimate_battery, lemma_suite, negative_control, r_vector_checks, straightening_residual,
    write_reports, CheckReport, Status,
};
use wandering::Error;

const EPS0: f64 = 1.0 / 32.0;
const STENCIL: f64 = 1e-5;

pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> wandering::Result<()>) -> Result<(), Failure> {
    let io = |e: String| Failure::new(EXIT_IO, format!("{}: {e}", path.display()));
    let f = File::create(path).map_err(|e| io(e.to_string()))?;
    let mut w = BufWriter::new(f);
    body(&mut w).map_err(|e| io(e.to_string()))?;
    w.flush().map_err(|e| io(e.to_string()))
}

fn solver_failure(e: Error) -> Failure {
    match e {
        Error::Io(e) => Failure::new(EXIT_IO, e.to_string()),
        Error::Config(_) | Error::Parameter(_) => Failure::new(EXIT_CONFIG, e.to_string()),
        other => Failure::new(EXIT_SOLVER, other.to_string()),
    }
}

pub fn plan(cfg: &RunConfig) -> Result<Plan, Failure> {
    Plan::new(&cfg.plan).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

/// The plan's initial state with the configured `δ` overrides.
pub fn initial_state(cfg: &RunConfig, plan: &Plan) -> FixpointState {
    let mut s = plan.initial_state(cfg.iterate.damping);
    for (b, &d) in s.blocks.iter_mut().zip(&cfg.delta) {
        b.delta = d;
    }
    s
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("checkpoint.txt")
}

/// The resume checkpoint, else the last search checkpoint in the output directory, else the initial state.
pub fn saved_state(cfg: &RunConfig, plan: &Plan) -> Result<(FixpointState, String), Failure> {
    let path = match &cfg.resume {
        Some(p) => Some(p.clone()),
        None => Some(checkpoint_path(cfg)).filter(|p| p.exists()),
    };
    let Some(path) = path else {
        return Ok((initial_state(cfg, plan), "initial".into()));
    };
    let f = File::open(&path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    let state = FixpointState::read_checkpoint(BufReader::new(f))
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let layout_ok = state.blocks.len() == plan.level
        && state.blocks.iter().zip(plan.pseq.iter().zip(&plan.mseq)).all(|(b, (&p, &m))| b.disc == p && b.m == m);
    if !layout_ok {
        return Err(Failure::new(EXIT_CONFIG, format!("{}: block layout does not match the plan", path.display())));
    }
    Ok((state, path.display().to_string()))
}

/// Solved (or identity, in identity-phi mode) context for a state.
pub fn context(cfg: &RunConfig, plan: &Plan, state: &FixpointState) -> Result<(Context, Option<BeltramiField>), Failure> {
    let params = plan.params_for(state);
    if cfg.mode == Mode::IdentityPhi {
        let spec = cfg.pipeline.grid_for(&params).map_err(solver_failure)?;
        let model = Model::new(params).map_err(|e| Failure::new(EXIT_PERMISSIBILITY, e.to_string()))?;
        let ctx = Context::new(model, QuasiconformalMap::identity(spec), cfg.pipeline.dynamics).map_err(solver_failure)?;
        return Ok((ctx, None));
    }
    let (ctx, field) = build_context(params, &cfg.pipeline).map_err(solver_failure)?;
    Ok((ctx, Some(field)))
}

fn write_params(w: &mut impl Write, plan: &Plan, params: &ModelParams) -> std::io::Result<()> {
    let join = |v: Vec<String>| v.join(" ");
    writeln!(w, "lambda = {:?}", plan.lambda)?;
    writeln!(w, "level = {}", plan.level)?;
    writeln!(w, "n0 = {}", plan.n0)?;
    writeln!(w, "n = {}", join(plan.nseq.iter().map(|n| n.to_string()).collect()))?;
    writeln!(w, "p = {}", join(plan.pseq.iter().map(|n| n.to_string()).collect()))?;
    writeln!(w, "m = {}", join(plan.mseq.iter().map(|n| n.to_string()).collect()))?;
    writeln!(w, "inactive_m = {}", plan.inactive_m)?;
    writeln!(w, "C = {}", join(plan.domains.iter().map(|d| format!("{:?}", d.c_lower)).collect()))?;
    writeln!(w, "active_blocks = {}", plan.pseq.len())?;
    for (k, p) in plan.pseq.iter().enumerate() {
        if let Some(d) = params.discs.get(p) {
            writeln!(
                w,
                "block {}: disc {} m {} delta {:?} R {:?} w {:?},{:?}",
                k + 1,
                p,
                d.m,
                d.delta,
                d.big_r,
                d.w.re,
                d.w.im
            )?;
        }
    }
    Ok(())
}

pub fn build(cfg: &RunConfig) -> Result<(), Failure> {
    let plan = plan(cfg)?;
    let state = initial_state(cfg, &plan);
    let params = plan.params_for(&state);
    let ledger = permissibility_ledger(&params, &cfg.permissibility);
    let ok = permissible(&ledger);
    let hypotheses = if ok {
        let model = Model::new(params.clone()).map_err(|e| Failure::new(EXIT_PERMISSIBILITY, e.to_string()))?;
        hypothesis_checks(&model)
    } else {
        Vec::new()
    };
    write_file(&cfg.out.join("summary.txt"), |w| {
        writeln!(w, "# model summary")?;
        write_params(w, &plan, &params)?;
        writeln!(w, "permissible = {ok}")?;
        writeln!(w, "\n# permissibility ledger")?;
        write_reports(&mut *w, &ledger)?;
        if !hypotheses.is_empty() {
            writeln!(w, "\n# hypotheses (reported, not required)")?;
            write_reports(&mut *w, &hypotheses)?;
        }
        Ok(())
    })?;
    if !ok {
        let failed: Vec<&str> = ledger.iter().filter(|r| r.status == Status::Fail).map(|r| r.name.as_str()).collect();
        return Err(Failure::new(EXIT_PERMISSIBILITY, format!("not permissible: {}", failed.join("; "))));
    }
    println!("built L={} model, {} active blocks, permissible", plan.level, plan.pseq.len());
    Ok(())
}

fn test_grid(cfg: &RunConfig) -> Result<GridSpec, Failure> {
    GridSpec::new(Complex64::new(0.0, 0.0), cfg.pipeline.half_width.unwrap_or(2.0), cfg.pipeline.grid_n)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

pub fn solve(cfg: &RunConfig) -> Result<(), Failure> {
    let mut diag: Vec<CheckReport> = Vec::new();
    let mut lines: Vec<String> = vec![format!("mode = {}", cfg.mode.as_str())];
    let map = match cfg.mode {
        Mode::MuZero | Mode::KDisc => {
            let spec = test_grid(cfg)?;
            let k = if cfg.mode == Mode::KDisc { cfg.k_disc } else { 0.0 };
            let field = if k == 0.0 { BeltramiField::zero(spec) } else { disc_field(spec, Complex64::new(0.0, 0.0), 1.0, Complex64::new(k, 0.0)) };
            let map = solve_mrt(&field, &cfg.pipeline.solver).map_err(solver_failure)?;
            lines.push(format!("k = {k:?}"));
            // closed form: z + k z̄ inside the unit disc, z + k/z outside
            let exact = |z: Complex64| if z.norm() < 1.0 { z + k * z.conj() } else { z + k / z };
            let err = (0..spec.len()).map(|i| (map.eval(spec.node_at(i)) - exact(spec.node_at(i))).norm()).fold(0.0, f64::max);
            lines.push(format!("max |phi - exact| = {err:?}"));
            lines.push(format!("a - k = {:?}", (map.a - k).norm()));
            map
        }
        _ => {
            let plan = plan(cfg)?;
            let (state, source) = saved_state(cfg, &plan)?;
            lines.push(format!("state = {source}"));
            let params = plan.params_for(&state);
            if cfg.mode == Mode::IdentityPhi {
                QuasiconformalMap::identity(cfg.pipeline.grid_for(&params).map_err(solver_failure)?)
            } else {
                let spec = cfg.pipeline.grid_for(&params).map_err(solver_failure)?;
                let model = Model::new(params).map_err(|e| Failure::new(EXIT_PERMISSIBILITY, e.to_string()))?;
                let field = model_beltrami(&model, spec, &cfg.pipeline.beltrami).map_err(solver_failure)?;
                lines.push(format!("supnorm mu = {:?}", field.supnorm()));
                lines.push(format!("singular cells = {}", field.singular_count()));
                solve_mrt(&field, &cfg.pipeline.solver).map_err(solver_failure)?
            }
        }
    };
    let (sup, tail) = phi_displacement_bounds(&map);
    diag.push(CheckReport::from_margin("sup |phi(z) - z| <= 1/32", EPS0 - sup, format!("{sup:?}"), map.spec().len()));
    diag.push(CheckReport::from_margin("sup_{|z|>1} |z| |phi(z) - z| <= 1/32", EPS0 - tail, format!("{tail:?}"), map.spec().len()));
    lines.push(format!("iterations = {}", map.iterations));
    lines.push(format!("residual = {:?}", map.residual));
    lines.push(format!("a = {:?} {:?}", map.a.re, map.a.im));
    write_file(&cfg.out.join("phi.grid"), |w| map.write_binary(w))?;
    write_file(&cfg.out.join("phi.json"), |w| map.write_sidecar(w))?;
    write_file(&cfg.out.join("solve.txt"), |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        writeln!(w, "\n# displacement against eps0 = 1/32")?;
        write_reports(&mut *w, &diag)
    })?;
    println!("solved in {} iterations, a = {:.6e}", map.iterations, map.a);
    Ok(())
}

fn write_selection(cfg: &RunConfig, sched: &Schedule) -> Result<(), Failure> {
    let ideal = wandering::eeps::epsilon_for(sched.plan.big_r, sched.plan.n0);
    write_file(&cfg.out.join("selection.txt"), |w| {
        writeln!(w, "# n_k selection; ideal tube ln R^(1/n0) = {ideal:?}")?;
        writeln!(
            w,
            "# configured: tube {:?} wandering {:?} convexity {:?} eta {:?}",
            sched.selections.first().map(|s| s.tube).unwrap_or(ideal),
            cfg.selection.wandering,
            cfg.selection.convexity_tube,
            cfg.selection.eta
        )?;
        for s in &sched.selections {
            match &s.result {
                Ok(t) => {
                    writeln!(w, "k={} selected {}", s.k, t.summary())?;
                    writeln!(w, "k={} achieved max|log Q| = {:?} (ideal {ideal:?})", s.k, s.tube - t.distortion)?;
                }
                Err(e) => writeln!(w, "k={} candidate n={} kept: {e}", s.k, sched.plan.nseq[s.k - 1])?,
            }
        }
        Ok(())
    })
}

fn write_consequences(cfg: &RunConfig, plan: &Plan, ctx: &Context) -> Result<(), Failure> {
    let table = consequences(ctx, plan, cfg.horizon);
    let singular = real_singular_orbits(ctx, cfg.horizon);
    write_file(&cfg.out.join("consequences.txt"), |w| {
        writeln!(w, "block\tj\tre\tim\ttarget_step\t|f^t(v)-1|\tverdict\ttail_exact")?;
        for c in &table {
            let t = c.target_step.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
            let h = c.hit().map(|h| format!("{h:?}")).unwrap_or_else(|| "-".into());
            writeln!(w, "{}\t{}\t{:?}\t{:?}\t{t}\t{h}\t{}\t{}", c.block, c.j, c.value.re, c.value.im, c.orbit.verdict.as_str(), c.orbit.tail_exact)?;
        }
        for (v, o) in &singular {
            writeln!(w, "singular\t-\t{v:?}\t0.0\t-\t-\t{}\t{}", o.verdict.as_str(), o.tail_exact)?;
        }
        Ok(())
    })
}

pub fn search(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.mode == Mode::Toy {
        let plan = plan(cfg)?;
        let init = match &cfg.resume {
            Some(_) => saved_state(cfg, &plan)?.0,
            None => initial_state(cfg, &plan),
        };
        let mut map = AffineControl::new(plan.domains.clone());
        let out = run_search(&init, &mut map, &cfg.iterate);
        write_file(&checkpoint_path(cfg), |w| out.state.write_checkpoint(w))?;
        return match out.error {
            None => {
                println!("toy contraction converged, residual {:.3e}", out.state.residual);
                Ok(())
            }
            Some(e) => Err(Failure::new(EXIT_SEARCH, e.to_string())),
        };
    }
    let sched = schedule(&cfg.plan, &cfg.pipeline, &cfg.selection).map_err(|e| match e {
        Error::Selection(_) => Failure::new(EXIT_SEARCH, e.to_string()),
        other => solver_failure(other),
    })?;
    write_selection(cfg, &sched)?;
    let Schedule { plan, baseline, .. } = sched;
    let init = match &cfg.resume {
        Some(_) => saved_state(cfg, &plan)?.0,
        None => initial_state(cfg, &plan),
    };
    let mut map = ModelMap::new(plan.clone(), cfg.pipeline.clone());
    if cfg.freeze_last && plan.pseq.len() == plan.level {
        map.frozen = 1;
    }
    let out = run_search(&init, &mut map, &cfg.iterate);
    write_file(&checkpoint_path(cfg), |w| out.state.write_checkpoint(w))?;
    write_file(&cfg.out.join("history.txt"), |w| {
        for h in &out.state.history {
            writeln!(w, "{h:?}")?;
        }
        Ok(())
    })?;
    let ctx = map.last.take().map(|(c, _)| c).unwrap_or(baseline.0);
    write_consequences(cfg, &plan, &ctx)?;
    match out.error {
        None => {
            println!("fixpoint converged after {} evaluations, residual {:.3e}", map.evaluations, out.state.residual);
            Ok(())
        }
        Some(e) => Err(Failure::new(EXIT_SEARCH, format!("search did not converge: {e}"))),
    }
}

fn model_checks(cfg: &RunConfig) -> Result<Vec<CheckReport>, Failure> {
    let plan = plan(cfg)?;
    let (state, _) = saved_state(cfg, &plan)?;
    let (ctx, field) = context(cfg, &plan, &state)?;
    let mut out = estimate_battery(&ctx, field.as_ref(), &cfg.battery);
    let n_last = *plan.nseq.last().expect("nonempty");
    for n in 1..=n_last {
        out.extend(branch_distortion_checks(&ctx, n, &cfg.distortion_options()));
    }
    out.extend(r_vector_checks(&ctx));
    out.push(straightening_residual(&ctx, 1, STENCIL, cfg.pipeline.beltrami.exec).report("straightening |mu_f| < 5e-2", 5e-2));
    for n in 1..=n_last {
        let name = format!("derivative sandwich n={n}");
        match (ctx.derivative_bounds(n), ctx.log_derivative_fd(n)) {
            (Ok(b), Ok(l)) => out.push(CheckReport::from_margin(
                name,
                (l - b.ln_lower).min(b.ln_upper - l),
                format!("ln {l:?} in [{:?}, {:?}]", b.ln_lower, b.ln_upper),
                1,
            )),
            (Err(e), _) | (_, Err(e)) => out.push(CheckReport::inapplicable(name, e.to_string())),
        }
    }
    for k in 1..plan.level {
        let name = format!("inclusion k={k}");
        let hop = Hop::for_level(k, plan.pseq[k - 1], plan.pseq[k], plan.nseq[k]).map_err(solver_failure)?;
        let rep = check_inclusion(&ctx, &hop, cfg.inclusion_samples);
        let witness = rep.worst_sample.map(|z| format!("z={:?},{:?}", z.re, z.im)).unwrap_or(rep.note.clone());
        out.push(match rep.verdict {
            InclusionVerdict::Indeterminate => CheckReport::inapplicable(name, rep.note),
            _ => CheckReport::from_margin(name, rep.margin, witness, rep.samples),
        });
    }
    let escaping = |v: &Verdict| if *v == Verdict::Escaping { 1.0 } else { -1.0 };
    for (v, o) in real_singular_orbits(&ctx, cfg.horizon) {
        out.push(CheckReport::from_margin(format!("escape v={v:?}"), escaping(&o.verdict), format!("{} tail_exact={}", o.verdict.as_str(), o.tail_exact), o.steps.len()));
    }
    for c in consequences(&ctx, &plan, cfg.horizon) {
        out.push(CheckReport::from_margin(
            format!("escape critical value {}.{}", c.block, c.j),
            escaping(&c.orbit.verdict),
            format!("{} tail_exact={}", c.orbit.verdict.as_str(), c.orbit.tail_exact),
            c.orbit.steps.len(),
        ));
    }
    Ok(out)
}

pub fn verify(cfg: &RunConfig) -> Result<(), Failure> {
    let reports = match cfg.mode {
        Mode::LemmaSuite => lemma_suite(&cfg.distortion_options()).map_err(|e| Failure::new(EXIT_VERIFY, e.to_string()))?,
        Mode::NegativeControl => vec![negative_control()],
        _ => model_checks(cfg)?,
    };
    write_file(&cfg.out.join("verify.txt"), |w| write_reports(w, &reports))?;
    let failed: Vec<&str> = reports.iter().filter(|r| r.status == Status::Fail).map(|r| r.name.as_str()).collect();
    let passed = reports.iter().filter(|r| r.passed()).count();
    println!("{passed} passed, {} failed, {} inapplicable", failed.len(), reports.len() - passed - failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_VERIFY, format!("failed checks: {}", failed.join("; "))))
    }
}
