use crate::commands::{context, plan, saved_state, write_file};
use crate::Failure;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::Write;
use wandering::config::RunConfig;
use wandering::dynamics::{real_orbit, Context, Dynamics};
use wandering::search::{consequences, real_singular_orbits};
use wandering::Exec;

const DISC: [u8; 3] = [255, 255, 255];
const STRIP: [u8; 3] = [220, 40, 40];

/// Iterations of `f` until `|z|` exceeds the radius, `None` when it never does.
fn escape_time(ctx: &Context, z0: Complex64, max_iter: usize, radius: f64) -> Option<usize> {
    let mut z = z0;
    for k in 0..max_iter {
        match ctx.f(z) {
            Ok(v) if v.is_finite() && v.norm() <= radius => z = v,
            _ => return Some(k + 1),
        }
    }
    None
}

fn colour(k: Option<usize>, max_iter: usize) -> [u8; 3] {
    match k {
        None => [0, 0, 0],
        Some(k) => {
            let t = 1.0 - (k as f64 - 1.0) / max_iter as f64;
            [(255.0 * t) as u8, (255.0 * t * t) as u8, (255.0 * t.sqrt()) as u8]
        }
    }
}

fn overlay(z: Complex64, px: f64) -> Option<[u8; 3]> {
    let q = Complex64::new(z.re.abs(), z.im.abs());
    let n = ((q.re / PI).round()).max(1.0);
    if ((q - Complex64::new(n * PI, PI)).norm() - 1.0).abs() < px {
        return Some(DISC);
    }
    if (q.im - PI / 2.0).abs() < 0.5 * px && q.re > 0.0 {
        return Some(STRIP);
    }
    None
}

pub fn render(cfg: &RunConfig) -> Result<(), Failure> {
    let plan = plan(cfg)?;
    let (state, _) = saved_state(cfg, &plan)?;
    let (ctx, _) = context(cfg, &plan, &state)?;
    let r = &cfg.render;
    let hw = r.half_width;
    let hh = hw * r.height as f64 / r.width as f64;
    let px = 2.0 * hw / r.width as f64;
    let rows = Exec::default().map(r.height, |i| {
        let y = r.center_im + hh - (i as f64 + 0.5) * 2.0 * hh / r.height as f64;
        let mut row = Vec::with_capacity(3 * r.width);
        for j in 0..r.width {
            let z = Complex64::new(r.center_re - hw + (j as f64 + 0.5) * px, y);
            let c = match overlay(z, px).filter(|_| r.overlays) {
                Some(c) => c,
                None => colour(escape_time(&ctx, z, r.max_iter, r.escape_radius), r.max_iter),
            };
            row.extend(c);
        }
        row
    });
    write_file(&cfg.out.join("render.ppm"), |w| {
        write!(w, "P6\n{} {}\n255\n", r.width, r.height)?;
        for row in &rows {
            w.write_all(row)?;
        }
        Ok(())
    })?;

    let half = real_orbit(0.5, r.orbit_horizon, ctx.model()).map_err(|e| Failure::new(crate::EXIT_SOLVER, e.to_string()))?;
    write_file(&cfg.out.join("orbit_half.csv"), |w| half.write_csv(w))?;
    for (v, o) in real_singular_orbits(&ctx, r.orbit_horizon) {
        let name = match v {
            x if x == 0.0 => "orbit_zero.csv",
            x if x > 0.0 => "orbit_plus_one.csv",
            _ => "orbit_minus_one.csv",
        };
        write_file(&cfg.out.join(name), |w| o.write_csv(w))?;
    }
    for c in consequences(&ctx, &plan, r.orbit_horizon) {
        write_file(&cfg.out.join(format!("orbit_cv_{}_{}.csv", c.block, c.j)), |w| c.orbit.write_csv(w))?;
    }
    println!("rendered {}x{} window at {:.4}{:+.4}i", r.width, r.height, r.center_re, r.center_im);
    Ok(())
}
