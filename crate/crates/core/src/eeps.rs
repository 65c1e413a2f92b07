//! The convex parameter set `E_ε` of root-perturbation factors.

use crate::error::{Error, Result};
use crate::maps::roots_of_minus_one;
use crate::verify::CheckReport;
use num_complex::Complex64;
use rand::Rng;

/// `ε = log(R^{1/n₀})`.
pub fn epsilon_for(big_r: f64, n0: u32) -> f64 {
    big_r.ln() / n0 as f64
}

/// Outcome of a membership test.  Margins are `ε − |log(·)|`, so non-negative means inside.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub margin: f64,
    pub factor_margins: Vec<f64>,
    pub difference_margins: Vec<f64>,
}

/// Cyclic divided differences `(r_{j+1}ξ_{j+1} − r_jξ_j)/(ξ_{j+1} − ξ_j)`.
pub fn divided_differences(r: &[Complex64]) -> Vec<Complex64> {
    let k = r.len();
    let xi = roots_of_minus_one(k);
    (0..k)
        .map(|j| {
            let n = (j + 1) % k;
            (r[n] * xi[n] - r[j] * xi[j]) / (xi[n] - xi[j])
        })
        .collect()
}

fn log_norm(v: Complex64) -> Result<f64> {
    if !(v.norm() > 0.0) || !v.is_finite() {
        return Err(Error::Malformed(format!("cannot take log of {v}")));
    }
    Ok(v.ln().norm())
}

/// Tests `r_j ∈ exp(D̄(0, ε))` and the same for every cyclic divided difference.
pub fn e_eps_membership(r: &[Complex64], eps: f64) -> Result<Membership> {
    if r.is_empty() {
        return Err(Error::Malformed("empty factor vector".into()));
    }
    let factor_margins = r
        .iter()
        .map(|&v| log_norm(v).map(|l| eps - l))
        .collect::<Result<Vec<_>>>()?;
    let difference_margins = if r.len() == 1 {
        Vec::new()
    } else {
        divided_differences(r)
            .into_iter()
            .map(|v| log_norm(v).map(|l| eps - l))
            .collect::<Result<Vec<_>>>()?
    };
    let margin = factor_margins
        .iter()
        .chain(&difference_margins)
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(Membership {
        member: margin >= 0.0,
        margin,
        factor_margins,
        difference_margins,
    })
}

/// Draws a member of `E_ε` in `ℂ^m` by rejection, giving up after `10⁴` rejections.
pub fn sample_member<R: Rng>(m: usize, eps: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    let spread = (std::f64::consts::PI / m as f64).sin().min(1.0);
    for _ in 0..10_000 {
        let scale = spread * (0.5 + rng.gen::<f64>());
        let r: Vec<Complex64> = (0..m)
            .map(|_| {
                let rad = rng.gen::<f64>().sqrt() * eps * scale;
                let ang = rng.gen::<f64>() * std::f64::consts::TAU;
                Complex64::from_polar(rad, ang).exp()
            })
            .collect();
        if e_eps_membership(&r, eps)?.member {
            return Ok(r);
        }
    }
    Err(Error::Sampling(format!("no member of E_eps found for m={m}, eps={eps}")))
}

/// Samples member pairs and `t ∈ [0, 1]` and checks the convex combination stays inside.
pub fn e_eps_convexity_probe<R: Rng>(
    m: usize,
    eps: f64,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    if trials == 0 {
        return Err(Error::param("convexity probe needs at least one trial"));
    }
    let mut worst = f64::INFINITY;
    let mut witness = String::new();
    for trial in 0..trials {
        let a = sample_member(m, eps, rng)?;
        let b = sample_member(m, eps, rng)?;
        let t = match trial {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen::<f64>(),
        };
        let mix: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * t + y * (1.0 - t)).collect();
        let mem = e_eps_membership(&mix, eps)?;
        if mem.margin < worst {
            worst = mem.margin;
            witness = format!("trial={trial} t={t:.6}");
        }
    }
    Ok(CheckReport::from_margin(
        format!("e_eps_convexity(m={m},eps={eps})"),
        worst,
        witness,
        trials,
    ))
}

/// Nearest point of `E_ε` along the segment from `(1, …, 1)` to `r` (the set is convex and
/// contains `(1, …, 1)`, so the segment crosses its boundary once).
pub fn project_radially(r: &[Complex64], eps: f64) -> Result<Vec<Complex64>> {
    if e_eps_membership(r, eps)?.member {
        return Ok(r.to_vec());
    }
    let one = Complex64::new(1.0, 0.0);
    let at = |s: f64| -> Vec<Complex64> { r.iter().map(|&x| one + (x - one) * s).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let inside = e_eps_membership(&at(mid), eps).map(|m| m.member).unwrap_or(false);
        if inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}
