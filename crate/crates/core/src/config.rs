//! Sectioned `key = value` run configuration.
//!
//! Sections are `run`, `model`, `solver`, `dynamics`, `search`, `verify` and `render`.
//! Unknown sections and keys are rejected, and every value is range-checked.

use crate::dilatation::BeltramiOptions;
use crate::dynamics::DynamicsOptions;
use crate::error::{Error, Result};
use crate::search::{IterateOptions, PermissibilityConfig, PipelineOptions, PlanConfig, SelectionTolerances};
use crate::solver::SolverOptions;
use crate::verify::{BatteryOptions, DistortionOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Which pipeline a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The desk model.
    Default,
    /// `μ = 0`: the solver must return the identity.
    MuZero,
    /// `μ = k·𝟙_𝔻` with known closed-form solution.
    KDisc,
    /// Affine contraction in place of the model fixpoint map.
    Toy,
    /// Checks that need no solve.
    LemmaSuite,
    /// A deliberately failing check.
    NegativeControl,
    /// `φ = id`, so `f = g`.
    IdentityPhi,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Default => "default",
            Mode::MuZero => "mu-zero",
            Mode::KDisc => "k-disc",
            Mode::Toy => "toy",
            Mode::LemmaSuite => "lemma-suite",
            Mode::NegativeControl => "negative-control",
            Mode::IdentityPhi => "identity-phi",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        Ok(match s {
            "default" => Mode::Default,
            "mu-zero" => Mode::MuZero,
            "k-disc" => Mode::KDisc,
            "toy" => Mode::Toy,
            "lemma-suite" => Mode::LemmaSuite,
            "negative-control" => Mode::NegativeControl,
            "identity-phi" => Mode::IdentityPhi,
            _ => return Err(Error::Config(format!("unknown mode {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    pub center_re: f64,
    pub center_im: f64,
    /// Half the window width; the height follows the aspect ratio.
    pub half_width: f64,
    pub max_iter: usize,
    pub escape_radius: f64,
    pub overlays: bool,
    pub orbit_horizon: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 256,
            height: 256,
            center_re: std::f64::consts::PI,
            center_im: std::f64::consts::PI,
            half_width: 1.5,
            max_iter: 24,
            escape_radius: 1e6,
            overlays: true,
            orbit_horizon: 40,
        }
    }
}

/// Tubes loose enough to admit `n_2 = 2` on the desk model; the achieved values are reported.
pub fn desk_tolerances() -> SelectionTolerances {
    SelectionTolerances { tube: Some(0.75), wandering: 0.5, convexity_tube: Some(0.8), ..SelectionTolerances::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub plan: PlanConfig,
    pub permissibility: PermissibilityConfig,
    /// Per-block overrides of the initial `δ`.
    pub delta: Vec<f64>,
    pub pipeline: PipelineOptions,
    /// `k` of the k-disc test mode.
    pub k_disc: f64,
    pub horizon: usize,
    pub selection: SelectionTolerances,
    pub iterate: IterateOptions,
    /// Hold the last block fixed when its target disc is not representable.
    pub freeze_last: bool,
    pub resume: Option<PathBuf>,
    pub distortion: DistortionOptions,
    pub battery: BatteryOptions,
    pub inclusion_samples: usize,
    pub render: RenderOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            mode: Mode::Default,
            plan: PlanConfig::default(),
            permissibility: PermissibilityConfig::default(),
            delta: Vec::new(),
            pipeline: PipelineOptions::default(),
            k_disc: 0.3,
            horizon: 60,
            selection: desk_tolerances(),
            iterate: IterateOptions::default(),
            freeze_last: false,
            resume: None,
            distortion: DistortionOptions::default(),
            battery: BatteryOptions::default(),
            inclusion_samples: 64,
            render: RenderOptions::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn check(ok: bool, key: &str, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: {what}")))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Parses over the defaults, then validates.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["run", "model", "solver", "dynamics", "search", "verify", "render"].contains(&section.as_str()) {
                    return Err(at(Error::Config(format!("unknown section [{section}]"))));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
            cfg.set(&section, key.trim(), value.trim()).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; `section.key` names in errors.
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let name = format!("{section}.{key}");
        let k = name.as_str();
        match (section, key) {
            ("run", "seed") => self.seed = parse(k, v)?,
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "mode") => self.mode = v.parse()?,

            ("model", "lambda") => self.plan.lambda = parse(k, v)?,
            ("model", "level") => self.plan.level = parse(k, v)?,
            ("model", "n0") => self.plan.n0 = parse(k, v)?,
            ("model", "big_r") => self.plan.big_r = parse(k, v)?,
            ("model", "m_first") => self.plan.m_first = parse(k, v)?,
            ("model", "m_cap") => self.plan.m_cap = parse(k, v)?,
            ("model", "nseq") => self.plan.nseq = list(k, v)?,
            ("model", "delta") => self.delta = list(k, v)?,
            ("model", "m_floor") => self.permissibility.m_floor = parse(k, v)?,
            ("model", "lambda0") => self.permissibility.lambda0 = parse(k, v)?,
            ("model", "delta0") => self.permissibility.delta0 = parse(k, v)?,

            ("solver", "grid_n") => self.pipeline.grid_n = parse(k, v)?,
            ("solver", "half_width") => self.pipeline.half_width = auto(k, v)?,
            ("solver", "tol") => self.pipeline.solver.tol = parse(k, v)?,
            ("solver", "maxit") => self.pipeline.solver.maxit = parse(k, v)?,
            ("solver", "fit_ring") => self.pipeline.solver.fit_ring = parse(k, v)?,
            ("solver", "stencil_h") => self.pipeline.beltrami.h = auto(k, v)?,
            ("solver", "disc_h") => self.pipeline.beltrami.disc_h = auto(k, v)?,
            ("solver", "support_threshold") => self.pipeline.beltrami.support_threshold = parse(k, v)?,
            ("solver", "singular_threshold") => self.pipeline.beltrami.singular_threshold = parse(k, v)?,
            ("solver", "max_singular_fraction") => self.pipeline.beltrami.max_singular_fraction = parse(k, v)?,
            ("solver", "k_disc") => self.k_disc = parse(k, v)?,

            ("dynamics", "inversion_tol") => self.pipeline.dynamics.inversion_tol = parse(k, v)?,
            ("dynamics", "branch_tol") => self.pipeline.dynamics.branch_tol = parse(k, v)?,
            ("dynamics", "fd_step") => self.pipeline.dynamics.fd_step = parse(k, v)?,
            ("dynamics", "escape_radius") => self.pipeline.dynamics.escape_radius = parse(k, v)?,
            ("dynamics", "tail") => self.pipeline.dynamics.tail = parse(k, v)?,
            ("dynamics", "depth") => self.pipeline.dynamics.depth = parse(k, v)?,
            ("dynamics", "horizon") => self.horizon = parse(k, v)?,

            ("search", "tol") => self.iterate.tol = parse(k, v)?,
            ("search", "maxit") => self.iterate.maxit = parse(k, v)?,
            ("search", "damping") => self.iterate.damping = parse(k, v)?,
            ("search", "fallback_budget") => self.iterate.fallback_budget = parse(k, v)?,
            ("search", "freeze_last") => self.freeze_last = parse(k, v)?,
            ("search", "resume") => self.resume = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            ("search", "tube") => self.selection.tube = auto(k, v)?,
            ("search", "wandering") => self.selection.wandering = parse(k, v)?,
            ("search", "convexity_tube") => self.selection.convexity_tube = auto(k, v)?,
            ("search", "eta") => self.selection.eta = parse(k, v)?,
            ("search", "n_max") => self.selection.n_max = parse(k, v)?,
            ("search", "selection_samples") => self.selection.samples = parse(k, v)?,

            ("verify", "samples") => self.distortion.samples = parse(k, v)?,
            ("verify", "slack") => self.distortion.slack = parse(k, v)?,
            ("verify", "fd_step") => self.distortion.fd_step = parse(k, v)?,
            ("verify", "circle") => self.distortion.circle = parse(k, v)?,
            ("verify", "radial_steps") => self.distortion.radial_steps = parse(k, v)?,
            ("verify", "boundary_samples") => self.battery.boundary_samples = parse(k, v)?,
            ("verify", "s0") => self.battery.s0 = parse(k, v)?,
            ("verify", "inclusion_samples") => self.inclusion_samples = parse(k, v)?,

            ("render", "width") => self.render.width = parse(k, v)?,
            ("render", "height") => self.render.height = parse(k, v)?,
            ("render", "center_re") => self.render.center_re = parse(k, v)?,
            ("render", "center_im") => self.render.center_im = parse(k, v)?,
            ("render", "half_width") => self.render.half_width = parse(k, v)?,
            ("render", "max_iter") => self.render.max_iter = parse(k, v)?,
            ("render", "escape_radius") => self.render.escape_radius = parse(k, v)?,
            ("render", "overlays") => self.render.overlays = parse(k, v)?,
            ("render", "orbit_horizon") => self.render.orbit_horizon = parse(k, v)?,

            ("", _) => return Err(Error::Config(format!("key {key:?} outside any section"))),
            _ => return Err(Error::Config(format!("unknown key {name}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plan;
        check(p.lambda > 0.0 && p.lambda.is_finite(), "model.lambda", "must be positive")?;
        check((1..=3).contains(&p.level), "model.level", "must be 1, 2 or 3")?;
        check(p.n0 >= 1, "model.n0", "must be >= 1")?;
        check((1.0..1.5).contains(&p.big_r), "model.big_r", "must lie in [1, 3/2)")?;
        check(p.m_first >= 3 && p.m_first <= p.m_cap, "model.m_first", "must lie in [3, m_cap]")?;
        check(p.nseq.windows(2).all(|w| w[0] < w[1]) && p.nseq.iter().all(|&n| n >= 2), "model.nseq", "must increase from >= 2")?;
        check(self.delta.iter().all(|d| d.is_finite()), "model.delta", "must be finite")?;
        check(self.delta.len() <= p.level, "model.delta", "at most one value per block")?;
        check(self.permissibility.delta0 > 0.0, "model.delta0", "must be positive")?;
        check(self.permissibility.m_floor >= 3, "model.m_floor", "must be >= 3")?;

        let s = &self.pipeline;
        check(s.grid_n >= 16 && s.grid_n.is_power_of_two(), "solver.grid_n", "must be a power of two >= 16")?;
        check(s.half_width.is_none_or(|h| h > 0.0), "solver.half_width", "must be positive")?;
        check(s.solver.tol > 0.0, "solver.tol", "must be positive")?;
        check(s.solver.maxit >= 1, "solver.maxit", "must be >= 1")?;
        check(s.solver.fit_ring >= 1 && s.solver.fit_ring < s.grid_n / 4, "solver.fit_ring", "must lie in [1, grid_n/4)")?;
        check(s.beltrami.h.is_none_or(|h| h > 0.0), "solver.stencil_h", "must be positive")?;
        check(s.beltrami.disc_h.is_none_or(|h| h > 0.0), "solver.disc_h", "must be positive")?;
        check(s.beltrami.support_threshold >= 0.0, "solver.support_threshold", "must be >= 0")?;
        check(s.beltrami.singular_threshold >= 0.0, "solver.singular_threshold", "must be >= 0")?;
        check((0.0..=1.0).contains(&s.beltrami.max_singular_fraction), "solver.max_singular_fraction", "must lie in [0, 1]")?;
        check(self.k_disc.abs() < 1.0, "solver.k_disc", "must satisfy |k| < 1")?;

        let d = &s.dynamics;
        check(d.inversion_tol > 0.0 && d.branch_tol > 0.0, "dynamics.*_tol", "must be positive")?;
        check(d.fd_step > 0.0 && d.fd_step < 1.0, "dynamics.fd_step", "must lie in (0, 1)")?;
        check(d.escape_radius > 1.0, "dynamics.escape_radius", "must exceed 1")?;
        check(d.tail >= 1, "dynamics.tail", "must be >= 1")?;
        check(d.depth >= 1, "dynamics.depth", "must be >= 1")?;
        check(self.horizon > d.tail, "dynamics.horizon", "must exceed the tail length")?;

        check(self.iterate.tol > 0.0, "search.tol", "must be positive")?;
        check(self.iterate.damping > 0.0 && self.iterate.damping <= 1.0, "search.damping", "must lie in (0, 1]")?;
        let sel = &self.selection;
        check(sel.tube.is_none_or(|t| t > 0.0), "search.tube", "must be positive")?;
        check(sel.convexity_tube.is_none_or(|t| t > 0.0), "search.convexity_tube", "must be positive")?;
        check(sel.eta > 0.0, "search.eta", "must be positive")?;
        check(sel.n_max >= 2, "search.n_max", "must be >= 2")?;
        check(sel.samples >= 4, "search.selection_samples", "must be >= 4")?;

        let v = &self.distortion;
        check(v.samples >= 1, "verify.samples", "must be >= 1")?;
        check(v.slack >= 0.0, "verify.slack", "must be >= 0")?;
        check(v.fd_step > 0.0 && v.fd_step < 0.1, "verify.fd_step", "must lie in (0, 0.1)")?;
        check(v.circle >= 16, "verify.circle", "must be >= 16")?;
        check(v.radial_steps >= 1, "verify.radial_steps", "must be >= 1")?;
        check(self.battery.boundary_samples >= 4, "verify.boundary_samples", "must be >= 4")?;
        check((0.0..1.0).contains(&self.battery.s0), "verify.s0", "must lie in [0, 1)")?;
        check(self.inclusion_samples >= 4, "verify.inclusion_samples", "must be >= 4")?;

        let r = &self.render;
        check(r.width >= 1 && r.height >= 1 && r.width * r.height <= 1 << 24, "render.width/height", "must be positive and at most 2^24 pixels")?;
        check(r.half_width > 0.0, "render.half_width", "must be positive")?;
        check(r.max_iter >= 1, "render.max_iter", "must be >= 1")?;
        check(r.escape_radius > 1.0, "render.escape_radius", "must exceed 1")?;
        Ok(())
    }

    /// Distortion options with the run seed applied.
    pub fn distortion_options(&self) -> DistortionOptions {
        DistortionOptions { seed: self.seed, ..self.distortion }
    }

    pub fn beltrami_options(&self) -> BeltramiOptions {
        self.pipeline.beltrami
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.pipeline.solver
    }

    pub fn dynamics_options(&self) -> DynamicsOptions {
        self.pipeline.dynamics
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n[model]\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn reference_file_lists_the_defaults() {
        let text = include_str!("../../../config/reference.conf");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn values_are_applied() {
        let cfg = RunConfig::parse(
            "[run]\nseed = 7\nmode = toy\n[model]\ndelta = 0.02, 0.03\nnseq = 2 3\n[solver]\nhalf_width = 20 # box\nstencil_h = auto\n[search]\ntube = 0.7\nfreeze_last = true\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, Mode::Toy);
        assert_eq!(cfg.delta, vec![0.02, 0.03]);
        assert_eq!(cfg.plan.nseq, vec![2, 3]);
        assert_eq!(cfg.pipeline.half_width, Some(20.0));
        assert_eq!(cfg.pipeline.beltrami.h, None);
        assert_eq!(cfg.selection.tube, Some(0.7));
        assert!(cfg.freeze_last);
        assert_eq!(cfg.distortion_options().seed, 7);
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        for bad in [
            "[model]\nlambdaa = 2\n",
            "[nosuch]\n",
            "seed = 1\n",
            "[model]\nlambda\n",
            "[model]\nlambda = fast\n",
            "[model]\nbig_r = 1.6\n",
            "[solver]\ngrid_n = 1000\n",
            "[search]\ndamping = 0\n",
            "[run]\nmode = fancy\n",
            "[model]\nlevel = 4\n",
        ] {
            match RunConfig::parse(bad) {
                Err(Error::Config(_)) => {}
                other => panic!("{bad:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("[model]\n\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("model.bogus"), "{err}");
    }

    #[test]
    fn modes_round_trip() {
        for m in [Mode::Default, Mode::MuZero, Mode::KDisc, Mode::Toy, Mode::LemmaSuite, Mode::NegativeControl, Mode::IdentityPhi] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
    }
}
