use super::{bump_raw, DiscMap, DiscParams};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Strip map: `cosh` for `Re v ≤ π`, `exp` for `Re v ≥ 2π`, bump-blended in between.
pub fn sigma(v: Complex64) -> Complex64 {
    let t = v.re;
    if t >= 2.0 * PI {
        v.exp()
    } else if t <= PI {
        v.cosh()
    } else {
        let xi = sigma_weight(t);
        v.exp() * xi + v.cosh() * (1.0 - xi)
    }
}

/// Blend weight of `exp` in [`sigma`] at real part `t`.
pub fn sigma_weight(t: f64) -> f64 {
    if t >= 2.0 * PI {
        1.0
    } else if t <= PI {
        0.0
    } else {
        1.0 - bump_raw((t - PI) / PI)
    }
}

/// Disc centre `z_n = nπ + iπ`.
pub fn disc_center(n: usize) -> Result<Complex64> {
    if n < 1 {
        return Err(Error::domain("disc index must be >= 1"));
    }
    Ok(center(n))
}

#[inline]
fn center(n: usize) -> Complex64 {
    Complex64::new(n as f64 * PI, PI)
}

/// The half-strip `Re z > 0, |Im z| < π/2`, plus the width of the collar around each disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStrip {
    pub collar: f64,
}

impl Default for HalfStrip {
    fn default() -> Self {
        HalfStrip { collar: 0.5 }
    }
}

impl HalfStrip {
    pub fn contains(&self, z: Complex64) -> bool {
        z.re > 0.0 && z.im.abs() < PI / 2.0
    }
}

/// Which piece of the assembly produced a value of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `σ(λ sinh z)` on the half-strip or its reflections.
    Strip,
    /// `ι_n(z − z_n)` on a closed unit disc or its reflections.
    Disc(usize),
    /// Interpolation collar around disc `n`.
    Collar(usize),
    /// Continuation of the strip formula elsewhere.
    Residual,
}

impl Region {
    /// True on the collar and residual set, where `g` is an interpolation surrogate.
    pub fn is_surrogate(self) -> bool {
        matches!(self, Region::Collar(_) | Region::Residual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GValue {
    pub value: Complex64,
    pub region: Region,
}

/// The full parameter vector, truncated to `level` active blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub level: usize,
    /// Active disc blocks keyed by disc index; missing indices are inactive.
    pub discs: BTreeMap<usize, DiscParams>,
    pub nseq: Vec<usize>,
    pub pseq: Vec<usize>,
    pub cseq: Vec<f64>,
    pub n0: u32,
    /// Power used on inactive discs.
    pub inactive_m: u32,
    pub strip: HalfStrip,
}

impl ModelParams {
    /// A model with no active blocks.
    pub fn bare(lambda: f64, inactive_m: u32) -> ModelParams {
        ModelParams {
            lambda,
            level: 0,
            discs: BTreeMap::new(),
            nseq: vec![1],
            pseq: Vec::new(),
            cseq: Vec::new(),
            n0: 16,
            inactive_m,
            strip: HalfStrip::default(),
        }
    }

    pub fn disc(&self, n: usize) -> DiscParams {
        self.discs
            .get(&n)
            .cloned()
            .unwrap_or_else(|| DiscParams::inactive(n, self.inactive_m))
    }

    pub fn m_of(&self, n: usize) -> u32 {
        self.discs.get(&n).map_or(self.inactive_m, |d| d.m)
    }
}

/// Assembled quasiregular model `g`, ready for evaluation.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    maps: BTreeMap<usize, DiscMap>,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Model> {
        if !(params.lambda > 0.0) || !params.lambda.is_finite() {
            return Err(Error::param(format!("lambda = {} must be positive", params.lambda)));
        }
        if params.inactive_m < 3 {
            return Err(Error::param("inactive power must be >= 3"));
        }
        if !(params.strip.collar > 0.0 && params.strip.collar < PI / 2.0 - 1.0) {
            return Err(Error::param("collar width must lie in (0, pi/2 - 1)"));
        }
        let mut maps = BTreeMap::new();
        for (&n, d) in &params.discs {
            if d.index != n {
                return Err(Error::param(format!("disc keyed {n} carries index {}", d.index)));
            }
            maps.insert(n, DiscMap::new(d.clone(), params.n0)?);
        }
        Ok(Model { params, maps })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn disc_map(&self, n: usize) -> Option<&DiscMap> {
        self.maps.get(&n)
    }

    /// `σ(λ sinh z)`, the strip formula, evaluated anywhere.
    #[inline]
    pub fn strip_formula(&self, z: Complex64) -> Complex64 {
        sigma(z.sinh() * self.params.lambda)
    }

    /// `g(z)` with its region tag.
    pub fn eval(&self, z: Complex64) -> GValue {
        let (q, flip) = canonical(z);
        let mut out = self.eval_quadrant(q);
        if flip {
            out.value = out.value.conj();
        }
        out
    }

    pub fn g(&self, z: Complex64) -> Complex64 {
        self.eval(z).value
    }

    /// Evaluation on the closed first quadrant.
    fn eval_quadrant(&self, q: Complex64) -> GValue {
        if q.re > 0.0 && q.im < PI / 2.0 {
            return GValue { value: self.strip_formula(q), region: Region::Strip };
        }
        let n = ((q.re / PI).round() as usize).max(1);
        let d = q - center(n);
        let s = d.norm();
        if s <= 1.0 {
            let value = match self.maps.get(&n) {
                Some(map) => map.eval_raw(d),
                None => d.powu(self.params.inactive_m),
            };
            return GValue { value, region: Region::Disc(n) };
        }
        let width = self.params.strip.collar;
        if s < 1.0 + width {
            let chi = 1.0 - bump_raw((s - 1.0) / width);
            let inner = d.powu(self.params.m_of(n));
            let value = inner * (1.0 - chi) + self.residual_formula(q) * chi;
            return GValue { value, region: Region::Collar(n) };
        }
        GValue { value: self.residual_formula(q), region: Region::Residual }
    }

    /// Residual-set surrogate on the first quadrant: the boundary values of the strip
    /// formula on `Im z = π/2`, extended vertically.  These lie in `[−1, 1]`.
    #[inline]
    fn residual_formula(&self, q: Complex64) -> Complex64 {
        self.strip_formula(Complex64::new(q.re, q.im.min(PI / 2.0)))
    }

    /// True where `μ_g` is passed to the solver: the strip and the discs, with reflections.
    pub fn is_modeled(&self, z: Complex64) -> bool {
        !self.eval_region(z).is_surrogate()
    }

    pub fn eval_region(&self, z: Complex64) -> Region {
        let (q, _) = canonical(z);
        if q.re > 0.0 && q.im < PI / 2.0 {
            return Region::Strip;
        }
        let n = ((q.re / PI).round() as usize).max(1);
        let s = (q - center(n)).norm();
        if s <= 1.0 {
            Region::Disc(n)
        } else if s < 1.0 + self.params.strip.collar {
            Region::Collar(n)
        } else {
            Region::Residual
        }
    }
}

/// Smooth piece of `g`.  `g` is smooth on the interior of each piece, and its
/// dilatation may jump or vary on sub-grid scales across piece boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// Strip, by `σ` branch of `λ sinh z`: 0 `cosh`, 1 blend, 2 `exp`.
    Strip(u8),
    /// Disc `n`: `η` ring, `β` triangle, `ρ_w` zone.
    Disc { n: usize, ring: bool, triangle: Option<usize>, zone: u8 },
    Collar(usize),
    Residual,
}

impl Model {
    pub fn piece(&self, z: Complex64) -> Piece {
        let (q, _) = canonical(z);
        match self.eval_region(z) {
            Region::Strip => {
                let t = (q.sinh() * self.params.lambda).re;
                Piece::Strip(if t <= PI { 0 } else if t < 2.0 * PI { 1 } else { 2 })
            }
            Region::Disc(n) => match self.maps.get(&n) {
                Some(map) => {
                    let (ring, triangle, zone) = map.piece(q - center(n));
                    Piece::Disc { n, ring, triangle, zone }
                }
                None => Piece::Disc { n, ring: false, triangle: None, zone: 0 },
            },
            Region::Collar(n) => Piece::Collar(n),
            Region::Residual => Piece::Residual,
        }
    }
}

/// Maps `z` into the closed first quadrant.
///
/// `g(−z) = g(z)` and `g(z̄) = conj g(z)`, so `g(z)` is the quadrant value,
/// conjugated when the returned flag is set.
fn canonical(z: Complex64) -> (Complex64, bool) {
    let s = if z.re < 0.0 { -z } else { z };
    if s.im < 0.0 {
        (s.conj(), true)
    } else {
        (s, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> Model {
        let mut p = ModelParams::bare(1.6, 9);
        let r = (0..8).map(|j| Complex64::new(0.001 * j as f64, 0.0005).exp()).collect();
        p.discs.insert(
            1,
            DiscParams { index: 1, m: 9, delta: 0.04, big_r: 1.45, r, w: Complex64::new(0.2, -0.1) },
        );
        Model::new(p).unwrap()
    }

    #[test]
    fn sigma_zones() {
        let v = Complex64::new(3.0 * PI, 0.4);
        assert_eq!(sigma(v), v.exp());
        for k in 0..20 {
            let y = k as f64 * 0.7 - 7.0;
            let s = sigma(Complex64::new(0.0, y));
            assert!((s.re - y.cos()).abs() < 1e-15 && s.im.abs() < 1e-15);
        }
        let mut last = 0.0;
        for k in 0..50 {
            let x = 2.0 * PI + 0.1 * k as f64;
            let s = sigma(Complex64::new(x, 0.0)).re;
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn sigma_seams_converge() {
        // jump over an interval of width h across the seams shrinks linearly in h
        for seam in [PI, 2.0 * PI] {
            let jump = |h: f64| {
                (sigma(Complex64::new(seam + h, 0.3)) - sigma(Complex64::new(seam - h, 0.3))).norm()
            };
            let (a, b) = (jump(1e-3), jump(1e-4));
            assert!(b < a / 5.0, "seam {seam}: {a} {b}");
        }
    }

    #[test]
    fn centers() {
        assert_eq!(disc_center(1).unwrap(), Complex64::new(PI, PI));
        assert_eq!(disc_center(2).unwrap(), Complex64::new(2.0 * PI, PI));
        assert!(disc_center(0).is_err());
    }

    #[test]
    fn real_axis_exp_zone() {
        let g = model();
        let x = 3.0;
        let v = 1.6 * f64::sinh(x);
        assert!(v > 2.0 * PI);
        let got = g.eval(Complex64::new(x, 0.0));
        assert_eq!(got.region, Region::Strip);
        assert!((got.value - Complex64::new(v.exp(), 0.0)).norm() < 1e-12 * v.exp());
    }

    #[test]
    fn disc_center_gives_w() {
        let g = model();
        let z = disc_center(1).unwrap();
        let got = g.eval(z);
        assert_eq!(got.region, Region::Disc(1));
        assert!((got.value - Complex64::new(0.2, -0.1)).norm() < 1e-15);
        assert_eq!(g.eval(disc_center(2).unwrap()).value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn surrogate_flags() {
        let g = model();
        let c = disc_center(1).unwrap();
        assert_eq!(g.eval(c + Complex64::new(1.2, 0.0)).region, Region::Collar(1));
        assert!(g.eval(Complex64::new(0.5, 2.0)).region.is_surrogate());
        assert!(!g.eval(Complex64::new(0.5, -1.0)).region.is_surrogate());
    }

    #[test]
    fn residual_set_is_bounded_and_glued_to_the_strip() {
        let g = model();
        for k in 0..200 {
            let z = Complex64::new(0.1 * k as f64, 1.6 + 0.05 * (k % 40) as f64);
            if g.eval(z).region == Region::Residual {
                assert!(g.g(z).norm() <= 1.0 + 1e-12);
            }
            let x = 0.05 * k as f64 + 0.01;
            let below = g.g(Complex64::new(x, PI / 2.0 - 1e-12));
            let above = g.g(Complex64::new(x, PI / 2.0 + 1e-12));
            assert!((below - above).norm() < 1e-6 * (1.0 + below.norm()));
        }
    }

    #[test]
    fn collar_is_continuous() {
        let g = model();
        for n in [1, 2] {
            let c = disc_center(n).unwrap();
            for k in 0..32 {
                let u = Complex64::from_polar(1.0, k as f64 * 0.2);
                for rad in [1.0, 1.5] {
                    let jump = |h: f64| (g.g(c + u * (rad + h)) - g.g(c + u * (rad - h))).norm();
                    let (a, b) = (jump(1e-5), jump(1e-6));
                    assert!(b < a / 5.0, "n={n} rad={rad}: {a} {b}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn symmetries_hold_exactly(x in -12.0f64..12.0, y in -6.0f64..6.0) {
            let g = model();
            let z = Complex64::new(x, y);
            prop_assert_eq!(g.g(-z), g.g(z));
            prop_assert_eq!(g.g(z.conj()), g.g(z).conj());
        }
    }
}
