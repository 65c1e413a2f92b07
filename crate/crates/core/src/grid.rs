//! Uniform square sampling of complex fields.

use crate::error::{Error, Result};
use crate::par::Exec;
use num_complex::Complex64;
use std::io::{Read, Write};

/// Geometry of an `N × N` node lattice over the box `center ± half_width`.
///
/// Node `(i, j)` (row `i`, column `j`) sits at `x_j = c_x − w + j h`,
/// `y_i = c_y − w + i h` with `h = 2w/N`, so the centre is node `(N/2, N/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub center: Complex64,
    pub half_width: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(center: Complex64, half_width: f64, n: usize) -> Result<GridSpec> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::param(format!("N = {n} must be a power of two >= 16")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::param(format!("half-width {half_width} must be positive")));
        }
        if !center.is_finite() {
            return Err(Error::param("grid center must be finite"));
        }
        Ok(GridSpec { center, half_width, n })
    }

    /// Node spacing `2·half_width/N`.
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        let h = self.h();
        Complex64::new(
            self.center.re - self.half_width + j as f64 * h,
            self.center.im - self.half_width + i as f64 * h,
        )
    }

    #[inline]
    pub fn node_at(&self, idx: usize) -> Complex64 {
        self.node(idx / self.n, idx % self.n)
    }

    /// Continuous lattice coordinates `(column, row)` of `z`.
    #[inline]
    pub fn coords(&self, z: Complex64) -> (f64, f64) {
        let h = self.h();
        (
            (z.re - self.center.re + self.half_width) / h,
            (z.im - self.center.im + self.half_width) / h,
        )
    }

    /// True if `z` lies in the convex hull of the nodes.
    pub fn contains(&self, z: Complex64) -> bool {
        let (x, y) = self.coords(z);
        let top = (self.n - 1) as f64;
        (0.0..=top).contains(&x) && (0.0..=top).contains(&y)
    }
}

/// Row-major samples of a complex field on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<ComplexGrid> {
        if values.len() != spec.len() {
            return Err(Error::param(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.n,
                spec.n
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at node {idx}")));
        }
        Ok(ComplexGrid { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> ComplexGrid {
        ComplexGrid { spec, values: vec![Complex64::new(0.0, 0.0); spec.len()] }
    }

    /// Samples `f` at every node.
    pub fn from_fn<F>(spec: GridSpec, exec: Exec, f: F) -> Result<ComplexGrid>
    where
        F: Fn(Complex64) -> Complex64 + Sync + Send,
    {
        let values = exec.map(spec.len(), |idx| f(spec.node_at(idx)));
        ComplexGrid::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.spec.n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `ℓ²` norm of the samples weighted by the cell area.
    pub fn l2_norm(&self) -> f64 {
        let h = self.spec.h();
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h).sqrt()
    }

    /// Bilinear interpolation, `None` outside the node hull.
    pub fn bilinear(&self, z: Complex64) -> Option<Complex64> {
        let n = self.spec.n;
        let (x, y) = self.spec.coords(z);
        let top = (n - 1) as f64;
        if !(0.0..=top).contains(&x) || !(0.0..=top).contains(&y) {
            return None;
        }
        let j = (x.floor() as usize).min(n - 2);
        let i = (y.floor() as usize).min(n - 2);
        let (tx, ty) = (x - j as f64, y - i as f64);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j + 1);
        let v10 = self.get(i + 1, j);
        let v11 = self.get(i + 1, j + 1);
        Some(
            v00 * ((1.0 - tx) * (1.0 - ty))
                + v01 * (tx * (1.0 - ty))
                + v10 * ((1.0 - tx) * ty)
                + v11 * (tx * ty),
        )
    }

    /// Writes the little-endian header (center, half-width, N) and the row-major values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        let mut buf = Vec::with_capacity(32 + 16 * self.values.len());
        buf.extend_from_slice(&s.center.re.to_le_bytes());
        buf.extend_from_slice(&s.center.im.to_le_bytes());
        buf.extend_from_slice(&s.half_width.to_le_bytes());
        buf.extend_from_slice(&(s.n as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<ComplexGrid> {
        let mut head = [0u8; 32];
        r.read_exact(&mut head)?;
        let f = |k: usize| f64::from_le_bytes(head[8 * k..8 * k + 8].try_into().unwrap());
        let n = u64::from_le_bytes(head[24..32].try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| Error::Format("grid size overflows".into()))?;
        let spec = GridSpec::new(Complex64::new(f(0), f(1)), f(2), n)
            .map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
        let mut body = vec![0u8; 16 * spec.len()];
        r.read_exact(&mut body)?;
        let values = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        ComplexGrid::new(spec, values).map_err(|e| Error::Format(e.to_string()))
    }
}
