//! Grids, banded operators and quadrature.
//!
//! The x-grid has `nx` intervals of width `h = L/nx`. The dynamic unknowns
//! are the interior nodes `1..nx−1`; boundary values are pinned to zero.
//! Ghost nodes outside `[0, L]` are eliminated through the boundary
//! conditions, so every operator acts on interior vectors only.

use crate::error::{invalid, Error, Result};

/// Uniform grid on `[0, L]` with `nx` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    pub l: f64,
    pub nx: usize,
    pub h: f64,
}

impl SpaceGrid {
    pub const MIN_NX: usize = 8;

    pub fn new(l: f64, nx: usize) -> Result<Self> {
        if !(l > 0.0) {
            return Err(invalid("L", format!("{l} must be positive")));
        }
        if nx < Self::MIN_NX {
            return Err(Error::GridTooCoarse {
                what: "nx",
                got: nx,
                min: Self::MIN_NX,
            });
        }
        Ok(Self {
            l,
            nx,
            h: l / nx as f64,
        })
    }

    /// Coordinate of node `i` (`0 ≤ i ≤ nx`).
    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx {
            self.l
        } else {
            i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.nx).map(|i| self.x(i)).collect()
    }

    /// Number of interior unknowns per field.
    pub fn interior(&self) -> usize {
        self.nx - 1
    }
}

/// Uniform grid on `[0, 1]` for the delay variable ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoGrid {
    pub nrho: usize,
    pub drho: f64,
}

impl RhoGrid {
    pub const MIN_NRHO: usize = 4;

    pub fn new(nrho: usize) -> Result<Self> {
        if nrho < Self::MIN_NRHO {
            return Err(Error::GridTooCoarse {
                what: "nrho",
                got: nrho,
                min: Self::MIN_NRHO,
            });
        }
        Ok(Self {
            nrho,
            drho: 1.0 / nrho as f64,
        })
    }

    pub fn rho(&self, j: usize) -> f64 {
        if j == self.nrho {
            1.0
        } else {
            j as f64 * self.drho
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.nrho).map(|j| self.rho(j)).collect()
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    fn index(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.index(i, j)]
        } else {
            0.0
        }
    }

    /// # Panics
    /// If `(i, j)` lies outside the matrix or its band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i < self.n && j < self.n && self.in_band(i, j),
            "({i}, {j}) outside band"
        );
        let k = self.index(i, j);
        self.data[k] = v;
    }

    /// # Panics
    /// If `(i, j)` lies outside the matrix or its band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i < self.n && j < self.n && self.in_band(i, j),
            "({i}, {j}) outside band"
        );
        let k = self.index(i, j);
        self.data[k] += v;
    }

    /// Column range `[lo, hi)` of row `i` inside the band.
    fn cols(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.kl), (i + self.ku + 1).min(self.n))
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let w = self.kl + self.ku + 1;
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = self.cols(i);
            let row = &self.data[i * w..(i + 1) * w];
            let off = lo + self.kl - i;
            *yi = row[off..off + (hi - lo)]
                .iter()
                .zip(&x[lo..hi])
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    /// `self + s·other` (bandwidths are the larger of the two).
    pub fn add_scaled(&self, s: f64, other: &BandedMatrix) -> BandedMatrix {
        assert_eq!(self.n, other.n);
        let mut out = Self::zeros(self.n, self.kl.max(other.kl), self.ku.max(other.ku));
        for m in [(1.0, self), (s, other)] {
            for i in 0..m.1.n {
                let (lo, hi) = m.1.cols(i);
                for j in lo..hi {
                    out.add(i, j, m.0 * m.1.get(i, j));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> BandedMatrix {
        let mut out = Self::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let (lo, hi) = self.cols(i);
            for j in lo..hi {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// LU factorization without pivoting, which keeps the band structure.
    ///
    /// Stable when the symmetric part is positive definite, as it is for
    /// the θ-scheme matrices built here. A pivot below `1e−13·‖row‖` is
    /// reported as singular.
    pub fn lu(&self) -> std::result::Result<BandedLu, usize> {
        let mut a = self.clone();
        let (kl, ku) = (a.kl, a.ku);
        for k in 0..a.n {
            let pivot = a.get(k, k);
            let (lo, hi) = self.cols(k);
            let scale = (lo..hi).map(|j| self.get(k, j).abs()).fold(0.0, f64::max);
            if !(pivot.abs() > 1e-13 * scale) {
                return Err(k);
            }
            let imax = (k + kl + 1).min(a.n);
            let jmax = (k + ku + 1).min(a.n);
            for i in k + 1..imax {
                let li = a.get(i, k) / pivot;
                if li == 0.0 {
                    continue;
                }
                a.set(i, k, li);
                for j in k + 1..jmax {
                    let v = a.get(k, j);
                    a.add(i, j, -li * v);
                }
            }
        }
        Ok(BandedLu { lu: a })
    }
}

/// Packed `L\U` factors from [`BandedMatrix::lu`].
#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        assert_eq!(b.len(), a.n);
        for i in 0..a.n {
            let lo = i.saturating_sub(a.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= a.get(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..a.n).rev() {
            let hi = (i + a.ku + 1).min(a.n);
            let mut s = b[i];
            for j in i + 1..hi {
                s -= a.get(i, j) * b[j];
            }
            b[i] = s / a.get(i, i);
        }
    }
}

/// First derivative on all `nx+1` nodes: centered in the interior,
/// one-sided second order at both ends. Exact on quadratics.
pub fn d1_operator(grid: &SpaceGrid) -> BandedMatrix {
    let n = grid.nx + 1;
    let c = 0.5 / grid.h;
    let mut d = BandedMatrix::zeros(n, 2, 2);
    d.set(0, 0, -3.0 * c);
    d.set(0, 1, 4.0 * c);
    d.set(0, 2, -c);
    for i in 1..n - 1 {
        d.set(i, i - 1, -c);
        d.set(i, i + 1, c);
    }
    d.set(n - 1, n - 1, 3.0 * c);
    d.set(n - 1, n - 2, -4.0 * c);
    d.set(n - 1, n - 3, c);
    d
}

/// Centered first derivative on interior unknowns with zero boundary values.
/// Skew-symmetric.
pub fn d1_interior(grid: &SpaceGrid) -> BandedMatrix {
    let n = grid.interior();
    let c = 0.5 / grid.h;
    let mut d = BandedMatrix::zeros(n, 1, 1);
    for i in 0..n {
        if i > 0 {
            d.set(i, i - 1, -c);
        }
        if i + 1 < n {
            d.set(i, i + 1, c);
        }
    }
    d
}

/// One boundary condition of a third-order problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// `u(0) = 0`
    ValueLeft,
    /// `u(L) = 0`
    ValueRight,
    /// `u_x(0) = 0`
    SlopeLeft,
    /// `u_x(L) = g`, with `g` supplied as a load at run time.
    SlopeRight,
}

/// The η-set of the KdV–KdV problem.
pub const ETA_BC: [BoundaryCondition; 3] = [
    BoundaryCondition::ValueLeft,
    BoundaryCondition::ValueRight,
    BoundaryCondition::SlopeLeft,
];

/// The ω-set of the KdV–KdV problem (the slope at `L` is the feedback law).
pub const OMEGA_BC: [BoundaryCondition; 3] = [
    BoundaryCondition::ValueLeft,
    BoundaryCondition::ValueRight,
    BoundaryCondition::SlopeRight,
];

/// Third derivative on interior unknowns plus its boundary load.
#[derive(Debug, Clone)]
pub struct ThirdDerivative {
    pub op: BandedMatrix,
    /// `(row, coefficient)`: `u_xxx ≈ op·u + coefficient·g·e_row` for a
    /// slope condition `u_x(L) = g`. `None` for the η-set.
    pub load: Option<(usize, f64)>,
}

impl ThirdDerivative {
    pub fn apply(&self, u: &[f64], g: f64) -> Vec<f64> {
        let mut y = self.op.apply(u);
        if let Some((row, c)) = self.load {
            y[row] += c * g;
        }
        y
    }
}

/// Centered `(−u_{i−2} + 2u_{i−1} − 2u_{i+1} + u_{i+2})/(2h³)` on interior
/// nodes, with ghost values eliminated.
///
/// Each set has two boundary values and one slope condition; the slope
/// fixes one ghost node and the other is closed by odd reflection:
/// - η-set: `u_{−1} = u_1` (slope at 0), `u_{nx+1} = −u_{nx−1}`;
/// - ω-set: `u_{nx+1} = u_{nx−1} + 2h·g` (slope at L), `u_{−1} = −u_1`.
///
/// With these closures the two operators are negative transposes of each
/// other, which is what makes the discrete energy identity exact.
pub fn d3_operator(grid: &SpaceGrid, bc: &[BoundaryCondition]) -> Result<ThirdDerivative> {
    use BoundaryCondition::*;
    let has = |c| bc.iter().filter(|&&b| b == c).count();
    if bc.len() != 3 || has(ValueLeft) != 1 || has(ValueRight) != 1 {
        return Err(Error::BoundaryConditions(format!(
            "expected both boundary values and exactly one slope condition, got {bc:?}"
        )));
    }
    let slope_left = match (has(SlopeLeft), has(SlopeRight)) {
        (1, 0) => true,
        (0, 1) => false,
        _ => {
            return Err(Error::BoundaryConditions(format!(
                "expected exactly one slope condition, got {bc:?}"
            )))
        }
    };
    let n = grid.interior();
    let c = 0.5 / grid.h.powi(3);
    let mut op = BandedMatrix::zeros(n, 2, 2);
    for i in 0..n {
        for (off, w) in [(-2i64, -1.0), (-1, 2.0), (1, -2.0), (2, 1.0)] {
            let j = i as i64 + off;
            if (0..n as i64).contains(&j) {
                op.set(i, j as usize, w * c);
            }
        }
    }
    // Row 0 sees u_{−1} with weight −c; row n−1 sees u_{nx+1} with weight +c.
    let (left, right) = if slope_left { (-c, -c) } else { (c, c) };
    op.add(0, 0, left);
    op.add(n - 1, n - 1, right);
    let load = (!slope_left).then(|| (n - 1, 2.0 * grid.h * c));
    Ok(ThirdDerivative { op, load })
}

/// Second-order one-sided `η_x(L) ≈ (3η_N − 4η_{N−1} + η_{N−2})/(2h)` on a
/// full nodal vector.
pub fn boundary_trace_eta_x_l(eta: &[f64], grid: &SpaceGrid) -> f64 {
    let n = eta.len() - 1;
    (3.0 * eta[n] - 4.0 * eta[n - 1] + eta[n - 2]) / (2.0 * grid.h)
}

/// First-order `(η_N − η_{N−1})/h`: the trace the time stepper couples to
/// the boundary law and the delay channel, because the discrete energy
/// identity is exact for it.
pub fn scheme_trace(eta: &[f64], grid: &SpaceGrid) -> f64 {
    let n = eta.len() - 1;
    (eta[n] - eta[n - 1]) / grid.h
}

/// Composite trapezoid rule with uniform `spacing`.
pub fn quadrature(values: &[f64], spacing: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => spacing * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}
