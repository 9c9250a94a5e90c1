//! Uniform periodic space grid and uniform time grid.

use crate::error::{Error, Result};

/// Minimum number of grid points; the 6th-order stencil spans 7 nodes.
pub const MIN_GRID_POINTS: usize = 8;

/// Uniform periodic mesh of `[0, length)` with nodes `x_i = i * dx`, `i = 1..=m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    m: usize,
    length: f64,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(m: usize, length: f64) -> Result<Self> {
        if m < MIN_GRID_POINTS {
            return Err(Error::GridTooSmall {
                m,
                min: MIN_GRID_POINTS,
            });
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain length must be positive, got {length}"
            )));
        }
        Ok(Self {
            m,
            length,
            dx: length / m as f64,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Coordinate of the node stored at zero-based index `k`.
    pub fn node(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|k| self.node(k))
    }

    /// Signed distance `x - center` folded to the nearest periodic image.
    pub fn periodic_offset(&self, x: f64, center: f64) -> f64 {
        let l = self.length;
        let d = (x - center).rem_euclid(l);
        if d > 0.5 * l {
            d - l
        } else {
            d
        }
    }

    /// Reduce a shift to `[0, length)`.
    pub fn wrap(&self, z: f64) -> f64 {
        let w = z.rem_euclid(self.length);
        // rem_euclid can round up to exactly `length` for tiny negative inputs
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.m, self.nodes().map(f))
    }

    /// Stable fingerprint of the grid, used to tag persisted caches.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the defining values
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in (self.m as u64)
            .to_le_bytes()
            .into_iter()
            .chain(self.length.to_le_bytes())
        {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Uniform time mesh with `n` nodes `t_j = j * dt`, `j = 0..n`, and `n * dt = t_f`.
///
/// The last node sits at `t_f - dt`; it is the terminal node of the discrete
/// problem (adjoint terminal conditions are imposed there).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    n: usize,
    dt: f64,
    t_f: f64,
}

impl TimeGrid {
    pub fn new(n: usize, t_f: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 nodes, got {n}"
            )));
        }
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {t_f}"
            )));
        }
        Ok(Self {
            n,
            dt: t_f / n as f64,
            t_f,
        })
    }

    /// Step from the CFL relation `dt = cfl * dx / c`. The node count is rounded
    /// to the nearest integer and `dt` is then set to `t_f / n` so that
    /// `n * dt = t_f` holds exactly.
    pub fn from_cfl(grid: &SpatialGrid, cfl: f64, c: f64, t_f: f64) -> Result<Self> {
        if !(cfl > 0.0 && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cfl and propagation speed must be positive (cfl={cfl}, c={c})"
            )));
        }
        let dt = cfl * grid.dx() / c;
        let n = (t_f / dt).round() as usize;
        Self::new(n, t_f)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Trapezoidal quadrature weights over the nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n];
        w[0] *= 0.5;
        w[self.n - 1] *= 0.5;
        w
    }
}
