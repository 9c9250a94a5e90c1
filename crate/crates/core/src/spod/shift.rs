//! Periodic fractional shifts by 6-point Lagrange interpolation, their
//! z-derivatives, and shift estimation from snapshot data.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Stencil offsets relative to the cell containing the shifted target point.
pub const OFFSETS: [isize; 6] = [-2, -1, 0, 1, 2, 3];

const SNAP: f64 = 1e-12;

/// Lagrange basis polynomial for `OFFSETS[o]` and its first two derivatives
/// with respect to the fractional position `theta`.
fn lagrange(o: usize, theta: f64, order: usize) -> f64 {
    let node = |k: usize| OFFSETS[k] as f64;
    let denom: f64 = (0..6).filter(|&k| k != o).map(|k| node(o) - node(k)).product();
    let others: Vec<usize> = (0..6).filter(|&k| k != o).collect();
    let prod_except = |skip: &[usize]| -> f64 {
        others
            .iter()
            .filter(|k| !skip.contains(k))
            .map(|&k| theta - node(k))
            .product()
    };
    let num = match order {
        0 => prod_except(&[]),
        1 => others.iter().map(|&a| prod_except(&[a])).sum(),
        2 => {
            let mut s = 0.0;
            for &a in &others {
                for &b in &others {
                    if a != b {
                        s += prod_except(&[a, b]);
                    }
                }
            }
            s
        }
        _ => unreachable!("only derivatives up to second order are used"),
    };
    num / denom
}

/// Circulant stencil of `T^z` (order 0), `T'^z` (order 1) or `T''^z` (order 2):
/// row `i` reads nodes `i + base + OFFSETS[k]` with `weights[k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftStencil {
    pub shift: f64,
    pub base: isize,
    pub weights: [f64; 6],
}

impl ShiftStencil {
    pub fn new(grid: &SpatialGrid, z: f64, order: usize) -> Self {
        let z = grid.wrap(z);
        let cells = -z / grid.dx();
        let mut base = cells.floor();
        let mut theta = cells - base;
        if theta > 1.0 - SNAP {
            base += 1.0;
            theta = 0.0;
        } else if theta < SNAP {
            theta = 0.0;
        }
        // d(theta)/dz = -1/dx
        let scale = match order {
            0 => 1.0,
            1 => -1.0 / grid.dx(),
            2 => 1.0 / (grid.dx() * grid.dx()),
            _ => panic!("shift derivative order {order} not supported"),
        };
        let mut weights = [0.0; 6];
        for (o, w) in weights.iter_mut().enumerate() {
            *w = scale * lagrange(o, theta, order);
        }
        Self {
            shift: z,
            base: (base as isize).rem_euclid(grid.m() as isize),
            weights,
        }
    }

    fn index(&self, i: usize, k: usize, m: usize) -> usize {
        (i as isize + self.base + OFFSETS[k]).rem_euclid(m as isize) as usize
    }

    /// `y = T x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = x.len();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..6 {
                acc += self.weights[k] * x[self.index(i, k, m)];
            }
            *yi = acc;
        }
    }

    /// `y = Tᵀ x`.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let m = x.len();
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, xi) in x.iter().enumerate() {
            for k in 0..6 {
                y[self.index(i, k, m)] += self.weights[k] * xi;
            }
        }
    }

    pub fn apply_columns(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let m = u.nrows();
        let mut out = DMatrix::zeros(m, u.ncols());
        for j in 0..u.ncols() {
            let src = &u.as_slice()[j * m..(j + 1) * m];
            let dst = &mut out.as_mut_slice()[j * m..(j + 1) * m];
            self.apply(src, dst);
        }
        out
    }

    pub fn to_csr(&self, m: usize) -> CsrMatrix<f64> {
        let mut coo = CooMatrix::new(m, m);
        for i in 0..m {
            for k in 0..6 {
                if self.weights[k] != 0.0 {
                    coo.push(i, self.index(i, k, m), self.weights[k]);
                }
            }
        }
        CsrMatrix::from(&coo)
    }
}

/// Sparse `T^z` with its shift (reduced to `[0, L)`).
#[derive(Clone, Debug)]
pub struct ShiftOperator {
    pub shift: f64,
    pub matrix: CsrMatrix<f64>,
}

pub fn build_shift_operator(grid: &SpatialGrid, z: f64) -> ShiftOperator {
    let s = ShiftStencil::new(grid, z, 0);
    ShiftOperator {
        shift: s.shift,
        matrix: s.to_csr(grid.m()),
    }
}

/// `dT^z/dz`.
pub fn build_shift_derivative_operator(grid: &SpatialGrid, z: f64) -> CsrMatrix<f64> {
    ShiftStencil::new(grid, z, 1).to_csr(grid.m())
}

/// `d²T^z/dz²`.
pub fn build_shift_second_derivative_operator(grid: &SpatialGrid, z: f64) -> CsrMatrix<f64> {
    ShiftStencil::new(grid, z, 2).to_csr(grid.m())
}

/// Time-dependent shift of the single co-moving frame, unwrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTrack {
    pub values: Vec<f64>,
}

impl ShiftTrack {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn linear(n: usize, dt: f64, velocity: f64) -> Self {
        Self {
            values: (0..n).map(|j| velocity * dt * j as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `out[tau] = Σ_i x[i] y[i + tau]` for all lags, via FFT.
pub(crate) fn circular_correlation(
    planner: &mut FftPlanner<f64>,
    x: &[f64],
    y: &[f64],
) -> Vec<f64> {
    let m = x.len();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut fx: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fy: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut fx);
    fwd.process(&mut fy);
    let mut prod: Vec<Complex<f64>> = fx.iter().zip(&fy).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut prod);
    prod.iter().map(|c| c.re / m as f64).collect()
}

fn is_flat(col: &[f64]) -> bool {
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let scale = lo.abs().max(hi.abs());
    !(hi - lo > 1e-14 * scale) || scale == 0.0
}

/// Shift of every snapshot relative to the first one: circular
/// cross-correlation peak, parabolic sub-cell refinement, then unwrapping.
pub fn estimate_shifts(snapshots: &DMatrix<f64>, grid: &SpatialGrid) -> Result<ShiftTrack> {
    let (m, n) = snapshots.shape();
    if m != grid.m() {
        return Err(Error::dims("snapshot rows", grid.m(), m));
    }
    let col = |j: usize| &snapshots.as_slice()[j * m..(j + 1) * m];
    if n == 0 {
        return Ok(ShiftTrack { values: vec![] });
    }
    for j in 0..n {
        if is_flat(col(j)) {
            return Err(Error::FlatSnapshot { column: j });
        }
    }
    let l = grid.length();
    let mut planner = FftPlanner::new();
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    for j in 1..n {
        let c = circular_correlation(&mut planner, col(0), col(j));
        let (peak, _) = c
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        let cm = c[(peak + m - 1) % m];
        let cp = c[(peak + 1) % m];
        let curv = cm - 2.0 * c[peak] + cp;
        let mut delta = if curv < 0.0 { 0.5 * (cm - cp) / curv } else { 0.0 };
        if delta.abs() < 1e-10 {
            delta = 0.0;
        }
        let raw = (peak as f64 + delta) * grid.dx();
        let prev: f64 = values[j - 1];
        let mut step = (raw - prev).rem_euclid(l);
        if step >= 0.5 * l {
            step -= l;
        }
        values.push(prev + step);
    }
    Ok(ShiftTrack { values })
}

/// Applies `T^{z_j}` to column `j` (or `T^{-z_j}` with `inverse`).
pub fn shift_columns(
    snapshots: &DMatrix<f64>,
    grid: &SpatialGrid,
    track: &ShiftTrack,
    inverse: bool,
) -> Result<DMatrix<f64>> {
    let (m, n) = snapshots.shape();
    if track.len() != n {
        return Err(Error::dims("shift track length", n, track.len()));
    }
    if m != grid.m() {
        return Err(Error::dims("snapshot rows", grid.m(), m));
    }
    let mut out = DMatrix::zeros(m, n);
    for j in 0..n {
        let z = if inverse { -track.values[j] } else { track.values[j] };
        let st = ShiftStencil::new(grid, z, 0);
        let src = &snapshots.as_slice()[j * m..(j + 1) * m];
        st.apply(src, &mut out.as_mut_slice()[j * m..(j + 1) * m]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn dense(c: &CsrMatrix<f64>) -> DMatrix<f64> {
        nalgebra_sparse::convert::serial::convert_csr_dense(c)
    }

    fn shifted_gaussian_error(m: usize, frac: f64) -> f64 {
        let g = SpatialGrid::new(m, 10.0).unwrap();
        let f = |x: f64| {
            let d = g.periodic_offset(x, 5.0);
            (-d * d).exp()
        };
        // whole part is an integer number of cells at every m used below
        let z = 1.25 + frac * g.dx();
        let st = ShiftStencil::new(&g, z, 0);
        let src = g.sample(f);
        let mut y = vec![0.0; m];
        st.apply(src.as_slice(), &mut y);
        g.nodes()
            .zip(&y)
            .map(|(x, yi)| (yi - f(x - z)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_shift_is_identity() {
        let g = SpatialGrid::new(16, 4.0).unwrap();
        let t = dense(&build_shift_operator(&g, 0.0).matrix);
        assert_eq!(t, DMatrix::identity(16, 16));
    }

    #[test]
    fn integer_shift_is_permutation() {
        let g = SpatialGrid::new(16, 4.0).unwrap();
        let t = dense(&build_shift_operator(&g, 3.0 * g.dx()).matrix);
        for i in 0..16 {
            for j in 0..16 {
                let expected = if j == (i + 13) % 16 { 1.0 } else { 0.0 };
                assert!((t[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_order() {
        for frac in [0.13, 0.37, 0.5, 0.81] {
            let e: Vec<f64> = [128, 256, 512].iter().map(|&m| shifted_gaussian_error(m, frac)).collect();
            for k in 0..2 {
                let order = (e[k] / e[k + 1]).log2();
                assert!(order >= 5.5, "frac {frac}: order {order}");
            }
        }
    }

    #[test]
    fn derivative_of_sine() {
        let g = SpatialGrid::new(64, 1.0).unwrap();
        let f = g.sample(|x| (2.0 * PI * x).sin());
        let st = ShiftStencil::new(&g, 0.0, 1);
        let mut y = vec![0.0; 64];
        st.apply(f.as_slice(), &mut y);
        let err = g
            .nodes()
            .zip(&y)
            .map(|(x, yi)| (yi + 2.0 * PI * (2.0 * PI * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn derivative_operators_match_finite_differences() {
        let g = SpatialGrid::new(32, 3.0).unwrap();
        let z = 0.4321;
        let eps = 1e-5;
        let tp = dense(&build_shift_operator(&g, z + eps).matrix);
        let tm = dense(&build_shift_operator(&g, z - eps).matrix);
        let d1 = dense(&build_shift_derivative_operator(&g, z));
        assert!(((&tp - &tm) / (2.0 * eps) - &d1).amax() < 1e-6 * d1.amax());
        let dp = dense(&build_shift_derivative_operator(&g, z + eps));
        let dm = dense(&build_shift_derivative_operator(&g, z - eps));
        let d2 = dense(&build_shift_second_derivative_operator(&g, z));
        assert!(((&dp - &dm) / (2.0 * eps) - &d2).amax() < 1e-6 * d2.amax());
    }

    #[test]
    fn constants_are_preserved() {
        let g = SpatialGrid::new(20, 2.0).unwrap();
        for order in 0..3 {
            let st = ShiftStencil::new(&g, 0.77, order);
            let mut y = vec![0.0; 20];
            st.apply(&[3.0; 20], &mut y);
            let expected = if order == 0 { 3.0 } else { 0.0 };
            assert!(y.iter().all(|v| (v - expected).abs() < 1e-9), "order {order}");
        }
    }

    #[test]
    fn transpose_matches_dense() {
        let g = SpatialGrid::new(12, 2.0).unwrap();
        let st = ShiftStencil::new(&g, 0.61, 1);
        let t = dense(&st.to_csr(12));
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; 12];
        st.apply_transpose(&x, &mut y);
        let yd = t.transpose() * DMatrix::from_column_slice(12, 1, &x);
        for i in 0..12 {
            assert!((y[i] - yd[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn group_action_is_accurate_on_smooth_data() {
        let err = |m: usize| {
            let g = SpatialGrid::new(m, 10.0).unwrap();
            let f = g.sample(|x| (-(g.periodic_offset(x, 5.0)).powi(2)).exp());
            let (z1, z2) = (1.25 + 0.3 * g.dx(), 0.625 + 0.45 * g.dx());
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            let mut c = vec![0.0; m];
            ShiftStencil::new(&g, z2, 0).apply(f.as_slice(), &mut a);
            ShiftStencil::new(&g, z1, 0).apply(&a, &mut b);
            ShiftStencil::new(&g, z1 + z2, 0).apply(f.as_slice(), &mut c);
            b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 / e2 > 2f64.powf(5.0), "{e1} {e2}");
    }

    #[test]
    fn shifts_of_integer_translates() {
        let g = SpatialGrid::new(64, 8.0).unwrap();
        let q = DMatrix::from_fn(64, 10, |i, j| {
            let x = g.node((i + 64 - (3 * j) % 64) % 64);
            (-(g.periodic_offset(x, 2.0)).powi(2)).exp()
        });
        let track = estimate_shifts(&q, &g).unwrap();
        for (j, z) in track.values.iter().enumerate() {
            assert!((z - 3.0 * j as f64 * g.dx()).abs() < 1e-12, "{j}: {z}");
        }
        let same = DMatrix::from_fn(64, 4, |i, _| (i as f64 * 0.3).sin());
        assert!(estimate_shifts(&same, &g).unwrap().values.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn flat_column_is_rejected() {
        let g = SpatialGrid::new(16, 1.0).unwrap();
        let mut q = DMatrix::from_fn(16, 3, |i, _| i as f64);
        q.column_mut(2).fill(0.5);
        assert!(matches!(estimate_shifts(&q, &g), Err(Error::FlatSnapshot { column: 2 })));
    }

    proptest! {
        #[test]
        fn partition_of_unity(z in -500.0f64..500.0) {
            let g = SpatialGrid::new(64, 7.0).unwrap();
            let s0: f64 = ShiftStencil::new(&g, z, 0).weights.iter().sum();
            let s1: f64 = ShiftStencil::new(&g, z, 1).weights.iter().sum();
            let s2: f64 = ShiftStencil::new(&g, z, 2).weights.iter().sum();
            prop_assert!((s0 - 1.0).abs() < 1e-12);
            prop_assert!(s1.abs() < 1e-12 / g.dx());
            prop_assert!(s2.abs() < 1e-11 / (g.dx() * g.dx()));
        }
    }
}
