//! Dense/sparse kernels shared by the full and reduced solvers.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

/// Thin SVD returning the left singular vectors (m×k, k = min(m, n)) and the
/// singular values in non-increasing order. Right vectors are discarded.
pub fn left_svd(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, n) = q.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("SVD of an empty matrix".into()));
    }
    let view = faer::MatRef::from_column_major_slice(q.as_slice(), m, n);
    let svd = view.thin_svd().map_err(|_| Error::SvdFailed)?;
    let k = m.min(n);
    let u = svd.U();
    let s = svd.S().column_vector();
    let mut sigma: Vec<f64> = (0..k).map(|i| s[i]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let umat = DMatrix::from_fn(m, k, |i, j| u[(i, order[j])]);
    sigma = order.iter().map(|&j| sigma[j]).collect();
    Ok((umat, sigma))
}

/// Applies a square linear operator `y = A x`.
pub trait LinearOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOp for CsrMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let offsets = self.row_offsets();
        let cols = self.col_indices();
        let vals = self.values();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                acc += vals[k] * x[cols[k]];
            }
            *yi = acc;
        }
    }
}

impl LinearOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.ncols();
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let col = &self.as_slice()[j * self.nrows()..(j + 1) * self.nrows()];
            for (yi, a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
    }
}

/// `A * X` for a CSR matrix and a dense column block.
pub fn csr_mul_dense(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let src = x.column(j).clone_owned();
        let mut dst = vec![0.0; a.nrows()];
        a.apply(src.as_slice(), &mut dst);
        out.column_mut(j).copy_from_slice(&dst);
    }
    out
}

/// Classical RK4 for `x' = A x + f(t)` on a uniform grid, with `f` given at the
/// nodes and linearly interpolated to the half steps.
///
/// With `backward` set the sweep runs from the last node towards the first,
/// integrating `-x' = A x + f` from the terminal value `x0`; the returned
/// columns are still indexed by forward time.
pub fn rk4_linear(
    op: &impl LinearOp,
    x0: &[f64],
    forcing: &DMatrix<f64>,
    dt: f64,
    backward: bool,
    solver: &'static str,
) -> Result<DMatrix<f64>> {
    let d = op.dim();
    let n = forcing.ncols();
    if forcing.nrows() != d || x0.len() != d {
        return Err(Error::dims(
            solver,
            format!("{d} rows"),
            format!("forcing {}x{}, x0 {}", forcing.nrows(), n, x0.len()),
        ));
    }
    let idx = |k: usize| if backward { n - 1 - k } else { k };
    let mut out = DMatrix::zeros(d, n);
    let mut x = x0.to_vec();
    out.column_mut(idx(0)).copy_from_slice(&x);
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let h = 0.5 * dt;
    for s in 0..n.saturating_sub(1) {
        let f0 = forcing.column(idx(s));
        let f1 = forcing.column(idx(s + 1));
        op.apply(&x, &mut k1);
        for i in 0..d {
            k1[i] += f0[i];
            tmp[i] = x[i] + h * k1[i];
        }
        op.apply(&tmp, &mut k2);
        for i in 0..d {
            k2[i] += 0.5 * (f0[i] + f1[i]);
            tmp[i] = x[i] + h * k2[i];
        }
        op.apply(&tmp, &mut k3);
        for i in 0..d {
            k3[i] += 0.5 * (f0[i] + f1[i]);
            tmp[i] = x[i] + dt * k3[i];
        }
        op.apply(&tmp, &mut k4);
        let mut finite = true;
        for i in 0..d {
            k4[i] += f1[i];
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            finite &= x[i].is_finite();
        }
        if !finite {
            return Err(Error::Diverged { solver, step: s + 1 });
        }
        out.column_mut(idx(s + 1)).copy_from_slice(&x);
    }
    Ok(out)
}

/// Transposed sweep of a forward [`rk4_linear`] solve.
///
/// With `op_t = Aᵀ` and `sens` holding `∂J/∂x_j` in its columns, returns the
/// columns `(∂J/∂f_j) / w_j`, i.e. the sensitivity to the forcing at node `j`
/// in the `w`-weighted inner product. One forward step reads
/// `x⁺ = R x + S₀ f_j + S₁ f_{j+1}` with `X = dt·A`,
/// `R = I + X + X²/2 + X³/6 + X⁴/24`, `S₀ = dt/6 (3 + 2X + 3X²/4 + X³/4)`,
/// `S₁ = dt/6 (3 + X + X²/4)`.
pub fn rk4_linear_adjoint(
    op_t: &impl LinearOp,
    sens: &DMatrix<f64>,
    w: &[f64],
    dt: f64,
    solver: &'static str,
) -> Result<DMatrix<f64>> {
    let d = op_t.dim();
    let n = sens.ncols();
    if sens.nrows() != d || w.len() != n || n < 2 {
        return Err(Error::dims(
            solver,
            format!("{d}x{} sensitivities, {} weights", w.len(), w.len()),
            format!("{}x{n}, {}", sens.nrows(), w.len()),
        ));
    }
    // powers[k] = (dt Aᵀ)^k λ
    let powers = |lam: &[f64]| -> [Vec<f64>; 5] {
        let mut p: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; d]);
        p[0].copy_from_slice(lam);
        for k in 1..5 {
            let (lo, hi) = p.split_at_mut(k);
            op_t.apply(&lo[k - 1], &mut hi[0]);
            hi[0].iter_mut().for_each(|v| *v *= dt);
        }
        p
    };
    let s1t = |p: &[Vec<f64>; 5], i: usize| dt / 6.0 * (3.0 * p[0][i] + p[1][i] + 0.25 * p[2][i]);
    let s0t = |p: &[Vec<f64>; 5], i: usize| {
        dt / 6.0 * (3.0 * p[0][i] + 2.0 * p[1][i] + 0.75 * p[2][i] + 0.25 * p[3][i])
    };
    let mut out = DMatrix::zeros(d, n);
    let mut lam: Vec<f64> = sens.column(n - 1).iter().copied().collect();
    let mut p = powers(&lam);
    for i in 0..d {
        out[(i, n - 1)] = s1t(&p, i) / w[n - 1];
    }
    for j in (0..n - 1).rev() {
        let mut finite = true;
        for i in 0..d {
            out[(i, j)] = s0t(&p, i);
            lam[i] = sens[(i, j)] + p[0][i] + p[1][i] + p[2][i] / 2.0 + p[3][i] / 6.0 + p[4][i] / 24.0;
            finite &= lam[i].is_finite();
        }
        if !finite {
            return Err(Error::Diverged { solver, step: j });
        }
        if j > 0 {
            p = powers(&lam);
            for i in 0..d {
                out[(i, j)] += s1t(&p, i);
            }
        }
        for i in 0..d {
            out[(i, j)] /= w[j];
        }
    }
    Ok(out)
}

/// Σ_j w_j ‖col_j‖² with column weights `w`.
pub fn weighted_col_norm_sq(x: &DMatrix<f64>, w: &[f64]) -> f64 {
    x.column_iter()
        .zip(w)
        .map(|(c, wj)| wj * c.norm_squared())
        .sum()
}

/// Σ_j w_j ⟨x_j, y_j⟩.
pub fn weighted_col_dot(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> f64 {
    x.column_iter()
        .zip(y.column_iter())
        .zip(w)
        .map(|((a, b), wj)| wj * a.dot(&b))
        .sum()
}

/// Spectral condition number of a symmetric positive definite matrix, or
/// `None` when its smallest eigenvalue is not positive.
pub fn spd_condition(m: &DMatrix<f64>) -> Option<f64> {
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    (lo > 0.0).then(|| hi / lo)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn column(x: &DMatrix<f64>, j: usize) -> DVector<f64> {
    x.column(j).clone_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svd_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = DMatrix::from_fn(9, 6, |_, _| rng.random_range(-1.0..1.0));
        let (u, s) = left_svd(&q).unwrap();
        let reference = q.clone().svd(false, false).singular_values;
        let mut r: Vec<f64> = reference.iter().copied().collect();
        r.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in s.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
        let utu = u.transpose() * &u;
        assert!((utu - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn rk4_step_is_taylor_polynomial() {
        // x' = x, one step of RK4 is the 4th-order Taylor polynomial of e^dt
        let a = DMatrix::from_element(1, 1, 1.0);
        let f = DMatrix::zeros(1, 2);
        let out = rk4_linear(&a, &[1.0], &f, 0.1, false, "test").unwrap();
        let h: f64 = 0.1;
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((out[(0, 1)] - taylor).abs() < 1e-15);
    }

    #[test]
    fn rk4_forcing_quadrature_is_trapezoidal() {
        // x' = f(t) with A = 0 integrates f by the trapezoidal rule
        let a = DMatrix::zeros(1, 1);
        let f = DMatrix::from_row_slice(1, 4, &[1.0, 3.0, -2.0, 5.0]);
        let out = rk4_linear(&a, &[0.0], &f, 0.5, false, "test").unwrap();
        assert!((out[(0, 3)] - 0.25 * (1.0 + 6.0 - 4.0 + 5.0)).abs() < 1e-14);
        let back = rk4_linear(&a, &[0.0], &f, 0.5, true, "test").unwrap();
        assert_eq!(back[(0, 3)], 0.0);
        assert!((back[(0, 0)] - 0.25 * (1.0 + 6.0 - 4.0 + 5.0)).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let a = DMatrix::from_element(1, 1, 1e200);
        let f = DMatrix::zeros(1, 5);
        match rk4_linear(&a, &[1.0], &f, 1.0, false, "blowup") {
            Err(Error::Diverged { solver, step }) => {
                assert_eq!(solver, "blowup");
                assert!(step >= 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn transposed_sweep_matches_forward_sensitivities() {
        let a = DMatrix::from_row_slice(3, 3, &[-0.3, 1.2, 0.0, -0.7, 0.1, 0.4, 0.2, -0.5, -0.6]);
        let (n, dt) = (7, 0.3);
        let w: Vec<f64> = (0..n).map(|j| if j == 0 || j == n - 1 { dt / 2.0 } else { dt }).collect();
        let sens = DMatrix::from_fn(3, n, |i, j| ((i * 7 + j * 3) as f64).sin());
        let x0 = [0.4, -0.2, 1.0];
        let forcing = DMatrix::from_fn(3, n, |i, j| ((i + 2 * j) as f64).cos());
        let cost = |f: &DMatrix<f64>| {
            let x = rk4_linear(&a, &x0, f, dt, false, "t").unwrap();
            x.dot(&sens)
        };
        let out = rk4_linear_adjoint(&a.transpose(), &sens, &w, dt, "t").unwrap();
        let base = cost(&forcing);
        for j in 0..n {
            for i in 0..3 {
                let mut f = forcing.clone();
                f[(i, j)] += 1.0;
                // the cost is affine in the forcing
                let exact = cost(&f) - base;
                assert!((out[(i, j)] * w[j] - exact).abs() < 1e-12, "({i},{j})");
            }
        }
    }
}
