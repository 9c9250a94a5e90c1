//! Reduced adjoint of the single-frame sPOD-Galerkin model (first reduce,
//! then optimize) for Galerkin models with shift-independent mass and
//! stiffness blocks.
//!
//! Writing the reduced model as `M(x) x' = F(x, u)` with `x = (a, z)`, the
//! time-continuous adjoint `λ = (α, ζ)` solves
//!
//! ```text
//! Mᵀ λ' = -Eᵀ λ - ∇ℓ,   E = ∂F/∂x + M' - ∂(M x')/∂x,   λ(t_f) = 0
//! ```
//!
//! and the control gradient is `μ u + (VᵀB)ᵀ α + (WᵀB)ᵀ a ζ`.
//! [`solve_spod_frto_adjoint`] instead transposes the RK4 steps of the
//! forward solve, which gives the exact gradient of the discrete reduced cost
//! and converges to the same adjoint as `dt → 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fom::{ControlSignal, FomSystem};
use crate::grid::TimeGrid;
use crate::spod::rom::{bordered_solve, MassFactor, RomRhs};
use crate::spod::{GalerkinMatrices, GalerkinModel, ReducedTrajectory, ShiftDynamics, ShiftStencil, SpodBasis};

/// Blocks of `E` in Jacobian layout: rows follow the equations (amplitude
/// rows, then the shift row), columns the unknowns `(a, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EBlocks {
    /// ∂(a-rows)/∂a, r×r
    pub e11: DMatrix<f64>,
    /// ∂(a-rows)/∂z, r×1
    pub e12: DMatrix<f64>,
    /// ∂(z-row)/∂a, 1×r
    pub e21: DMatrix<f64>,
    /// ∂(z-row)/∂z, 1×1
    pub e22: DMatrix<f64>,
}

impl EBlocks {
    /// `Eᵀ (y_a, y_z)`.
    fn transpose_apply(&self, ya: &DVector<f64>, yz: f64) -> (DVector<f64>, f64) {
        (
            self.e11.transpose() * ya + self.e21.row(0).transpose() * yz,
            self.e12.column(0).dot(ya) + self.e22[(0, 0)] * yz,
        )
    }
}

/// Adjoint amplitudes (r×n), adjoint shifts (K×n) and the control
/// sensitivity `(∂J_track/∂u_j) / w_j` (n_c×n).
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointReducedTrajectory {
    pub a_sa: DMatrix<f64>,
    pub z_sa: DMatrix<f64>,
    pub control_sensitivity: DMatrix<f64>,
}

/// Reduced state, its rates and the control at one instant.
#[derive(Clone, Debug)]
pub struct StatePoint {
    pub a: DVector<f64>,
    pub z: f64,
    pub adot: DVector<f64>,
    pub zdot: f64,
    pub u: DVector<f64>,
}

impl StatePoint {
    /// Node `j`, or the point a fraction `f` of the way to node `j + 1`.
    pub fn at(traj: &ReducedTrajectory, u: &ControlSignal, j: usize, f: f64) -> Self {
        let col = |x: &DMatrix<f64>| lerp_col(x, j, f);
        Self {
            a: col(&traj.amplitudes),
            z: col(&traj.shifts)[0],
            adot: col(&traj.amplitude_rates),
            zdot: col(&traj.shift_rates)[0],
            u: col(&u.values),
        }
    }
}

fn lerp_col(x: &DMatrix<f64>, j: usize, f: f64) -> DVector<f64> {
    if f == 0.0 {
        x.column(j).clone_owned()
    } else {
        x.column(j) * (1.0 - f) + x.column(j + 1) * f
    }
}

fn constant_of<G: GalerkinModel + ?Sized>(model: &G) -> Result<&GalerkinMatrices> {
    model
        .constant_matrices()
        .ok_or(Error::UnsupportedCache("the reduced sPOD adjoint"))
}

/// `∂F/∂x - ∂(M x')/∂x`, plus `M'` when `with_mass_rate`.
fn jacobian_blocks<G: GalerkinModel + ?Sized>(model: &G, p: &StatePoint, with_mass_rate: bool) -> Result<EBlocks> {
    let mats = constant_of(model)?;
    let (_, gw) = model.control_apply(p.z, &p.u);
    let (dgv, dgw) = model.control_derivative_apply(p.z, &p.u);
    let e11 = &mats.a1 - &mats.n * p.zdot;
    let mut e12 = dgv;
    let mut e21 = (&mats.a2 + mats.a2.transpose()) * &p.a + gw
        - mats.n.transpose() * &p.adot
        - (&mats.m2 * &p.a) * (2.0 * p.zdot);
    let mut e22 = p.a.dot(&dgw);
    if with_mass_rate {
        let n_adot = &mats.n * &p.adot;
        e12 += &n_adot;
        e21 += &n_adot;
        e22 += 2.0 * p.a.dot(&(&mats.m2 * &p.adot));
    }
    Ok(EBlocks {
        e11,
        e12: DMatrix::from_column_slice(e12.len(), 1, e12.as_slice()),
        e21: DMatrix::from_row_slice(1, e21.len(), e21.as_slice()),
        e22: DMatrix::from_element(1, 1, e22),
    })
}

/// E-blocks at one state point. All z-derivatives of `M1, M2, N, A1, A2`
/// vanish for constant matrices; the control projections keep their shift
/// dependence through `WᵀB` and `(T''U)ᵀB`.
pub fn e_blocks_at<G: GalerkinModel + ?Sized>(model: &G, p: &StatePoint) -> Result<EBlocks> {
    jacobian_blocks(model, p, true)
}

/// E-blocks at time node `t_index`, with state rates from the forward solve.
pub fn assemble_e_blocks<G: GalerkinModel + ?Sized>(
    model: &G,
    state: &ReducedTrajectory,
    u: &ControlSignal,
    t_index: usize,
) -> Result<EBlocks> {
    e_blocks_at(model, &StatePoint::at(state, u, t_index, 0.0))
}

/// `(V(z)ᵀCᵀC(V(z)a - q_d), (W(z)a)ᵀCᵀC(V(z)a - q_d))`.
fn tracking_gradient(
    modes: &DMatrix<f64>,
    sys: &FomSystem,
    a: &DVector<f64>,
    z: f64,
    qd: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let grid = sys.grid();
    let m = grid.m();
    let s = modes * a;
    let mut q = vec![0.0; m];
    let mut w = vec![0.0; m];
    ShiftStencil::new(grid, z, 0).apply(s.as_slice(), &mut q);
    ShiftStencil::new(grid, z, 1).apply(s.as_slice(), &mut w);
    let res: Vec<f64> = (0..m).map(|i| sys.c2()[i] * (q[i] - qd[i])).collect();
    let mut back = vec![0.0; m];
    ShiftStencil::new(grid, z, 0).apply_transpose(&res, &mut back);
    let grad_a = modes.transpose() * DVector::from_vec(back);
    let grad_z = w.iter().zip(&res).map(|(x, y)| x * y).sum();
    (grad_a, grad_z)
}

/// `(V(z)ᵀB)ᵀ y_a + (W(z)ᵀB)ᵀ a y_z`.
fn control_transpose<G: GalerkinModel + ?Sized>(model: &G, z: f64, a: &DVector<f64>, ya: &DVector<f64>, yz: f64) -> DVector<f64> {
    let ctrl = model.control_at(z);
    let mut out = ctrl.vtb.transpose() * ya;
    if yz != 0.0 {
        out += ctrl.wtb.transpose() * (a * yz);
    }
    out
}

fn check_state(state: &ReducedTrajectory, r: usize, n: usize) -> Result<()> {
    if state.amplitudes.shape() != (r, n) {
        return Err(Error::dims(
            "reduced state",
            format!("{r}x{n}"),
            format!("{:?}", state.amplitudes.shape()),
        ));
    }
    Ok(())
}

/// Mass solve `M(x)⁻¹ (f_a, f_z)`; prescribed shifts use `M1` only.
fn mass_solve(
    fac: &MassFactor,
    mats: &GalerkinMatrices,
    a: &DVector<f64>,
    free: bool,
    fa: &DVector<f64>,
    fz: f64,
    step: usize,
) -> Result<(DVector<f64>, f64)> {
    if free {
        let na = &mats.n * a;
        let d = a.dot(&(&mats.m2 * a));
        bordered_solve(fac, &na, d, fa, fz, step)
    } else {
        Ok((fac.solve(fa), 0.0))
    }
}

pub fn solve_spod_frto_adjoint<G: GalerkinModel + ?Sized>(
    state: &ReducedTrajectory,
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
) -> Result<AdjointReducedTrajectory> {
    solve_spod_frto_adjoint_with(state, model, basis, sys, tg, u, &ShiftDynamics::Free)
}

/// Transposed RK4 sweep of the reduced forward solve. The stages are
/// recomputed from the stored nodes. `a_sa, z_sa` hold `M(x_j)⁻¹ x̄_j`, where
/// `x̄_j` is the sensitivity of the cost to the state at node `j`.
pub fn solve_spod_frto_adjoint_with<G: GalerkinModel + ?Sized>(
    state: &ReducedTrajectory,
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
    dynamics: &ShiftDynamics,
) -> Result<AdjointReducedTrajectory> {
    sys.check_control(tg, u)?;
    let mats = constant_of(model)?;
    let modes = &basis.single_frame()?.modes;
    let (r, n, n_c) = (modes.ncols(), tg.n(), u.values.nrows());
    check_state(state, r, n)?;
    let (free, presc) = match dynamics {
        ShiftDynamics::Free => (true, None),
        ShiftDynamics::Prescribed { z, zdot } => {
            if z.len() != n || zdot.len() != n {
                return Err(Error::dims("prescribed shift length", n, z.len().min(zdot.len())));
            }
            (false, Some((z, zdot)))
        }
    };
    let rhs = RomRhs::new(model)?;
    let fac = MassFactor::new(&mats.m1, 0)?;
    let w = tg.trapezoid_weights();
    let (dt, h) = (tg.dt(), 0.5 * tg.dt());
    let uc = |j: usize, f: f64| lerp_col(&u.values, j, f);
    let pz = |j: usize, f: f64| {
        presc.map(|(zz, zd)| {
            let at = |v: &Vec<f64>| if f == 0.0 { v[j] } else { v[j] * (1.0 - f) + v[j + 1] * f };
            (at(zz), at(zd))
        })
    };
    let node_grad = |j: usize| {
        let (ga, gz) = tracking_gradient(modes, sys, &state.amplitudes.column(j).clone_owned(), state.shifts[(0, j)], &sys.qd().column(j).clone_owned());
        (ga * w[j], if free { gz * w[j] } else { 0.0 })
    };

    let mut a_sa = DMatrix::zeros(r, n);
    let mut z_sa = DMatrix::zeros(1, n);
    let mut ubar = DMatrix::zeros(n_c, n);
    let (mut la, mut lz) = node_grad(n - 1);
    let store = |a_sa: &mut DMatrix<f64>, z_sa: &mut DMatrix<f64>, j: usize, la: &DVector<f64>, lz: f64| -> Result<()> {
        let a = state.amplitudes.column(j).clone_owned();
        let (ya, yz) = mass_solve(&fac, mats, &a, free, la, lz, j)?;
        a_sa.set_column(j, &ya);
        z_sa[(0, j)] = yz;
        Ok(())
    };
    store(&mut a_sa, &mut z_sa, n - 1, &la, lz)?;

    for j in (0..n - 1).rev() {
        let step = j + 1;
        // recompute the stages of step j → j+1
        let a0 = state.amplitudes.column(j).clone_owned();
        let z0 = state.shifts[(0, j)];
        let (p0, ph, p1) = (pz(j, 0.0), pz(j, 0.5), pz(j + 1, 0.0));
        let (u0, uh, u1) = (uc(j, 0.0), uc(j, 0.5), uc(j + 1, 0.0));
        let (k1a, k1z) = rhs.eval(&a0, z0, &u0, p0.map(|p| p.1), step)?;
        let x2 = (&a0 + &k1a * h, ph.map_or(z0 + h * k1z, |p| p.0));
        let (k2a, k2z) = rhs.eval(&x2.0, x2.1, &uh, ph.map(|p| p.1), step)?;
        let x3 = (&a0 + &k2a * h, ph.map_or(z0 + h * k2z, |p| p.0));
        let (k3a, k3z) = rhs.eval(&x3.0, x3.1, &uh, ph.map(|p| p.1), step)?;
        let x4 = (&a0 + &k3a * dt, p1.map_or(z0 + dt * k3z, |p| p.0));
        let (k4a, k4z) = rhs.eval(&x4.0, x4.1, &u1, p1.map(|p| p.1), step)?;
        let stages = [
            ((a0.clone(), z0), (k1a, k1z), &u0),
            (x2, (k2a, k2z), &uh),
            (x3, (k3a, k3z), &uh),
            (x4, (k4a, k4z), &u1),
        ];

        // reverse through the stages
        let coef = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        let mut kbar: Vec<(DVector<f64>, f64)> = coef.iter().map(|c| (&la * *c, lz * c)).collect();
        let mut xbar_a = la.clone();
        let mut xbar_z = lz;
        let mut u_stage: [DVector<f64>; 3] = std::array::from_fn(|_| DVector::zeros(n_c));
        for s in (0..4).rev() {
            let ((ref xa, xz), (ref ka, kz), us) = stages[s];
            let (ya, yz) = mass_solve(&fac, mats, xa, free, &kbar[s].0, kbar[s].1, step)?;
            let p = StatePoint {
                a: xa.clone(),
                z: xz,
                adot: ka.clone(),
                zdot: if free { kz } else { ph.map_or(0.0, |p| p.1) },
                u: us.clone(),
            };
            let (sa, sz) = if free {
                jacobian_blocks(model, &p, false)?.transpose_apply(&ya, yz)
            } else {
                let zd = [p0, ph, ph, p1][s].map_or(0.0, |p| p.1);
                ((&mats.a1 - &mats.n * zd).transpose() * &ya, 0.0)
            };
            let cu = control_transpose(model, xz, xa, &ya, yz);
            match s {
                0 => u_stage[0] += cu,
                3 => u_stage[2] += cu,
                _ => u_stage[1] += cu,
            }
            xbar_a += &sa;
            xbar_z += sz;
            if s > 0 {
                let back = if s == 3 { dt } else { h };
                kbar[s - 1].0 += &sa * back;
                kbar[s - 1].1 += sz * back;
            }
        }
        let mut c0 = ubar.column_mut(j);
        c0 += &u_stage[0] + &u_stage[1] * 0.5;
        let mut c1 = ubar.column_mut(j + 1);
        c1 += &u_stage[2] + &u_stage[1] * 0.5;

        let (ga, gz) = node_grad(j);
        la = xbar_a + ga;
        lz = xbar_z + gz;
        if !(la.iter().all(|v| v.is_finite()) && lz.is_finite()) {
            return Err(Error::Diverged {
                solver: "sPOD-G adjoint",
                step: j,
            });
        }
        store(&mut a_sa, &mut z_sa, j, &la, lz)?;
    }
    for (mut col, wj) in ubar.column_iter_mut().zip(&w) {
        col /= *wj;
    }
    Ok(AdjointReducedTrajectory {
        a_sa,
        z_sa,
        control_sensitivity: ubar,
    })
}

pub fn solve_spod_frto_adjoint_continuous<G: GalerkinModel + ?Sized>(
    state: &ReducedTrajectory,
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
) -> Result<AdjointReducedTrajectory> {
    solve_spod_frto_adjoint_continuous_with(state, model, basis, sys, tg, u, &ShiftDynamics::Free)
}

/// Backward RK4 for the time-continuous reduced adjoint, with the state,
/// its rates and `q_d` interpolated linearly at half steps. With prescribed
/// shifts only the amplitude rows take part (`ζ ≡ 0`).
pub fn solve_spod_frto_adjoint_continuous_with<G: GalerkinModel + ?Sized>(
    state: &ReducedTrajectory,
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
    dynamics: &ShiftDynamics,
) -> Result<AdjointReducedTrajectory> {
    sys.check_control(tg, u)?;
    let mats = constant_of(model)?;
    let modes = &basis.single_frame()?.modes;
    let (r, n) = (modes.ncols(), tg.n());
    check_state(state, r, n)?;
    let free = matches!(dynamics, ShiftDynamics::Free);
    let fac = MassFactor::new(&mats.m1, n - 1)?;
    let qd = sys.qd();

    // λ' = -M⁻¹ (Eᵀλ + ∇ℓ)
    let rate = |p: &StatePoint, qd: &DVector<f64>, alpha: &DVector<f64>, zeta: f64, step: usize| -> Result<(DVector<f64>, f64)> {
        let (ga, gz) = tracking_gradient(modes, sys, &p.a, p.z, qd);
        if free {
            let (sa, sz) = e_blocks_at(model, p)?.transpose_apply(alpha, zeta);
            mass_solve(&fac, mats, &p.a, true, &(-(sa + ga)), -(sz + gz), step)
        } else {
            let e11 = &mats.a1 - &mats.n * p.zdot;
            Ok((fac.solve(&(-(e11.transpose() * alpha + ga))), 0.0))
        }
    };

    if free {
        // the terminal system M(t_f)ᵀ λ(t_f) = 0 has only the trivial solution
        // when M(t_f) is nonsingular
        let a = state.amplitudes.column(n - 1).clone_owned();
        mass_solve(&fac, mats, &a, true, &DVector::zeros(r), 0.0, n - 1)?;
    }

    let mut a_sa = DMatrix::zeros(r, n);
    let mut z_sa = DMatrix::zeros(1, n);
    let mut alpha = DVector::zeros(r);
    let mut zeta = 0.0;
    let (dt, h) = (tg.dt(), 0.5 * tg.dt());
    for j in (0..n - 1).rev() {
        let step = j;
        let p1 = StatePoint::at(state, u, j + 1, 0.0);
        let ph = StatePoint::at(state, u, j, 0.5);
        let p0 = StatePoint::at(state, u, j, 0.0);
        let (q1, qh, q0) = (lerp_col(qd, j + 1, 0.0), lerp_col(qd, j, 0.5), lerp_col(qd, j, 0.0));
        let (k1a, k1z) = rate(&p1, &q1, &alpha, zeta, step)?;
        let (k2a, k2z) = rate(&ph, &qh, &(&alpha - &k1a * h), zeta - h * k1z, step)?;
        let (k3a, k3z) = rate(&ph, &qh, &(&alpha - &k2a * h), zeta - h * k2z, step)?;
        let (k4a, k4z) = rate(&p0, &q0, &(&alpha - &k3a * dt), zeta - dt * k3z, step)?;
        alpha -= (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
        zeta -= dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        if !(alpha.iter().all(|v| v.is_finite()) && zeta.is_finite()) {
            return Err(Error::Diverged {
                solver: "sPOD-G adjoint",
                step,
            });
        }
        a_sa.set_column(j, &alpha);
        z_sa[(0, j)] = zeta;
    }
    let mut control_sensitivity = DMatrix::zeros(u.values.nrows(), n);
    for j in 0..n {
        let a = state.amplitudes.column(j).clone_owned();
        let s = control_transpose(model, state.shifts[(0, j)], &a, &a_sa.column(j).clone_owned(), z_sa[(0, j)]);
        control_sensitivity.set_column(j, &s);
    }
    Ok(AdjointReducedTrajectory {
        a_sa,
        z_sa,
        control_sensitivity,
    })
}

/// `μ u` plus the adjoint's control sensitivity at every node.
pub fn spod_frto_gradient(sys: &FomSystem, u: &ControlSignal, adj: &AdjointReducedTrajectory) -> DMatrix<f64> {
    &u.values * sys.mu() + &adj.control_sensitivity
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spod::{ControlProjections, GalerkinMatrices};
    use std::borrow::Cow;

    /// r = 1 model with hand-picked scalars and control projections that are
    /// quadratic in z.
    struct Scalar {
        mats: GalerkinMatrices,
        gv: [f64; 3],
        gw: [f64; 3],
    }

    fn poly(c: &[f64; 3], z: f64) -> f64 {
        c[0] + c[1] * z + c[2] * z * z
    }

    fn dpoly(c: &[f64; 3], z: f64) -> f64 {
        c[1] + 2.0 * c[2] * z
    }

    impl GalerkinModel for Scalar {
        fn rank(&self) -> usize {
            1
        }
        fn n_c(&self) -> usize {
            1
        }
        fn constant_matrices(&self) -> Option<&GalerkinMatrices> {
            Some(&self.mats)
        }
        fn matrices_at(&self, _z: f64) -> Cow<'_, GalerkinMatrices> {
            Cow::Borrowed(&self.mats)
        }
        fn control_at(&self, z: f64) -> ControlProjections {
            let s = |v: f64| DMatrix::from_element(1, 1, v);
            ControlProjections {
                vtb: s(poly(&self.gv, z)),
                wtb: s(poly(&self.gw, z)),
                w2tb: s(dpoly(&self.gw, z)),
            }
        }
        fn control_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_element(1, poly(&self.gv, z) * u[0]), DVector::from_element(1, poly(&self.gw, z) * u[0]))
        }
        fn control_derivative_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_element(1, dpoly(&self.gv, z) * u[0]), DVector::from_element(1, dpoly(&self.gw, z) * u[0]))
        }
    }

    fn scalar_model() -> Scalar {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Scalar {
            mats: GalerkinMatrices {
                m1: s(1.3),
                m2: s(0.7),
                n: s(-0.4),
                a1: s(0.25),
                a2: s(-1.1),
            },
            gv: [0.5, -0.2, 0.05],
            gw: [-0.3, 0.6, 0.1],
        }
    }

    #[test]
    fn scalar_hand_expansion() {
        let model = scalar_model();
        let (a, z, ad, zd, u) = (0.9, 0.4, -0.35, 0.8, 1.7);
        let p = StatePoint {
            a: DVector::from_element(1, a),
            z,
            adot: DVector::from_element(1, ad),
            zdot: zd,
            u: DVector::from_element(1, u),
        };
        let e = e_blocks_at(&model, &p).unwrap();
        let (m2, n, a1, a2) = (0.7, -0.4, 0.25, -1.1);
        let gw = poly(&model.gw, z);
        let dgv = dpoly(&model.gv, z);
        let dgw = dpoly(&model.gw, z);
        assert!((e.e11[(0, 0)] - (a1 - n * zd)).abs() < 1e-12);
        assert!((e.e12[(0, 0)] - (dgv * u + n * ad)).abs() < 1e-12);
        // the N a' and Nᵀ a' terms cancel for r = 1
        assert!((e.e21[(0, 0)] - (2.0 * a2 * a + gw * u - 2.0 * zd * m2 * a)).abs() < 1e-12);
        assert!((e.e22[(0, 0)] - (a * dgw * u + 2.0 * a * m2 * ad)).abs() < 1e-12);
    }

    #[test]
    fn stationary_point_blocks() {
        let model = scalar_model();
        let p = StatePoint {
            a: DVector::from_element(1, 0.5),
            z: 0.0,
            adot: DVector::zeros(1),
            zdot: 0.0,
            u: DVector::zeros(1),
        };
        let e = e_blocks_at(&model, &p).unwrap();
        assert_eq!(e.e11, model.mats.a1);
        assert_eq!(e.e12[(0, 0)], 0.0);
        assert!((e.e21[(0, 0)] - 2.0 * -1.1 * 0.5).abs() < 1e-15);
        assert_eq!(e.e22[(0, 0)], 0.0);
    }
}
