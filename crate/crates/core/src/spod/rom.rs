//! Nonlinear single-frame sPOD-Galerkin model in the unknowns `(a, z)`:
//!
//! ```text
//! [ M1      N a   ] [a']   [ A1 a + VᵀB u        ]
//! [ (N a)ᵀ  aᵀM2a ] [z'] = [ aᵀA2 a + aᵀ WᵀB u   ]
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fom::{ControlSignal, FomSystem, Trajectory};
use crate::grid::{SpatialGrid, TimeGrid};

use super::decompose::{reconstruct_single_frame, SpodBasis};
use super::galerkin::{GalerkinMatrices, GalerkinModel};
use super::shift::ShiftStencil;

/// Condition estimate above which the mass matrix counts as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// How the shift evolves in the reduced model.
#[derive(Clone, Debug, PartialEq)]
pub enum ShiftDynamics {
    /// `z` is an unknown of the Galerkin system.
    Free,
    /// `z` and `z'` are given at the time nodes (linear in between); only the
    /// amplitude rows of the system are solved.
    Prescribed { z: Vec<f64>, zdot: Vec<f64> },
}

impl ShiftDynamics {
    pub fn pinned(n: usize) -> Self {
        ShiftDynamics::Prescribed {
            z: vec![0.0; n],
            zdot: vec![0.0; n],
        }
    }
}

/// Amplitudes and shift of the single frame at every node, with the state
/// rates from the first RK4 stage of each step (last node: rates evaluated at
/// the final state).
#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    /// r×n
    pub amplitudes: DMatrix<f64>,
    /// K×n (K = 1), unwrapped
    pub shifts: DMatrix<f64>,
    pub amplitude_rates: DMatrix<f64>,
    pub shift_rates: DMatrix<f64>,
}

impl ReducedTrajectory {
    pub fn n(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn shift_values(&self) -> Vec<f64> {
        self.shifts.row(0).iter().copied().collect()
    }
}

/// Factorized `M1` with its extreme eigenvalues.
pub(crate) struct MassFactor {
    chol: Cholesky<f64, Dyn>,
    lambda_min: f64,
    lambda_max: f64,
}

impl MassFactor {
    pub(crate) fn new(m1: &DMatrix<f64>, step: usize) -> Result<Self> {
        let eig = m1.clone().symmetric_eigen().eigenvalues;
        let (lambda_min, lambda_max) = (eig.min(), eig.max());
        let chol = Cholesky::new(m1.clone()).ok_or(Error::NearDegenerate {
            step,
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            chol,
            lambda_min,
            lambda_max,
        })
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Solves the bordered system `[[M1, c], [cᵀ, d]] [x; y] = [f; g]` by the
/// Schur complement `s = d - cᵀ M1⁻¹ c`, rejecting ill-conditioned systems.
pub(crate) fn bordered_solve(
    m1: &MassFactor,
    c: &DVector<f64>,
    d: f64,
    f: &DVector<f64>,
    g: f64,
    step: usize,
) -> Result<(DVector<f64>, f64)> {
    let y = m1.solve(f);
    let w = m1.solve(c);
    let s = d - c.dot(&w);
    let condition = if s > 0.0 {
        (m1.lambda_max + d) / m1.lambda_min.min(s)
    } else {
        f64::INFINITY
    };
    if !(condition <= CONDITION_LIMIT) || m1.lambda_min <= 0.0 {
        return Err(Error::NearDegenerate { step, condition });
    }
    let zdot = (g - c.dot(&y)) / s;
    Ok((y - w * zdot, zdot))
}

/// Per-solve evaluator of the reduced right-hand side.
pub(crate) struct RomRhs<'a, G: GalerkinModel + ?Sized> {
    pub model: &'a G,
    constant: Option<MassFactor>,
}

impl<'a, G: GalerkinModel + ?Sized> RomRhs<'a, G> {
    pub(crate) fn new(model: &'a G) -> Result<Self> {
        let constant = match model.constant_matrices() {
            Some(m) => Some(MassFactor::new(&m.m1, 0)?),
            None => None,
        };
        Ok(Self { model, constant })
    }

    pub(crate) fn with_factor<T>(
        &self,
        mats: &GalerkinMatrices,
        step: usize,
        f: impl FnOnce(&MassFactor) -> Result<T>,
    ) -> Result<T> {
        match &self.constant {
            Some(fac) => f(fac),
            None => f(&MassFactor::new(&mats.m1, step)?),
        }
    }

    /// `(a', z')` at a state; `prescribed` carries `z'` for prescribed shifts.
    pub(crate) fn eval(
        &self,
        a: &DVector<f64>,
        z: f64,
        u: &DVector<f64>,
        prescribed: Option<f64>,
        step: usize,
    ) -> Result<(DVector<f64>, f64)> {
        let mats = self.model.matrices_at(z);
        let (gv, gw) = self.model.control_apply(z, u);
        let na = &mats.n * a;
        let fa = &mats.a1 * a + gv;
        self.with_factor(&mats, step, |fac| match prescribed {
            Some(zdot) => Ok((fac.solve(&(fa - &na * zdot)), zdot)),
            None => {
                let d = a.dot(&(&mats.m2 * a));
                let g = a.dot(&(&mats.a2 * a)) + a.dot(&gw);
                bordered_solve(fac, &na, d, &fa, g, step)
            }
        })
    }
}

fn lerp_col(x: &DMatrix<f64>, j: usize, f: f64) -> DVector<f64> {
    if f == 0.0 {
        return x.column(j).clone_owned();
    }
    x.column(j) * (1.0 - f) + x.column(j + 1) * f
}

/// Initial amplitudes from `M1(z0) a = V(z0)ᵀ q0`.
pub fn initial_amplitudes<G: GalerkinModel + ?Sized>(
    model: &G,
    basis: &SpodBasis,
    grid: &SpatialGrid,
    q0: &DVector<f64>,
    z0: f64,
) -> Result<DVector<f64>> {
    let modes = &basis.single_frame()?.modes;
    let mut tq = vec![0.0; grid.m()];
    ShiftStencil::new(grid, z0, 0).apply_transpose(q0.as_slice(), &mut tq);
    let rhs = modes.transpose() * DVector::from_vec(tq);
    let mats = model.matrices_at(z0);
    Ok(MassFactor::new(&mats.m1, 0)?.solve(&rhs))
}

pub fn solve_spod_rom<G: GalerkinModel + ?Sized>(
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
    z0: f64,
) -> Result<ReducedTrajectory> {
    solve_spod_rom_with(model, basis, sys, tg, u, z0, &ShiftDynamics::Free)
}

/// RK4 on the reduced system; every stage solves the bordered mass system.
pub fn solve_spod_rom_with<G: GalerkinModel + ?Sized>(
    model: &G,
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
    z0: f64,
    dynamics: &ShiftDynamics,
) -> Result<ReducedTrajectory> {
    sys.check_control(tg, u)?;
    let r = basis.rank();
    if model.rank() != r {
        return Err(Error::dims("Galerkin model rank", r, model.rank()));
    }
    let n = tg.n();
    let (dt, h) = (tg.dt(), 0.5 * tg.dt());
    let prescribed = match dynamics {
        ShiftDynamics::Free => None,
        ShiftDynamics::Prescribed { z, zdot } => {
            if z.len() != n || zdot.len() != n {
                return Err(Error::dims("prescribed shift length", n, z.len().min(zdot.len())));
            }
            Some((z, zdot))
        }
    };
    let z_start = prescribed.map_or(z0, |(z, _)| z[0]);
    let rhs = RomRhs::new(model)?;

    let mut amplitudes = DMatrix::zeros(r, n);
    let mut shifts = DMatrix::zeros(1, n);
    let mut amplitude_rates = DMatrix::zeros(r, n);
    let mut shift_rates = DMatrix::zeros(1, n);

    let mut a = initial_amplitudes(model, basis, sys.grid(), sys.q0(), z_start)?;
    let mut z = z_start;
    amplitudes.set_column(0, &a);
    shifts[(0, 0)] = z;

    let uc = |j: usize, f: f64| lerp_col(&u.values, j, f);
    let pz = |j: usize, f: f64| {
        prescribed.map(|(zz, zd)| {
            let at = |v: &Vec<f64>| if f == 0.0 { v[j] } else { v[j] * (1.0 - f) + v[j + 1] * f };
            (at(zz), at(zd))
        })
    };

    for j in 0..n.saturating_sub(1) {
        let step = j + 1;
        let p0 = pz(j, 0.0);
        let ph = pz(j, 0.5);
        let p1 = pz(j + 1, 0.0);
        let uh = uc(j, 0.5);
        let (k1a, k1z) = rhs.eval(&a, z, &uc(j, 0.0), p0.map(|p| p.1), step)?;
        amplitude_rates.set_column(j, &k1a);
        shift_rates[(0, j)] = k1z;
        let zh = |k: f64| ph.map_or(z + h * k, |p| p.0);
        let (k2a, k2z) = rhs.eval(&(&a + &k1a * h), zh(k1z), &uh, ph.map(|p| p.1), step)?;
        let (k3a, k3z) = rhs.eval(&(&a + &k2a * h), zh(k2z), &uh, ph.map(|p| p.1), step)?;
        let z4 = p1.map_or(z + dt * k3z, |p| p.0);
        let (k4a, k4z) = rhs.eval(&(&a + &k3a * dt), z4, &uc(j + 1, 0.0), p1.map(|p| p.1), step)?;
        a += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
        z = p1.map_or(z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z), |p| p.0);
        if !(a.iter().all(|v| v.is_finite()) && z.is_finite()) {
            return Err(Error::Diverged {
                solver: "sPOD-G state",
                step,
            });
        }
        amplitudes.set_column(j + 1, &a);
        shifts[(0, j + 1)] = z;
    }
    let (ka, kz) = rhs.eval(&a, z, &uc(n - 1, 0.0), pz(n - 1, 0.0).map(|p| p.1), n - 1)?;
    amplitude_rates.set_column(n - 1, &ka);
    shift_rates[(0, n - 1)] = kz;

    Ok(ReducedTrajectory {
        amplitudes,
        shifts,
        amplitude_rates,
        shift_rates,
    })
}

/// `q(t_j) ≈ V(z_j) a_j`.
pub fn reconstruct(basis: &SpodBasis, traj: &ReducedTrajectory, grid: &SpatialGrid) -> Result<Trajectory> {
    let modes = &basis.single_frame()?.modes;
    Ok(Trajectory {
        snapshots: reconstruct_single_frame(modes, &traj.amplitudes, &traj.shift_values(), grid)?,
    })
}

/// Tracking cost of the reconstructed reduced trajectory.
pub fn spod_cost(
    basis: &SpodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    traj: &ReducedTrajectory,
    u: &ControlSignal,
) -> Result<f64> {
    let state = reconstruct(basis, traj, sys.grid())?;
    Ok(crate::fom::cost(sys, tg, &state, u))
}
