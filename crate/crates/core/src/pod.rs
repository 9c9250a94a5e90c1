//! POD bases and the POD-Galerkin reduced model with its FRTO and FOTR
//! optimality systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fom::{ControlSignal, FomSystem, Trajectory};
use crate::grid::TimeGrid;
use crate::linalg::{csr_mul_dense, left_svd, rk4_linear, rk4_linear_adjoint, weighted_col_norm_sq};

/// Truncated left singular basis of a snapshot matrix.
#[derive(Clone, Debug)]
pub struct PodBasis {
    /// m×p, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Full spectrum of the snapshot matrix, non-increasing.
    pub singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// Keeps the leading `p` modes.
    pub fn truncate(&self, p: usize) -> Result<Self> {
        if p == 0 || p > self.rank() {
            return Err(Error::RankOutOfRange { p, max: self.rank() });
        }
        Ok(Self {
            modes: self.modes.columns(0, p).clone_owned(),
            singular_values: self.singular_values.clone(),
        })
    }

    pub fn project(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.modes.transpose() * q
    }

    pub fn reconstruct(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.modes * a
    }
}

/// POD amplitudes, p×n.
#[derive(Clone, Debug, PartialEq)]
pub struct PodReducedTrajectory {
    pub amplitudes: DMatrix<f64>,
}

/// Full left singular basis, i.e. every available mode.
pub fn full_pod_basis(snapshots: &DMatrix<f64>) -> Result<PodBasis> {
    let (modes, singular_values) = left_svd(snapshots)?;
    Ok(PodBasis {
        modes,
        singular_values,
    })
}

pub fn compute_pod_basis(snapshots: &DMatrix<f64>, p: usize) -> Result<PodBasis> {
    let max = snapshots.nrows().min(snapshots.ncols());
    if p == 0 || p > max {
        return Err(Error::RankOutOfRange { p, max });
    }
    full_pod_basis(snapshots)?.truncate(p)
}

/// Number of singular values with `s_i / s_1 > eps`, at least 1.
pub fn select_modes_by_tolerance(singular_values: &[f64], eps: f64) -> Result<usize> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance must be non-negative, got {eps}")));
    }
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    let d = singular_values.iter().filter(|s| **s / s1 > eps).count();
    Ok(d.max(1))
}

/// Basis for first-optimize-then-reduce: state and adjoint snapshots scaled to
/// unit Frobenius norm, concatenated column-wise and decomposed together.
pub fn combined_basis(state: &DMatrix<f64>, adjoint: &DMatrix<f64>, p: usize) -> Result<PodBasis> {
    if state.nrows() != adjoint.nrows() {
        return Err(Error::dims("combined snapshots", state.nrows(), adjoint.nrows()));
    }
    let scale = |x: &DMatrix<f64>| {
        let nrm = x.norm();
        if nrm > 0.0 {
            x / nrm
        } else {
            x.clone()
        }
    };
    let mut q = DMatrix::zeros(state.nrows(), state.ncols() + adjoint.ncols());
    q.columns_mut(0, state.ncols()).copy_from(&scale(state));
    q.columns_mut(state.ncols(), adjoint.ncols()).copy_from(&scale(adjoint));
    compute_pod_basis(&q, p)
}

/// Reduced operators of the POD-Galerkin model, assembled once per basis.
#[derive(Clone, Debug)]
pub struct PodRom {
    modes: DMatrix<f64>,
    /// UᵀAU
    ar: DMatrix<f64>,
    /// UᵀB
    br: DMatrix<f64>,
    /// UᵀCᵀCU
    gram: DMatrix<f64>,
    /// UᵀCᵀC q_d, one column per time node
    target_proj: DMatrix<f64>,
    /// ‖C q_d(t_j)‖²
    target_norm_sq: Vec<f64>,
    mu: f64,
}

impl PodRom {
    pub fn new(basis: &PodBasis, sys: &FomSystem) -> Result<Self> {
        let u = &basis.modes;
        if u.nrows() != sys.grid().m() {
            return Err(Error::dims("POD basis rows", sys.grid().m(), u.nrows()));
        }
        let ut = u.transpose();
        let ar = &ut * csr_mul_dense(sys.a(), u);
        let br = &ut * sys.b();
        let mut cu = u.clone();
        for mut col in cu.column_iter_mut() {
            col.component_mul_assign(sys.c2());
        }
        let gram = &ut * &cu;
        let target_proj = cu.transpose() * sys.qd();
        let target_norm_sq = sys
            .qd()
            .column_iter()
            .map(|c| c.component_mul(sys.c()).norm_squared())
            .collect();
        Ok(Self {
            modes: u.clone(),
            ar,
            br,
            gram,
            target_proj,
            target_norm_sq,
            mu: sys.mu(),
        })
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn reduced_operator(&self) -> &DMatrix<f64> {
        &self.ar
    }

    pub fn reduced_control(&self) -> &DMatrix<f64> {
        &self.br
    }

    pub fn initial_amplitudes(&self, q0: &DVector<f64>) -> DVector<f64> {
        self.modes.transpose() * q0
    }

    /// RK4 on `a' = UᵀAU a + UᵀB u`, `a(0) = Uᵀ q0`.
    pub fn solve(&self, q0: &DVector<f64>, tg: &TimeGrid, u: &ControlSignal) -> Result<PodReducedTrajectory> {
        if u.values.nrows() != self.br.ncols() || u.values.ncols() != tg.n() {
            return Err(Error::dims(
                "control signal",
                format!("{}x{}", self.br.ncols(), tg.n()),
                format!("{}x{}", u.values.nrows(), u.values.ncols()),
            ));
        }
        let a0 = self.initial_amplitudes(q0);
        let forcing = &self.br * &u.values;
        let amplitudes = rk4_linear(&self.ar, a0.as_slice(), &forcing, tg.dt(), false, "POD-G state")?;
        Ok(PodReducedTrajectory { amplitudes })
    }

    /// Surrogate cost from the reduced quantities; equal to [`pod_cost`] up
    /// to roundoff but free of m-sized work.
    pub fn cost(&self, tg: &TimeGrid, traj: &PodReducedTrajectory, u: &ControlSignal) -> f64 {
        let w = tg.trapezoid_weights();
        let ga = &self.gram * &traj.amplitudes;
        let mut track = 0.0;
        for j in 0..tg.n() {
            let a = traj.amplitudes.column(j);
            let r = a.dot(&ga.column(j)) - 2.0 * a.dot(&self.target_proj.column(j))
                + self.target_norm_sq[j];
            track += w[j] * r.max(0.0);
        }
        0.5 * (track + self.mu * weighted_col_norm_sq(&u.values, &w))
    }
}

pub fn solve_pod_rom(
    basis: &PodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
) -> Result<PodReducedTrajectory> {
    sys.check_control(tg, u)?;
    PodRom::new(basis, sys)?.solve(sys.q0(), tg, u)
}

/// Cost of the reconstructed trajectory `U a`.
pub fn pod_cost(
    basis: &PodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    traj: &PodReducedTrajectory,
    u: &ControlSignal,
) -> f64 {
    let state = Trajectory {
        snapshots: basis.reconstruct(&traj.amplitudes),
    };
    crate::fom::cost(sys, tg, &state, u)
}

/// `-α' = U_aᵀAᵀU_a α + U_aᵀCᵀC(U_s a - q_d)`, `α(t_f) = 0`, discretized as
/// the transposed RK4 step (see [`crate::fom::solve_adjoint`]).
fn reduced_adjoint(
    state_modes: &DMatrix<f64>,
    adjoint_modes: &DMatrix<f64>,
    sys: &FomSystem,
    tg: &TimeGrid,
    traj: &PodReducedTrajectory,
) -> Result<PodReducedTrajectory> {
    sys.check_time(tg)?;
    if traj.amplitudes.shape() != (state_modes.ncols(), tg.n()) {
        return Err(Error::dims(
            "POD amplitudes",
            format!("{}x{}", state_modes.ncols(), tg.n()),
            format!("{:?}", traj.amplitudes.shape()),
        ));
    }
    let uat = adjoint_modes.transpose();
    let op = &uat * csr_mul_dense(sys.at(), adjoint_modes);
    let mut residual = state_modes * &traj.amplitudes - sys.qd();
    for mut col in residual.column_iter_mut() {
        col.component_mul_assign(sys.c2());
    }
    let w = tg.trapezoid_weights();
    let mut sens = &uat * residual;
    for (mut col, wj) in sens.column_iter_mut().zip(&w) {
        col *= *wj;
    }
    let amplitudes = rk4_linear_adjoint(&op, &sens, &w, tg.dt(), "POD-G adjoint")?;
    Ok(PodReducedTrajectory { amplitudes })
}

/// Adjoint of the reduced problem (first reduce, then optimize).
pub fn pod_frto_adjoint(
    basis: &PodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    traj: &PodReducedTrajectory,
) -> Result<PodReducedTrajectory> {
    reduced_adjoint(&basis.modes, &basis.modes, sys, tg, traj)
}

/// `μ u + BᵀU α`.
pub fn pod_frto_gradient(
    basis: &PodBasis,
    sys: &FomSystem,
    u: &ControlSignal,
    adjoint: &PodReducedTrajectory,
) -> DMatrix<f64> {
    &u.values * sys.mu() + (basis.modes.transpose() * sys.b()).transpose() * &adjoint.amplitudes
}

/// Galerkin projection of the full adjoint equation onto a separate adjoint
/// basis (first optimize, then reduce).
pub fn pod_fotr_adjoint(
    state_basis: &PodBasis,
    adjoint_basis: &PodBasis,
    sys: &FomSystem,
    tg: &TimeGrid,
    traj: &PodReducedTrajectory,
) -> Result<PodReducedTrajectory> {
    if state_basis.modes.nrows() != adjoint_basis.modes.nrows() {
        return Err(Error::dims(
            "adjoint basis rows",
            state_basis.modes.nrows(),
            adjoint_basis.modes.nrows(),
        ));
    }
    reduced_adjoint(&state_basis.modes, &adjoint_basis.modes, sys, tg, traj)
}

/// `μ u + BᵀU_a α`.
pub fn pod_fotr_gradient(
    adjoint_basis: &PodBasis,
    sys: &FomSystem,
    u: &ControlSignal,
    adjoint: &PodReducedTrajectory,
) -> DMatrix<f64> {
    pod_frto_gradient(adjoint_basis, sys, u, adjoint)
}
