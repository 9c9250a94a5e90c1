//! Full-order semi-discrete advection model `q' = A q + B u`, its adjoint, the
//! tracking cost and the control gradient.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid, MIN_GRID_POINTS};
use crate::linalg::{rk4_linear, rk4_linear_adjoint, weighted_col_dot, weighted_col_norm_sq};

/// Central first-derivative weights at offsets -3..=3 (to be divided by dx).
pub const STENCIL: [f64; 7] = [
    -1.0 / 60.0,
    3.0 / 20.0,
    -3.0 / 4.0,
    0.0,
    3.0 / 4.0,
    -3.0 / 20.0,
    1.0 / 60.0,
];

/// Control intensities, one row per channel and one column per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal {
    pub values: DMatrix<f64>,
}

impl ControlSignal {
    pub fn zeros(n_c: usize, n: usize) -> Self {
        Self {
            values: DMatrix::zeros(n_c, n),
        }
    }

    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn n_c(&self) -> usize {
        self.values.nrows()
    }

    /// Time-quadrature inner product Σ_j w_j ⟨u_j, v_j⟩.
    pub fn inner(&self, other: &DMatrix<f64>, tg: &TimeGrid) -> f64 {
        weighted_col_dot(&self.values, other, &tg.trapezoid_weights())
    }

    /// `self - omega * g`.
    pub fn step(&self, omega: f64, g: &DMatrix<f64>) -> Self {
        Self {
            values: &self.values - g * omega,
        }
    }
}

/// State (or adjoint) snapshots, column `j` at time node `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: DMatrix<f64>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.snapshots.ncols()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.snapshots.column(j).clone_owned()
    }
}

/// Periodic 6th-order central approximation of `-v d/dx`.
pub fn build_advection_operator(grid: &SpatialGrid, v: f64) -> Result<CsrMatrix<f64>> {
    let m = grid.m();
    if m < MIN_GRID_POINTS {
        return Err(Error::GridTooSmall {
            m,
            min: MIN_GRID_POINTS,
        });
    }
    let mut coo = CooMatrix::new(m, m);
    for i in 0..m {
        for (k, w) in STENCIL.iter().enumerate() {
            if *w == 0.0 || v == 0.0 {
                continue;
            }
            let j = (i as isize + k as isize - 3).rem_euclid(m as isize) as usize;
            coo.push(i, j, -v * w / grid.dx());
        }
    }
    Ok(CsrMatrix::from(&coo))
}

/// Gaussian actuators `B_k(x) = exp(-4 (x - L (k+1) / n_c)^2)`, `k = 1..=n_c`,
/// measured with the periodic nearest-image distance.
pub fn build_control_operator(grid: &SpatialGrid, n_c: usize) -> Result<DMatrix<f64>> {
    if n_c == 0 {
        return Err(Error::InvalidArgument("need at least one control".into()));
    }
    let l = grid.length();
    Ok(DMatrix::from_fn(grid.m(), n_c, |i, c| {
        let center = l * (c + 2) as f64 / n_c as f64;
        let d = grid.periodic_offset(grid.node(i), center);
        (-4.0 * d * d).exp()
    }))
}

/// Diagonal of `C`: trapezoidal square-root weights `sqrt(dx)` with halved
/// weight at the first and last node.
pub fn build_output_weights(grid: &SpatialGrid) -> DVector<f64> {
    let m = grid.m();
    let mut c = DVector::from_element(m, grid.dx().sqrt());
    c[0] /= 2f64.sqrt();
    c[m - 1] /= 2f64.sqrt();
    c
}

/// Full-order problem data.
#[derive(Clone, Debug)]
pub struct FomSystem {
    grid: SpatialGrid,
    v: f64,
    mu: f64,
    a: CsrMatrix<f64>,
    at: CsrMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    c2: DVector<f64>,
    q0: DVector<f64>,
    qd: DMatrix<f64>,
}

impl FomSystem {
    pub fn new(
        grid: SpatialGrid,
        v: f64,
        b: DMatrix<f64>,
        q0: DVector<f64>,
        qd: DMatrix<f64>,
        mu: f64,
    ) -> Result<Self> {
        let m = grid.m();
        if b.nrows() != m {
            return Err(Error::dims("control operator", m, b.nrows()));
        }
        if q0.len() != m {
            return Err(Error::dims("initial state", m, q0.len()));
        }
        if qd.nrows() != m {
            return Err(Error::dims("target trajectory", m, qd.nrows()));
        }
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        let a = build_advection_operator(&grid, v)?;
        let at = a.transpose();
        let c = build_output_weights(&grid);
        let c2 = c.component_mul(&c);
        Ok(Self {
            grid,
            v,
            mu,
            a,
            at,
            b,
            c,
            c2,
            q0,
            qd,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn a(&self) -> &CsrMatrix<f64> {
        &self.a
    }

    pub fn at(&self) -> &CsrMatrix<f64> {
        &self.at
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n_c(&self) -> usize {
        self.b.ncols()
    }

    /// Diagonal of `C`.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Diagonal of `CᵀC`.
    pub fn c2(&self) -> &DVector<f64> {
        &self.c2
    }

    pub fn q0(&self) -> &DVector<f64> {
        &self.q0
    }

    pub fn qd(&self) -> &DMatrix<f64> {
        &self.qd
    }

    pub fn with_target(&self, qd: DMatrix<f64>) -> Result<Self> {
        if qd.shape() != self.qd.shape() {
            return Err(Error::dims(
                "target trajectory",
                format!("{:?}", self.qd.shape()),
                format!("{:?}", qd.shape()),
            ));
        }
        Ok(Self { qd, ..self.clone() })
    }

    pub fn with_initial_state(&self, q0: DVector<f64>) -> Result<Self> {
        if q0.len() != self.q0.len() {
            return Err(Error::dims("initial state", self.q0.len(), q0.len()));
        }
        Ok(Self { q0, ..self.clone() })
    }

    pub(crate) fn check_time(&self, tg: &TimeGrid) -> Result<()> {
        if self.qd.ncols() != tg.n() {
            return Err(Error::dims("target trajectory columns", tg.n(), self.qd.ncols()));
        }
        Ok(())
    }

    pub(crate) fn check_control(&self, tg: &TimeGrid, u: &ControlSignal) -> Result<()> {
        self.check_time(tg)?;
        if u.values.shape() != (self.n_c(), tg.n()) {
            return Err(Error::dims(
                "control signal",
                format!("{}x{}", self.n_c(), tg.n()),
                format!("{}x{}", u.values.nrows(), u.values.ncols()),
            ));
        }
        Ok(())
    }
}

pub fn solve_state(sys: &FomSystem, tg: &TimeGrid, u: &ControlSignal) -> Result<Trajectory> {
    sys.check_control(tg, u)?;
    let forcing = &sys.b * &u.values;
    let snapshots = rk4_linear(&sys.a, sys.q0.as_slice(), &forcing, tg.dt(), false, "state")?;
    Ok(Trajectory { snapshots })
}

fn check_state(sys: &FomSystem, state: &Trajectory) -> Result<()> {
    if state.snapshots.shape() != sys.qd.shape() {
        return Err(Error::dims(
            "state trajectory",
            format!("{:?}", sys.qd.shape()),
            format!("{:?}", state.snapshots.shape()),
        ));
    }
    Ok(())
}

/// `CᵀC (q - q_d)` column by column.
fn tracking_source(sys: &FomSystem, state: &Trajectory) -> DMatrix<f64> {
    let mut source = &state.snapshots - &sys.qd;
    for mut col in source.column_iter_mut() {
        col.component_mul_assign(&sys.c2);
    }
    source
}

/// Adjoint of `-p' = Aᵀ p + CᵀC (q - q_d)`, `p(t_f) = 0`, discretized as the
/// transpose of the forward RK4 step, so that `μ u + Bᵀ p` is the exact
/// gradient of the discrete cost in the time-weighted inner product.
pub fn solve_adjoint(sys: &FomSystem, tg: &TimeGrid, state: &Trajectory) -> Result<Trajectory> {
    sys.check_time(tg)?;
    check_state(sys, state)?;
    let w = tg.trapezoid_weights();
    let mut sens = tracking_source(sys, state);
    for (mut col, wj) in sens.column_iter_mut().zip(&w) {
        col *= *wj;
    }
    let snapshots = rk4_linear_adjoint(&sys.at, &sens, &w, tg.dt(), "adjoint")?;
    Ok(Trajectory { snapshots })
}

/// The same adjoint equation integrated backward by RK4 with linearly
/// interpolated `(q, q_d)` at half steps. Agrees with [`solve_adjoint`] up
/// to O(dt²) away from the end points.
pub fn solve_adjoint_continuous(sys: &FomSystem, tg: &TimeGrid, state: &Trajectory) -> Result<Trajectory> {
    sys.check_time(tg)?;
    check_state(sys, state)?;
    let source = tracking_source(sys, state);
    let zero = vec![0.0; sys.grid.m()];
    let snapshots = rk4_linear(&sys.at, &zero, &source, tg.dt(), true, "adjoint")?;
    Ok(Trajectory { snapshots })
}

/// `½ Σ_j w_j (‖C(q_j - q_d,j)‖² + μ‖u_j‖²)` with trapezoidal time weights.
pub fn cost(sys: &FomSystem, tg: &TimeGrid, state: &Trajectory, u: &ControlSignal) -> f64 {
    let w = tg.trapezoid_weights();
    let mut r = &state.snapshots - &sys.qd;
    for mut col in r.column_iter_mut() {
        col.component_mul_assign(&sys.c);
    }
    0.5 * (weighted_col_norm_sq(&r, &w) + sys.mu * weighted_col_norm_sq(&u.values, &w))
}

/// `μ u + Bᵀ p` at every time node.
pub fn gradient(sys: &FomSystem, u: &ControlSignal, p: &Trajectory) -> DMatrix<f64> {
    &u.values * sys.mu + sys.b.transpose() * &p.snapshots
}

/// State solve, adjoint solve and gradient in one call.
pub fn cost_and_gradient(
    sys: &FomSystem,
    tg: &TimeGrid,
    u: &ControlSignal,
) -> Result<(f64, DMatrix<f64>, Trajectory)> {
    let q = solve_state(sys, tg, u)?;
    let p = solve_adjoint(sys, tg, &q)?;
    Ok((cost(sys, tg, &q, u), gradient(sys, u, &p), q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinearOp;
    use std::f64::consts::PI;

    fn gaussian(grid: &SpatialGrid, center: f64, width: f64) -> DVector<f64> {
        grid.sample(|x| {
            let d = grid.periodic_offset(x, center);
            (-d * d / width).exp()
        })
    }

    fn derivative_error(m: usize) -> f64 {
        let g = SpatialGrid::new(m, 1.0).unwrap();
        let a = build_advection_operator(&g, 1.0).unwrap();
        let f = g.sample(|x| (2.0 * PI * x).sin());
        let mut y = vec![0.0; m];
        a.apply(f.as_slice(), &mut y);
        g.nodes()
            .zip(&y)
            .map(|(x, yi)| (yi + 2.0 * PI * (2.0 * PI * x).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_velocity_gives_zero_operator() {
        let g = SpatialGrid::new(16, 1.0).unwrap();
        assert_eq!(build_advection_operator(&g, 0.0).unwrap().nnz(), 0);
    }

    #[test]
    fn circulant_rows_and_constants() {
        let g = SpatialGrid::new(12, 3.0).unwrap();
        let a = build_advection_operator(&g, 0.7).unwrap();
        let dense = nalgebra_sparse::convert::serial::convert_csr_dense(&a);
        for i in 0..12 {
            assert!(dense.row(i).sum().abs() < 1e-14);
            for j in 0..12 {
                assert_eq!(dense[(i, j)], dense[((i + 1) % 12, (j + 1) % 12)]);
            }
        }
        let mut y = vec![1.0; 12];
        a.apply(&[2.5; 12], &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sixth_order_in_space() {
        let e1 = derivative_error(64);
        let e2 = derivative_error(128);
        let ratio = e1 / e2;
        assert!(ratio > 55.0 && ratio < 72.0, "ratio {ratio}");
    }

    #[test]
    fn control_operator_shape() {
        let g = SpatialGrid::new(3200, 100.0).unwrap();
        let b = build_control_operator(&g, 40).unwrap();
        assert_eq!(b.shape(), (3200, 40));
        // column 1 centred at x = 5 (node index 159)
        let (imax, vmax) = b.column(0).argmax();
        assert_eq!(imax, 159);
        assert!((g.node(imax) - 5.0).abs() < 1e-12);
        assert!((vmax - 1.0).abs() < 1e-15);
        // one metre off centre
        assert!((b[(159 + 32, 0)] - (-4.0f64).exp()).abs() < 1e-15);
        assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn output_weights_follow_trapezoid() {
        let g = SpatialGrid::new(10, 2.0).unwrap();
        let c = build_output_weights(&g);
        assert!((c[0] - (0.2f64).sqrt() / 2f64.sqrt()).abs() < 1e-15);
        assert!((c[9] - c[0]).abs() < 1e-15);
        assert!((c[4] - (0.2f64).sqrt()).abs() < 1e-15);
    }

    fn small_system(v: f64, n: usize, t_f: f64) -> (FomSystem, TimeGrid) {
        let g = SpatialGrid::new(16, 2.0 * PI).unwrap();
        let tg = TimeGrid::new(n, t_f).unwrap();
        let b = DMatrix::from_fn(16, 2, |i, c| (g.node(i) + c as f64).sin() + 1.0);
        let q0 = g.sample(|x| x.cos());
        let qd = DMatrix::from_fn(16, n, |i, j| (g.node(i) - 0.3 * tg.time(j)).sin());
        (FomSystem::new(g, v, b, q0, qd, 1e-2).unwrap(), tg)
    }

    #[test]
    fn stationary_and_zero_dynamics() {
        let (sys, tg) = small_system(0.0, 6, 1.0);
        let u = ControlSignal::zeros(2, 6);
        let q = solve_state(&sys, &tg, &u).unwrap();
        for j in 0..6 {
            assert_eq!(q.column(j), *sys.q0());
        }
        let sys0 = sys.with_initial_state(DVector::zeros(16)).unwrap();
        assert_eq!(solve_state(&sys0, &tg, &u).unwrap().snapshots.amax(), 0.0);
    }

    #[test]
    fn perfect_tracking_has_zero_adjoint_and_cost() {
        let (sys, tg) = small_system(0.4, 8, 1.0);
        let u = ControlSignal::zeros(2, 8);
        let q = solve_state(&sys, &tg, &u).unwrap();
        let sys = sys.with_target(q.snapshots.clone()).unwrap();
        let p = solve_adjoint(&sys, &tg, &q).unwrap();
        assert_eq!(p.snapshots.amax(), 0.0);
        assert_eq!(cost(&sys, &tg, &q, &u), 0.0);
        assert_eq!(gradient(&sys, &u, &p).amax(), 0.0);

        let u = ControlSignal::new(DMatrix::from_fn(2, 8, |c, j| (c + j) as f64 * 0.1));
        let w = tg.trapezoid_weights();
        let expected = 0.5 * sys.mu() * weighted_col_norm_sq(&u.values, &w);
        assert!((cost(&sys, &tg, &q, &u) - expected).abs() < 1e-15);
        assert!((gradient(&sys, &u, &p) - &u.values * sys.mu()).amax() < 1e-15);
    }

    #[test]
    fn adjoint_terminal_column_is_last_step_sensitivity() {
        // without dynamics the last control value enters q_{n-1} with weight dt/2
        let (sys, tg) = small_system(0.0, 8, 1.0);
        let u = ControlSignal::new(DMatrix::from_element(2, 8, 0.3));
        let q = solve_state(&sys, &tg, &u).unwrap();
        let p = solve_adjoint(&sys, &tg, &q).unwrap();
        let r = (q.column(7) - sys.qd().column(7)).component_mul(sys.c2());
        assert!((p.snapshots.column(7) - r * (tg.dt() / 2.0)).amax() < 1e-14);
        let pc = solve_adjoint_continuous(&sys, &tg, &q).unwrap();
        assert_eq!(pc.snapshots.column(7).amax(), 0.0);
    }

    #[test]
    fn discrete_and_continuous_adjoints_agree_to_second_order() {
        let gap = |n: usize| {
            let (sys, tg) = small_system(0.4, n, 1.0);
            let u = ControlSignal::new(DMatrix::from_fn(2, n, |c, j| (tg.time(j) + c as f64).sin()));
            let q = solve_state(&sys, &tg, &u).unwrap();
            let p = solve_adjoint(&sys, &tg, &q).unwrap().snapshots;
            let pc = solve_adjoint_continuous(&sys, &tg, &q).unwrap().snapshots;
            // node at t = 1/2
            (p.column(n / 2) - pc.column(n / 2)).amax()
        };
        let (e1, e2) = (gap(41), gap(81));
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn mass_is_conserved_without_control() {
        let g = SpatialGrid::new(64, 10.0).unwrap();
        let tg = TimeGrid::new(50, 5.0).unwrap();
        let q0 = gaussian(&g, 4.0, 1.0);
        let sys = FomSystem::new(
            g,
            0.8,
            DMatrix::zeros(64, 1),
            q0,
            DMatrix::zeros(64, 50),
            1e-3,
        )
        .unwrap();
        let q = solve_state(&sys, &tg, &ControlSignal::zeros(1, 50)).unwrap();
        let m0 = q.snapshots.column(0).sum();
        for j in 1..50 {
            assert!((q.snapshots.column(j).sum() - m0).abs() < 1e-10 * m0.abs());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (sys, tg) = small_system(0.3, 8, 0.4);
        let u = ControlSignal::new(DMatrix::from_fn(2, 8, |c, j| {
            0.5 + 0.2 * c as f64 - 0.1 * (j as f64 * 0.2).cos()
        }));
        let (_, g, _) = cost_and_gradient(&sys, &tg, &u).unwrap();
        for c in 0..2 {
            for j in 0..8 {
                let mut du = DMatrix::zeros(2, 8);
                du[(c, j)] = 1.0;
                let eps = 1e-3;
                let j_at = |w: f64| {
                    let uw = u.step(w, &du);
                    cost(&sys, &tg, &solve_state(&sys, &tg, &uw).unwrap(), &uw)
                };
                // the cost is quadratic in u, so central differences are exact
                let fd = (j_at(-eps) - j_at(eps)) / (2.0 * eps);
                let adj = u_inner(&g, &du, &tg);
                assert!((adj - fd).abs() < 1e-9 * fd.abs(), "({c},{j}) adj {adj} fd {fd}");
            }
        }
    }

    fn u_inner(g: &DMatrix<f64>, du: &DMatrix<f64>, tg: &TimeGrid) -> f64 {
        weighted_col_dot(g, du, &tg.trapezoid_weights())
    }
}
