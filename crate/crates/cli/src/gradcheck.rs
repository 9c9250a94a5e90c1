//! Finite-difference check of the three gradients on a random small instance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shiftrom::fom::{build_control_operator, cost, cost_and_gradient, solve_state, ControlSignal, FomSystem};
use shiftrom::frto_adjoint::{solve_spod_frto_adjoint, spod_frto_gradient};
use shiftrom::grid::{SpatialGrid, TimeGrid};
use shiftrom::pod::{compute_pod_basis, pod_cost, pod_frto_adjoint, pod_frto_gradient, solve_pod_rom};
use shiftrom::spod::{solve_spod_rom, spod_cost, spod_decompose_single_frame, ExactGalerkin, ShiftTrack};

pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn fd_gradient(u: &ControlSignal, tg: &TimeGrid, eps: f64, j: impl Fn(&ControlSignal) -> f64) -> DMatrix<f64> {
    let w = tg.trapezoid_weights();
    let (rows, cols) = u.values.shape();
    DMatrix::from_fn(rows, cols, |k, t| {
        let mut e = DMatrix::zeros(rows, cols);
        e[(k, t)] = 1.0;
        (j(&u.step(-eps, &e)) - j(&u.step(eps, &e))) / (2.0 * eps * w[t])
    })
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn run(seed: u64) -> shiftrom::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, n_c, r) = (24, 12, 3, 3);
    let g = SpatialGrid::new(m, 10.0)?;
    let v = rng.random_range(0.2..1.0);
    let tg = TimeGrid::new(n, n as f64 * g.dx() / v * 0.8)?;
    let c = rng.random_range(0.0..10.0);
    let q0 = g.sample(|x| {
        let d = g.periodic_offset(x, c);
        (-d * d / 2.0).exp()
    });
    let qd = DMatrix::from_fn(m, n, |_, _| rng.random_range(-0.2..0.2));
    let b = build_control_operator(&g, n_c)?;
    let sys = FomSystem::new(g, v, b, q0, qd, 1e-2)?;
    let u = ControlSignal::new(DMatrix::from_fn(n_c, n, |_, _| rng.random_range(-0.3..0.3)));

    let (_, g_fom, q) = cost_and_gradient(&sys, &tg, &u)?;
    let j_fom = |w: &ControlSignal| cost(&sys, &tg, &solve_state(&sys, &tg, w).unwrap(), w);
    let fom = rel(&g_fom, &fd_gradient(&u, &tg, 1e-3, j_fom));

    let pod_basis = compute_pod_basis(&q.snapshots, r)?;
    let traj = solve_pod_rom(&pod_basis, &sys, &tg, &u)?;
    let g_pod = pod_frto_gradient(&pod_basis, &sys, &u, &pod_frto_adjoint(&pod_basis, &sys, &tg, &traj)?);
    let j_pod = |w: &ControlSignal| pod_cost(&pod_basis, &sys, &tg, &solve_pod_rom(&pod_basis, &sys, &tg, w).unwrap(), w);
    let pod = rel(&g_pod, &fd_gradient(&u, &tg, 1e-4, j_pod));

    let track = ShiftTrack::linear(n, tg.dt(), v);
    let basis = spod_decompose_single_frame(&q.snapshots, sys.grid(), &track, r)?;
    let model = ExactGalerkin::new(&basis, &sys, true)?;
    let z0 = rng.random_range(0.0..1.0) * sys.grid().dx();
    let state = solve_spod_rom(&model, &basis, &sys, &tg, &u, z0)?;
    let adj = solve_spod_frto_adjoint(&state, &model, &basis, &sys, &tg, &u)?;
    let g_spod = spod_frto_gradient(&sys, &u, &adj);
    // a failed perturbed solve poisons the difference instead of aborting
    let j_spod = |w: &ControlSignal| {
        solve_spod_rom(&model, &basis, &sys, &tg, w, z0)
            .and_then(|s| spod_cost(&basis, &sys, &tg, &s, w))
            .unwrap_or(f64::NAN)
    };
    let spod = rel(&g_spod, &fd_gradient(&u, &tg, 1e-5, j_spod));

    Ok(vec![
        Check {
            name: "fom",
            error: fom,
            tolerance: 1e-5,
        },
        Check {
            name: "pod-g",
            error: pod,
            tolerance: 1e-4,
        },
        Check {
            name: "spod-g",
            error: if spod.is_nan() { f64::INFINITY } else { spod },
            tolerance: 1e-4,
        },
    ])
}
