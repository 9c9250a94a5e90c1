//! Acceptance run: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines are always printed.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shiftrom::experiment::build_example;
use shiftrom::fom::{build_control_operator, cost, cost_and_gradient, solve_state, ControlSignal, FomSystem};
use shiftrom::frto_adjoint::{solve_spod_frto_adjoint, solve_spod_frto_adjoint_with, spod_frto_gradient};
use shiftrom::grid::{SpatialGrid, TimeGrid};
use shiftrom::optimizer::{optimize, ConvergenceRecord, Method, ModePolicy, OptimizerConfig};
use shiftrom::pod::{
    compute_pod_basis, full_pod_basis, pod_cost, pod_fotr_adjoint, pod_fotr_gradient, pod_frto_adjoint,
    pod_frto_gradient, solve_pod_rom, PodBasis,
};
use shiftrom::spod::{
    co_moving_snapshots, estimate_shifts, solve_spod_rom, solve_spod_rom_with, spod_cost,
    spod_decompose_single_frame, ExactGalerkin, ShiftDynamics, ShiftStencil, ShiftTrack, SpodBasis,
};

// pinned tolerances
const C1_TOL: f64 = 1e-5;
const C1_SECONDS: f64 = 10.0;
const C2_TOL: f64 = 1e-4;
const C2_SECONDS: f64 = 30.0;
const C3_TOL: f64 = 1e-8;
const C4_ORDER: f64 = 5.5;
const C4_ROW_SUM: f64 = 1e-12;
const C5_COMOVING: f64 = 1e-3;
const C5_LAB: f64 = 1e-1;
const C6_TOL: f64 = 1e-8;
const C7_TOL: f64 = 1e-12;
const C8_COST_FACTOR: f64 = 1.25;
const C8_MODE_RATIO: f64 = 3.0;
const C8_SECONDS: f64 = 1800.0;
const C8_ITERATIONS: usize = 300;
const C8_SPOD_MODES: [usize; 7] = [1, 2, 3, 4, 6, 8, 12];
const C8_POD_MODES: [usize; 10] = [5, 10, 15, 20, 30, 40, 50, 60, 80, 120];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize, n_c: usize) -> (FomSystem, TimeGrid) {
    let l = rng.random_range(2.0..20.0);
    let g = SpatialGrid::new(m, l).unwrap();
    let v: f64 = rng.random_range(-2.0..2.0);
    // keep |v| dt / dx ≤ 1
    let t_f = (n as f64) * g.dx() / v.abs().max(0.1) * rng.random_range(0.3..1.0);
    let tg = TimeGrid::new(n, t_f).unwrap();
    let c = rng.random_range(0.0..l);
    let width = rng.random_range(0.05..0.3) * l * l / 10.0;
    let q0 = g.sample(|x| {
        let d = g.periodic_offset(x, c);
        (-d * d / width).exp()
    });
    let qd = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = build_control_operator(&g, n_c).unwrap();
    let mu = rng.random_range(1e-3..1e-1);
    (FomSystem::new(g, v, b, q0, qd, mu).unwrap(), tg)
}

/// Entrywise central differences of `j`, divided by the time weights so the
/// result lives in the same inner product as the adjoint gradients.
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

fn c1_fom_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (m, n, n_c) = (rng.random_range(8..=32), rng.random_range(4..=16), rng.random_range(1..=4));
        let (sys, tg) = random_instance(&mut rng, m, n, n_c);
        let u = ControlSignal::new(DMatrix::from_fn(n_c, n, |_, _| rng.random_range(-1.0..1.0)));
        let (_, g, _) = cost_and_gradient(&sys, &tg, &u).unwrap();
        let j = |w: &ControlSignal| cost(&sys, &tg, &solve_state(&sys, &tg, w).unwrap(), w);
        worst = worst.max(rel(&g, &fd_gradient(&u, &tg, 1e-3, j)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < C1_TOL && secs < C1_SECONDS,
        format!("20 instances, worst relative error {worst:.2e} (< {C1_TOL:e}), {secs:.2} s (< {C1_SECONDS} s)"),
    )
}

fn c2_reduced_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_pod, mut worst_spod): (f64, f64) = (0.0, 0.0);
    for k in 0..20 {
        let (m, n, r) = (rng.random_range(16..=32), rng.random_range(6..=12), 1 + k % 3);
        let (sys, tg) = random_instance(&mut rng, m, n, 3);
        let sys = sys.with_target(sys.qd() * 0.2).unwrap();
        let u = ControlSignal::new(DMatrix::from_fn(3, n, |_, _| rng.random_range(-0.3..0.3)));
        let q = solve_state(&sys, &tg, &u).unwrap();

        let pod = compute_pod_basis(&q.snapshots, r).unwrap();
        let traj = solve_pod_rom(&pod, &sys, &tg, &u).unwrap();
        let g = pod_frto_gradient(&pod, &sys, &u, &pod_frto_adjoint(&pod, &sys, &tg, &traj).unwrap());
        let j = |w: &ControlSignal| pod_cost(&pod, &sys, &tg, &solve_pod_rom(&pod, &sys, &tg, w).unwrap(), w);
        worst_pod = worst_pod.max(rel(&g, &fd_gradient(&u, &tg, 1e-4, j)));

        let track = ShiftTrack::linear(n, tg.dt(), sys.v());
        let basis = spod_decompose_single_frame(&q.snapshots, sys.grid(), &track, r).unwrap();
        let model = ExactGalerkin::new(&basis, &sys, true).unwrap();
        let z0 = 0.3 * sys.grid().dx();
        let state = solve_spod_rom(&model, &basis, &sys, &tg, &u, z0).unwrap();
        let adj = solve_spod_frto_adjoint(&state, &model, &basis, &sys, &tg, &u).unwrap();
        let g = spod_frto_gradient(&sys, &u, &adj);
        let j = |w: &ControlSignal| {
            let s = solve_spod_rom(&model, &basis, &sys, &tg, w, z0).unwrap();
            spod_cost(&basis, &sys, &tg, &s, w).unwrap()
        };
        worst_spod = worst_spod.max(rel(&g, &fd_gradient(&u, &tg, 1e-5, j)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_pod < C2_TOL && worst_spod < C2_TOL && secs < C2_SECONDS,
        format!(
            "20 instances, POD-G {worst_pod:.2e}, sPOD-G {worst_spod:.2e} (< {C2_TOL:e}), {secs:.2} s (< {C2_SECONDS} s)"
        ),
    )
}

fn c3_eckart_young() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (m, n) = (rng.random_range(5..40), rng.random_range(5..40));
        let q = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let p = rng.random_range(1..m.min(n));
        let basis = compute_pod_basis(&q, p).unwrap();
        let err = (&q - &basis.modes * (basis.modes.transpose() * &q)).norm_squared();
        let tail: f64 = basis.singular_values[p..].iter().map(|s| s * s).sum();
        worst = worst.max((err - tail).abs() / tail);
    }
    outcome(worst < C3_TOL, format!("50 matrices, worst relative gap {worst:.2e} (< {C3_TOL:e})"))
}

fn shifted_gaussian_error(m: usize, frac: f64) -> f64 {
    let g = SpatialGrid::new(m, 10.0).unwrap();
    let z = 1.25 + frac * g.dx();
    let f = |x: f64| {
        let d = g.periodic_offset(x, 5.0);
        (-d * d).exp()
    };
    let x: Vec<f64> = g.nodes().map(f).collect();
    let mut y = vec![0.0; m];
    ShiftStencil::new(&g, z, 0).apply(&x, &mut y);
    g.nodes().zip(&y).map(|(xi, yi)| (yi - f(xi - z)).abs()).fold(0.0, f64::max)
}

fn c4_shift_order() -> Outcome {
    let mut worst_order = f64::INFINITY;
    for frac in [0.13, 0.37, 0.5, 0.81] {
        let e: Vec<f64> = [128, 256, 512].iter().map(|&m| shifted_gaussian_error(m, frac)).collect();
        for w in e.windows(2) {
            worst_order = worst_order.min((w[0] / w[1]).log2());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let g = SpatialGrid::new(97, 3.7).unwrap();
    let worst_sum = (0..1000)
        .map(|_| {
            let s: f64 = ShiftStencil::new(&g, rng.random_range(-100.0..100.0), 0).weights.iter().sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        worst_order >= C4_ORDER && worst_sum < C4_ROW_SUM,
        format!("observed order ≥ {worst_order:.2} (≥ {C4_ORDER}), worst row-sum error {worst_sum:.1e} over 1000 shifts"),
    )
}

fn c5_rank_collapse() -> Outcome {
    let ex = build_example(1, 0.25, 1e-3).unwrap();
    let q = solve_state(&ex.sys, &ex.tg, &ControlSignal::zeros(ex.sys.n_c(), ex.tg.n())).unwrap();
    let lab = full_pod_basis(&q.snapshots).unwrap().singular_values;
    let track = estimate_shifts(&q.snapshots, ex.sys.grid()).unwrap();
    let co = co_moving_snapshots(&q.snapshots, ex.sys.grid(), &track).unwrap();
    let moving = full_pod_basis(&co).unwrap().singular_values;
    let (r_lab, r_co) = (lab[1] / lab[0], moving[1] / moving[0]);
    outcome(
        r_co < C5_COMOVING && r_lab > C5_LAB,
        format!("example 1 at m=800: σ2/σ1 co-moving {r_co:.2e} (< {C5_COMOVING:e}), lab {r_lab:.3} (> {C5_LAB})"),
    )
}

fn c6_pinned_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let (sys, tg) = random_instance(&mut rng, 24, 10, 2);
        let sys = sys.with_target(sys.qd() * 0.2).unwrap();
        let u = ControlSignal::new(DMatrix::from_fn(2, 10, |_, _| rng.random_range(-0.5..0.5)));
        let q = solve_state(&sys, &tg, &u).unwrap();
        let pod = compute_pod_basis(&q.snapshots, 3).unwrap();
        let traj = solve_pod_rom(&pod, &sys, &tg, &u).unwrap();
        let pod_adj = pod_frto_adjoint(&pod, &sys, &tg, &traj).unwrap();
        let pod_sens = (pod.modes.transpose() * sys.b()).transpose() * &pod_adj.amplitudes;
        let pod_j = pod_cost(&pod, &sys, &tg, &traj, &u);

        let spod = SpodBasis::single(pod.modes.clone(), pod.singular_values.clone());
        let model = ExactGalerkin::new(&spod, &sys, true).unwrap();
        let pinned = ShiftDynamics::pinned(tg.n());
        let state = solve_spod_rom_with(&model, &spod, &sys, &tg, &u, 0.0, &pinned).unwrap();
        let adj = solve_spod_frto_adjoint_with(&state, &model, &spod, &sys, &tg, &u, &pinned).unwrap();
        let spod_j = spod_cost(&spod, &sys, &tg, &state, &u).unwrap();

        let comp = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(f64::MIN_POSITIVE);
        worst = worst
            .max(comp(&state.amplitudes, &traj.amplitudes))
            .max(state.shifts.amax())
            .max((spod_j - pod_j).abs() / pod_j)
            .max(comp(&adj.control_sensitivity, &pod_sens))
            .max(comp(&spod_frto_gradient(&sys, &u, &adj), &pod_frto_gradient(&pod, &sys, &u, &pod_adj)));
    }
    outcome(
        worst < C6_TOL,
        format!("state, cost, adjoint control sensitivity and gradient: worst gap {worst:.2e} (< {C6_TOL:e})"),
    )
}

fn c7_commutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let (sys, tg) = random_instance(&mut rng, 32, 16, 3);
        let u = ControlSignal::new(DMatrix::from_fn(3, 16, |_, _| rng.random_range(-0.5..0.5)));
        let q = solve_state(&sys, &tg, &u).unwrap();
        let basis = compute_pod_basis(&q.snapshots, 5).unwrap();
        let adjoint_basis = PodBasis {
            modes: basis.modes.clone(),
            singular_values: basis.singular_values.clone(),
        };
        let traj = solve_pod_rom(&basis, &sys, &tg, &u).unwrap();
        let frto = pod_frto_gradient(&basis, &sys, &u, &pod_frto_adjoint(&basis, &sys, &tg, &traj).unwrap());
        let fotr_adj = pod_fotr_adjoint(&basis, &adjoint_basis, &sys, &tg, &traj).unwrap();
        let fotr = pod_fotr_gradient(&adjoint_basis, &sys, &u, &fotr_adj);
        worst = worst.max((&frto - &fotr).amax() / frto.amax());
    }
    outcome(worst <= C7_TOL, format!("FOTR with U_a = U vs FRTO: worst gap {worst:.2e} (≤ {C7_TOL:e})"))
}

struct Sweep {
    records: Vec<ConvergenceRecord>,
    outcome: Outcome,
}

fn minimal_modes(
    ex: &shiftrom::experiment::Example,
    cfg: &OptimizerConfig,
    method: Method,
    grid: &[usize],
    threshold: f64,
    records: &mut Vec<ConvergenceRecord>,
    log: &mut Vec<String>,
) -> Option<usize> {
    for &p in grid {
        let cfg = OptimizerConfig {
            mode_policy: ModePolicy::Fixed(p),
            ..cfg.clone()
        };
        let rec = optimize(&ex.sys, &ex.tg, &cfg, method).unwrap().record;
        let j = rec.final_cost;
        log.push(format!("{method} p={p}: J={j:.4} ({})", rec.exit));
        records.push(rec);
        if j <= threshold {
            return Some(p);
        }
    }
    None
}

fn c8_mode_efficiency() -> Sweep {
    let start = Instant::now();
    let ex = build_example(2, 0.25, 1e-3).unwrap();
    let cfg = OptimizerConfig {
        n_iter: C8_ITERATIONS,
        ..Default::default()
    };
    let mut records = Vec::new();
    let reference = optimize(&ex.sys, &ex.tg, &cfg, Method::Fom).unwrap().record;
    let threshold = C8_COST_FACTOR * reference.final_cost;
    let mut log = vec![format!("FOM: J={:.4} ({})", reference.final_cost, reference.exit)];
    records.push(reference);
    let spod = minimal_modes(&ex, &cfg, Method::Spod, &C8_SPOD_MODES, threshold, &mut records, &mut log);
    let pod = minimal_modes(&ex, &cfg, Method::Pod, &C8_POD_MODES, threshold, &mut records, &mut log);
    let secs = start.elapsed().as_secs_f64();
    for line in &log {
        println!("    {line}");
    }
    // a POD search that never passes bounds its minimum from below
    let pod_bound = pod.unwrap_or(C8_POD_MODES[C8_POD_MODES.len() - 1] + 1);
    let pass = match spod {
        Some(s) => pod_bound as f64 >= C8_MODE_RATIO * s as f64 && secs < C8_SECONDS,
        None => false,
    };
    let fmt = |p: Option<usize>| p.map_or("none in grid".to_string(), |p| p.to_string());
    Sweep {
        records,
        outcome: outcome(
            pass,
            format!(
                "example 2 at m=800, {C8_ITERATIONS} iterations, J ≤ {C8_COST_FACTOR}·{:.4}: minimal modes sPOD-G {}, POD-G {} (ratio ≥ {C8_MODE_RATIO}), {secs:.0} s (< {C8_SECONDS} s)",
                threshold / C8_COST_FACTOR,
                fmt(spod),
                fmt(pod)
            ),
        ),
    }
}

fn c10_armijo(mut records: Vec<ConvergenceRecord>) -> Outcome {
    let ex = build_example(1, 0.05, 1e-3).unwrap();
    for (method, p) in [(Method::Fom, 160), (Method::Pod, 20), (Method::Spod, 4)] {
        let cfg = OptimizerConfig {
            n_iter: 30,
            n_samples: 160,
            mode_policy: ModePolicy::Fixed(p),
            ..Default::default()
        };
        records.push(optimize(&ex.sys, &ex.tg, &cfg, method).unwrap().record);
    }
    let c = OptimizerConfig::default().armijo_c;
    let steps: usize = records.iter().map(|r| r.iterations.iter().filter(|i| i.step > 0.0).count()).sum();
    let bad: usize = records.iter().map(|r| r.armijo_violations(c).len()).sum();
    outcome(
        bad == 0 && steps > 0,
        format!("{} runs, {steps} accepted steps re-checked, {bad} violations", records.len()),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let mut failures = 0;
    let mut report = |id: &str, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!o.pass);
        println!("criterion {id:>2} [{tag}] {name}: {}", o.detail);
    };
    if wanted("1") {
        report("1", "FOM gradient consistency", c1_fom_gradient());
    }
    if wanted("2") {
        report("2", "reduced gradient consistency", c2_reduced_gradients());
    }
    if wanted("3") {
        report("3", "Eckart-Young", c3_eckart_young());
    }
    if wanted("4") {
        report("4", "shift operator order", c4_shift_order());
    }
    if wanted("5") {
        report("5", "sPOD rank collapse", c5_rank_collapse());
    }
    if wanted("6") {
        report("6", "pinned-shift degeneracy", c6_pinned_degeneracy());
    }
    if wanted("7") {
        report("7", "POD commutation", c7_commutation());
    }
    let mut records = Vec::new();
    if wanted("8") {
        let sweep = c8_mode_efficiency();
        records = sweep.records;
        report("8", "desk-scale mode efficiency", sweep.outcome);
    }
    if wanted("9") {
        println!("criterion  9 [SKIP] full-scale spot check: long-running, see scripts/reproduce_example1.sh");
    }
    if wanted("10") {
        report("10", "Armijo re-verification", c10_armijo(records));
    }
    if failures > 0 {
        eprintln!("{failures} criteria failed");
        std::process::exit(1);
    }
}
