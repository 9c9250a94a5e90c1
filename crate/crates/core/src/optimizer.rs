//! Gradient descent with full-order gradients and a surrogate-driven
//! two-way backtracking line search.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fom::{self, ControlSignal, FomSystem, Trajectory};
use crate::grid::TimeGrid;
use crate::linalg::weighted_col_norm_sq;
use crate::pod::{full_pod_basis, select_modes_by_tolerance, PodRom};
use crate::spod::{
    assemble_galerkin_cache, estimate_shifts, solve_spod_rom, spod_cost, spod_full_single_frame, ShiftTrack,
};

/// Surrogate used for the step-size search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Fom,
    Pod,
    Spod,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fom => "fom",
            Method::Pod => "pod",
            Method::Spod => "spod",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fom" => Ok(Method::Fom),
            "pod" | "pod-g" => Ok(Method::Pod),
            "spod" | "spod-g" => Ok(Method::Spod),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Rank selection for the reduced bases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModePolicy {
    Fixed(usize),
    /// Count of singular values with `s_i / s_1 > eps`.
    Tolerance(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub mu: f64,
    /// Stop when `‖g_i‖ / ‖g_1‖ < delta`.
    pub delta: f64,
    pub omega0: f64,
    pub beta: f64,
    pub n_iter: usize,
    pub n_samples: usize,
    pub armijo_c: f64,
    pub stagnation_window: usize,
    pub stagnation_rel_tol: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub mode_policy: ModePolicy,
    /// Assemble sPOD mass/stiffness blocks once (single frame).
    pub constant_matrices: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mu: 1e-3,
            delta: 1e-4,
            omega0: 1.0,
            beta: 0.5,
            n_iter: 100_000,
            n_samples: 800,
            armijo_c: 1e-4,
            stagnation_window: 5,
            stagnation_rel_tol: 1e-3,
            omega_min: 1e-12,
            omega_max: 1e3,
            mode_policy: ModePolicy::Fixed(20),
            constant_matrices: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("delta", self.delta),
            ("omega0", self.omega0),
            ("stagnation_rel_tol", self.stagnation_rel_tol),
            ("omega_min", self.omega_min),
            ("omega_max", self.omega_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "armijo_c must lie in (0, 0.5), got {}",
                self.armijo_c
            )));
        }
        if self.n_iter == 0 || self.n_samples == 0 || self.stagnation_window == 0 {
            return Err(Error::InvalidArgument(
                "n_iter, n_samples and stagnation_window must be positive".into(),
            ));
        }
        match self.mode_policy {
            ModePolicy::Fixed(0) => Err(Error::InvalidArgument("mode count must be positive".into())),
            ModePolicy::Tolerance(e) if !(e > 0.0) => {
                Err(Error::InvalidArgument(format!("tolerance must be positive, got {e}")))
            }
            _ => Ok(()),
        }
    }
}

/// One outer iteration, logged before the control update.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j_fom: f64,
    /// Surrogate cost at the current control (step 0).
    pub j_surrogate: f64,
    /// Surrogate cost at the accepted step, `NaN` when no step was taken.
    pub j_trial: f64,
    /// Time-weighted L2 norm of the gradient.
    pub grad_norm: f64,
    pub rel_grad: f64,
    /// Accepted step, 0 when no step was taken.
    pub step: f64,
    pub modes: usize,
    pub shift_refresh: bool,
    /// Milliseconds since the start of the run.
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Re-checks the sufficient-decrease condition from the logged values.
    pub fn satisfies_armijo(&self, armijo_c: f64) -> bool {
        self.step > 0.0
            && self.j_trial <= self.j_surrogate - armijo_c * self.step * self.grad_norm * self.grad_norm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitReason {
    /// Relative gradient norm fell below `delta`.
    Converged,
    /// The first gradient vanished; the initial control is optimal.
    Stationary,
    MaxIterations,
    /// No sufficient decrease found, or negligible progress over the window.
    Stagnated,
}

impl fmt::Display for ExitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExitReason::Converged => "converged",
            ExitReason::Stationary => "stationary",
            ExitReason::MaxIterations => "max_iterations",
            ExitReason::Stagnated => "stagnated",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceRecord {
    pub method: Method,
    pub iterations: Vec<IterationRecord>,
    pub exit: ExitReason,
    /// Full-order cost of the returned control.
    pub final_cost: f64,
    pub wall_ms: f64,
}

impl ConvergenceRecord {
    pub fn average_modes(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().map(|r| r.modes as f64).sum::<f64>() / self.iterations.len() as f64
    }

    /// Iterations whose logged step violates the Armijo inequality.
    pub fn armijo_violations(&self, armijo_c: f64) -> Vec<usize> {
        self.iterations
            .iter()
            .filter(|r| r.step > 0.0 && !r.satisfies_armijo(armijo_c))
            .map(|r| r.iter)
            .collect()
    }

    pub const CSV_HEADER: &'static str = "iter,J_fom,J_surrogate,grad_norm,rel_grad,step,modes,shift_refresh,wall_ms";

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER.split(','))?;
        for r in &self.iterations {
            out.write_record([
                r.iter.to_string(),
                format!("{:e}", r.j_fom),
                format!("{:e}", r.j_surrogate),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.rel_grad),
                format!("{:e}", r.step),
                r.modes.to_string(),
                u8::from(r.shift_refresh).to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub struct OptimizeResult {
    pub control: ControlSignal,
    pub state: Trajectory,
    pub record: ConvergenceRecord,
}

/// Outcome of [`two_way_backtracking`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LineSearch {
    Accepted { omega: f64, cost: f64 },
    Stagnated,
}

/// Two-way backtracking from `omega_prev`: grow by `1/beta` while the Armijo
/// condition keeps holding (up to `omega_max`), otherwise shrink by `beta`
/// until it holds or the step drops below `omega_min`.
///
/// `j0` is the surrogate cost at step 0 and `grad_norm_sq` the squared
/// gradient norm in the same inner product as the cost.
pub fn two_way_backtracking(
    omega_prev: f64,
    j0: f64,
    grad_norm_sq: f64,
    config: &OptimizerConfig,
    mut surrogate: impl FnMut(f64) -> f64,
) -> LineSearch {
    let c = config.armijo_c;
    let mut armijo = |w: f64| {
        let j = surrogate(w);
        (j <= j0 - c * w * grad_norm_sq, j)
    };
    let mut omega = omega_prev.clamp(config.omega_min, config.omega_max);
    let (ok, mut cost) = armijo(omega);
    if ok {
        loop {
            let next = omega / config.beta;
            if next > config.omega_max {
                break;
            }
            let (ok, j) = armijo(next);
            if !ok {
                break;
            }
            omega = next;
            cost = j;
        }
        LineSearch::Accepted { omega, cost }
    } else {
        loop {
            omega *= config.beta;
            if omega < config.omega_min {
                return LineSearch::Stagnated;
            }
            let (ok, j) = armijo(omega);
            if ok {
                return LineSearch::Accepted { omega, cost: j };
            }
        }
    }
}

/// Whether the relative decrease of `costs` over the last `window` entries is
/// below `rel_tol`. Needs `window + 1` entries.
pub fn is_stagnant(costs: &[f64], window: usize, rel_tol: f64) -> bool {
    if costs.len() < window + 1 {
        return false;
    }
    let old = costs[costs.len() - 1 - window];
    let new = costs[costs.len() - 1];
    let scale = old.abs().max(f64::MIN_POSITIVE);
    (old - new) / scale < rel_tol
}

/// Stagnation-triggered shift refresh: returns a new track estimated from
/// `state` when the cost history (or a failed line search) signals
/// stagnation, otherwise `None`.
pub fn refresh_shifts_if_stagnant(
    costs: &[f64],
    line_search_failed: bool,
    config: &OptimizerConfig,
    state: &Trajectory,
    sys: &FomSystem,
) -> Result<Option<ShiftTrack>> {
    if line_search_failed || is_stagnant(costs, config.stagnation_window, config.stagnation_rel_tol) {
        Ok(Some(estimate_shifts(&state.snapshots, sys.grid())?))
    } else {
        Ok(None)
    }
}

struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64() * 1e3
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

fn pick_rank(policy: ModePolicy, sigma: &[f64], max: usize) -> Result<usize> {
    let p = match policy {
        ModePolicy::Fixed(p) => p,
        ModePolicy::Tolerance(eps) => select_modes_by_tolerance(sigma, eps)?,
    };
    if p == 0 || p > max {
        return Err(Error::RankOutOfRange { p, max });
    }
    Ok(p)
}

/// A surrogate cost `ω ↦ J(u - ω g)` for one iteration.
type Surrogate<'a> = Box<dyn FnMut(f64) -> f64 + 'a>;

/// Builds the reduced surrogate around the current state.
fn build_surrogate<'a>(
    method: Method,
    sys: &'a FomSystem,
    tg: &'a TimeGrid,
    config: &OptimizerConfig,
    state: &Trajectory,
    shifts: Option<&ShiftTrack>,
    u: &'a ControlSignal,
    g: &'a DMatrix<f64>,
) -> Result<(Surrogate<'a>, usize)> {
    let eval_or_inf = |r: Result<f64>| r.unwrap_or(f64::INFINITY);
    match method {
        Method::Fom => {
            let s = move |w: f64| {
                let uw = u.step(w, g);
                eval_or_inf(fom::solve_state(sys, tg, &uw).map(|q| fom::cost(sys, tg, &q, &uw)))
            };
            Ok((Box::new(s), sys.grid().m()))
        }
        Method::Pod => {
            let full = full_pod_basis(&state.snapshots)?;
            let p = pick_rank(config.mode_policy, &full.singular_values, full.rank())?;
            let rom = PodRom::new(&full.truncate(p)?, sys)?;
            let s = move |w: f64| {
                let uw = u.step(w, g);
                eval_or_inf(rom.solve(sys.q0(), tg, &uw).map(|a| rom.cost(tg, &a, &uw)))
            };
            Ok((Box::new(s), p))
        }
        Method::Spod => {
            let track = shifts.expect("sPOD surrogate needs a shift track");
            let full = spod_full_single_frame(&state.snapshots, sys.grid(), track)?;
            let f = full.single_frame()?;
            let p = pick_rank(config.mode_policy, &f.singular_values, f.modes.ncols())?;
            let basis = full.truncate(p)?;
            let cache = assemble_galerkin_cache(&basis, sys, config.n_samples, config.constant_matrices)?;
            let z0 = track.values[0];
            let s = move |w: f64| {
                let uw = u.step(w, g);
                eval_or_inf(
                    solve_spod_rom(&cache, &basis, sys, tg, &uw, z0)
                        .and_then(|traj| spod_cost(&basis, sys, tg, &traj, &uw)),
                )
            };
            Ok((Box::new(s), p))
        }
    }
}

/// Outer loop: full-order state and adjoint, gradient, surrogate rebuild,
/// surrogate line search, update. Starts from `u = 0`.
pub fn optimize(sys: &FomSystem, tg: &TimeGrid, config: &OptimizerConfig, method: Method) -> Result<OptimizeResult> {
    optimize_from(sys, tg, config, method, ControlSignal::zeros(sys.n_c(), tg.n()))
}

pub fn optimize_from(
    sys: &FomSystem,
    tg: &TimeGrid,
    config: &OptimizerConfig,
    method: Method,
    u0: ControlSignal,
) -> Result<OptimizeResult> {
    config.validate()?;
    sys.check_control(tg, &u0)?;
    let clock = Clock::new();
    let w = tg.trapezoid_weights();
    let mut u = u0;
    let mut omega = config.omega0;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut costs: Vec<f64> = Vec::new();
    let mut g1 = 0.0;
    let mut shifts: Option<ShiftTrack> = None;
    // index into `costs` where the current stagnation window starts
    let mut window_start = 0;
    let mut refreshed_without_progress = false;
    let mut exit = ExitReason::MaxIterations;

    for iter in 1..=config.n_iter {
        let (j_fom, g, state) = fom::cost_and_gradient(sys, tg, &u)?;
        let grad_norm = weighted_col_norm_sq(&g, &w).sqrt();
        if iter == 1 {
            g1 = grad_norm;
        }
        let rel_grad = if g1 > 0.0 { grad_norm / g1 } else { 0.0 };
        costs.push(j_fom);
        let mut rec = IterationRecord {
            iter,
            j_fom,
            j_surrogate: f64::NAN,
            j_trial: f64::NAN,
            grad_norm,
            rel_grad,
            step: 0.0,
            modes: 0,
            shift_refresh: false,
            wall_ms: 0.0,
        };
        if g1 == 0.0 {
            exit = ExitReason::Stationary;
        } else if rel_grad < config.delta {
            exit = ExitReason::Converged;
        }
        if matches!(exit, ExitReason::Stationary | ExitReason::Converged) {
            rec.wall_ms = clock.ms();
            records.push(rec);
            return finish(sys, tg, method, u, state, records, exit, j_fom, &clock);
        }

        let mut stagnant = is_stagnant(&costs[window_start..], config.stagnation_window, config.stagnation_rel_tol);
        if method == Method::Spod {
            if shifts.is_none() {
                shifts = Some(estimate_shifts(&state.snapshots, sys.grid())?);
            } else if stagnant && !refreshed_without_progress {
                shifts = refresh_shifts_if_stagnant(&costs[window_start..], false, config, &state, sys)?;
                rec.shift_refresh = true;
                refreshed_without_progress = true;
                window_start = costs.len() - 1;
                stagnant = false;
            }
        }
        if stagnant {
            rec.wall_ms = clock.ms();
            records.push(rec);
            exit = ExitReason::Stagnated;
            return finish(sys, tg, method, u, state, records, exit, j_fom, &clock);
        }

        let gn2 = grad_norm * grad_norm;
        let attempt = |shifts: Option<&ShiftTrack>| -> Result<(LineSearch, f64, usize)> {
            let (mut s, modes) = build_surrogate(method, sys, tg, config, &state, shifts, &u, &g)?;
            let j0 = s(0.0);
            if !j0.is_finite() {
                return Ok((LineSearch::Stagnated, j0, modes));
            }
            Ok((two_way_backtracking(omega, j0, gn2, config, s), j0, modes))
        };
        let (mut ls, mut j0, mut modes) = attempt(shifts.as_ref())?;
        if ls == LineSearch::Stagnated && method == Method::Spod && !rec.shift_refresh {
            // one retry with shifts re-estimated from the current iterate
            shifts = refresh_shifts_if_stagnant(&costs, true, config, &state, sys)?;
            rec.shift_refresh = true;
            refreshed_without_progress = true;
            window_start = costs.len() - 1;
            (ls, j0, modes) = attempt(shifts.as_ref())?;
        }
        rec.j_surrogate = j0;
        rec.modes = modes;
        match ls {
            LineSearch::Accepted { omega: om, cost } => {
                rec.step = om;
                rec.j_trial = cost;
                omega = om;
                u = u.step(om, &g);
                if !rec.shift_refresh && !is_stagnant(&costs[window_start..], config.stagnation_window, config.stagnation_rel_tol) {
                    refreshed_without_progress = false;
                }
                rec.wall_ms = clock.ms();
                records.push(rec);
            }
            LineSearch::Stagnated => {
                rec.wall_ms = clock.ms();
                records.push(rec);
                exit = ExitReason::Stagnated;
                return finish(sys, tg, method, u, state, records, exit, j_fom, &clock);
            }
        }
    }
    let state = fom::solve_state(sys, tg, &u)?;
    let final_cost = fom::cost(sys, tg, &state, &u);
    finish(sys, tg, method, u, state, records, exit, final_cost, &clock)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    _sys: &FomSystem,
    _tg: &TimeGrid,
    method: Method,
    control: ControlSignal,
    state: Trajectory,
    iterations: Vec<IterationRecord>,
    exit: ExitReason,
    final_cost: f64,
    clock: &Clock,
) -> Result<OptimizeResult> {
    Ok(OptimizeResult {
        control,
        state,
        record: ConvergenceRecord {
            method,
            iterations,
            exit,
            final_cost,
            wall_ms: clock.ms(),
        },
    })
}
