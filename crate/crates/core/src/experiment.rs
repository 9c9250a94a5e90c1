//! The three advection examples, mode sweeps and tolerance studies.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fom::{build_control_operator, FomSystem};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::optimizer::{optimize, ConvergenceRecord, ExitReason, Method, ModePolicy, OptimizerConfig};

pub const DOMAIN_LENGTH: f64 = 100.0;
pub const FULL_GRID_POINTS: usize = 3200;
pub const CFL: f64 = 4.0 / 3.0;
/// Characteristic propagation speed.
pub const WAVE_SPEED: f64 = 1.0;
pub const FINAL_TIME: f64 = 140.0;
pub const CONTROL_COUNT: usize = 40;

/// Identifies the target construction written into result files.
pub const TARGET_VERSION: &str = "kink-v1";

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub example: u8,
    /// 1.0 reproduces the full grid; smaller values coarsen space and time.
    pub scale: f64,
    pub methods: Vec<Method>,
    pub modes: Vec<usize>,
    pub eps: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub config: OptimizerConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            example: 1,
            scale: 0.25,
            methods: vec![Method::Fom, Method::Pod, Method::Spod],
            modes: vec![5, 10, 20, 40],
            eps: vec![1e-2, 1e-3],
            out_dir: None,
            seed: 0,
            config: OptimizerConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.example) {
            return Err(Error::InvalidArgument(format!("example must be 1, 2 or 3, got {}", self.example)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {}", self.scale)));
        }
        self.config.validate()
    }
}

/// How `q_d` was built: the initial profile carried at `speed_before` until
/// `kink_time`, then at `speed_after`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDescription {
    pub version: &'static str,
    pub kink_fraction: f64,
    pub kink_time: f64,
    pub speed_before: f64,
    pub speed_after: f64,
}

impl TargetDescription {
    /// Position of the target profile's origin at time `t`.
    pub fn shift(&self, t: f64) -> f64 {
        if t <= self.kink_time {
            self.speed_before * t
        } else {
            self.speed_before * self.kink_time + self.speed_after * (t - self.kink_time)
        }
    }
}

pub struct Example {
    pub id: u8,
    pub sys: FomSystem,
    pub tg: TimeGrid,
    pub target: TargetDescription,
}

pub fn example_velocity(example: u8) -> f64 {
    match example {
        1 => 0.5 * WAVE_SPEED,
        2 => 0.55 * WAVE_SPEED,
        _ => 0.6 * WAVE_SPEED,
    }
}

/// Initial profile `x ↦ q0(x)` with periodic distance.
pub fn initial_profile(grid: &SpatialGrid, example: u8) -> impl Fn(f64) -> f64 + '_ {
    let (center, width) = if example == 1 {
        (DOMAIN_LENGTH / 12.0, 7.0)
    } else {
        (DOMAIN_LENGTH / 30.0, 0.5)
    };
    move |x| {
        let d = grid.periodic_offset(x, center);
        (-d * d / width).exp()
    }
}

fn kink_fraction(example: u8) -> f64 {
    if example == 3 {
        0.9
    } else {
        0.75
    }
}

/// `q_d(x, t) = q0(x - s(t))` with the piecewise linear path of `target`.
pub fn kink_target(
    grid: &SpatialGrid,
    tg: &TimeGrid,
    profile: impl Fn(f64) -> f64,
    target: &TargetDescription,
) -> DMatrix<f64> {
    DMatrix::from_fn(grid.m(), tg.n(), |i, j| profile(grid.node(i) - target.shift(tg.time(j))))
}

/// Grid sizes of an example at `scale`: `m = round(3200 scale)`, time step
/// from the CFL rule.
pub fn example_grids(scale: f64) -> Result<(SpatialGrid, TimeGrid)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let m = (FULL_GRID_POINTS as f64 * scale).round() as usize;
    let grid = SpatialGrid::new(m, DOMAIN_LENGTH)?;
    let tg = TimeGrid::from_cfl(&grid, CFL, WAVE_SPEED, FINAL_TIME)?;
    Ok((grid, tg))
}

pub fn build_example(example: u8, scale: f64, mu: f64) -> Result<Example> {
    if !(1..=3).contains(&example) {
        return Err(Error::InvalidArgument(format!("example must be 1, 2 or 3, got {example}")));
    }
    let (grid, tg) = example_grids(scale)?;
    let v = example_velocity(example);
    let kf = kink_fraction(example);
    let target = TargetDescription {
        version: TARGET_VERSION,
        kink_fraction: kf,
        kink_time: kf * FINAL_TIME,
        speed_before: v,
        speed_after: WAVE_SPEED,
    };
    let profile = initial_profile(&grid, example);
    let q0: DVector<f64> = grid.sample(&profile);
    let qd = kink_target(&grid, &tg, &profile, &target);
    let b = build_control_operator(&grid, CONTROL_COUNT)?;
    let sys = FomSystem::new(grid.clone(), v, b, q0, qd, mu)?;
    Ok(Example {
        id: example,
        sys,
        tg,
        target,
    })
}

/// One optimizer run of a sweep or tolerance study.
#[derive(Clone, Debug)]
pub struct RunRow {
    pub method: Method,
    pub policy: ModePolicy,
    pub final_cost: f64,
    pub average_modes: f64,
    pub iterations: usize,
    pub exit: Option<ExitReason>,
    pub wall_ms: f64,
    /// `ok` or the error that ended the run.
    pub status: String,
    pub record: Option<ConvergenceRecord>,
}

fn run_one(ex: &Example, config: &OptimizerConfig, method: Method, policy: ModePolicy) -> RunRow {
    let cfg = OptimizerConfig {
        mode_policy: policy,
        ..config.clone()
    };
    match optimize(&ex.sys, &ex.tg, &cfg, method) {
        Ok(res) => RunRow {
            method,
            policy,
            final_cost: res.record.final_cost,
            average_modes: res.record.average_modes(),
            iterations: res.record.iterations.len(),
            exit: Some(res.record.exit),
            wall_ms: res.record.wall_ms,
            status: "ok".into(),
            record: Some(res.record),
        },
        Err(e) => RunRow {
            method,
            policy,
            final_cost: f64::NAN,
            average_modes: f64::NAN,
            iterations: 0,
            exit: None,
            wall_ms: 0.0,
            status: e.to_string(),
            record: None,
        },
    }
}

/// Runs every `(method, modes)` pair in order; the FOM method runs once.
/// Failed runs become rows with their error as status.
pub fn run_mode_sweep(
    ex: &Example,
    methods: &[Method],
    modes: &[usize],
    config: &OptimizerConfig,
    mut on_row: impl FnMut(&RunRow),
) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for &method in methods {
        let policies: Vec<ModePolicy> = if method == Method::Fom {
            vec![ModePolicy::Fixed(ex.sys.grid().m())]
        } else {
            modes.iter().map(|&p| ModePolicy::Fixed(p)).collect()
        };
        for policy in policies {
            let row = run_one(ex, config, method, policy);
            on_row(&row);
            rows.push(row);
        }
    }
    rows
}

pub fn run_tolerance_study(
    ex: &Example,
    methods: &[Method],
    eps: &[f64],
    config: &OptimizerConfig,
    mut on_row: impl FnMut(&RunRow),
) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for &method in methods.iter().filter(|m| **m != Method::Fom) {
        for &e in eps {
            let row = run_one(ex, config, method, ModePolicy::Tolerance(e));
            on_row(&row);
            rows.push(row);
        }
    }
    rows
}

fn exit_name(row: &RunRow) -> String {
    row.exit.map_or_else(|| "error".to_string(), |e| e.to_string())
}

pub const SWEEP_HEADER: &str = "method,modes,J,wall_ms,iterations,exit,status";
pub const TOLERANCE_HEADER: &str = "method,eps,J,avg_modes,iterations,exit,wall_ms,status";

pub fn write_sweep_csv<W: Write>(rows: &[RunRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER.split(','))?;
    for r in rows {
        let modes = match r.policy {
            ModePolicy::Fixed(p) => p.to_string(),
            ModePolicy::Tolerance(_) => format!("{:.3}", r.average_modes),
        };
        out.write_record([
            r.method.name().to_string(),
            modes,
            format!("{:e}", r.final_cost),
            format!("{:.3}", r.wall_ms),
            r.iterations.to_string(),
            exit_name(r),
            r.status.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tolerance_csv<W: Write>(rows: &[RunRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TOLERANCE_HEADER.split(','))?;
    for r in rows {
        let eps = match r.policy {
            ModePolicy::Tolerance(e) => format!("{e:e}"),
            ModePolicy::Fixed(_) => String::new(),
        };
        out.write_record([
            r.method.name().to_string(),
            eps,
            format!("{:e}", r.final_cost),
            format!("{:.3}", r.average_modes),
            r.iterations.to_string(),
            exit_name(r),
            format!("{:.3}", r.wall_ms),
            r.status.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
