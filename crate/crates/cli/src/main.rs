mod config;
mod gradcheck;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shiftrom::experiment::{
    build_example, run_mode_sweep, run_tolerance_study, write_sweep_csv, write_tolerance_csv, Example, ExperimentSpec,
    RunRow,
};
use shiftrom::fom::{solve_state, ControlSignal};
use shiftrom::io::{save_matrix, save_spectrum_csv};
use shiftrom::optimizer::{optimize, Method, ModePolicy, OptimizerConfig};
use shiftrom::pod::full_pod_basis;
use shiftrom::spod::{co_moving_snapshots, estimate_shifts};

use config::{Overrides, Settings};

/// Optimal control of 1D periodic advection with POD and shifted-POD surrogates.
#[derive(Parser)]
#[command(name = "shiftrom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize once per method; writes the convergence record, control and state.
    Run(Flags),
    /// Final cost against mode count for each method.
    Sweep(Flags),
    /// Tolerance-based mode selection: final cost and average modes per eps.
    Tolerance(Flags),
    /// Singular values of the uncontrolled state, lab and co-moving frame.
    Spectrum(Flags),
    /// Finite-difference check of the FOM, POD-G and sPOD-G gradients.
    Gradcheck(Flags),
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// Flat key = value file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Example geometry: 1, 2 or 3.
    #[arg(long)]
    example: Option<u8>,
    /// Grid scale, 1.0 is m = 3200 and n = 3360.
    #[arg(long)]
    scale: Option<f64>,
    /// Comma separated: fom, pod, spod.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    /// Comma separated mode counts.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    /// Comma separated relative singular-value tolerances.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for cache assembly.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the target and the uncontrolled trajectory.
    #[arg(long)]
    dump_snapshots: bool,
    /// Optimizer iteration cap.
    #[arg(long)]
    iters: Option<usize>,
    /// Control penalty.
    #[arg(long)]
    mu: Option<f64>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<shiftrom::Error> for Failure {
    fn from(e: shiftrom::Error) -> Self {
        match e {
            shiftrom::Error::InvalidArgument(_) | shiftrom::Error::GridTooSmall { .. } => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn settings(flags: &Flags) -> Result<Settings, Failure> {
    let file = match &flags.config {
        Some(p) => Overrides::load(p).map_err(Failure::Config)?,
        None => Overrides::default(),
    };
    let given = Overrides {
        example: flags.example,
        scale: flags.scale,
        method: flags.method.clone(),
        modes: flags.modes.clone(),
        eps: flags.eps.clone(),
        out: flags.out.clone(),
        seed: flags.seed,
        threads: flags.threads,
        dump_snapshots: flags.dump_snapshots.then_some(true),
        iters: flags.iters,
        mu: flags.mu,
    };
    Settings::resolve(given.over(file)).map_err(Failure::Config)
}

fn spec(s: &Settings) -> Result<ExperimentSpec, Failure> {
    let spec = ExperimentSpec {
        example: s.example,
        scale: s.scale,
        methods: s.methods.clone(),
        modes: s.modes.clone(),
        eps: s.eps.clone().unwrap_or_else(|| vec![1e-2, 1e-3]),
        out_dir: Some(s.out.clone()),
        seed: s.seed,
        config: OptimizerConfig {
            n_iter: s.iters,
            mu: s.mu,
            ..Default::default()
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn prepare(s: &Settings) -> Result<(ExperimentSpec, Example), Failure> {
    let spec = spec(s)?;
    if let Some(t) = s.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    let ex = build_example(spec.example, spec.scale, spec.config.mu)?;
    fs::create_dir_all(&s.out)?;
    let mut meta = s.to_config();
    let t = &ex.target;
    meta.push_str(&format!(
        "# target {} kink at t = {} (fraction {}), speed {} then {}\n# grid m = {}, n = {}, dt = {}\n",
        t.version,
        t.kink_time,
        t.kink_fraction,
        t.speed_before,
        t.speed_after,
        ex.sys.grid().m(),
        ex.tg.n(),
        ex.tg.dt()
    ));
    fs::write(s.out.join("settings.conf"), meta)?;
    if s.dump_snapshots {
        save_matrix(s.out.join("target.bin"), ex.sys.qd())?;
        let free = solve_state(&ex.sys, &ex.tg, &ControlSignal::zeros(ex.sys.n_c(), ex.tg.n()))?;
        save_matrix(s.out.join("uncontrolled.bin"), &free.snapshots)?;
    }
    Ok((spec, ex))
}

fn progress(row: &RunRow) {
    let policy = match row.policy {
        ModePolicy::Fixed(p) => format!("modes {p}"),
        ModePolicy::Tolerance(e) => format!("eps {e:e}, avg modes {:.2}", row.average_modes),
    };
    println!(
        "{:>5} {policy}: J = {:.6}, {} iterations, {:.1} s, {}",
        row.method.name(),
        row.final_cost,
        row.iterations,
        row.wall_ms / 1e3,
        row.status
    );
}

fn run(s: &Settings) -> Result<ExitCode, Failure> {
    let (spec, ex) = prepare(s)?;
    let policy = match &s.eps {
        Some(e) => ModePolicy::Tolerance(e[0]),
        None => ModePolicy::Fixed(s.modes[0]),
    };
    let cfg = OptimizerConfig {
        mode_policy: policy,
        ..spec.config
    };
    for &method in &spec.methods {
        let res = optimize(&ex.sys, &ex.tg, &cfg, method)?;
        let name = method.name();
        res.record.save_csv(s.out.join(format!("convergence_{name}.csv")))?;
        save_matrix(s.out.join(format!("control_{name}.bin")), &res.control.values)?;
        save_matrix(s.out.join(format!("state_{name}.bin")), &res.state.snapshots)?;
        println!(
            "{name:>5}: J = {:.6}, {} iterations, avg modes {:.2}, {} ({:.1} s)",
            res.record.final_cost,
            res.record.iterations.len(),
            res.record.average_modes(),
            res.record.exit,
            res.record.wall_ms / 1e3
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn finish(rows: &[RunRow], path: &Path) -> ExitCode {
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("wrote {}", path.display());
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", rows.len());
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn sweep(s: &Settings) -> Result<ExitCode, Failure> {
    let (spec, ex) = prepare(s)?;
    let rows = run_mode_sweep(&ex, &spec.methods, &spec.modes, &spec.config, progress);
    let path = s.out.join("sweep.csv");
    write_sweep_csv(&rows, fs::File::create(&path)?)?;
    Ok(finish(&rows, &path))
}

fn tolerance(s: &Settings) -> Result<ExitCode, Failure> {
    let (spec, ex) = prepare(s)?;
    let rows = run_tolerance_study(&ex, &spec.methods, &spec.eps, &spec.config, progress);
    let path = s.out.join("tolerance.csv");
    write_tolerance_csv(&rows, fs::File::create(&path)?)?;
    Ok(finish(&rows, &path))
}

fn spectrum(s: &Settings) -> Result<ExitCode, Failure> {
    let (_, ex) = prepare(s)?;
    let free = solve_state(&ex.sys, &ex.tg, &ControlSignal::zeros(ex.sys.n_c(), ex.tg.n()))?;
    let lab = full_pod_basis(&free.snapshots)?.singular_values;
    let track = estimate_shifts(&free.snapshots, ex.sys.grid())?;
    let co = full_pod_basis(&co_moving_snapshots(&free.snapshots, ex.sys.grid(), &track)?)?.singular_values;
    save_spectrum_csv(s.out.join("spectrum_lab.csv"), &lab)?;
    save_spectrum_csv(s.out.join("spectrum_comoving.csv"), &co)?;
    println!("sigma2/sigma1: lab {:.3e}, co-moving {:.3e}", lab[1] / lab[0], co[1] / co[0]);
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(s: &Settings) -> Result<ExitCode, Failure> {
    let checks = gradcheck::run(s.seed)?;
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        println!(
            "{:>6}: relative error {:.3e} (tolerance {:e}) {}",
            c.name,
            c.error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Run(f) | Command::Sweep(f) | Command::Tolerance(f) | Command::Spectrum(f) | Command::Gradcheck(f)) =
        &cli.command;
    let result = settings(f).and_then(|s| match cli.command {
        Command::Run(_) => run(&s),
        Command::Sweep(_) => sweep(&s),
        Command::Tolerance(_) => tolerance(&s),
        Command::Spectrum(_) => spectrum(&s),
        Command::Gradcheck(_) => gradcheck(&s),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
