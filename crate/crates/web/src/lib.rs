//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Matrices cross the boundary as flat column-major `Vec<f64>` (one column
//! per time node); the page draws them as space-time heat maps.

use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

use shiftrom::experiment::{build_example, Example};
use shiftrom::fom::{solve_state, ControlSignal};
use shiftrom::optimizer::{optimize, Method, ModePolicy, OptimizerConfig};
use shiftrom::pod::full_pod_basis;
use shiftrom::spod::{co_moving_snapshots, estimate_shifts};

/// Largest grid the page may request; keeps one optimization under a few seconds.
pub const MAX_SCALE: f64 = 0.1;

#[wasm_bindgen]
pub struct Demo {
    ex: Example,
}

#[wasm_bindgen]
pub struct RunSummary {
    costs: Vec<f64>,
    modes: Vec<f64>,
    state: Vec<f64>,
    final_cost: f64,
    exit: String,
}

#[wasm_bindgen]
impl RunSummary {
    /// Full-order cost at every iteration.
    pub fn costs(&self) -> Vec<f64> {
        self.costs.clone()
    }

    pub fn modes(&self) -> Vec<f64> {
        self.modes.clone()
    }

    pub fn state(&self) -> Vec<f64> {
        self.state.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn final_cost(&self) -> f64 {
        self.final_cost
    }

    #[wasm_bindgen(getter)]
    pub fn exit(&self) -> String {
        self.exit.clone()
    }
}

impl Demo {
    pub fn build(example: u8, scale: f64) -> Result<Demo, String> {
        if !(scale > 0.0 && scale <= MAX_SCALE) {
            return Err(format!("scale must be in (0, {MAX_SCALE}]"));
        }
        let ex = build_example(example, scale, 1e-3).map_err(|e| e.to_string())?;
        Ok(Demo { ex })
    }

    fn free_state(&self) -> Result<DMatrix<f64>, String> {
        let zero = ControlSignal::zeros(self.ex.sys.n_c(), self.ex.tg.n());
        solve_state(&self.ex.sys, &self.ex.tg, &zero)
            .map(|t| t.snapshots)
            .map_err(|e| e.to_string())
    }

    /// Normalized singular values `σ_k / σ_1` of the uncontrolled state in
    /// the lab frame and in the co-moving frame.
    pub fn spectra(&self, count: usize) -> Result<(Vec<f64>, Vec<f64>), String> {
        let q = self.free_state()?;
        let grid = self.ex.sys.grid();
        let lab = full_pod_basis(&q).map_err(|e| e.to_string())?.singular_values;
        let track = estimate_shifts(&q, grid).map_err(|e| e.to_string())?;
        let co = co_moving_snapshots(&q, grid, &track).map_err(|e| e.to_string())?;
        let co = full_pod_basis(&co).map_err(|e| e.to_string())?.singular_values;
        let norm = |s: Vec<f64>| s.iter().take(count).map(|v| v / s[0]).collect();
        Ok((norm(lab), norm(co)))
    }

    pub fn run(&self, method: &str, modes: usize, iters: usize) -> Result<RunSummary, String> {
        let method: Method = method.parse().map_err(|e: shiftrom::Error| e.to_string())?;
        let cfg = OptimizerConfig {
            n_iter: iters.max(1),
            n_samples: self.ex.sys.grid().m(),
            mode_policy: ModePolicy::Fixed(modes),
            ..Default::default()
        };
        let res = optimize(&self.ex.sys, &self.ex.tg, &cfg, method).map_err(|e| e.to_string())?;
        let mut costs: Vec<f64> = res.record.iterations.iter().map(|r| r.j_fom).collect();
        costs.push(res.record.final_cost);
        Ok(RunSummary {
            costs,
            modes: res.record.iterations.iter().map(|r| r.modes as f64).collect(),
            state: res.state.snapshots.as_slice().to_vec(),
            final_cost: res.record.final_cost,
            exit: res.record.exit.to_string(),
        })
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(example: u8, scale: f64) -> Result<Demo, JsError> {
        Demo::build(example, scale).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn m(&self) -> usize {
        self.ex.sys.grid().m()
    }

    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.ex.tg.n()
    }

    pub fn target(&self) -> Vec<f64> {
        self.ex.sys.qd().as_slice().to_vec()
    }

    pub fn uncontrolled(&self) -> Result<Vec<f64>, JsError> {
        self.free_state().map(|q| q.as_slice().to_vec()).map_err(|e| JsError::new(&e))
    }

    /// Lab-frame spectrum followed by the co-moving one, `count` values each.
    pub fn spectrum(&self, count: usize) -> Result<Vec<f64>, JsError> {
        let (lab, co) = self.spectra(count).map_err(|e| JsError::new(&e))?;
        Ok(lab.into_iter().chain(co).collect())
    }

    pub fn optimize(&self, method: &str, modes: usize, iters: usize) -> Result<RunSummary, JsError> {
        self.run(method, modes, iters).map_err(|e| JsError::new(&e))
    }
}
