//! Shift-dependent Galerkin matrices of the single-frame sPOD model, sampled
//! over one period and interpolated linearly in between.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fom::FomSystem;
use crate::grid::SpatialGrid;
use crate::io::{load_matrix, save_matrix};
use crate::linalg::{csr_mul_dense, min_eigenvalue};

use super::decompose::SpodBasis;
use super::shift::ShiftStencil;

/// Relative eigenvalue floor below which `M1` counts as singular.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Mass and stiffness blocks at one shift: with `V = T^z U`, `W = T'^z U`,
/// `M1 = VᵀV`, `M2 = WᵀW`, `N = VᵀW`, `A1 = VᵀAV`, `A2 = WᵀAV`.
#[derive(Clone, Debug, PartialEq)]
pub struct GalerkinMatrices {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
}

/// Control projections at one shift: `VᵀB`, `WᵀB` and `(T''^z U)ᵀB`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProjections {
    pub vtb: DMatrix<f64>,
    pub wtb: DMatrix<f64>,
    pub w2tb: DMatrix<f64>,
}

/// Source of Galerkin quantities as functions of the (wrapped) shift.
pub trait GalerkinModel: Sync {
    fn rank(&self) -> usize;
    fn n_c(&self) -> usize;
    /// `Some` when the mass/stiffness blocks do not depend on z.
    fn constant_matrices(&self) -> Option<&GalerkinMatrices>;
    fn matrices_at(&self, z: f64) -> Cow<'_, GalerkinMatrices>;
    fn control_at(&self, z: f64) -> ControlProjections;
    /// `(VᵀB u, WᵀB u)`.
    fn control_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    /// z-derivatives of [`GalerkinModel::control_apply`]: `(WᵀB u, (T''U)ᵀB u)`.
    fn control_derivative_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
}

fn check_single(basis: &SpodBasis, sys: &FomSystem) -> Result<DMatrix<f64>> {
    let frame = basis.single_frame()?;
    if frame.modes.nrows() != sys.grid().m() {
        return Err(Error::dims("sPOD mode rows", sys.grid().m(), frame.modes.nrows()));
    }
    Ok(frame.modes.clone())
}

/// Direct assembly of every quantity at one shift.
pub fn assemble_at(
    grid: &SpatialGrid,
    modes: &DMatrix<f64>,
    a: &CsrMatrix<f64>,
    b: &DMatrix<f64>,
    z: f64,
) -> (GalerkinMatrices, ControlProjections) {
    let v = ShiftStencil::new(grid, z, 0).apply_columns(modes);
    let w = ShiftStencil::new(grid, z, 1).apply_columns(modes);
    let w2 = ShiftStencil::new(grid, z, 2).apply_columns(modes);
    let av = csr_mul_dense(a, &v);
    let vt = v.transpose();
    let wt = w.transpose();
    let mats = GalerkinMatrices {
        m1: &vt * &v,
        m2: &wt * &w,
        n: &vt * &w,
        a1: &vt * &av,
        a2: &wt * &av,
    };
    let ctrl = ControlProjections {
        vtb: &vt * b,
        wtb: &wt * b,
        w2tb: w2.transpose() * b,
    };
    (mats, ctrl)
}

fn control_at_direct(grid: &SpatialGrid, modes: &DMatrix<f64>, b: &DMatrix<f64>, z: f64) -> ControlProjections {
    let proj = |order: usize| ShiftStencil::new(grid, z, order).apply_columns(modes).transpose() * b;
    ControlProjections {
        vtb: proj(0),
        wtb: proj(1),
        w2tb: proj(2),
    }
}

/// Control projections at shifts of whole cells, `cells[k]`, for all samples
/// at once: `(T^{s dx} X)ᵀ B` is the circular cross-correlation of the
/// columns of `X` with those of `B` at lag `s`.
fn control_at_cells_fft(grid: &SpatialGrid, modes: &DMatrix<f64>, b: &DMatrix<f64>, cells: &[usize]) -> Vec<ControlProjections> {
    let m = grid.m();
    let (r, n_c) = (modes.ncols(), b.ncols());
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        buf
    };
    let b_hat: Vec<_> = (0..n_c).map(|c| spectrum(&b.as_slice()[c * m..(c + 1) * m])).collect();
    let mut out: Vec<ControlProjections> = cells
        .iter()
        .map(|_| ControlProjections {
            vtb: DMatrix::zeros(r, n_c),
            wtb: DMatrix::zeros(r, n_c),
            w2tb: DMatrix::zeros(r, n_c),
        })
        .collect();
    let mut prod = vec![Complex::new(0.0, 0.0); m];
    for order in 0..3 {
        let x = ShiftStencil::new(grid, 0.0, order).apply_columns(modes);
        for i in 0..r {
            let x_hat = spectrum(&x.as_slice()[i * m..(i + 1) * m]);
            for (c, bh) in b_hat.iter().enumerate() {
                for ((p, xv), bv) in prod.iter_mut().zip(&x_hat).zip(bh) {
                    *p = xv.conj() * bv;
                }
                inv.process(&mut prod);
                for (k, &s) in cells.iter().enumerate() {
                    let val = prod[s].re / m as f64;
                    let target = match order {
                        0 => &mut out[k].vtb,
                        1 => &mut out[k].wtb,
                        _ => &mut out[k].w2tb,
                    };
                    target[(i, c)] = val;
                }
            }
        }
    }
    out
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sampled Galerkin quantities on `n_samples` uniform shifts over `[0, L)`.
#[derive(Clone, Debug)]
pub struct GalerkinCache {
    length: f64,
    samples: Vec<f64>,
    constant: bool,
    /// One entry when `constant`, otherwise one per sample.
    matrices: Vec<GalerkinMatrices>,
    control: Vec<ControlProjections>,
    rank: usize,
    n_c: usize,
    m: usize,
    grid_hash: u64,
}

/// Samples every Galerkin quantity. With `constant_matrices` the mass and
/// stiffness blocks are assembled once at `z = 0`; the control projections
/// are always sampled.
pub fn assemble_galerkin_cache(
    basis: &SpodBasis,
    sys: &FomSystem,
    n_samples: usize,
    constant_matrices: bool,
) -> Result<GalerkinCache> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one shift sample".into()));
    }
    let modes = check_single(basis, sys)?;
    let grid = sys.grid();
    let m = grid.m();
    let samples: Vec<f64> = (0..n_samples)
        .map(|k| grid.length() * k as f64 / n_samples as f64)
        .collect();
    let on_cells = m % n_samples == 0;

    let (matrices, control) = if constant_matrices {
        let (mats, _) = assemble_at(grid, &modes, sys.a(), sys.b(), 0.0);
        let control = if on_cells {
            let stride = m / n_samples;
            let cells: Vec<usize> = (0..n_samples).map(|k| k * stride).collect();
            control_at_cells_fft(grid, &modes, sys.b(), &cells)
        } else {
            par_map(n_samples, |k| control_at_direct(grid, &modes, sys.b(), samples[k]))
        };
        (vec![mats], control)
    } else {
        let both = par_map(n_samples, |k| assemble_at(grid, &modes, sys.a(), sys.b(), samples[k]));
        both.into_iter().unzip()
    };

    for (k, mats) in matrices.iter().enumerate() {
        let hi = mats.m1.diagonal().max().max(1.0);
        let lo = min_eigenvalue(&mats.m1);
        if !(lo > DEGENERACY_TOL * hi) {
            return Err(Error::DegenerateBasis { sample: k, min_eig: lo });
        }
    }

    Ok(GalerkinCache {
        length: grid.length(),
        samples,
        constant: constant_matrices,
        matrices,
        control,
        rank: modes.ncols(),
        n_c: sys.n_c(),
        m,
        grid_hash: grid.fingerprint(),
    })
}

fn lerp(a: &DMatrix<f64>, b: &DMatrix<f64>, f: f64) -> DMatrix<f64> {
    a * (1.0 - f) + b * f
}

impl GalerkinCache {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn sample_matrices(&self, k: usize) -> &GalerkinMatrices {
        if self.constant {
            &self.matrices[0]
        } else {
            &self.matrices[k]
        }
    }

    pub fn sample_control(&self, k: usize) -> &ControlProjections {
        &self.control[k]
    }

    /// Bracketing sample indices and the interpolation weight of the upper one.
    fn bracket(&self, z: f64) -> (usize, usize, f64) {
        let n = self.samples.len();
        let h = self.length / n as f64;
        let s = z.rem_euclid(self.length) / h;
        let k = (s.floor() as usize).min(n - 1);
        let f = (s - k as f64).clamp(0.0, 1.0);
        (k, (k + 1) % n, f)
    }

    /// Entrywise linear interpolation of every quantity at `z`.
    pub fn interpolate(&self, z: f64) -> (GalerkinMatrices, ControlProjections) {
        let (k0, k1, f) = self.bracket(z);
        let mats = if self.constant {
            self.matrices[0].clone()
        } else {
            let (a, b) = (&self.matrices[k0], &self.matrices[k1]);
            GalerkinMatrices {
                m1: lerp(&a.m1, &b.m1, f),
                m2: lerp(&a.m2, &b.m2, f),
                n: lerp(&a.n, &b.n, f),
                a1: lerp(&a.a1, &b.a1, f),
                a2: lerp(&a.a2, &b.a2, f),
            }
        };
        (mats, self.control_at(z))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let meta = format!(
            "format=1\nframes=1\nm={}\nlength={:?}\nn_samples={}\nrank={}\nn_c={}\nconstant={}\ngrid_hash={:016x}\n",
            self.m,
            self.length,
            self.samples.len(),
            self.rank,
            self.n_c,
            self.constant,
            self.grid_hash
        );
        fs::write(dir.join("metadata.txt"), meta)?;
        save_matrix(dir.join("samples.bin"), &DMatrix::from_row_slice(1, self.samples.len(), &self.samples))?;
        let stack = |get: &dyn Fn(&GalerkinMatrices) -> &DMatrix<f64>| {
            let blocks: Vec<&DMatrix<f64>> = self.matrices.iter().map(get).collect();
            vstack(&blocks)
        };
        save_matrix(dir.join("m1.bin"), &stack(&|g| &g.m1))?;
        save_matrix(dir.join("m2.bin"), &stack(&|g| &g.m2))?;
        save_matrix(dir.join("n.bin"), &stack(&|g| &g.n))?;
        save_matrix(dir.join("a1.bin"), &stack(&|g| &g.a1))?;
        save_matrix(dir.join("a2.bin"), &stack(&|g| &g.a2))?;
        let cstack = |get: &dyn Fn(&ControlProjections) -> &DMatrix<f64>| {
            let blocks: Vec<&DMatrix<f64>> = self.control.iter().map(get).collect();
            vstack(&blocks)
        };
        save_matrix(dir.join("vtb.bin"), &cstack(&|c| &c.vtb))?;
        save_matrix(dir.join("wtb.bin"), &cstack(&|c| &c.wtb))?;
        save_matrix(dir.join("w2tb.bin"), &cstack(&|c| &c.w2tb))?;
        Ok(())
    }

    /// Loads a cache written by [`GalerkinCache::save`], rejecting it when it
    /// was built on a different grid.
    pub fn load(dir: impl AsRef<Path>, grid: &SpatialGrid) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("metadata.txt");
        let text = fs::read_to_string(&meta_path)?;
        let meta: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let bad = |reason: String| Error::Format {
            path: meta_path.clone(),
            reason,
        };
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("bad value for {k}")))
        };
        let hash = u64::from_str_radix(get("grid_hash")?, 16).map_err(|_| bad("bad grid_hash".into()))?;
        if hash != grid.fingerprint() || num("m")? != grid.m() {
            return Err(bad("cache was assembled on a different grid".into()));
        }
        let constant = get("constant")? == "true";
        let (n_s, r, n_c) = (num("n_samples")?, num("rank")?, num("n_c")?);
        let samples: Vec<f64> = load_matrix(dir.join("samples.bin"))?.iter().copied().collect();
        if samples.len() != n_s {
            return Err(bad("sample count disagrees with samples.bin".into()));
        }
        let count = if constant { 1 } else { n_s };
        let split = |name: &str, blocks: usize, cols: usize| -> Result<Vec<DMatrix<f64>>> {
            let all = load_matrix(dir.join(name))?;
            if all.shape() != (blocks * r, cols) {
                return Err(bad(format!("{name} has shape {:?}", all.shape())));
            }
            Ok((0..blocks).map(|k| all.rows(k * r, r).clone_owned()).collect())
        };
        let (m1, m2, n, a1, a2) = (
            split("m1.bin", count, r)?,
            split("m2.bin", count, r)?,
            split("n.bin", count, r)?,
            split("a1.bin", count, r)?,
            split("a2.bin", count, r)?,
        );
        let matrices = (0..count)
            .map(|k| GalerkinMatrices {
                m1: m1[k].clone(),
                m2: m2[k].clone(),
                n: n[k].clone(),
                a1: a1[k].clone(),
                a2: a2[k].clone(),
            })
            .collect();
        let (vtb, wtb, w2tb) = (
            split("vtb.bin", n_s, n_c)?,
            split("wtb.bin", n_s, n_c)?,
            split("w2tb.bin", n_s, n_c)?,
        );
        let control = (0..n_s)
            .map(|k| ControlProjections {
                vtb: vtb[k].clone(),
                wtb: wtb[k].clone(),
                w2tb: w2tb[k].clone(),
            })
            .collect();
        Ok(Self {
            length: grid.length(),
            samples,
            constant,
            matrices,
            control,
            rank: r,
            n_c,
            m: grid.m(),
            grid_hash: hash,
        })
    }
}

fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.rows_mut(r0, b.nrows()).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

impl GalerkinModel for GalerkinCache {
    fn rank(&self) -> usize {
        self.rank
    }

    fn n_c(&self) -> usize {
        self.n_c
    }

    fn constant_matrices(&self) -> Option<&GalerkinMatrices> {
        self.constant.then(|| &self.matrices[0])
    }

    fn matrices_at(&self, z: f64) -> Cow<'_, GalerkinMatrices> {
        if self.constant {
            Cow::Borrowed(&self.matrices[0])
        } else {
            Cow::Owned(self.interpolate(z).0)
        }
    }

    fn control_at(&self, z: f64) -> ControlProjections {
        let (k0, k1, f) = self.bracket(z);
        let (a, b) = (&self.control[k0], &self.control[k1]);
        ControlProjections {
            vtb: lerp(&a.vtb, &b.vtb, f),
            wtb: lerp(&a.wtb, &b.wtb, f),
            w2tb: lerp(&a.w2tb, &b.w2tb, f),
        }
    }

    fn control_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (k0, k1, f) = self.bracket(z);
        let (a, b) = (&self.control[k0], &self.control[k1]);
        let gv = &a.vtb * u * (1.0 - f) + &b.vtb * u * f;
        let gw = &a.wtb * u * (1.0 - f) + &b.wtb * u * f;
        (gv, gw)
    }

    fn control_derivative_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (k0, k1, f) = self.bracket(z);
        let (a, b) = (&self.control[k0], &self.control[k1]);
        let gv = &a.wtb * u * (1.0 - f) + &b.wtb * u * f;
        let gw = &a.w2tb * u * (1.0 - f) + &b.w2tb * u * f;
        (gv, gw)
    }
}

/// Galerkin quantities assembled directly at every requested shift, with no
/// sampling. Slow but exact; used as the reference model in tests and for
/// gradient verification of the reduced adjoint.
#[derive(Clone, Debug)]
pub struct ExactGalerkin {
    grid: SpatialGrid,
    modes: DMatrix<f64>,
    a: CsrMatrix<f64>,
    b: DMatrix<f64>,
    constant: Option<GalerkinMatrices>,
}

impl ExactGalerkin {
    pub fn new(basis: &SpodBasis, sys: &FomSystem, constant_matrices: bool) -> Result<Self> {
        let modes = check_single(basis, sys)?;
        let constant = constant_matrices.then(|| assemble_at(sys.grid(), &modes, sys.a(), sys.b(), 0.0).0);
        Ok(Self {
            grid: sys.grid().clone(),
            modes,
            a: sys.a().clone(),
            b: sys.b().clone(),
            constant,
        })
    }

    fn project(&self, z: f64, order: usize, u: &DVector<f64>) -> DVector<f64> {
        let bu = &self.b * u;
        let mut tmp = vec![0.0; self.grid.m()];
        ShiftStencil::new(&self.grid, z, order).apply_transpose(bu.as_slice(), &mut tmp);
        self.modes.transpose() * DVector::from_vec(tmp)
    }
}

impl GalerkinModel for ExactGalerkin {
    fn rank(&self) -> usize {
        self.modes.ncols()
    }

    fn n_c(&self) -> usize {
        self.b.ncols()
    }

    fn constant_matrices(&self) -> Option<&GalerkinMatrices> {
        self.constant.as_ref()
    }

    fn matrices_at(&self, z: f64) -> Cow<'_, GalerkinMatrices> {
        match &self.constant {
            Some(c) => Cow::Borrowed(c),
            None => Cow::Owned(assemble_at(&self.grid, &self.modes, &self.a, &self.b, z).0),
        }
    }

    fn control_at(&self, z: f64) -> ControlProjections {
        control_at_direct(&self.grid, &self.modes, &self.b, z)
    }

    fn control_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.project(z, 0, u), self.project(z, 1, u))
    }

    fn control_derivative_apply(&self, z: f64, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.project(z, 1, u), self.project(z, 2, u))
    }
}
