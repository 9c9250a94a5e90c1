//! Single-frame shifted POD: de-shift, decompose in the co-moving frame,
//! re-shift on reconstruction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::linalg::left_svd;

use super::shift::{shift_columns, ShiftStencil, ShiftTrack};

/// Stationary basis of one co-moving frame.
#[derive(Clone, Debug)]
pub struct SpodFrame {
    /// m×p, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Full spectrum of the co-moving snapshot matrix.
    pub singular_values: Vec<f64>,
}

/// Stationary bases of all co-moving frames.
#[derive(Clone, Debug)]
pub struct SpodBasis {
    pub frames: Vec<SpodFrame>,
}

impl SpodBasis {
    pub fn single(modes: DMatrix<f64>, singular_values: Vec<f64>) -> Self {
        Self {
            frames: vec![SpodFrame {
                modes,
                singular_values,
            }],
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Total rank r = Σ p^k.
    pub fn rank(&self) -> usize {
        self.frames.iter().map(|f| f.modes.ncols()).sum()
    }

    /// Modes of the only frame; multi-frame bases are rejected.
    pub fn single_frame(&self) -> Result<&SpodFrame> {
        match self.frames.as_slice() {
            [f] => Ok(f),
            _ => Err(Error::InvalidArgument(format!(
                "expected one co-moving frame, found {}",
                self.frames.len()
            ))),
        }
    }

    pub fn truncate(&self, p: usize) -> Result<Self> {
        let f = self.single_frame()?;
        if p == 0 || p > f.modes.ncols() {
            return Err(Error::RankOutOfRange {
                p,
                max: f.modes.ncols(),
            });
        }
        Ok(Self::single(
            f.modes.columns(0, p).clone_owned(),
            f.singular_values.clone(),
        ))
    }
}

/// Snapshots moved into the co-moving frame: column `j` shifted by `-z_j`.
pub fn co_moving_snapshots(
    snapshots: &DMatrix<f64>,
    grid: &SpatialGrid,
    shifts: &ShiftTrack,
) -> Result<DMatrix<f64>> {
    shift_columns(snapshots, grid, shifts, true)
}

/// Full co-moving decomposition (all available modes).
pub fn spod_full_single_frame(
    snapshots: &DMatrix<f64>,
    grid: &SpatialGrid,
    shifts: &ShiftTrack,
) -> Result<SpodBasis> {
    let co = co_moving_snapshots(snapshots, grid, shifts)?;
    let (modes, sv) = left_svd(&co)?;
    Ok(SpodBasis::single(modes, sv))
}

pub fn spod_decompose_single_frame(
    snapshots: &DMatrix<f64>,
    grid: &SpatialGrid,
    shifts: &ShiftTrack,
    p: usize,
) -> Result<SpodBasis> {
    let max = snapshots.nrows().min(snapshots.ncols());
    if p == 0 || p > max {
        return Err(Error::RankOutOfRange { p, max });
    }
    spod_full_single_frame(snapshots, grid, shifts)?.truncate(p)
}

/// `q_j = T^{z_j} U a_j` for every time node.
pub fn reconstruct_single_frame(
    modes: &DMatrix<f64>,
    amplitudes: &DMatrix<f64>,
    shifts: &[f64],
    grid: &SpatialGrid,
) -> Result<DMatrix<f64>> {
    if amplitudes.nrows() != modes.ncols() {
        return Err(Error::dims("amplitude rows", modes.ncols(), amplitudes.nrows()));
    }
    if shifts.len() != amplitudes.ncols() {
        return Err(Error::dims("shift count", amplitudes.ncols(), shifts.len()));
    }
    let stationary = modes * amplitudes;
    let m = grid.m();
    let mut out = DMatrix::zeros(m, amplitudes.ncols());
    for (j, z) in shifts.iter().enumerate() {
        let st = ShiftStencil::new(grid, *z, 0);
        st.apply(
            &stationary.as_slice()[j * m..(j + 1) * m],
            &mut out.as_mut_slice()[j * m..(j + 1) * m],
        );
    }
    Ok(out)
}
