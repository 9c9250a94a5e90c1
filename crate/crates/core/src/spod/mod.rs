//! Shifted POD with a single co-moving frame: fractional shift operators,
//! decomposition, sampled Galerkin matrices and the reduced forward model.

pub mod decompose;
pub mod galerkin;
pub mod rom;
pub mod shift;

pub use decompose::{
    co_moving_snapshots, reconstruct_single_frame, spod_decompose_single_frame, spod_full_single_frame,
    SpodBasis, SpodFrame,
};
pub use galerkin::{
    assemble_at, assemble_galerkin_cache, ControlProjections, ExactGalerkin, GalerkinCache, GalerkinMatrices,
    GalerkinModel,
};
pub use rom::{
    initial_amplitudes, reconstruct, solve_spod_rom, solve_spod_rom_with, spod_cost, ReducedTrajectory,
    ShiftDynamics,
};
pub use shift::{
    build_shift_derivative_operator, build_shift_operator, build_shift_second_derivative_operator,
    estimate_shifts, shift_columns, ShiftOperator, ShiftStencil, ShiftTrack,
};
