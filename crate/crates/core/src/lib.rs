//! Online max-norm regularized matrix decomposition and completion.
//!
//! Samples arrive one column at a time. For each sample the engine solves a
//! small coefficient/noise problem against the current basis `L`, folds the
//! result into two accumulators, and refreshes `L` by block coordinate
//! descent on a surrogate of the empirical loss. Memory is `O(pd)` no matter
//! how many samples are processed.
//!
//! ```
//! use nalgebra::DVector;
//! use omrmd::{EngineConfigF64, EngineF64, Mode, NoiseModel, Sample};
//!
//! let config = EngineConfigF64::new(6, 2, Mode::Decomposition(NoiseModel::L1));
//! let mut engine = EngineF64::new(config).unwrap();
//! let report = engine.step(&Sample::dense(DVector::from_element(6, 1.0))).unwrap();
//! assert_eq!(report.t, 1);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod cli;
pub mod coeff;
pub mod engine;
pub mod error;
pub mod prox;
mod scalar;

pub use basis::{surrogate_value, update_basis, BasisState, BasisUpdateStats};
pub use coeff::{constrained_r, solve_coeff_noise, CoeffNoisePair, ConstrainedCoeff, SolverConfig};
pub use engine::{
    init_engine, load_checkpoint, run_stream, save_checkpoint, step, Checkpoint, Engine, EngineConfig, Mode,
    NoiseModel, Sample, StepReport,
};
pub use error::{CheckpointError, Error, Result};
pub use prox::{l2_column_shrink, masked_soft_threshold, soft_threshold, RegularizerSpec};
pub use scalar::Scalar;

pub type BasisStateF64 = BasisState<f64>;
pub type BasisStateF32 = BasisState<f32>;
pub type SolverConfigF64 = SolverConfig<f64>;
pub type SolverConfigF32 = SolverConfig<f32>;
pub type EngineConfigF64 = EngineConfig<f64>;
pub type EngineConfigF32 = EngineConfig<f32>;
pub type EngineF64 = Engine<f64>;
pub type EngineF32 = Engine<f32>;
pub type SampleF64 = Sample<f64>;
pub type SampleF32 = Sample<f32>;
