//! Streaming loop: per sample, solve `(r, e)`, fold them into the
//! accumulators, then refresh the basis. Decomposition and completion share
//! the loop and differ only in the noise penalty.

pub mod checkpoint;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{surrogate_value, update_basis, BasisState, BasisUpdateStats};
use crate::coeff::{sample_loss, solve_coeff_noise, CoeffNoisePair, SolverConfig};
use crate::error::{Error, Result};
use crate::prox::RegularizerSpec;
use crate::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Column noise penalty used in decomposition mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseModel {
    /// `λ₂‖e‖₁`, sparse corruption.
    L1,
    /// `λ₂‖e‖₂`, column-wise corruption.
    L2Column,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode<T> {
    Decomposition(NoiseModel),
    /// Matrix completion with mask weight `c`.
    Completion { c: T },
}

impl<T: Scalar> Mode<T> {
    /// Tag stored in checkpoints.
    pub fn tag(&self) -> u8 {
        match self {
            Mode::Decomposition(NoiseModel::L1) => 0,
            Mode::Decomposition(NoiseModel::L2Column) => 1,
            Mode::Completion { .. } => 2,
        }
    }

    fn regularizer<'a>(&self, lambda2: T, mask: Option<&'a [bool]>) -> Result<RegularizerSpec<'a, T>> {
        match (self, mask) {
            (Mode::Decomposition(NoiseModel::L1), _) => Ok(RegularizerSpec::L1 { lambda2 }),
            (Mode::Decomposition(NoiseModel::L2Column), _) => Ok(RegularizerSpec::L2Column { lambda2 }),
            (Mode::Completion { c }, Some(mask)) => Ok(RegularizerSpec::MaskedL1 { c: *c, mask }),
            (Mode::Completion { .. }, None) => {
                Err(Error::InvalidParameter("completion mode needs an observation mask per sample".into()))
            }
        }
    }
}

/// Default mask weight for completion mode.
pub const DEFAULT_COMPLETION_C: f64 = 1e3;

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig<T> {
    pub p: usize,
    pub d: usize,
    pub mode: Mode<T>,
    pub solver: SolverConfig<T>,
    pub init_seed: u64,
    /// Write a checkpoint every this many samples; 0 disables.
    pub checkpoint_every: u64,
}

impl<T: Scalar> EngineConfig<T> {
    /// Configuration with the default solver settings for dimension `p`.
    pub fn new(p: usize, d: usize, mode: Mode<T>) -> Self {
        Self {
            p,
            d,
            mode,
            solver: SolverConfig::for_dimension(p),
            init_seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d == 0 {
            return Err(Error::InvalidParameter(format!(
                "dimensions must be positive, got p = {}, d = {}",
                self.p, self.d
            )));
        }
        if self.d > self.p {
            return Err(Error::InvalidParameter(format!("d = {} exceeds p = {}", self.d, self.p)));
        }
        if let Mode::Completion { c } = self.mode {
            if !(c > T::zero()) {
                return Err(Error::InvalidParameter("completion weight c must be positive".into()));
            }
        }
        self.solver.validate()
    }
}

/// One observed column, with a mask in completion mode (`true` = observed).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Scalar> {
    pub values: DVector<T>,
    pub mask: Option<Vec<bool>>,
}

impl<T: Scalar> Sample<T> {
    pub fn dense(values: DVector<T>) -> Self {
        Self { values, mask: None }
    }

    pub fn masked(values: DVector<T>, mask: Vec<bool>) -> Self {
        Self { values, mask: Some(mask) }
    }
}

/// Scalar summary of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport<T> {
    pub t: u64,
    pub eta: T,
    pub coeff_iterations: usize,
    pub kkt_residual: T,
    pub bisection_stalled: bool,
    /// `g_t` at the previous basis, after the accumulators absorbed sample `t`.
    pub surrogate_before_basis: T,
    /// `g_t(L_t)`.
    pub surrogate: T,
    pub basis: BasisUpdateStats,
    pub wall_nanos: u64,
}

/// Initial state: zero accumulators and a Gaussian basis with entries
/// `N(0, 1)/√d`, drawn row by row from a ChaCha8 stream seeded by `init_seed`.
pub fn init_engine<T: Scalar>(config: &EngineConfig<T>) -> Result<BasisState<T>> {
    config.validate()?;
    let (p, d) = (config.p, config.d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let scale = 1.0 / (d as f64).sqrt();
    let entries: Vec<T> = (0..p * d)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            T::lit(x * scale)
        })
        .collect();
    Ok(BasisState::new(DMatrix::from_row_slice(p, d, &entries)))
}

fn check_sample<T: Scalar>(sample: &Sample<T>, p: usize, position: u64) -> Result<()> {
    if sample.values.len() != p {
        return Err(Error::DimensionMismatch { what: "sample length", expected: p, got: sample.values.len() });
    }
    if let Some(mask) = &sample.mask {
        if mask.len() != p {
            return Err(Error::DimensionMismatch { what: "observation mask", expected: p, got: mask.len() });
        }
    }
    if let Some(index) = sample.values.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput { position, index });
    }
    Ok(())
}

/// Processes one sample, mutating `state` in place. Returns the report and
/// the per-sample solution.
pub fn step<T: Scalar>(
    state: &mut BasisState<T>,
    sample: &Sample<T>,
    config: &EngineConfig<T>,
) -> Result<(StepReport<T>, CoeffNoisePair<T>)> {
    let started = Instant::now();
    let position = state.t + 1;
    check_sample(sample, config.p, position)?;
    if state.p() != config.p || state.d() != config.d {
        return Err(Error::DimensionMismatch { what: "basis rows", expected: config.p, got: state.p() });
    }

    let spec = config.mode.regularizer(config.solver.lambda2, sample.mask.as_deref())?;
    // unobserved entries carry no information; pin them to zero
    let z = match (&config.mode, &sample.mask) {
        (Mode::Completion { .. }, Some(mask)) => {
            DVector::from_iterator(config.p, sample.values.iter().zip(mask).map(|(&v, &m)| if m { v } else { T::zero() }))
        }
        _ => sample.values.clone(),
    };

    let pair = solve_coeff_noise(&state.basis, &z, &spec, &config.solver)?;
    let free = DVector::zeros(pair.r.len());
    let loss_term = sample_loss(&state.basis, &z, &free, &pair.e, &spec);
    state.accumulate(&z, &pair.e, &pair.r, loss_term);

    let lambda1 = config.solver.lambda1;
    let before = surrogate_value(state, lambda1);
    let stats = update_basis(state, &config.solver)?;
    let after = surrogate_value(state, lambda1);
    if !after.is_finite() || !before.is_finite() {
        return Err(Error::NonFiniteSurrogate { t: state.t });
    }
    if after > before + T::lit(1e-12) * before.abs().max(T::one()) {
        log::warn!("basis update raised the surrogate at t = {}: {before} -> {after}", state.t);
    }
    if state.t.is_multiple_of(1000) {
        log::debug!("t = {}: smallest eigenvalue of A/t = {}", state.t, state.strong_convexity_margin());
    }

    let report = StepReport {
        t: state.t,
        eta: pair.eta,
        coeff_iterations: pair.iterations,
        kkt_residual: pair.kkt_residual,
        bisection_stalled: pair.bisection_stalled,
        surrogate_before_basis: before,
        surrogate: after,
        basis: stats,
        wall_nanos: started.elapsed().as_nanos() as u64,
    };
    Ok((report, pair))
}

/// An engine instance owns one logical stream.
#[derive(Clone, Debug)]
pub struct Engine<T: Scalar> {
    config: EngineConfig<T>,
    state: BasisState<T>,
}

impl<T: Scalar> Engine<T> {
    pub fn new(config: EngineConfig<T>) -> Result<Self> {
        let state = init_engine(&config)?;
        Ok(Self { config, state })
    }

    /// Continues from a checkpoint; shape and mode must match `config`.
    pub fn resume(config: EngineConfig<T>, checkpoint: Checkpoint<T>) -> Result<Self> {
        config.validate()?;
        let st = &checkpoint.state;
        if st.p() != config.p {
            return Err(Error::DimensionMismatch { what: "checkpoint p", expected: config.p, got: st.p() });
        }
        if st.d() != config.d {
            return Err(Error::DimensionMismatch { what: "checkpoint d", expected: config.d, got: st.d() });
        }
        if checkpoint.mode_tag != config.mode.tag() {
            return Err(Error::ModeMismatch { expected: config.mode.tag(), found: checkpoint.mode_tag });
        }
        Ok(Self { config, state: checkpoint.state })
    }

    pub fn config(&self) -> &EngineConfig<T> {
        &self.config
    }

    pub fn state(&self) -> &BasisState<T> {
        &self.state
    }

    pub fn into_state(self) -> BasisState<T> {
        self.state
    }

    pub fn step(&mut self, sample: &Sample<T>) -> Result<StepReport<T>> {
        Ok(step(&mut self.state, sample, &self.config)?.0)
    }

    /// Like [`Engine::step`] but also returns the sample's `(r, e)`.
    pub fn step_detailed(&mut self, sample: &Sample<T>) -> Result<(StepReport<T>, CoeffNoisePair<T>)> {
        step(&mut self.state, sample, &self.config)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.state, self.config.mode.tag(), path)
    }

    /// Folds [`Engine::step`] over `source`, handing each report to `sink`.
    /// When `checkpoint_path` is set and `checkpoint_every > 0`, the state is
    /// written after every `checkpoint_every`-th sample.
    pub fn run_stream<I, F>(&mut self, source: I, mut sink: F, checkpoint_path: Option<&Path>) -> Result<()>
    where
        I: IntoIterator<Item = Sample<T>>,
        F: FnMut(&StepReport<T>),
    {
        let every = self.config.checkpoint_every;
        for sample in source {
            let report = self.step(&sample)?;
            sink(&report);
            if let Some(path) = checkpoint_path {
                if every > 0 && report.t % every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs a fresh engine over `source` and returns the final state.
pub fn run_stream<T, I, F>(source: I, config: &EngineConfig<T>, sink: F) -> Result<BasisState<T>>
where
    T: Scalar,
    I: IntoIterator<Item = Sample<T>>,
    F: FnMut(&StepReport<T>),
{
    let mut engine = Engine::new(config.clone())?;
    engine.run_stream(source, sink, None)?;
    Ok(engine.into_state())
}
