//! Synthetic low-rank-plus-sparse data, streamed one column at a time.
//!
//! `X = UVᵀ` with i.i.d. `N(0, 1)` entries in `U` (`p × d`) and `V`
//! (`n × d`); exactly `round(ρ·p·n)` entries of `E` are nonzero, at uniformly
//! random positions, with values uniform on the corruption range. Corrupted
//! positions are chosen by sequential selection sampling over the cells in
//! column order, so the stream never holds more than one column.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::engine::Sample;
use crate::error::{Error, Result};
use crate::Scalar;

const STREAM_BASIS: u64 = 0;
const STREAM_COEFF: u64 = 1;
const STREAM_POSITIONS: u64 = 2;
const STREAM_VALUES: u64 = 3;
const STREAM_MASK: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub p: usize,
    pub n: usize,
    pub d_true: usize,
    /// Fraction of entries corrupted.
    pub rho: f64,
    pub corruption_range: (f64, f64),
    /// Fraction of entries hidden from the solver (completion data); 0 for
    /// fully observed streams.
    pub unobserved: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(p: usize, n: usize, d_true: usize, rho: f64, seed: u64) -> Self {
        Self { p, n, d_true, rho, corruption_range: (-1000.0, 1000.0), unobserved: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d_true == 0 || self.d_true > self.p {
            return Err(Error::InvalidParameter(format!(
                "need 1 ≤ d_true ≤ p, got d_true = {}, p = {}",
                self.d_true, self.p
            )));
        }
        for (name, f) in [("rho", self.rho), ("unobserved", self.unobserved)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        let (lo, hi) = self.corruption_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad corruption range ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Number of corrupted entries, `round(ρ·p·n)`.
    pub fn corruption_count(&self) -> u64 {
        (self.rho * (self.p * self.n) as f64).round() as u64
    }

    pub fn hidden_count(&self) -> u64 {
        (self.unobserved * (self.p * self.n) as f64).round() as u64
    }

    /// Stable 64-bit digest of every field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(format!(
            "p={};n={};d={};rho={:e};range={:e},{:e};unobserved={:e};seed={}",
            self.p,
            self.n,
            self.d_true,
            self.rho,
            self.corruption_range.0,
            self.corruption_range.1,
            self.unobserved,
            self.seed
        ));
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Picks exactly `wanted` of `total` items in a single forward pass.
#[derive(Clone, Debug)]
struct SelectionSampler {
    rng: ChaCha8Rng,
    wanted: u64,
    remaining: u64,
}

impl SelectionSampler {
    fn new(rng: ChaCha8Rng, wanted: u64, total: u64) -> Self {
        Self { rng, wanted: wanted.min(total), remaining: total }
    }

    fn next(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        let take = self.wanted > 0
            && (self.wanted == self.remaining
                || self.rng.random::<f64>() * (self.remaining as f64) < self.wanted as f64);
        self.remaining -= 1;
        if take {
            self.wanted -= 1;
        }
        take
    }
}

/// One generated column.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticColumn<T: Scalar> {
    /// What the solver sees: `x + e`, masked in completion data.
    pub sample: Sample<T>,
    /// The uncorrupted column `x = Uv`.
    pub clean: DVector<T>,
    pub corrupted: usize,
}

/// Lazy column stream over a [`SyntheticSpec`].
#[derive(Clone, Debug)]
pub struct SyntheticStream<T: Scalar> {
    spec: SyntheticSpec,
    ground_truth: DMatrix<T>,
    coeff_rng: ChaCha8Rng,
    positions: SelectionSampler,
    values_rng: ChaCha8Rng,
    mask: Option<SelectionSampler>,
    emitted: usize,
}

/// Builds the stream and its ground-truth basis `U`.
pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticStream<T>> {
    spec.validate()?;
    let (p, d) = (spec.p, spec.d_true);
    let mut basis_rng = rng_for(spec.seed, STREAM_BASIS);
    let entries: Vec<T> = (0..p * d)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut basis_rng);
            T::lit(x)
        })
        .collect();
    let total = (p * spec.n) as u64;
    Ok(SyntheticStream {
        spec: spec.clone(),
        ground_truth: DMatrix::from_row_slice(p, d, &entries),
        coeff_rng: rng_for(spec.seed, STREAM_COEFF),
        positions: SelectionSampler::new(rng_for(spec.seed, STREAM_POSITIONS), spec.corruption_count(), total),
        values_rng: rng_for(spec.seed, STREAM_VALUES),
        mask: (spec.unobserved > 0.0)
            .then(|| SelectionSampler::new(rng_for(spec.seed, STREAM_MASK), spec.hidden_count(), total)),
        emitted: 0,
    })
}

impl<T: Scalar> SyntheticStream<T> {
    pub fn ground_truth(&self) -> &DMatrix<T> {
        &self.ground_truth
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Only the solver-visible samples.
    pub fn samples(self) -> impl Iterator<Item = Sample<T>> {
        self.map(|c| c.sample)
    }
}

impl<T: Scalar> Iterator for SyntheticStream<T> {
    type Item = SyntheticColumn<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.emitted == self.spec.n {
            return None;
        }
        self.emitted += 1;
        let (p, d) = (self.spec.p, self.spec.d_true);
        let coeffs = DVector::from_fn(d, |_, _| {
            let x: f64 = StandardNormal.sample(&mut self.coeff_rng);
            T::lit(x)
        });
        let clean = &self.ground_truth * coeffs;
        let mut values = clean.clone();
        let (lo, hi) = self.spec.corruption_range;
        let mut corrupted = 0;
        for i in 0..p {
            if self.positions.next() {
                let u: f64 = self.values_rng.random();
                values[i] += T::lit(lo + (hi - lo) * u);
                corrupted += 1;
            }
        }
        let sample = match self.mask.as_mut() {
            Some(sampler) => {
                let mask: Vec<bool> = (0..p).map(|_| !sampler.next()).collect();
                for (v, &m) in values.iter_mut().zip(&mask) {
                    if !m {
                        *v = T::zero();
                    }
                }
                Sample::masked(values, mask)
            }
            None => Sample::dense(values),
        };
        Some(SyntheticColumn { sample, clean, corrupted })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.n - self.emitted;
        (left, Some(left))
    }
}
