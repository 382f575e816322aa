//! Embedding-step signals, the shuffle control, and power-law signal synthesis.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Outputs depend only on the arguments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seqio::EmbeddingSequence;

/// Shortest signal for which a spectrum is computed and synthesized.
pub const MIN_SIGNAL_LEN: usize = 8;

/// Bounds on the synthesized exponent.
pub const ALPHA_RANGE: (f64, f64) = (-4.0, 4.0);

/// `length` x `dim` matrix of token-to-token differences, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSignal {
    length: usize,
    dim: usize,
    values: Vec<f64>,
}

impl StepSignal {
    pub fn new(length: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if length == 0 || dim == 0 {
            return Err(Error::Validation(format!("empty step signal {length}x{dim}")));
        }
        if values.len() != length * dim {
            return Err(Error::Validation(format!(
                "expected {} values for {length}x{dim}, got {}",
                length * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite step value at flat index {i}")));
        }
        Ok(Self { length, dim, values })
    }

    /// Differences consecutive rows of a row-major `token_count` x `dim` trajectory.
    pub fn from_trajectory(values: &[f64], token_count: usize, dim: usize) -> Result<Self> {
        if token_count < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 tokens for a step signal, got {token_count}"
            )));
        }
        if dim == 0 || values.len() != token_count * dim {
            return Err(Error::Validation(format!(
                "trajectory has {} values, expected {token_count}x{dim}",
                values.len()
            )));
        }
        let mut out = Vec::with_capacity((token_count - 1) * dim);
        for t in 0..token_count - 1 {
            let cur = &values[t * dim..(t + 1) * dim];
            let next = &values[(t + 1) * dim..(t + 2) * dim];
            out.extend(next.iter().zip(cur).map(|(b, a)| b - a));
        }
        Self::new(token_count - 1, dim, out)
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn scaled(&self, c: f64) -> StepSignal {
        StepSignal {
            length: self.length,
            dim: self.dim,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Running sum with a zero first row; `step_signal` of the result gives back `self`
    /// up to the precision of the returned f32 values.
    pub fn cumulative_trajectory(&self) -> Result<EmbeddingSequence> {
        let mut acc = vec![0.0f64; self.dim];
        let mut values = Vec::with_capacity((self.length + 1) * self.dim);
        values.extend(acc.iter().map(|&v| v as f32));
        for row in self.values.chunks_exact(self.dim) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
            values.extend(acc.iter().map(|&v| v as f32));
        }
        EmbeddingSequence::new(self.length + 1, self.dim, values)
    }
}

pub fn step_signal(seq: &EmbeddingSequence) -> Result<StepSignal> {
    StepSignal::from_trajectory(&seq.to_f64(), seq.token_count(), seq.dim())
}

/// Per-document shuffle control; the permutation is a function of `seed` and the doc id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleSpec {
    pub seed: u64,
}

/// 64-bit FNV-1a.
pub fn stable_hash(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes().fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Fisher-Yates permutation of `0..len`: output row `t` takes input row `perm[t]`.
pub fn shuffle_permutation(len: usize, doc_id: &str, spec: ShuffleSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stable_hash(doc_id));
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

pub fn shuffle_sequence(seq: &EmbeddingSequence, doc_id: &str, spec: ShuffleSpec) -> EmbeddingSequence {
    let perm = shuffle_permutation(seq.token_count(), doc_id, spec);
    let mut values = Vec::with_capacity(seq.values().len());
    for &src in &perm {
        values.extend_from_slice(seq.row(src));
    }
    EmbeddingSequence::new(seq.token_count(), seq.dim(), values)
        .expect("row permutation preserves shape and finiteness")
}

fn check_synth_args(length: usize, dim: usize, alpha: f64) -> Result<()> {
    if length < MIN_SIGNAL_LEN {
        return Err(Error::Validation(format!(
            "synthetic signal length must be at least {MIN_SIGNAL_LEN}, got {length}"
        )));
    }
    if dim == 0 {
        return Err(Error::Validation("dim must be positive".into()));
    }
    if !(ALPHA_RANGE.0..=ALPHA_RANGE.1).contains(&alpha) {
        return Err(Error::Validation(format!(
            "alpha must lie in [{}, {}], got {alpha}",
            ALPHA_RANGE.0, ALPHA_RANGE.1
        )));
    }
    Ok(())
}

/// Full length-`length` DFT of one synthetic dimension.
///
/// Bin `k` in `1..=length/2` has magnitude `(k / (length/2))^(alpha/2)` and a
/// uniform random phase; DC is zero, the upper half is the conjugate mirror, and
/// for even `length` the Nyquist bin keeps only its real part.
pub fn synth_dimension_spectrum<R: Rng>(length: usize, alpha: f64, rng: &mut R) -> Vec<Complex64> {
    let half = length / 2;
    let mut spec = vec![Complex64::new(0.0, 0.0); length];
    for k in 1..=half {
        let amp = (k as f64 / half as f64).powf(alpha / 2.0);
        let phase = rng.gen::<f64>() * 2.0 * PI;
        let mut bin = Complex64::from_polar(amp, phase);
        if length.is_multiple_of(2) && k == half {
            bin.im = 0.0;
        }
        spec[k] = bin;
        if k != length - k {
            spec[length - k] = bin.conj();
        }
    }
    spec
}

/// Random-phase step signal whose expected one-sided PSD is proportional to `f^alpha`.
///
/// Each dimension gets independent phases. The signal is scaled so that its
/// forward DFT reproduces the synthesized spectrum exactly.
pub fn synth_power_law(length: usize, dim: usize, alpha: f64, seed: u64) -> Result<StepSignal> {
    check_synth_args(length, dim, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(length);
    let mut values = vec![0.0f64; length * dim];
    let scale = 1.0 / length as f64;
    for j in 0..dim {
        let mut buf = synth_dimension_spectrum(length, alpha, &mut rng);
        ifft.process(&mut buf);
        for (t, c) in buf.iter().enumerate() {
            values[t * dim + j] = c.re * scale;
        }
    }
    StepSignal::new(length, dim, values)
}
