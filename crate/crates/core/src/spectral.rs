//! Periodograms of step signals and their corpus-level averages.
//!
//! Conventions: `E_j(k) = |DFT(v_j)(k)|^2 / N` for `k = 1..=N/2`, no window, no
//! detrending, no one-sided doubling, DC dropped. Frequencies are stored as
//! `k / (N/2)`, so the last bin is 1. Variance normalization divides by the
//! rectangle-rule integral `sum_k E(k) / K`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::seqio::{read_sequence_file, DocumentMeta, Manifest, ManifestEntry};
use crate::signal::{shuffle_sequence, step_signal, ShuffleSpec, StepSignal, MIN_SIGNAL_LEN};

/// One-sided normalized frequency grid `k / (n/2)` for `k = 1..=n/2`.
pub fn frequency_grid(signal_length: usize) -> Vec<f64> {
    let half = signal_length / 2;
    (1..=half).map(|k| k as f64 / half as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    signal_length: usize,
    dim: usize,
    bins: Vec<f64>,
    /// `bins.len()` x `dim`, bin-major.
    power: Vec<f64>,
    /// Per dimension: `sum_{k=0}^{N-1} |u_j(k)|^2 / N` over the full transform.
    two_sided_energy: Vec<f64>,
}

impl PowerSpectrum {
    pub fn signal_length(&self) -> usize {
        self.signal_length
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn at(&self, bin: usize, dim: usize) -> f64 {
        self.power[bin * self.dim + dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.power.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn two_sided_energy(&self) -> &[f64] {
        &self.two_sided_energy
    }
}

/// Reusable FFT plan for one signal length.
#[derive(Clone)]
pub struct Periodogram {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Periodogram {
    pub fn new(len: usize) -> Result<Self> {
        if len < MIN_SIGNAL_LEN {
            return Err(Error::Validation(format!(
                "step signal length must be at least {MIN_SIGNAL_LEN}, got {len}"
            )));
        }
        let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
        Ok(Self { len, fft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn estimate(&self, sig: &StepSignal) -> Result<PowerSpectrum> {
        let n = self.len;
        if sig.length() != n {
            return Err(Error::Validation(format!(
                "periodogram planned for length {n}, got {}",
                sig.length()
            )));
        }
        let half = n / 2;
        let d = sig.dim();
        let inv_n = 1.0 / n as f64;
        let mut power = vec![0.0; half * d];
        let mut energy = Vec::with_capacity(d);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for j in 0..d {
            for (t, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(sig.values()[t * d + j], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            energy.push(buf.iter().map(|c| c.norm_sqr()).sum::<f64>() * inv_n);
            for k in 1..=half {
                power[(k - 1) * d + j] = buf[k].norm_sqr() * inv_n;
            }
        }
        Ok(PowerSpectrum {
            signal_length: n,
            dim: d,
            bins: frequency_grid(n),
            power,
            two_sided_energy: energy,
        })
    }
}

pub fn psd(sig: &StepSignal) -> Result<PowerSpectrum> {
    Periodogram::new(sig.length())?.estimate(sig)
}

/// Mean over dimensions at each bin, summing in ascending dimension order.
pub fn dimension_average(spec: &PowerSpectrum) -> Vec<f64> {
    let d = spec.dim as f64;
    spec.power
        .chunks_exact(spec.dim)
        .map(|row| row.iter().fold(0.0, |acc, v| acc + v) / d)
        .collect()
}

/// Rectangle-rule integral over the normalized frequency grid, `sum / K`.
pub fn rectangle_integral(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Average raw spectra over documents, then normalize the average.
    #[default]
    Corpus,
    /// Normalize each document to unit integral, then average.
    PerDoc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectrum {
    pub bins: Vec<f64>,
    pub e_mean: Vec<f64>,
    /// Population standard deviation across documents.
    pub e_std: Vec<f64>,
    /// Divisor applied in corpus mode; mean per-document divisor in per-doc mode.
    pub variance: f64,
    pub doc_count: usize,
}

impl NormalizedSpectrum {
    pub fn integral(&self) -> f64 {
        rectangle_integral(&self.e_mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedDoc {
    pub doc_id: String,
    pub reason: String,
}

/// Everything a corpus pass produces.
#[derive(Debug, Clone)]
pub struct CorpusSpectrum {
    pub normalized: NormalizedSpectrum,
    /// Per-dimension power averaged over documents (not normalized).
    pub per_dimension: PowerSpectrum,
    /// Each document's dimension-averaged spectrum, normalized as in `normalized`.
    pub doc_spectra: Vec<Vec<f64>>,
    pub doc_ids: Vec<String>,
    pub skipped: Vec<SkippedDoc>,
}

/// Order-sensitive accumulator; feed documents in manifest order.
#[derive(Debug, Default)]
pub struct CorpusAccumulator {
    signal_length: Option<usize>,
    dim: usize,
    doc_ids: Vec<String>,
    doc_means: Vec<Vec<f64>>,
    dim_sum: Vec<f64>,
}

impl CorpusAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn add(&mut self, doc_id: &str, spec: &PowerSpectrum) -> Result<()> {
        match self.signal_length {
            None => {
                self.signal_length = Some(spec.signal_length);
                self.dim = spec.dim;
                self.dim_sum = vec![0.0; spec.power.len()];
            }
            Some(n) if n != spec.signal_length => {
                return Err(Error::GridMismatch {
                    doc_id: doc_id.to_string(),
                    expected: n + 1,
                    found: spec.signal_length + 1,
                });
            }
            Some(_) if self.dim != spec.dim => {
                return Err(Error::Validation(format!(
                    "document {doc_id:?} has dim {}, expected {}",
                    spec.dim, self.dim
                )));
            }
            Some(_) => {}
        }
        for (acc, v) in self.dim_sum.iter_mut().zip(&spec.power) {
            *acc += v;
        }
        self.doc_means.push(dimension_average(spec));
        self.doc_ids.push(doc_id.to_string());
        Ok(())
    }

    pub fn finish(self, label: &str, mode: Normalization) -> Result<CorpusSpectrum> {
        let n = match self.signal_length {
            Some(n) if !self.doc_ids.is_empty() => n,
            _ => return Err(Error::EmptyGroup(label.to_string())),
        };
        let docs = self.doc_ids.len() as f64;
        let bins = frequency_grid(n);
        let k = bins.len();

        let sum_columns = |rows: &[Vec<f64>]| {
            let mut mean = vec![0.0; k];
            for row in rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= docs);
            mean
        };

        let (doc_spectra, e_mean, variance) = match mode {
            Normalization::Corpus => {
                let raw = sum_columns(&self.doc_means);
                let variance = rectangle_integral(&raw);
                if variance.is_nan() || variance <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "group {label:?} has zero spectral variance"
                    )));
                }
                let normed: Vec<Vec<f64>> = self
                    .doc_means
                    .iter()
                    .map(|doc| doc.iter().map(|v| v / variance).collect())
                    .collect();
                let e_mean = raw.iter().map(|m| m / variance).collect();
                (normed, e_mean, variance)
            }
            Normalization::PerDoc => {
                let mut normed = Vec::with_capacity(self.doc_means.len());
                let mut var_sum = 0.0;
                for (id, doc) in self.doc_ids.iter().zip(&self.doc_means) {
                    let v = rectangle_integral(doc);
                    if v.is_nan() || v <= 0.0 {
                        return Err(Error::Numeric(format!(
                            "document {id:?} has zero spectral variance"
                        )));
                    }
                    var_sum += v;
                    normed.push(doc.iter().map(|x| x / v).collect::<Vec<f64>>());
                }
                let e_mean = sum_columns(&normed);
                (normed, e_mean, var_sum / docs)
            }
        };
        let mut e_std = vec![0.0; k];
        for doc in &doc_spectra {
            for ((s, v), m) in e_std.iter_mut().zip(doc).zip(&e_mean) {
                *s += (v - m) * (v - m);
            }
        }
        e_std.iter_mut().for_each(|s| *s = (*s / docs).sqrt());

        let per_dimension = PowerSpectrum {
            signal_length: n,
            dim: self.dim,
            bins: bins.clone(),
            power: self.dim_sum.iter().map(|v| v / docs).collect(),
            two_sided_energy: Vec::new(),
        };
        Ok(CorpusSpectrum {
            normalized: NormalizedSpectrum {
                bins,
                e_mean,
                e_std,
                variance,
                doc_count: self.doc_ids.len(),
            },
            per_dimension,
            doc_spectra,
            doc_ids: self.doc_ids,
            skipped: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusOptions {
    pub mode: Normalization,
    pub shuffle: Option<ShuffleSpec>,
    /// 0 lets rayon pick; 1 runs on the calling thread.
    pub workers: usize,
    /// Record failing documents instead of aborting.
    pub skip_bad: bool,
}

/// Load, optionally shuffle, difference and transform one document.
pub fn document_spectrum(entry: &ManifestEntry, shuffle: Option<ShuffleSpec>) -> Result<PowerSpectrum> {
    let wrap = |e: Error| e.in_document(&entry.meta.doc_id, &entry.path.display().to_string());
    let seq = read_sequence_file(&entry.path).map_err(wrap)?;
    let seq = match shuffle {
        Some(spec) => shuffle_sequence(&seq, &entry.meta.doc_id, spec),
        None => seq,
    };
    let sig = step_signal(&seq).map_err(wrap)?;
    psd(&sig).map_err(wrap)
}

// Documents per parallel batch; results inside a batch are collected in order.
const BATCH: usize = 64;

/// Corpus spectrum over `entries`, reduced in the given order.
///
/// The result is bit-identical for any worker count: documents are transformed
/// in parallel but accumulated sequentially.
pub fn corpus_spectrum_of(label: &str, entries: &[&ManifestEntry], opts: &CorpusOptions) -> Result<CorpusSpectrum> {
    if entries.is_empty() {
        return Err(Error::EmptyGroup(label.to_string()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;

    let mut acc = CorpusAccumulator::new();
    let mut skipped = Vec::new();
    for batch in entries.chunks(BATCH) {
        let spectra: Vec<Result<PowerSpectrum>> = if opts.workers == 1 {
            batch.iter().map(|e| document_spectrum(e, opts.shuffle)).collect()
        } else {
            pool.install(|| batch.par_iter().map(|e| document_spectrum(e, opts.shuffle)).collect())
        };
        for (entry, spec) in batch.iter().zip(spectra) {
            let id = &entry.meta.doc_id;
            let added = spec.and_then(|s| {
                acc.add(id, &s)
                    .map_err(|e| e.in_document(id, &entry.path.display().to_string()))
            });
            match added {
                Ok(()) => {}
                Err(e) if opts.skip_bad => skipped.push(SkippedDoc { doc_id: id.clone(), reason: e.to_string() }),
                Err(e) => return Err(e),
            }
        }
    }
    let mut out = acc.finish(label, opts.mode)?;
    out.skipped = skipped;
    Ok(out)
}

/// Corpus spectrum over the manifest entries whose metadata satisfies `filter`.
pub fn corpus_spectrum(
    manifest: &Manifest,
    filter: impl Fn(&DocumentMeta) -> bool,
    opts: &CorpusOptions,
) -> Result<CorpusSpectrum> {
    let entries: Vec<&ManifestEntry> = manifest.iter().filter(|e| filter(&e.meta)).collect();
    corpus_spectrum_of("selection", &entries, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_signal(n: usize, d: usize, seed: u64) -> StepSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StepSignal::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn spec_from(n: usize, d: usize, power: Vec<f64>) -> PowerSpectrum {
        PowerSpectrum {
            signal_length: n,
            dim: d,
            bins: frequency_grid(n),
            power,
            two_sided_energy: Vec::new(),
        }
    }

    #[test]
    fn grid_ends_at_one() {
        let g = frequency_grid(1198);
        assert_eq!(g.len(), 599);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(frequency_grid(17).len(), 8);
    }

    #[test]
    fn zero_signal_zero_power() {
        let s = StepSignal::new(10, 2, vec![0.0; 20]).unwrap();
        assert!(psd(&s).unwrap().power().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_tone() {
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|t| (2.0 * PI * 4.0 * t as f64 / n as f64).cos()).collect();
        let spec = psd(&StepSignal::new(n, 1, vals).unwrap()).unwrap();
        for k in 1..=8 {
            let want = if k == 4 { n as f64 / 4.0 } else { 0.0 };
            assert!((spec.at(k - 1, 0) - want).abs() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn too_short() {
        assert!(psd(&random_signal(7, 1, 0)).is_err());
        assert!(psd(&random_signal(8, 1, 0)).is_ok());
    }

    #[test]
    fn scale_covariance() {
        let s = random_signal(33, 3, 1);
        let a = psd(&s).unwrap();
        let b = psd(&s.scaled(2.5)).unwrap();
        for (x, y) in a.power().iter().zip(b.power()) {
            assert!((y - 6.25 * x).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn dimension_average_cases() {
        let single = spec_from(8, 1, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dimension_average(&single), vec![1.0, 2.0, 3.0, 4.0]);
        let pair = spec_from(8, 2, vec![1.0, 3.0, 0.5, 1.5, 2.0, 6.0, 4.0, 12.0]);
        assert_eq!(dimension_average(&pair), vec![2.0, 1.0, 4.0, 8.0]);
    }

    #[test]
    fn dimension_average_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let power: Vec<f64> = (0..20 * 8).map(|_| rng.gen_range(0.0..10.0)).collect();
        let spec = spec_from(40, 8, power.clone());
        let got = dimension_average(&spec);
        for (k, g) in got.iter().enumerate() {
            let row = &power[k * 8..(k + 1) * 8];
            let first = row.iter().sum::<f64>() / 8.0;
            let correction = row.iter().map(|v| v - first).sum::<f64>() / 8.0;
            let oracle = first + correction;
            assert!((g - oracle).abs() <= 1e-12 * oracle.abs());
        }
    }

    #[test]
    fn single_doc_corpus() {
        let s = psd(&random_signal(20, 3, 2)).unwrap();
        let mut acc = CorpusAccumulator::new();
        acc.add("a", &s).unwrap();
        let out = acc.finish("g", Normalization::Corpus).unwrap();
        let mean = dimension_average(&s);
        let var = rectangle_integral(&mean);
        for (e, m) in out.normalized.e_mean.iter().zip(&mean) {
            assert!((e - m / var).abs() <= 1e-15 * e.abs().max(1.0));
        }
        assert!(out.normalized.e_std.iter().all(|&v| v == 0.0));
        assert!((out.normalized.integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_doc_is_idempotent() {
        let s = psd(&random_signal(20, 3, 4)).unwrap();
        for mode in [Normalization::Corpus, Normalization::PerDoc] {
            let mut one = CorpusAccumulator::new();
            one.add("a", &s).unwrap();
            let mut two = CorpusAccumulator::new();
            two.add("a", &s).unwrap();
            two.add("b", &s).unwrap();
            let one = one.finish("g", mode).unwrap();
            let two = two.finish("g", mode).unwrap();
            assert_eq!(one.normalized.e_mean, two.normalized.e_mean);
            assert!(two.normalized.e_std.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn grid_mismatch_names_document() {
        let mut acc = CorpusAccumulator::new();
        acc.add("a", &psd(&random_signal(20, 1, 0)).unwrap()).unwrap();
        match acc.add("b", &psd(&random_signal(21, 1, 0)).unwrap()) {
            Err(Error::GridMismatch { doc_id, expected, found }) => {
                assert_eq!(doc_id, "b");
                assert_eq!((expected, found), (21, 22));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_group() {
        assert!(matches!(
            CorpusAccumulator::new().finish("x", Normalization::Corpus),
            Err(Error::EmptyGroup(_))
        ));
        assert!(matches!(
            corpus_spectrum(&Manifest::default(), |_| true, &CorpusOptions::default()),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn zero_variance_is_numeric_error() {
        let z = psd(&StepSignal::new(10, 1, vec![0.0; 10]).unwrap()).unwrap();
        for mode in [Normalization::Corpus, Normalization::PerDoc] {
            let mut acc = CorpusAccumulator::new();
            acc.add("z", &z).unwrap();
            assert!(matches!(acc.finish("g", mode), Err(Error::Numeric(_))));
        }
    }

    #[test]
    fn per_doc_mode_integrates_to_one() {
        let mut acc = CorpusAccumulator::new();
        for i in 0..5 {
            acc.add(&i.to_string(), &psd(&random_signal(30, 2, i).scaled(i as f64 + 1.0)).unwrap()).unwrap();
        }
        let out = acc.finish("g", Normalization::PerDoc).unwrap();
        assert!((out.normalized.integral() - 1.0).abs() < 1e-9);
        for doc in &out.doc_spectra {
            assert!((rectangle_integral(doc) - 1.0).abs() < 1e-12);
        }
    }
}
