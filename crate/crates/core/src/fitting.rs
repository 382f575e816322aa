//! Power-law exponents by ordinary least squares on log10-log10 axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::{DocumentMeta, Layer, Manifest, ManifestEntry};
use crate::spectral::{corpus_spectrum_of, CorpusOptions, PowerSpectrum};

/// The 5/3 reference exponent.
pub const REFERENCE_EXPONENT: f64 = 5.0 / 3.0;

/// Relative half-width of the band counted by `frac_within_10pct`.
pub const REFERENCE_TOLERANCE: f64 = 0.1;

pub const MIN_FIT_BINS: usize = 8;

/// Inclusive range of normalized frequencies `f / f_max` used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { lo: 0.02, hi: 0.2 }
    }
}

impl FitWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::Window(format!("need 0 < lo < hi <= 1, got lo={lo} hi={hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, f: f64) -> bool {
        self.lo <= f && f <= self.hi
    }

    /// Indices of `bins` inside the window.
    pub fn select(&self, bins: &[f64]) -> Vec<usize> {
        bins.iter()
            .enumerate()
            .filter(|(_, &f)| self.contains(f))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Result of a straight-line least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ols {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub r2: f64,
    /// Zero variance in x or y; slope is reported as 0 and r2 as 0.
    pub degenerate: bool,
}

pub fn ols(x: &[f64], y: &[f64]) -> Ols {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let y_constant = y.iter().all(|&v| v == y[0]);
    if sxx == 0.0 || y_constant {
        return Ols {
            slope: 0.0,
            intercept: if y_constant { y[0] } else { my },
            stderr_slope: 0.0,
            r2: 0.0,
            degenerate: true,
        };
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum();
    let stderr_slope = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r2 = (1.0 - sse / syy).clamp(0.0, 1.0);
    Ols { slope, intercept, stderr_slope, r2, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub alpha: f64,
    /// log10 of the fitted power at f_norm = 1.
    pub intercept: f64,
    pub stderr_alpha: f64,
    pub r2: f64,
    pub n_bins: usize,
    pub window: FitWindow,
    pub degenerate: bool,
}

pub fn fit_power_law(bins: &[f64], values: &[f64], window: FitWindow) -> Result<PowerLawFit> {
    if bins.len() != values.len() {
        return Err(Error::Validation(format!(
            "{} frequencies but {} power values",
            bins.len(),
            values.len()
        )));
    }
    let idx = window.select(bins);
    if idx.len() < MIN_FIT_BINS {
        return Err(Error::Window(format!(
            "window [{}, {}] holds {} bins, need at least {MIN_FIT_BINS}",
            window.lo,
            window.hi,
            idx.len()
        )));
    }
    let bad: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| !(values[i] > 0.0 && values[i].is_finite()))
        .collect();
    if !bad.is_empty() {
        return Err(Error::FitDomain { bins: bad });
    }
    let x: Vec<f64> = idx.iter().map(|&i| bins[i].log10()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| values[i].log10()).collect();
    let fit = ols(&x, &y);
    Ok(PowerLawFit {
        alpha: fit.slope,
        intercept: fit.intercept,
        stderr_alpha: fit.stderr_slope,
        r2: fit.r2,
        n_bins: idx.len(),
        window,
        degenerate: fit.degenerate,
    })
}

pub fn within_reference_band(alpha: f64) -> bool {
    (alpha - REFERENCE_EXPONENT).abs() <= REFERENCE_TOLERANCE * REFERENCE_EXPONENT
}

/// Population mean and standard deviation; `(NaN, NaN)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionStats {
    /// Fitted exponent per dimension, `None` where the fit was not possible.
    pub per_dim_alpha: Vec<Option<f64>>,
    pub frac_within_10pct: f64,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    pub excluded_dims: usize,
}

/// Fits every dimension's spectrum on its own.
///
/// Dimensions whose power is non-positive inside the window are excluded and
/// counted; if none remain the call fails.
pub fn per_dimension_stats(spec: &PowerSpectrum, window: FitWindow) -> Result<DimensionStats> {
    let mut per_dim = Vec::with_capacity(spec.dim());
    let mut last_err = None;
    for j in 0..spec.dim() {
        match fit_power_law(spec.bins(), &spec.column(j), window) {
            Ok(fit) => per_dim.push(Some(fit.alpha)),
            Err(e @ Error::FitDomain { .. }) => {
                per_dim.push(None);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let fitted: Vec<f64> = per_dim.iter().flatten().copied().collect();
    if fitted.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Numeric("no dimensions to fit".into())));
    }
    let within = fitted.iter().filter(|&&a| within_reference_band(a)).count();
    let (alpha_mean, alpha_std) = mean_std(&fitted);
    Ok(DimensionStats {
        frac_within_10pct: within as f64 / fitted.len() as f64,
        alpha_mean,
        alpha_std,
        excluded_dims: per_dim.len() - fitted.len(),
        per_dim_alpha: per_dim,
    })
}

/// Across-document spread of exponents fitted to each document's spectrum.
///
/// Returns `(std, fitted_docs)`; documents whose fit fails are left out.
pub fn document_alpha_spread(bins: &[f64], doc_spectra: &[Vec<f64>], window: FitWindow) -> (f64, usize) {
    let alphas: Vec<f64> = doc_spectra
        .iter()
        .filter_map(|s| fit_power_law(bins, s, window).ok())
        .map(|f| f.alpha)
        .collect();
    if alphas.is_empty() {
        return (f64::NAN, 0);
    }
    (mean_std(&alphas).1, alphas.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPoint {
    pub layer: u32,
    pub fit: PowerLawFit,
    pub doc_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerSweep {
    /// Ascending by layer.
    pub points: Vec<LayerPoint>,
    pub warnings: Vec<String>,
}

/// Corpus spectrum and fit for every numeric layer in the manifest, restricted to `filter`.
pub fn layer_sweep(
    manifest: &Manifest,
    filter: impl Fn(&DocumentMeta) -> bool,
    window: FitWindow,
    opts: &CorpusOptions,
) -> Result<LayerSweep> {
    let mut layers: Vec<u32> = manifest
        .iter()
        .filter_map(|e| match e.meta.layer {
            Layer::Index(i) => Some(i),
            Layer::Static => None,
        })
        .collect();
    layers.sort_unstable();
    layers.dedup();

    let mut sweep = LayerSweep::default();
    for layer in layers {
        let entries: Vec<&ManifestEntry> = manifest
            .iter()
            .filter(|e| e.meta.layer == Layer::Index(layer) && filter(&e.meta))
            .collect();
        if entries.is_empty() {
            sweep.warnings.push(format!("layer {layer}: no documents after filtering, skipped"));
            continue;
        }
        let corpus = corpus_spectrum_of(&format!("layer {layer}"), &entries, opts)?;
        for s in &corpus.skipped {
            sweep.warnings.push(format!("layer {layer}: skipped {}: {}", s.doc_id, s.reason));
        }
        let fit = fit_power_law(&corpus.normalized.bins, &corpus.normalized.e_mean, window)?;
        sweep.points.push(LayerPoint { layer, fit, doc_count: corpus.normalized.doc_count });
    }
    if sweep.points.len() < 2 {
        return Err(Error::Usage(format!(
            "layer sweep needs at least 2 numeric layers with documents, found {}",
            sweep.points.len()
        )));
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::frequency_grid;
    use num::bigint::BigInt;
    use num::rational::BigRational;
    use num::{FromPrimitive, ToPrimitive, Zero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_validation() {
        assert!(FitWindow::new(0.0, 0.2).is_err());
        assert!(FitWindow::new(0.3, 0.2).is_err());
        assert!(FitWindow::new(0.1, 1.1).is_err());
        assert!(FitWindow::new(0.1, 1.0).is_ok());
        assert_eq!(FitWindow::default(), FitWindow { lo: 0.02, hi: 0.2 });
    }

    #[test]
    fn default_window_on_paper_grid() {
        let bins = frequency_grid(1198);
        let idx = FitWindow::default().select(&bins);
        // k = 12..=119 of K = 599
        assert_eq!(idx.first(), Some(&11));
        assert_eq!(idx.last(), Some(&118));
        assert_eq!(idx.len(), 108);
    }

    #[test]
    fn window_endpoints_inclusive() {
        let bins: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let w = FitWindow::new(0.2, 0.9).unwrap();
        assert_eq!(w.select(&bins), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn constant_spectrum_is_degenerate_zero() {
        let bins = frequency_grid(1198);
        let values = vec![0.37; bins.len()];
        let fit = fit_power_law(&bins, &values, FitWindow::default()).unwrap();
        assert_eq!(fit.alpha, 0.0);
        assert_eq!(fit.r2, 0.0);
        assert!(fit.degenerate);
    }

    #[test]
    fn exact_square_law() {
        let bins = frequency_grid(1198);
        let values: Vec<f64> = bins.iter().map(|f| f * f).collect();
        let fit = fit_power_law(&bins, &values, FitWindow::default()).unwrap();
        assert!((fit.alpha - 2.0).abs() <= 1e-12);
        assert!((fit.r2 - 1.0).abs() <= 1e-12);
        assert!(!fit.degenerate);
    }

    #[test]
    fn affine_invariance_of_slope() {
        let bins = frequency_grid(400);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let values: Vec<f64> = bins.iter().map(|f| f.powf(1.3) * rng.gen_range(0.5..2.0)).collect();
        let scaled: Vec<f64> = values.iter().map(|v| v * 123.4).collect();
        let w = FitWindow::default();
        let a = fit_power_law(&bins, &values, w).unwrap();
        let b = fit_power_law(&bins, &scaled, w).unwrap();
        assert!((a.alpha - b.alpha).abs() <= 1e-12);
        assert!((b.intercept - a.intercept - 123.4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn subwindow_invariance_for_exact_law() {
        let bins = frequency_grid(1000);
        let values: Vec<f64> = bins.iter().map(|f| 3.0 * f.powf(5.0 / 3.0)).collect();
        for (lo, hi) in [(0.02, 0.2), (0.05, 0.1), (0.3, 0.9), (0.01, 1.0)] {
            let fit = fit_power_law(&bins, &values, FitWindow::new(lo, hi).unwrap()).unwrap();
            assert!((fit.alpha - 5.0 / 3.0).abs() < 1e-12, "{lo}-{hi}");
        }
    }

    #[test]
    fn fit_domain_and_window_errors() {
        let bins = frequency_grid(200);
        let mut values: Vec<f64> = bins.iter().map(|f| f * f).collect();
        values[5] = 0.0;
        values[7] = -1.0;
        match fit_power_law(&bins, &values, FitWindow::default()) {
            Err(Error::FitDomain { bins }) => assert_eq!(bins, vec![5, 7]),
            other => panic!("{other:?}"),
        }
        let short = frequency_grid(40);
        let v = vec![1.0; short.len()];
        assert!(matches!(fit_power_law(&short, &v, FitWindow::default()), Err(Error::Window(_))));
    }

    #[test]
    fn band_is_closed() {
        assert!(within_reference_band(REFERENCE_EXPONENT * 1.1 - 1e-15));
        assert!(within_reference_band(REFERENCE_EXPONENT));
        assert!(!within_reference_band(REFERENCE_EXPONENT * 1.11));
        assert!(!within_reference_band(1.49));
    }

    fn exact(v: f64) -> BigRational {
        BigRational::from_f64(v).unwrap()
    }

    // Slope and intercept in exact rational arithmetic from the closed-form normal equations.
    fn rational_ols(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = BigRational::from_integer(BigInt::from(x.len()));
        let (mut sx, mut sy, mut sxx, mut sxy) =
            (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
        for (a, b) in x.iter().zip(y) {
            let (a, b) = (exact(*a), exact(*b));
            sx += &a;
            sy += &b;
            sxx += &a * &a;
            sxy += &a * &b;
        }
        let slope = (&n * &sxy - &sx * &sy) / (&n * &sxx - &sx * &sx);
        let intercept = (&sy - &slope * &sx) / &n;
        (slope.to_f64().unwrap(), intercept.to_f64().unwrap())
    }

    #[test]
    fn ols_matches_exact_rational_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let n = rng.gen_range(3..40);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..1.0)).collect();
            let slope = rng.gen_range(-4.0..4.0);
            let y: Vec<f64> = x.iter().map(|v| slope * v + rng.gen_range(-0.5..0.5)).collect();
            let fit = ols(&x, &y);
            let (s, i) = rational_ols(&x, &y);
            assert!((fit.slope - s).abs() <= 1e-10 * s.abs().max(1e-300), "{} vs {s}", fit.slope);
            assert!((fit.intercept - i).abs() <= 1e-10 * i.abs().max(1e-3));
        }
    }

    #[test]
    fn ols_stderr_and_r2_reference() {
        // y = 1 + 2x with residuals (0.1, -0.1, -0.1, 0.1) at x = 0..3:
        // sxx = 5, sse = 0.04, stderr = sqrt(0.04/2/5), syy = 20.04
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.1, 2.9, 4.9, 7.1];
        let fit = ols(&x, &y);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.stderr_slope - (0.04f64 / 2.0 / 5.0).sqrt()).abs() < 1e-12);
        let syy: f64 = y.iter().map(|v| (v - 4.0) * (v - 4.0)).sum();
        assert!((fit.r2 - (1.0 - 0.04 / syy)).abs() < 1e-12);
    }

    #[test]
    fn identical_dimensions_have_zero_spread() {
        use crate::signal::StepSignal;
        use crate::spectral::psd;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let col: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = col.iter().flat_map(|&v| [v, v, v]).collect();
        let spec = psd(&StepSignal::new(400, 3, values).unwrap()).unwrap();
        let stats = per_dimension_stats(&spec, FitWindow::default()).unwrap();
        assert_eq!(stats.alpha_std, 0.0);
        assert!(stats.frac_within_10pct == 0.0 || stats.frac_within_10pct == 1.0);
        assert_eq!(stats.excluded_dims, 0);
    }

    #[test]
    fn zero_dimension_is_excluded() {
        use crate::signal::StepSignal;
        use crate::spectral::psd;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values: Vec<f64> = (0..400).flat_map(|_| [rng.gen_range(-1.0..1.0), 0.0]).collect();
        let spec = psd(&StepSignal::new(400, 2, values).unwrap()).unwrap();
        let stats = per_dimension_stats(&spec, FitWindow::default()).unwrap();
        assert_eq!(stats.excluded_dims, 1);
        assert_eq!(stats.per_dim_alpha[1], None);

        let zeros = psd(&StepSignal::new(400, 2, vec![0.0; 800]).unwrap()).unwrap();
        assert!(matches!(
            per_dimension_stats(&zeros, FitWindow::default()),
            Err(Error::FitDomain { .. })
        ));
    }
}
