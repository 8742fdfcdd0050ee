//! NIR spectra: wavelength grid, measured spectra, absorbance with masking,
//! mixing and noise models, CSV persistence.

mod library;

pub use library::{Band, MaterialLabel, MaterialSignature, SpectralLibrary};

use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest fraction of masked points an absorbance may carry and still count
/// as a measurement.
pub const MAX_MASKED_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("spectra are not on the same wavelength grid")]
    GridMismatch,
    #[error("spectrum has {got} samples, grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mix weights must be >= 0 and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("nothing to mix")]
    EmptyMix,
    #[error("invalid measurement: {masked} of {total} points masked")]
    InvalidMeasurement { masked: usize, total: usize },
    #[error("measurement SNR {snr:.1} below required {min:.1}")]
    LowSnr { snr: f64, min: f64 },
    #[error("invalid spectral library: {0}")]
    InvalidLibrary(String),
    #[error("snr must be positive, got {0}")]
    BadSnr(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Strictly increasing wavelengths (nm) inside the 900–1700 nm detector band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    points: Vec<f64>,
}

impl WavelengthGrid {
    pub const MIN_NM: f64 = 900.0;
    pub const MAX_NM: f64 = 1700.0;

    pub fn new(points: Vec<f64>) -> Result<Self, SpectraError> {
        if points.len() < 2 {
            return Err(SpectraError::InvalidGrid("need at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectraError::InvalidGrid("not strictly increasing".into()));
        }
        if points[0] < Self::MIN_NM || points[points.len() - 1] > Self::MAX_NM {
            return Err(SpectraError::InvalidGrid(format!(
                "points must lie in [{}, {}] nm",
                Self::MIN_NM,
                Self::MAX_NM
            )));
        }
        Ok(Self { points })
    }

    pub fn uniform(start_nm: f64, end_nm: f64, n: usize) -> Result<Self, SpectraError> {
        if n < 2 {
            return Err(SpectraError::InvalidGrid("need at least two points".into()));
        }
        let step = (end_nm - start_nm) / (n - 1) as f64;
        Self::new((0..n).map(|i| start_nm + step * i as f64).collect())
    }

    /// 512 points over 900–1700 nm.
    pub fn default_nir() -> Self {
        Self::uniform(Self::MIN_NM, Self::MAX_NM, 512).expect("static grid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Mean spacing between adjacent points (nm).
    pub fn spacing(&self) -> f64 {
        (self.last() - self.first()) / (self.len() - 1) as f64
    }

    pub fn nearest_index(&self, nm: f64) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (p - nm).abs() < (self.points[best] - nm).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumRole {
    Dark,
    Reference,
    Sample,
    Absorbance,
}

/// Intensity samples on a shared wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Arc<WavelengthGrid>,
    values: Vec<f64>,
    role: SpectrumRole,
}

impl Spectrum {
    pub fn new(
        grid: Arc<WavelengthGrid>,
        values: Vec<f64>,
        role: SpectrumRole,
    ) -> Result<Self, SpectraError> {
        if values.len() != grid.len() {
            return Err(SpectraError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values, role })
    }

    pub fn constant(grid: Arc<WavelengthGrid>, value: f64, role: SpectrumRole) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
            role,
        }
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> SpectrumRole {
        self.role
    }

    pub fn with_role(mut self, role: SpectrumRole) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Pointwise map keeping grid and role.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Spectrum {
        Spectrum {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            role: self.role,
        }
    }

    pub fn scaled(&self, k: f64) -> Spectrum {
        self.map(|v| v * k)
    }

    pub fn offset(&self, k: f64) -> Spectrum {
        self.map(|v| v + k)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SpectraError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["wavelength_nm", "intensity"])?;
        for (nm, v) in self.grid.points().iter().zip(&self.values) {
            out.write_record([nm.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a two-column `wavelength_nm,intensity` file. The wavelengths
    /// must match `grid` exactly.
    pub fn read_csv<R: Read>(
        r: R,
        grid: Arc<WavelengthGrid>,
        role: SpectrumRole,
    ) -> Result<Spectrum, SpectraError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "wavelength_nm" || &headers[1] != "intensity" {
            return Err(SpectraError::InvalidGrid(format!(
                "unexpected csv header {headers:?}"
            )));
        }
        let mut nms = Vec::with_capacity(grid.len());
        let mut values = Vec::with_capacity(grid.len());
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (nm, v) = rec?;
            nms.push(nm);
            values.push(v);
        }
        if nms.as_slice() != grid.points() {
            return Err(SpectraError::GridMismatch);
        }
        Spectrum::new(grid, values, role)
    }
}

/// `σ = mean(intensities) / snr`. An infinite `snr` returns the input.
pub fn add_noise(s: &Spectrum, snr: f64, seed: u64) -> Result<Spectrum, SpectraError> {
    if !(snr > 0.0) {
        return Err(SpectraError::BadSnr(snr));
    }
    if snr.is_infinite() {
        return Ok(s.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise_sigma(s, s.mean() / snr, &mut rng))
}

/// Zero-mean Gaussian noise with a fixed σ. Non-absorbance results are
/// clipped at zero.
pub fn add_noise_sigma<R: rand::Rng + ?Sized>(s: &Spectrum, sigma: f64, rng: &mut R) -> Spectrum {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return s.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let clip = s.role != SpectrumRole::Absorbance;
    let values = s
        .values
        .iter()
        .map(|&v| {
            let n = v + normal.sample(rng);
            if clip {
                n.max(0.0)
            } else {
                n
            }
        })
        .collect();
    Spectrum {
        grid: s.grid.clone(),
        values,
        role: s.role,
    }
}

/// Convex combination of intensities on a shared grid.
pub fn mix_spectra(parts: &[(&Spectrum, f64)]) -> Result<Spectrum, SpectraError> {
    let (first, _) = parts.first().ok_or(SpectraError::EmptyMix)?;
    let sum: f64 = parts.iter().map(|(_, w)| w).sum();
    if parts.iter().any(|(_, w)| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SpectraError::BadWeights(sum));
    }
    let mut values = vec![0.0; first.len()];
    for (s, w) in parts {
        if !first.same_grid(s) {
            return Err(SpectraError::GridMismatch);
        }
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += w * v;
        }
    }
    Ok(Spectrum {
        grid: first.grid.clone(),
        values,
        role: first.role,
    })
}

/// Absorbance with a per-point validity mask. Masked points hold 0.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorbance {
    pub spectrum: Spectrum,
    pub masked: Vec<bool>,
}

impl Absorbance {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.masked.len() as f64
    }

    /// RMS of the valid points about their mean.
    pub fn band_energy(&self) -> f64 {
        let valid: Vec<f64> = self
            .spectrum
            .values()
            .iter()
            .zip(&self.masked)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| *v)
            .collect();
        if valid.is_empty() {
            return 0.0;
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        (valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / valid.len() as f64).sqrt()
    }
}

/// Pointwise `A = -log10((sample - dark) / (reference - dark))`.
///
/// Points with a non-positive numerator or denominator are masked; more than
/// [`MAX_MASKED_FRACTION`] masked points makes the whole spectrum invalid.
pub fn absorbance(
    sample: &Spectrum,
    dark: &Spectrum,
    reference: &Spectrum,
) -> Result<Absorbance, SpectraError> {
    let a = absorbance_unchecked(sample, dark, reference)?;
    let masked = a.masked_count();
    if masked as f64 > MAX_MASKED_FRACTION * a.masked.len() as f64 {
        return Err(SpectraError::InvalidMeasurement {
            masked,
            total: a.masked.len(),
        });
    }
    Ok(a)
}

/// Same as [`absorbance`] without the whole-spectrum validity gate.
pub fn absorbance_unchecked(
    sample: &Spectrum,
    dark: &Spectrum,
    reference: &Spectrum,
) -> Result<Absorbance, SpectraError> {
    if !sample.same_grid(dark) || !sample.same_grid(reference) {
        return Err(SpectraError::GridMismatch);
    }
    let n = sample.len();
    let mut values = Vec::with_capacity(n);
    let mut masked = Vec::with_capacity(n);
    for i in 0..n {
        let num = sample.values[i] - dark.values[i];
        let den = reference.values[i] - dark.values[i];
        if num > 0.0 && den > 0.0 {
            values.push(-(num / den).log10());
            masked.push(false);
        } else {
            values.push(0.0);
            masked.push(true);
        }
    }
    Ok(Absorbance {
        spectrum: Spectrum {
            grid: sample.grid.clone(),
            values,
            role: SpectrumRole::Absorbance,
        },
        masked,
    })
}

/// Signal-to-noise estimate from a flat dark frame: mean dark-corrected
/// signal over the dark frame's standard deviation.
pub fn estimate_snr(sample: &Spectrum, dark: &Spectrum) -> f64 {
    let n = dark.len() as f64;
    let dark_mean = dark.mean();
    let dark_var = dark
        .values
        .iter()
        .map(|v| (v - dark_mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let signal = sample.mean() - dark_mean;
    if dark_var <= 0.0 {
        return if signal > 0.0 { f64::INFINITY } else { 0.0 };
    }
    signal / dark_var.sqrt()
}

/// Acceptance thresholds for a sample measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityPolicy {
    pub max_masked_fraction: f64,
    /// Lowest dark-referenced SNR at which a sample counts as a measurement.
    pub min_snr: f64,
}

impl Default for ValidityPolicy {
    fn default() -> Self {
        Self {
            max_masked_fraction: MAX_MASKED_FRACTION,
            min_snr: 500.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub absorbance: Absorbance,
    pub snr: f64,
}

/// Absorbance plus SNR gate. Both the masking rule and the SNR floor must
/// pass for the measurement to be returned.
pub fn assess_measurement(
    sample: &Spectrum,
    dark: &Spectrum,
    reference: &Spectrum,
    policy: &ValidityPolicy,
) -> Result<Measurement, SpectraError> {
    let a = absorbance_unchecked(sample, dark, reference)?;
    let masked = a.masked_count();
    if masked as f64 > policy.max_masked_fraction * a.masked.len() as f64 {
        return Err(SpectraError::InvalidMeasurement {
            masked,
            total: a.masked.len(),
        });
    }
    let snr = estimate_snr(sample, dark);
    if !(snr >= policy.min_snr) {
        return Err(SpectraError::LowSnr {
            snr,
            min: policy.min_snr,
        });
    }
    Ok(Measurement { absorbance: a, snr })
}

/// Least-squares gain of a signature's band profile inside a dark-corrected
/// sample: fits `sample - dark ≈ a - b·profile` and returns `b`. A fully lit,
/// fully covered, noiseless sample of the signature gives `b = 1`.
pub fn band_gain(sample: &Spectrum, dark: &Spectrum, signature: &MaterialSignature) -> f64 {
    let profile = signature.band_profile(sample.grid());
    let y: Vec<f64> = sample
        .values
        .iter()
        .zip(&dark.values)
        .map(|(s, d)| s - d)
        .collect();
    let n = y.len() as f64;
    let mean_p = profile.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (p, v) in profile.iter().zip(&y) {
        sxy += (p - mean_p) * (v - mean_y);
        sxx += (p - mean_p).powi(2);
    }
    if sxx == 0.0 {
        0.0
    } else {
        -sxy / sxx
    }
}

/// Best-fitting library material and its fill fraction inside a footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub material: MaterialLabel,
    /// Fraction of the footprint covered by `material` (1 = fully covered).
    pub coverage: f64,
    /// Sample-to-reference illumination ratio.
    pub scale: f64,
    pub rss: f64,
}

/// Fits the dark-corrected ratio `sample / reference ≈ a + b·(S_m / S_sand - 1)`
/// for each candidate material `m` and returns the best fit with
/// coverage `b / a`.
pub fn estimate_coverage(
    sample: &Spectrum,
    sample_dark: &Spectrum,
    reference: &Spectrum,
    reference_dark: &Spectrum,
    library: &SpectralLibrary,
    candidates: &[MaterialLabel],
) -> Option<CoverageEstimate> {
    let grid = sample.grid();
    let sand = library.get(MaterialLabel::Sand)?.synthesize(grid);
    let mut ratio = Vec::with_capacity(sample.len());
    let mut keep = Vec::with_capacity(sample.len());
    for i in 0..sample.len() {
        let num = sample.values[i] - sample_dark.values[i];
        let den = reference.values[i] - reference_dark.values[i];
        if num > 0.0 && den > 0.0 && sand.values[i] > 0.0 {
            ratio.push(num / den);
            keep.push(i);
        }
    }
    if keep.len() < 3 {
        return None;
    }
    let n = keep.len() as f64;
    let mean_r = ratio.iter().sum::<f64>() / n;
    let mut best: Option<CoverageEstimate> = None;
    for &m in candidates {
        let Some(sig) = library.get(m) else { continue };
        let s = sig.synthesize(grid);
        let u: Vec<f64> = keep
            .iter()
            .map(|&i| s.values[i] / sand.values[i] - 1.0)
            .collect();
        let mean_u = u.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (x, y) in u.iter().zip(&ratio) {
            sxy += (x - mean_u) * (y - mean_r);
            sxx += (x - mean_u).powi(2);
        }
        if sxx <= 0.0 {
            continue;
        }
        let b = sxy / sxx;
        let a = mean_r - b * mean_u;
        let rss: f64 = u
            .iter()
            .zip(&ratio)
            .map(|(x, y)| (y - a - b * x).powi(2))
            .sum();
        if best.is_none_or(|e| rss < e.rss) && a > 0.0 {
            best = Some(CoverageEstimate {
                material: m,
                coverage: b / a,
                scale: a,
                rss,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<WavelengthGrid> {
        Arc::new(WavelengthGrid::default_nir())
    }

    fn ramp(g: &Arc<WavelengthGrid>, lo: f64, hi: f64, role: SpectrumRole) -> Spectrum {
        let n = g.len();
        let vals = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        Spectrum::new(g.clone(), vals, role).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(WavelengthGrid::new(vec![900.0, 900.0]).is_err());
        assert!(WavelengthGrid::new(vec![850.0, 1000.0]).is_err());
        assert!(WavelengthGrid::new(vec![1000.0, 1800.0]).is_err());
        let g = WavelengthGrid::default_nir();
        assert_eq!(g.len(), 512);
        assert_eq!(g.first(), 900.0);
        assert!((g.last() - 1700.0).abs() < 1e-9);
    }

    #[test]
    fn identical_sample_and_reference_give_zero() {
        let g = grid();
        let dark = Spectrum::constant(g.clone(), 100.0, SpectrumRole::Dark);
        let r = ramp(&g, 500.0, 900.0, SpectrumRole::Reference);
        let s = r.clone().with_role(SpectrumRole::Sample);
        let a = absorbance(&s, &dark, &r).unwrap();
        assert_eq!(a.masked_count(), 0);
        assert!(a.spectrum.values().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn tenth_of_reference_gives_one() {
        let g = grid();
        let dark = ramp(&g, 10.0, 50.0, SpectrumRole::Dark);
        let r = ramp(&g, 500.0, 900.0, SpectrumRole::Reference);
        let s = Spectrum::new(
            g.clone(),
            r.values()
                .iter()
                .zip(dark.values())
                .map(|(rv, dv)| dv + 0.1 * (rv - dv))
                .collect(),
            SpectrumRole::Sample,
        )
        .unwrap();
        let a = absorbance(&s, &dark, &r).unwrap();
        assert!(a.spectrum.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn sample_equal_to_dark_is_invalid() {
        let g = grid();
        let dark = Spectrum::constant(g.clone(), 100.0, SpectrumRole::Dark);
        let r = Spectrum::constant(g.clone(), 800.0, SpectrumRole::Reference);
        let s = dark.clone().with_role(SpectrumRole::Sample);
        let a = absorbance_unchecked(&s, &dark, &r).unwrap();
        assert_eq!(a.masked_fraction(), 1.0);
        assert!(matches!(
            absorbance(&s, &dark, &r),
            Err(SpectraError::InvalidMeasurement { .. })
        ));
    }

    #[test]
    fn masking_threshold_is_twenty_percent() {
        let g = grid();
        let n = g.len();
        let dark = Spectrum::constant(g.clone(), 0.0, SpectrumRole::Dark);
        let r = Spectrum::constant(g.clone(), 1.0, SpectrumRole::Reference);
        let at_limit = (0.2 * n as f64).floor() as usize;
        let mk = |bad: usize| {
            let v = (0..n).map(|i| if i < bad { -1.0 } else { 0.5 }).collect();
            Spectrum::new(g.clone(), v, SpectrumRole::Sample).unwrap()
        };
        assert!(absorbance(&mk(at_limit), &dark, &r).is_ok());
        assert!(absorbance(&mk(at_limit + 1), &dark, &r).is_err());
        // a non-positive denominator masks too
        let mut rv = vec![1.0; n];
        rv[3] = 0.0;
        let r0 = Spectrum::new(g.clone(), rv, SpectrumRole::Reference).unwrap();
        let a = absorbance(&mk(0), &dark, &r0).unwrap();
        assert!(a.masked[3]);
        assert_eq!(a.spectrum.values()[3], 0.0);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g1 = grid();
        let g2 = Arc::new(WavelengthGrid::uniform(900.0, 1700.0, 256).unwrap());
        let a = Spectrum::constant(g1, 1.0, SpectrumRole::Sample);
        let b = Spectrum::constant(g2, 1.0, SpectrumRole::Sample);
        assert!(matches!(
            absorbance(&a, &a, &b),
            Err(SpectraError::GridMismatch)
        ));
        assert!(mix_spectra(&[(&a, 0.5), (&b, 0.5)]).is_err());
    }

    #[test]
    fn mixing_rules() {
        let g = grid();
        let a = Spectrum::constant(g.clone(), 2.0, SpectrumRole::Sample);
        let b = Spectrum::constant(g.clone(), 6.0, SpectrumRole::Sample);
        assert_eq!(mix_spectra(&[(&a, 1.0)]).unwrap(), a);
        let m = mix_spectra(&[(&a, 0.5), (&b, 0.5)]).unwrap();
        assert!(m.values().iter().all(|v| *v == 4.0));
        assert!(matches!(
            mix_spectra(&[(&a, 0.5), (&b, 0.6)]),
            Err(SpectraError::BadWeights(_))
        ));
        assert!(mix_spectra(&[(&a, -0.5), (&b, 1.5)]).is_err());
        assert!(matches!(mix_spectra(&[]), Err(SpectraError::EmptyMix)));
    }

    #[test]
    fn absorbance_of_mix_differs_from_mix_of_absorbance() {
        let g = grid();
        let dark = Spectrum::constant(g.clone(), 0.0, SpectrumRole::Dark);
        let r = Spectrum::constant(g.clone(), 1000.0, SpectrumRole::Reference);
        let a = ramp(&g, 100.0, 900.0, SpectrumRole::Sample);
        let b = ramp(&g, 800.0, 200.0, SpectrumRole::Sample);
        let mixed = mix_spectra(&[(&a, 0.5), (&b, 0.5)]).unwrap();
        let a_of_mix = absorbance(&mixed, &dark, &r).unwrap();
        let aa = absorbance(&a, &dark, &r).unwrap().spectrum;
        let ab = absorbance(&b, &dark, &r).unwrap().spectrum;
        let mix_of_a = mix_spectra(&[(&aa, 0.5), (&ab, 0.5)]).unwrap();
        let max_diff = a_of_mix
            .spectrum
            .values()
            .iter()
            .zip(mix_of_a.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-3, "max diff {max_diff}");
    }

    #[test]
    fn infinite_snr_is_identity() {
        let g = grid();
        let s = ramp(&g, 100.0, 900.0, SpectrumRole::Sample);
        assert_eq!(add_noise(&s, f64::INFINITY, 7).unwrap(), s);
        assert!(add_noise(&s, 0.0, 7).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let g = grid();
        let s = ramp(&g, 100.0, 900.0, SpectrumRole::Sample);
        let a = add_noise(&s, 200.0, 42).unwrap();
        let b = add_noise(&s, 200.0, 42).unwrap();
        let c = add_noise(&s, 200.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_sigma_matches_snr() {
        // 10k draws at SNR 15000 (≈20 spectra of 512 points)
        let g = grid();
        let s = ramp(&g, 600.0, 1000.0, SpectrumRole::Sample);
        let expected = s.mean() / 15000.0;
        let mut resid = Vec::new();
        for seed in 0..20 {
            let n = add_noise(&s, 15000.0, seed).unwrap();
            resid.extend(n.values().iter().zip(s.values()).map(|(a, b)| a - b));
        }
        assert!(resid.len() >= 10_000);
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd =
            (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
        assert!(
            (sd / expected - 1.0).abs() < 0.1,
            "sd {sd} expected {expected}"
        );
    }

    #[test]
    fn snr_estimate_tracks_noise_level() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dark = add_noise_sigma(
            &Spectrum::constant(g.clone(), 100.0, SpectrumRole::Dark),
            0.1,
            &mut rng,
        );
        let sample = Spectrum::constant(g.clone(), 1100.0, SpectrumRole::Sample);
        let snr = estimate_snr(&sample, &dark);
        assert!((snr / 10_000.0 - 1.0).abs() < 0.1, "{snr}");
    }

    #[test]
    fn csv_round_trip() {
        let g = grid();
        let s = ramp(&g, 0.1, 0.9, SpectrumRole::Sample);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("wavelength_nm,intensity\n"));
        let back = Spectrum::read_csv(buf.as_slice(), g, SpectrumRole::Sample).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn band_gain_recovers_scale() {
        let grid = Arc::new(WavelengthGrid::default_nir());
        let lib = SpectralLibrary::default_nir();
        let sig = lib.signature(MaterialLabel::Pet);
        let dark = Spectrum::constant(grid.clone(), 100.0, SpectrumRole::Dark);
        for g in [1.0, 0.4, 0.05] {
            let sample = sig.synthesize(&grid).scaled(g).offset(100.0);
            assert!((band_gain(&sample, &dark, sig) - g).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_of_known_mixture() {
        let grid = Arc::new(WavelengthGrid::default_nir());
        let lib = SpectralLibrary::default_nir();
        let pp = lib.signature(MaterialLabel::Pp).synthesize(&grid);
        let sand = lib.signature(MaterialLabel::Sand).synthesize(&grid);
        let zero = Spectrum::constant(grid.clone(), 0.0, SpectrumRole::Dark);
        for f in [1.0, 0.7, 0.2] {
            let mix = mix_spectra(&[(&pp, f), (&sand, 1.0 - f)])
                .unwrap()
                .scaled(0.8);
            let e = estimate_coverage(&mix, &zero, &sand, &zero, &lib, &MaterialLabel::TARGETS)
                .unwrap();
            assert_eq!(e.material, MaterialLabel::Pp);
            assert!((e.coverage - f).abs() < 1e-9, "{f} -> {}", e.coverage);
            assert!((e.scale - 0.8).abs() < 1e-9);
        }
    }
}
