//! Synthetic labelled absorbance spectra and their on-disk layout.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::spectra::{
    absorbance_unchecked, add_noise_sigma, mix_spectra, MaterialLabel, SpectralLibrary, Spectrum,
    SpectrumRole, WavelengthGrid,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpectrum {
    pub absorbance: Spectrum,
    pub label: MaterialLabel,
    pub snr: f64,
    /// Background contaminant mixed into the sample, if any.
    pub interferant: Option<MaterialLabel>,
    pub interferant_weight: f64,
}

impl LabeledSpectrum {
    pub fn is_interferant(&self) -> bool {
        self.interferant.is_some()
    }
}

/// Knobs for synthetic dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// Clean rows per (material, SNR); the same number of contaminated rows
    /// is generated alongside.
    pub per_class: usize,
    pub snrs: Vec<f64>,
    pub interferant_weights: Vec<f64>,
    pub max_sand_admixture: f64,
    /// Multiplicative illumination gain is log-uniform in `[1/g, g]`.
    pub gain_spread: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            per_class: 10,
            snrs: vec![500.0, 2000.0, 15000.0],
            interferant_weights: vec![0.1, 0.2, 0.3],
            max_sand_admixture: 0.1,
            gain_spread: 2.0,
            seed: 1,
        }
    }
}

/// One synthetic measurement: the material (optionally diluted with sand and
/// an interferant) against a sand reference, both noisy at `snr`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_sample<R: Rng + ?Sized>(
    library: &SpectralLibrary,
    grid: &Arc<WavelengthGrid>,
    material: MaterialLabel,
    interferant: Option<(MaterialLabel, f64)>,
    sand_admixture: f64,
    gain: f64,
    snr: f64,
    rng: &mut R,
) -> Result<LabeledSpectrum, ClassifierError> {
    let target = library.signature(material).synthesize(grid);
    let sand = library.signature(MaterialLabel::Sand).synthesize(grid);
    let mut signal = mix_spectra(&[(&target, 1.0 - sand_admixture), (&sand, sand_admixture)])?;
    if let Some((m, w)) = interferant {
        let i = library.signature(m).synthesize(grid);
        signal = mix_spectra(&[(&signal, 1.0 - w), (&i, w)])?;
    }
    let signal = signal.scaled(gain);
    let dark = Spectrum::constant(grid.clone(), 0.0, SpectrumRole::Dark);
    let sample = add_noise_sigma(&signal, signal.mean() / snr, rng);
    let reference =
        add_noise_sigma(&sand, sand.mean() / snr, rng).with_role(SpectrumRole::Reference);
    let a = absorbance_unchecked(&sample, &dark, &reference)?;
    Ok(LabeledSpectrum {
        absorbance: a.spectrum,
        label: material,
        snr,
        interferant: interferant.map(|(m, _)| m),
        interferant_weight: interferant.map_or(0.0, |(_, w)| w),
    })
}

/// Rows for every target material at every SNR, half clean and half
/// contaminated with water or plant matter.
pub fn synthesize_dataset(
    library: &SpectralLibrary,
    grid: &Arc<WavelengthGrid>,
    spec: &DatasetSpec,
) -> Result<Vec<LabeledSpectrum>, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ln_g = spec.gain_spread.max(1.0).ln();
    let mut rows = Vec::new();
    for material in MaterialLabel::TARGETS {
        for &snr in &spec.snrs {
            for k in 0..2 * spec.per_class {
                let interferant = if k < spec.per_class || spec.interferant_weights.is_empty() {
                    None
                } else {
                    let m = MaterialLabel::INTERFERANTS[k % 2];
                    let w = spec.interferant_weights
                        [rng.random_range(0..spec.interferant_weights.len())];
                    Some((m, w))
                };
                let sand = rng.random_range(0.0..=spec.max_sand_admixture);
                let gain = if ln_g > 0.0 {
                    rng.random_range(-ln_g..=ln_g).exp()
                } else {
                    1.0
                };
                rows.push(synthesize_sample(
                    library,
                    grid,
                    material,
                    interferant,
                    sand,
                    gain,
                    snr,
                    &mut rng,
                )?);
            }
        }
    }
    Ok(rows)
}

/// Noise-free, unmixed absorbance of every target material.
pub fn library_rows(
    library: &SpectralLibrary,
    grid: &Arc<WavelengthGrid>,
) -> Result<Vec<LabeledSpectrum>, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    MaterialLabel::TARGETS
        .iter()
        .map(|&m| synthesize_sample(library, grid, m, None, 0.0, 1.0, f64::INFINITY, &mut rng))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    grid_nm: Vec<f64>,
    rows: Vec<ManifestRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    file: String,
    label: MaterialLabel,
    /// Absent for noiseless rows.
    snr: Option<f64>,
    interferant: Option<MaterialLabel>,
    interferant_weight: f64,
}

const MANIFEST_VERSION: u32 = 1;

/// Writes `manifest.json` plus one `NNNNN.csv` per row into `dir`.
pub fn write_dataset(dir: &Path, rows: &[LabeledSpectrum]) -> Result<(), ClassifierError> {
    fs::create_dir_all(dir)?;
    let grid_nm = rows
        .first()
        .map(|r| r.absorbance.grid().points().to_vec())
        .unwrap_or_default();
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        grid_nm,
        rows: Vec::with_capacity(rows.len()),
    };
    for (i, row) in rows.iter().enumerate() {
        let file = format!("{i:05}.csv");
        row.absorbance
            .write_csv(fs::File::create(dir.join(&file))?)?;
        manifest.rows.push(ManifestRow {
            file,
            label: row.label,
            snr: row.snr.is_finite().then_some(row.snr),
            interferant: row.interferant,
            interferant_weight: row.interferant_weight,
        });
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledSpectrum>, ClassifierError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(ClassifierError::Format(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    let grid = Arc::new(WavelengthGrid::new(manifest.grid_nm)?);
    manifest
        .rows
        .into_iter()
        .map(|r| {
            let f = fs::File::open(dir.join(&r.file))?;
            Ok(LabeledSpectrum {
                absorbance: Spectrum::read_csv(f, grid.clone(), SpectrumRole::Absorbance)?,
                label: r.label,
                snr: r.snr.unwrap_or(f64::INFINITY),
                interferant: r.interferant,
                interferant_weight: r.interferant_weight,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shape_and_determinism() {
        let lib = SpectralLibrary::default_nir();
        let grid = Arc::new(WavelengthGrid::default_nir());
        let spec = DatasetSpec {
            per_class: 2,
            ..DatasetSpec::default()
        };
        let a = synthesize_dataset(&lib, &grid, &spec).unwrap();
        let b = synthesize_dataset(&lib, &grid, &spec).unwrap();
        assert_eq!(a.len(), 13 * 3 * 4);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|r| r.is_interferant()).count(), 13 * 3 * 2);
    }

    #[test]
    fn sand_row_is_near_zero() {
        let lib = SpectralLibrary::default_nir();
        let grid = Arc::new(WavelengthGrid::default_nir());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = synthesize_sample(
            &lib,
            &grid,
            MaterialLabel::Sand,
            None,
            0.0,
            1.0,
            f64::INFINITY,
            &mut rng,
        )
        .unwrap();
        assert!(r.absorbance.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn directory_round_trip() {
        let lib = SpectralLibrary::default_nir();
        let grid = Arc::new(WavelengthGrid::default_nir());
        let rows = library_rows(&lib, &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &rows).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.absorbance.values(), b.absorbance.values());
        }
    }
}
