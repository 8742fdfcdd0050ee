//! Synthetic overtone-band library.
//!
//! Band positions are loosely placed near the usual C–H, N–H and O–H overtone
//! regions so that materials look different in the way real polymers do, but
//! they are invented values: nothing downstream should be read as chemistry.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{SpectraError, Spectrum, SpectrumRole, WavelengthGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MaterialLabel {
    #[serde(rename = "PP")]
    Pp,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "PVC")]
    Pvc,
    #[serde(rename = "PS")]
    Ps,
    #[serde(rename = "nylon")]
    Nylon,
    #[serde(rename = "PLA")]
    Pla,
    #[serde(rename = "HDPE")]
    Hdpe,
    #[serde(rename = "LDPE")]
    Ldpe,
    #[serde(rename = "rubber")]
    Rubber,
    #[serde(rename = "cardboard")]
    Cardboard,
    #[serde(rename = "wood")]
    Wood,
    #[serde(rename = "bark")]
    Bark,
    #[serde(rename = "dry_grass")]
    DryGrass,
    #[serde(rename = "sand")]
    Sand,
    #[serde(rename = "water")]
    Water,
    #[serde(rename = "plant_matter")]
    PlantMatter,
}

impl MaterialLabel {
    pub const ALL: [MaterialLabel; 16] = [
        MaterialLabel::Pp,
        MaterialLabel::Pet,
        MaterialLabel::Pvc,
        MaterialLabel::Ps,
        MaterialLabel::Nylon,
        MaterialLabel::Pla,
        MaterialLabel::Hdpe,
        MaterialLabel::Ldpe,
        MaterialLabel::Rubber,
        MaterialLabel::Cardboard,
        MaterialLabel::Wood,
        MaterialLabel::Bark,
        MaterialLabel::DryGrass,
        MaterialLabel::Sand,
        MaterialLabel::Water,
        MaterialLabel::PlantMatter,
    ];

    /// The thirteen materials a classifier distinguishes.
    pub const TARGETS: [MaterialLabel; 13] = [
        MaterialLabel::Pp,
        MaterialLabel::Pet,
        MaterialLabel::Pvc,
        MaterialLabel::Ps,
        MaterialLabel::Nylon,
        MaterialLabel::Pla,
        MaterialLabel::Hdpe,
        MaterialLabel::Ldpe,
        MaterialLabel::Rubber,
        MaterialLabel::Cardboard,
        MaterialLabel::Wood,
        MaterialLabel::Bark,
        MaterialLabel::DryGrass,
    ];

    pub const INTERFERANTS: [MaterialLabel; 2] = [MaterialLabel::Water, MaterialLabel::PlantMatter];

    pub fn name(&self) -> &'static str {
        match self {
            MaterialLabel::Pp => "PP",
            MaterialLabel::Pet => "PET",
            MaterialLabel::Pvc => "PVC",
            MaterialLabel::Ps => "PS",
            MaterialLabel::Nylon => "nylon",
            MaterialLabel::Pla => "PLA",
            MaterialLabel::Hdpe => "HDPE",
            MaterialLabel::Ldpe => "LDPE",
            MaterialLabel::Rubber => "rubber",
            MaterialLabel::Cardboard => "cardboard",
            MaterialLabel::Wood => "wood",
            MaterialLabel::Bark => "bark",
            MaterialLabel::DryGrass => "dry_grass",
            MaterialLabel::Sand => "sand",
            MaterialLabel::Water => "water",
            MaterialLabel::PlantMatter => "plant_matter",
        }
    }

    pub fn is_plastic(&self) -> bool {
        matches!(
            self,
            MaterialLabel::Pp
                | MaterialLabel::Pet
                | MaterialLabel::Pvc
                | MaterialLabel::Ps
                | MaterialLabel::Nylon
                | MaterialLabel::Pla
                | MaterialLabel::Hdpe
                | MaterialLabel::Ldpe
        )
    }
}

impl fmt::Display for MaterialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaterialLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        MaterialLabel::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown material '{s}'"))
    }
}

/// Gaussian absorption band. `width_nm` is the standard deviation and
/// `amplitude` the fractional depth at the centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
}

impl Band {
    pub const fn new(center_nm: f64, width_nm: f64, amplitude: f64) -> Self {
        Self {
            center_nm,
            width_nm,
            amplitude,
        }
    }

    fn shape(&self, nm: f64) -> f64 {
        let z = (nm - self.center_nm) / self.width_nm;
        (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSignature {
    pub material: MaterialLabel,
    /// Band-free reflected intensity (counts).
    pub baseline: f64,
    pub bands: Vec<Band>,
}

impl MaterialSignature {
    /// Intensity removed by the bands at each grid point.
    pub fn band_profile(&self, grid: &WavelengthGrid) -> Vec<f64> {
        grid.points()
            .iter()
            .map(|&nm| {
                self.baseline
                    * self
                        .bands
                        .iter()
                        .map(|b| b.amplitude * b.shape(nm))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Baseline minus the band profile, clipped at zero.
    pub fn synthesize(&self, grid: &Arc<WavelengthGrid>) -> Spectrum {
        let values = self
            .band_profile(grid)
            .into_iter()
            .map(|p| (self.baseline - p).max(0.0))
            .collect();
        Spectrum::new(grid.clone(), values, SpectrumRole::Sample).expect("grid-sized")
    }

    fn validate(&self, grid: &WavelengthGrid) -> Result<(), SpectraError> {
        if !(self.baseline > 0.0) {
            return Err(SpectraError::InvalidLibrary(format!(
                "{}: baseline must be positive",
                self.material
            )));
        }
        for b in &self.bands {
            if !(grid.first()..=grid.last()).contains(&b.center_nm) {
                return Err(SpectraError::InvalidLibrary(format!(
                    "{}: band centre {} nm off grid",
                    self.material, b.center_nm
                )));
            }
            if !(b.amplitude > 0.0) || !(b.width_nm > 0.0) {
                return Err(SpectraError::InvalidLibrary(format!(
                    "{}: band amplitude and width must be positive",
                    self.material
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LibraryDocument {
    version: u32,
    materials: Vec<MaterialSignature>,
}

/// Material signatures keyed by label.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    signatures: BTreeMap<MaterialLabel, MaterialSignature>,
}

impl SpectralLibrary {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(
        signatures: impl IntoIterator<Item = MaterialSignature>,
        grid: &WavelengthGrid,
    ) -> Result<Self, SpectraError> {
        let mut map = BTreeMap::new();
        for sig in signatures {
            sig.validate(grid)?;
            if map.insert(sig.material, sig.clone()).is_some() {
                return Err(SpectraError::InvalidLibrary(format!(
                    "duplicate material {}",
                    sig.material
                )));
            }
        }
        let lib = Self { signatures: map };
        lib.check_plastic_separation(grid)?;
        Ok(lib)
    }

    pub fn get(&self, m: MaterialLabel) -> Option<&MaterialSignature> {
        self.signatures.get(&m)
    }

    pub fn signature(&self, m: MaterialLabel) -> &MaterialSignature {
        self.signatures
            .get(&m)
            .unwrap_or_else(|| panic!("material {m} missing from library"))
    }

    pub fn materials(&self) -> impl Iterator<Item = MaterialLabel> + '_ {
        self.signatures.keys().copied()
    }

    pub fn signatures(&self) -> impl Iterator<Item = &MaterialSignature> {
        self.signatures.values()
    }

    /// Every pair of plastics must differ in at least one band centre by more
    /// than two grid spacings.
    fn check_plastic_separation(&self, grid: &WavelengthGrid) -> Result<(), SpectraError> {
        let tol = 2.0 * grid.spacing();
        let plastics: Vec<&MaterialSignature> = self
            .signatures
            .values()
            .filter(|s| s.material.is_plastic())
            .collect();
        let has_unmatched = |a: &MaterialSignature, b: &MaterialSignature| {
            a.bands.iter().any(|ba| {
                b.bands
                    .iter()
                    .all(|bb| (ba.center_nm - bb.center_nm).abs() > tol)
            })
        };
        for (i, a) in plastics.iter().enumerate() {
            for b in &plastics[i + 1..] {
                if !has_unmatched(a, b) && !has_unmatched(b, a) {
                    return Err(SpectraError::InvalidLibrary(format!(
                        "{} and {} share all band centres",
                        a.material, b.material
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SpectraError> {
        let doc = LibraryDocument {
            version: Self::FORMAT_VERSION,
            materials: self.signatures.values().cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, grid: &WavelengthGrid) -> Result<Self, SpectraError> {
        let doc: LibraryDocument = serde_json::from_str(text)?;
        if doc.version != Self::FORMAT_VERSION {
            return Err(SpectraError::InvalidLibrary(format!(
                "unsupported library version {}",
                doc.version
            )));
        }
        Self::new(doc.materials, grid)
    }

    /// Built-in synthetic library covering all sixteen labels.
    pub fn default_nir() -> Self {
        use MaterialLabel::*;
        let sig = |material, baseline, bands: &[(f64, f64, f64)]| MaterialSignature {
            material,
            baseline,
            bands: bands.iter().map(|&(c, w, a)| Band::new(c, w, a)).collect(),
        };
        let sigs = vec![
            sig(
                Pp,
                850.0,
                &[
                    (1165.0, 14.0, 0.10),
                    (1195.0, 12.0, 0.32),
                    (1395.0, 13.0, 0.30),
                    (1700.0, 14.0, 0.30),
                ],
            ),
            sig(
                Pet,
                780.0,
                &[
                    (1130.0, 14.0, 0.18),
                    (1250.0, 20.0, 0.10),
                    (1415.0, 16.0, 0.15),
                    (1660.0, 13.0, 0.35),
                ],
            ),
            sig(
                Pvc,
                820.0,
                &[
                    (1190.0, 14.0, 0.22),
                    (1405.0, 14.0, 0.12),
                    (1430.0, 15.0, 0.20),
                    (1690.0, 16.0, 0.28),
                ],
            ),
            sig(
                Ps,
                800.0,
                &[
                    (1143.0, 12.0, 0.30),
                    (1214.0, 15.0, 0.12),
                    (1420.0, 18.0, 0.12),
                    (1680.0, 12.0, 0.38),
                ],
            ),
            sig(
                Nylon,
                760.0,
                &[
                    (1210.0, 14.0, 0.15),
                    (1500.0, 16.0, 0.30),
                    (1535.0, 18.0, 0.25),
                    (1690.0, 14.0, 0.20),
                ],
            ),
            sig(
                Pla,
                830.0,
                &[
                    (1185.0, 12.0, 0.14),
                    (1445.0, 18.0, 0.10),
                    (1585.0, 20.0, 0.08),
                    (1665.0, 14.0, 0.24),
                ],
            ),
            sig(
                Hdpe,
                880.0,
                &[
                    (1170.0, 12.0, 0.10),
                    (1212.0, 11.0, 0.35),
                    (1392.0, 10.0, 0.20),
                    (1420.0, 12.0, 0.18),
                ],
            ),
            sig(
                Ldpe,
                870.0,
                &[
                    (1173.0, 13.0, 0.09),
                    (1215.0, 12.0, 0.30),
                    (1396.0, 11.0, 0.22),
                    (1426.0, 13.0, 0.14),
                ],
            ),
            sig(
                Rubber,
                180.0,
                &[
                    (1210.0, 25.0, 0.10),
                    (1400.0, 30.0, 0.08),
                    (1650.0, 40.0, 0.06),
                ],
            ),
            sig(
                Cardboard,
                700.0,
                &[
                    (1200.0, 30.0, 0.08),
                    (1450.0, 35.0, 0.15),
                    (1490.0, 40.0, 0.22),
                    (1590.0, 30.0, 0.06),
                ],
            ),
            sig(
                Wood,
                650.0,
                &[
                    (1200.0, 28.0, 0.10),
                    (1420.0, 20.0, 0.08),
                    (1490.0, 40.0, 0.25),
                    (1670.0, 25.0, 0.12),
                ],
            ),
            sig(
                Bark,
                400.0,
                &[
                    (1130.0, 30.0, 0.05),
                    (1200.0, 30.0, 0.08),
                    (1490.0, 45.0, 0.20),
                    (1670.0, 30.0, 0.16),
                ],
            ),
            sig(
                DryGrass,
                600.0,
                &[
                    (970.0, 30.0, 0.05),
                    (1200.0, 30.0, 0.09),
                    (1450.0, 40.0, 0.12),
                    (1490.0, 40.0, 0.18),
                    (1680.0, 25.0, 0.06),
                ],
            ),
            sig(
                Sand,
                900.0,
                &[
                    (960.0, 30.0, 0.02),
                    (1200.0, 40.0, 0.02),
                    (1415.0, 20.0, 0.05),
                ],
            ),
            sig(
                Water,
                500.0,
                &[
                    (970.0, 25.0, 0.25),
                    (1190.0, 35.0, 0.35),
                    (1450.0, 45.0, 0.85),
                ],
            ),
            sig(
                PlantMatter,
                700.0,
                &[
                    (970.0, 25.0, 0.10),
                    (1200.0, 25.0, 0.08),
                    (1450.0, 45.0, 0.45),
                    (1490.0, 40.0, 0.20),
                    (1680.0, 25.0, 0.05),
                ],
            ),
        ];
        Self::new(sigs, &WavelengthGrid::default_nir()).expect("built-in library is valid")
    }
}
