//! Particle population on a terrain patch.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::terrain::{Terrain, TerrainParams};
use super::SimError;
use crate::segmentation::Hsv;
use crate::spectra::MaterialLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleColor {
    Blue,
    Red,
    Green,
    Orange,
    Purple,
    /// Pale yellow that falls inside the sand hue band.
    DimYellow,
}

impl ParticleColor {
    pub const DETECTABLE: [ParticleColor; 5] = [
        ParticleColor::Blue,
        ParticleColor::Red,
        ParticleColor::Green,
        ParticleColor::Orange,
        ParticleColor::Purple,
    ];

    pub fn hsv(&self) -> Hsv {
        match self {
            ParticleColor::Blue => Hsv::new(220.0, 0.80, 0.70),
            ParticleColor::Red => Hsv::new(2.0, 0.85, 0.75),
            ParticleColor::Green => Hsv::new(125.0, 0.70, 0.60),
            ParticleColor::Orange => Hsv::new(22.0, 0.85, 0.85),
            ParticleColor::Purple => Hsv::new(280.0, 0.60, 0.55),
            ParticleColor::DimYellow => Hsv::new(50.0, 0.38, 0.62),
        }
    }

    /// Blue pigments absorb the NIR lamp and look black inside the spot.
    pub fn is_blue(&self) -> bool {
        let h = self.hsv().h;
        (180.0..=260.0).contains(&h)
    }
}

/// Flat disc lying on the terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Diameter (m).
    pub diameter: f64,
    pub color: ParticleColor,
    pub material: MaterialLabel,
}

impl Particle {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.x).hypot(y - self.y) <= self.radius()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub terrain: Terrain,
    pub particles: Vec<Particle>,
    pub seed: u64,
}

pub const MIN_PARTICLE_DIAMETER: f64 = 1e-3;

impl Scene {
    pub fn new(terrain: Terrain, particles: Vec<Particle>, seed: u64) -> Result<Self, SimError> {
        for p in &particles {
            if !(p.diameter >= MIN_PARTICLE_DIAMETER) {
                return Err(SimError::InvalidScene(format!(
                    "particle {} is {:.2} mm, minimum is 1 mm",
                    p.id,
                    p.diameter * 1e3
                )));
            }
        }
        Ok(Self {
            terrain,
            particles,
            seed,
        })
    }

    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        self.terrain.height(x, y)
    }

    /// Topmost particle covering `(x, y)` (the last one listed wins).
    pub fn particle_at(&self, x: f64, y: f64) -> Option<&Particle> {
        self.particles.iter().rev().find(|p| p.contains(x, y))
    }

    pub fn particles_near(&self, x: f64, y: f64, radius: f64) -> Vec<&Particle> {
        self.particles
            .iter()
            .filter(|p| (p.x - x).hypot(p.y - y) <= radius + p.radius())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub particles: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub diameter_min_mm: f64,
    pub diameter_max_mm: f64,
    /// Minimum centre-to-centre gap (m).
    pub min_separation: f64,
    pub colors: Vec<ParticleColor>,
    pub materials: Vec<MaterialLabel>,
    pub terrain: TerrainParams,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            particles: 10,
            x_min: 0.2,
            x_max: 1.4,
            y_min: -0.15,
            y_max: 0.15,
            diameter_min_mm: 2.0,
            diameter_max_mm: 5.0,
            min_separation: 0.03,
            colors: ParticleColor::DETECTABLE.to_vec(),
            materials: MaterialLabel::TARGETS.to_vec(),
            terrain: TerrainParams::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.diameter_min_mm < 1.0 || self.diameter_max_mm < self.diameter_min_mm {
            return Err(SimError::InvalidScene(
                "particle diameters must be >= 1 mm and min <= max".into(),
            ));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(SimError::InvalidScene("empty particle region".into()));
        }
        if self.particles > 0 && (self.colors.is_empty() || self.materials.is_empty()) {
            return Err(SimError::InvalidScene(
                "no colours or materials to draw from".into(),
            ));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<Scene, SimError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terrain = Terrain::generate(&self.terrain, seed);
        let mut particles: Vec<Particle> = Vec::with_capacity(self.particles);
        let mut attempts = 0;
        while particles.len() < self.particles {
            attempts += 1;
            if attempts > 10_000 * self.particles.max(1) {
                return Err(SimError::InvalidScene(
                    "could not place particles with the requested separation".into(),
                ));
            }
            let x = rng.random_range(self.x_min..=self.x_max);
            let y = rng.random_range(self.y_min..=self.y_max);
            if particles
                .iter()
                .any(|p| (p.x - x).hypot(p.y - y) < self.min_separation)
            {
                continue;
            }
            let d_mm = rng.random_range(self.diameter_min_mm..=self.diameter_max_mm);
            particles.push(Particle {
                id: particles.len(),
                x,
                y,
                diameter: d_mm * 1e-3,
                color: *self.colors.choose(&mut rng).expect("validated"),
                material: *self.materials.choose(&mut rng).expect("validated"),
            });
        }
        Scene::new(terrain, particles, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_separated() {
        let spec = SceneSpec::default();
        let a = spec.generate(5).unwrap();
        assert_eq!(a, spec.generate(5).unwrap());
        assert_eq!(a.particles.len(), 10);
        for (i, p) in a.particles.iter().enumerate() {
            assert!(p.diameter >= 2e-3 && p.diameter <= 5e-3);
            for q in &a.particles[i + 1..] {
                assert!((p.x - q.x).hypot(p.y - q.y) >= spec.min_separation);
            }
        }
    }

    #[test]
    fn sub_millimetre_particles_rejected() {
        let p = Particle {
            id: 0,
            x: 0.0,
            y: 0.0,
            diameter: 0.5e-3,
            color: ParticleColor::Blue,
            material: MaterialLabel::Pp,
        };
        assert!(Scene::new(Terrain::flat(), vec![p], 0).is_err());
        let bad = SceneSpec {
            diameter_min_mm: 0.5,
            ..SceneSpec::default()
        };
        assert!(bad.generate(0).is_err());
    }

    #[test]
    fn dim_yellow_sits_in_sand_hue_band() {
        let h = ParticleColor::DimYellow.hsv().h;
        assert!((35.0..=60.0).contains(&h));
        assert!(ParticleColor::Blue.is_blue() && !ParticleColor::Red.is_blue());
    }
}
