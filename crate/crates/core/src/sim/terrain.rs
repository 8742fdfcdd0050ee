//! Smooth seeded height field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainParams {
    pub components: usize,
    /// Per-component amplitude (m).
    pub amplitude: f64,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    pub max_slope_deg: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            components: 6,
            amplitude: 0.003,
            min_wavelength: 0.8,
            max_wavelength: 4.0,
            max_slope_deg: 10.0,
        }
    }
}

impl TerrainParams {
    pub fn flat() -> Self {
        Self {
            components: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kx: f64,
    pub ky: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Smooth raised Gaussian, `height · exp(-r² / (2 σ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub waves: Vec<Wave>,
    pub bumps: Vec<Bump>,
    pub max_slope_deg: f64,
}

impl Terrain {
    pub fn flat() -> Self {
        Self {
            waves: Vec::new(),
            bumps: Vec::new(),
            max_slope_deg: 10.0,
        }
    }

    /// Sum of sinusoids scaled down, if needed, so that the worst-case
    /// gradient stays under the slope cap.
    pub fn generate(params: &TerrainParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e44_a1d0);
        let mut waves: Vec<Wave> = (0..params.components)
            .map(|_| {
                let lambda = rng.random_range(params.min_wavelength..=params.max_wavelength);
                let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / lambda;
                Wave {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    amplitude: params.amplitude * rng.random_range(0.5..=1.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let bound: f64 = waves.iter().map(|w| w.amplitude * w.kx.hypot(w.ky)).sum();
        let cap = params.max_slope_deg.to_radians().tan();
        if bound > cap {
            for w in &mut waves {
                w.amplitude *= cap / bound;
            }
        }
        Self {
            waves,
            bumps: Vec::new(),
            max_slope_deg: params.max_slope_deg,
        }
    }

    pub fn with_bump(mut self, bump: Bump) -> Self {
        self.bumps.push(bump);
        self
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let w: f64 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
            .sum();
        let b: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let r2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                b.height * (-r2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        w + b
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for w in &self.waves {
            let c = w.amplitude * (w.kx * x + w.ky * y + w.phase).cos();
            gx += c * w.kx;
            gy += c * w.ky;
        }
        for b in &self.bumps {
            let (dx, dy) = (x - b.x, y - b.y);
            let e = b.height * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
            gx -= e * dx / (b.sigma * b.sigma);
            gy -= e * dy / (b.sigma * b.sigma);
        }
        (gx, gy)
    }

    pub fn slope_deg(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = self.gradient(x, y);
        gx.hypot(gy).atan().to_degrees()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_cap_respected() {
        let steep = TerrainParams {
            amplitude: 0.05,
            min_wavelength: 0.1,
            max_wavelength: 0.2,
            ..TerrainParams::default()
        };
        let t = Terrain::generate(&steep, 9);
        for i in 0..400 {
            let (x, y) = (i as f64 * 0.013, (i as f64 * 0.7).sin());
            assert!(t.slope_deg(x, y) <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let t = Terrain::generate(&TerrainParams::default(), 4).with_bump(Bump {
            x: 0.3,
            y: 0.1,
            height: 0.003,
            sigma: 0.02,
        });
        let h = 1e-6;
        for (x, y) in [(0.31, 0.09), (1.2, -0.4), (0.0, 0.0)] {
            let (gx, gy) = t.gradient(x, y);
            let fx = (t.height(x + h, y) - t.height(x - h, y)) / (2.0 * h);
            let fy = (t.height(x, y + h) - t.height(x, y - h)) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-7 && (gy - fy).abs() < 1e-7);
        }
    }

    #[test]
    fn seeded_and_flat() {
        let p = TerrainParams::default();
        assert_eq!(Terrain::generate(&p, 1), Terrain::generate(&p, 1));
        assert_ne!(Terrain::generate(&p, 1), Terrain::generate(&p, 2));
        assert_eq!(Terrain::flat().height(3.0, -2.0), 0.0);
    }
}
