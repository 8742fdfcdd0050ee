//! Mission configuration (TOML) and the endurance arithmetic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MissionError;
use crate::classifier::{DatasetSpec, TrainOptions, Variant};
use crate::segmentation::SegmentationParams;
use crate::servo::ServoParams;
use crate::sim::{SceneSpec, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoverConfig {
    /// Average ground speed (m/s).
    pub speed_mps: f64,
    /// Battery duration per charge (h).
    pub battery_hours: f64,
    /// Width of ground covered per pass (m). Chosen so that the area per
    /// charge comes out at 70 m².
    pub swath_m: f64,
}

impl Default for RoverConfig {
    fn default() -> Self {
        Self {
            speed_mps: 0.016,
            battery_hours: 3.0,
            swath_m: 0.405,
        }
    }
}

/// Rectangular survey plot scanned in boustrophedon lanes along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub x_start: f64,
    pub x_end: f64,
    pub y_center: f64,
    /// Plot width across the transects; lanes are `swath_m` wide.
    pub width: f64,
    pub waypoint_spacing: f64,
    /// Spacing used while the detection count is volatile.
    pub dense_spacing: f64,
    /// Number of recent waypoints whose detection counts are compared.
    pub variance_window: usize,
    pub variance_threshold: f64,
    /// Arm poses across the swath at each waypoint.
    pub scan_poses: usize,
    /// Candidates closer than this to an engaged one are skipped (m).
    pub dedup_radius: f64,
    /// Candidates are engaged only while their distance from the arm base
    /// lies in this range (m); others wait for a later waypoint.
    pub reach_min: f64,
    pub reach_max: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            x_start: 0.15,
            x_end: 1.45,
            y_center: 0.0,
            width: 0.405,
            waypoint_spacing: 0.10,
            dense_spacing: 0.05,
            variance_window: 5,
            variance_threshold: 1.0,
            scan_poses: 5,
            dedup_radius: 0.008,
            reach_min: 0.08,
            reach_max: 0.225,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Trained model JSON. When absent a model is trained at start-up from
    /// `dataset`.
    pub model: Option<PathBuf>,
    /// Spectral library JSON; the built-in library when absent.
    pub library: Option<PathBuf>,
    pub variant: Variant,
    pub dataset: DatasetSpec,
    pub train: TrainOptions,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            model: None,
            library: None,
            variant: Variant::Svm3I,
            dataset: DatasetSpec::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    pub component: String,
    pub voltage_v: f64,
    pub current_a: f64,
}

/// Peak ratings of the field robot's subsystems.
pub fn default_power_table() -> Vec<PowerEntry> {
    [
        ("Embedded computers", 12.0, 1.25),
        ("Spectrometer", 5.0, 3.00),
        ("Lamp", 12.0, 1.20),
        ("Robotic arm", 12.0, 5.00),
        ("Rover drive system", 11.1, 8.00),
    ]
    .into_iter()
    .map(|(c, v, a)| PowerEntry {
        component: c.into(),
        voltage_v: v,
        current_a: a,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub sim: SimConfig,
    pub servo: ServoParams,
    pub segmentation: SegmentationParams,
    pub classifier: ClassifierConfig,
    pub rover: RoverConfig,
    pub plot: PlotConfig,
    /// Arm pose while driving (rad).
    pub stow_pose: [f64; 3],
    pub power: Vec<PowerEntry>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSpec::default(),
            sim: SimConfig::default(),
            servo: ServoParams::default(),
            segmentation: SegmentationParams::default(),
            classifier: ClassifierConfig::default(),
            rover: RoverConfig::default(),
            plot: PlotConfig::default(),
            stow_pose: [0.0, -0.2, 1.2],
            power: default_power_table(),
        }
    }
}

impl MissionConfig {
    pub fn from_toml(text: &str) -> Result<Self, MissionError> {
        let cfg: MissionConfig =
            toml::from_str(text).map_err(|e| MissionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MissionError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative model paths are taken from the config's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.classifier.model, &mut cfg.classifier.library]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, MissionError> {
        toml::to_string(self).map_err(|e| MissionError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::Config(m));
        let r = &self.rover;
        if !(r.speed_mps > 0.0 && r.battery_hours > 0.0 && r.swath_m > 0.0) {
            return bad("rover speed, battery duration and swath must be > 0".into());
        }
        let p = &self.plot;
        if !(p.x_end > p.x_start && p.width > 0.0) {
            return bad("plot must have positive length and width".into());
        }
        if !(p.waypoint_spacing > 0.0 && p.dense_spacing > 0.0 && p.dedup_radius >= 0.0) {
            return bad("waypoint spacings must be > 0".into());
        }
        if !(p.reach_min >= 0.0 && p.reach_max > p.reach_min) {
            return bad("reach range must satisfy 0 <= reach_min < reach_max".into());
        }
        if p.scan_poses == 0 || p.variance_window < 2 {
            return bad("need at least one scan pose and a variance window of 2".into());
        }
        for (name, path) in [
            ("classifier.model", &self.classifier.model),
            ("classifier.library", &self.classifier.library),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    return bad(format!("{name}: {} does not exist", path.display()));
                }
            }
        }
        if self.stow_pose.iter().any(|v| !v.is_finite()) {
            return bad("stow pose must be finite".into());
        }
        self.sim
            .validate()
            .map_err(|e| MissionError::Config(e.to_string()))?;
        self.servo
            .validate()
            .map_err(|e| MissionError::Config(e.to_string()))?;
        self.scene
            .validate()
            .map_err(|e| MissionError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLine {
    pub component: String,
    pub voltage_v: f64,
    pub current_a: f64,
    pub peak_power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnduranceReport {
    pub speed_mps: f64,
    pub duration_h: f64,
    pub swath_m: f64,
    pub path_length_m: f64,
    pub area_m2: f64,
    pub power: Vec<PowerLine>,
    pub total_peak_power_w: f64,
    pub note: String,
}

pub fn endurance_report(
    rover: &RoverConfig,
    power: &[PowerEntry],
) -> Result<EnduranceReport, MissionError> {
    if !(rover.speed_mps > 0.0 && rover.battery_hours > 0.0 && rover.swath_m > 0.0) {
        return Err(MissionError::Config(
            "speed, duration and swath must be > 0".into(),
        ));
    }
    let path = rover.speed_mps * rover.battery_hours * 3600.0;
    let lines: Vec<PowerLine> = power
        .iter()
        .map(|e| PowerLine {
            component: e.component.clone(),
            voltage_v: e.voltage_v,
            current_a: e.current_a,
            peak_power_w: e.voltage_v * e.current_a,
        })
        .collect();
    Ok(EnduranceReport {
        speed_mps: rover.speed_mps,
        duration_h: rover.battery_hours,
        swath_m: rover.swath_m,
        path_length_m: path,
        area_m2: path * rover.swath_m,
        total_peak_power_w: lines.iter().map(|l| l.peak_power_w).sum(),
        power: lines,
        note: "arithmetic consistency check on configured constants, not a measurement".into(),
    })
}
