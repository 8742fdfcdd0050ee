//! Deterministic world model: terrain, particles, arm actuation, camera
//! rendering and NIR measurement synthesis.

mod render;
pub mod scene;
pub mod terrain;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scene::{Particle, ParticleColor, Scene, SceneSpec};
pub use terrain::{Bump, Terrain, TerrainParams};

use crate::camera::{CameraIntrinsics, PixelCoord, ScaleCalibration};
use crate::kinematics::{
    Arm, ArmGeometry, CartesianPoint, JointConfig, JointDelta, JointLimits, KinematicsError,
};
use crate::spectra::{MaterialLabel, SpectralLibrary, Spectrum, SpectrumRole, WavelengthGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid simulator parameter: {0}")]
    InvalidParameter(String),
    #[error("joint deltas are not finite")]
    NonFiniteDelta,
    #[error("NIR lamp is off")]
    LampOff,
    #[error("reference footprint overlaps particle(s) {0:?}")]
    ReferenceContaminated(Vec<usize>),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Mechanical layout of the rover, arm mount and end effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigGeometry {
    /// Arm base in the rover frame (m).
    pub base_offset: [f64; 3],
    /// Wrist to NIR focus point, along the vertical effector axis (m).
    pub effector_length: f64,
    /// Camera position relative to the focus point in effector axes
    /// (radial, tangential, up) (m).
    pub camera_offset: [f64; 3],
    /// Image axes relative to effector radial/tangential axes (rad).
    pub hand_eye_yaw: f64,
    /// Lens to focus point (m).
    pub focus_distance: f64,
    /// Closest the lens may come to the ground (m).
    pub collision_margin: f64,
    pub spot_radius_at_focus: f64,
    /// Spot radius growth per unit defocus.
    pub spot_growth: f64,
    pub receiver_angle_deg: f64,
    /// Focus height above ground while scanning and tracking (m).
    pub scan_height: f64,
}

impl Default for RigGeometry {
    fn default() -> Self {
        Self {
            base_offset: [0.10, 0.0, 0.12],
            effector_length: 0.08,
            camera_offset: [0.0, 0.008, 0.08],
            hand_eye_yaw: 0.0,
            focus_distance: 0.010,
            collision_margin: 0.002,
            spot_radius_at_focus: 0.5e-3,
            spot_growth: 0.3,
            receiver_angle_deg: 45.0,
            scan_height: 0.020,
        }
    }
}

impl RigGeometry {
    pub fn spot_radius(&self, defocus: f64) -> f64 {
        self.spot_radius_at_focus + self.spot_growth * defocus.abs()
    }

    /// Camera height above the ground when the focus point is at scan height.
    pub fn nominal_zc(&self) -> f64 {
        self.camera_offset[2] + self.scan_height
    }

    /// Deepest allowed focus-point position relative to the ground.
    pub fn collision_defocus(&self) -> f64 {
        -(self.focus_distance - self.collision_margin)
    }

    /// Image position of the ground point below the focus point at scan
    /// height.
    pub fn focus_pixel(&self, cam: &CameraIntrinsics) -> PixelCoord {
        let (s, c) = self.hand_eye_yaw.sin_cos();
        let (ox, oy) = (-self.camera_offset[0], -self.camera_offset[1]);
        let k = cam.omega / self.nominal_zc();
        PixelCoord::new(
            cam.principal_point.u + k * (c * ox + s * oy),
            cam.principal_point.v + k * (-s * ox + c * oy),
        )
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParameter(m.into()));
        if !(self.effector_length > 0.0 && self.camera_offset[2] > 0.0) {
            return bad("effector length and camera height must be positive");
        }
        if !(self.focus_distance > self.collision_margin && self.collision_margin >= 0.0) {
            return bad("focus distance must exceed collision margin");
        }
        if !(self.spot_radius_at_focus > 0.0 && self.spot_growth >= 0.0) {
            return bad("spot model must be positive");
        }
        if !(0.0..90.0).contains(&self.receiver_angle_deg) {
            return bad("receiver angle must be in [0, 90) degrees");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuationParams {
    /// Per-joint Gaussian actuation error per step (rad).
    pub sigma_act: f64,
    /// Constant deviation of the wrist sum, tilting the effector (rad).
    pub flex_bias: f64,
    /// Detection ticks needed before a new image is accepted.
    pub settle_ticks: u64,
}

impl Default for ActuationParams {
    fn default() -> Self {
        Self {
            sigma_act: 0.2e-3,
            flex_bias: 1e-3,
            settle_ticks: 30,
        }
    }
}

impl ActuationParams {
    pub fn ideal() -> Self {
        Self {
            sigma_act: 0.0,
            flex_bias: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NirParams {
    pub snr_max: f64,
    /// Length scale of `g(d) = exp(-(d / scale)²)` (m).
    pub defocus_scale: f64,
    pub dark_level: f64,
    /// Footprint rasterization step (m).
    pub raster_step: f64,
}

impl Default for NirParams {
    fn default() -> Self {
        Self {
            snr_max: 15_000.0,
            defocus_scale: 0.4e-3,
            dark_level: 100.0,
            raster_step: 1e-4,
        }
    }
}

impl NirParams {
    pub fn gain(&self, defocus: f64) -> f64 {
        (-(defocus / self.defocus_scale).powi(2)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            fov_deg: 80.0,
        }
    }
}

impl CameraParams {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(self.width, self.height, self.fov_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub arm: ArmGeometry,
    /// Joint limits are this half-width around the nominal scan pose (rad).
    pub joint_half_range: f64,
    pub rig: RigGeometry,
    pub actuation: ActuationParams,
    pub nir: NirParams,
    pub camera: CameraParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arm: ArmGeometry::default(),
            joint_half_range: std::f64::consts::FRAC_PI_2,
            rig: RigGeometry::default(),
            actuation: ActuationParams::default(),
            nir: NirParams::default(),
            camera: CameraParams::default(),
        }
    }
}

/// Nominal scan reach from the arm base (m).
pub const SCAN_REACH: f64 = 0.18;

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        self.rig.validate()?;
        if !(self.nir.snr_max > 0.0 && self.nir.defocus_scale > 0.0 && self.nir.raster_step > 0.0) {
            return Err(SimError::InvalidParameter(
                "NIR parameters must be positive".into(),
            ));
        }
        if !(self.actuation.sigma_act >= 0.0) {
            return Err(SimError::InvalidParameter("sigma_act must be >= 0".into()));
        }
        if !(self.joint_half_range > 0.0) {
            return Err(SimError::InvalidParameter(
                "joint_half_range must be > 0".into(),
            ));
        }
        self.camera
            .intrinsics()
            .validate()
            .map_err(|e| SimError::InvalidParameter(e.to_string()))
    }

    /// Wrist position (arm-base frame) that puts the focus point at scan
    /// height above a flat ground at rover-frame `(x, y)`.
    pub fn wrist_for_focus(&self, x: f64, y: f64, height_above_ground: f64) -> CartesianPoint {
        let b = self.rig.base_offset;
        CartesianPoint::new(
            x - b[0],
            y - b[1],
            height_above_ground + self.rig.effector_length - b[2],
        )
    }

    pub fn nominal_pose(&self) -> Result<JointConfig, SimError> {
        let unbounded = Arm::new(
            self.arm,
            JointLimits {
                lower: [-10.0; 3],
                upper: [10.0; 3],
            },
        )?;
        let target = self.wrist_for_focus(
            self.rig.base_offset[0] + SCAN_REACH,
            0.0,
            self.rig.scan_height,
        );
        Ok(unbounded.inverse_position(target, JointConfig::new(0.0, 0.8, 0.1))?)
    }

    pub fn build_arm(&self) -> Result<Arm, SimError> {
        let nominal = self.nominal_pose()?;
        Ok(Arm::new(
            self.arm,
            JointLimits::around(nominal, self.joint_half_range),
        )?)
    }

    pub fn calibration(&self) -> ScaleCalibration {
        self.camera
            .intrinsics()
            .calibration_at(self.rig.nominal_zc(), self.rig.hand_eye_yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoverPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl RoverPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Rover-frame planar point to world.
    pub fn to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    pub fn to_rover(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorState {
    pub q: JointConfig,
    /// Focus point in world coordinates (m).
    pub focus: CartesianPoint,
    /// Focus-point height above the ground below it (m).
    pub defocus: f64,
    pub lamp_on: bool,
    pub settled: bool,
    pub limit_hit: bool,
    pub collision: bool,
    pub tick: u64,
}

/// Raw spectrometer output plus ground truth about what was measured.
#[derive(Debug, Clone)]
pub struct NirSample {
    pub sample: Spectrum,
    /// Dark frame captured with the same exposure.
    pub dark: Spectrum,
    pub weights: BTreeMap<MaterialLabel, f64>,
    pub particle_weights: BTreeMap<usize, f64>,
    pub defocus: f64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct ReferencePair {
    pub reference: Spectrum,
    pub dark: Spectrum,
}

/// One seeded episode: a scene, a rover pose and the arm moving in it.
#[derive(Debug, Clone)]
pub struct World {
    pub scene: Scene,
    rover: RoverPose,
    config: SimConfig,
    arm: Arm,
    intrinsics: CameraIntrinsics,
    grid: Arc<WavelengthGrid>,
    signatures: BTreeMap<MaterialLabel, Spectrum>,
    rng: ChaCha8Rng,
    q: JointConfig,
    lamp_on: bool,
    limit_hit: bool,
    tick: u64,
}

impl World {
    pub fn new(
        scene: Scene,
        config: SimConfig,
        library: &SpectralLibrary,
        grid: Arc<WavelengthGrid>,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let arm = config.build_arm()?;
        let signatures = library
            .signatures()
            .map(|s| (s.material, s.synthesize(&grid)))
            .collect();
        let q = config.nominal_pose()?;
        Ok(Self {
            scene,
            rover: RoverPose::default(),
            intrinsics: config.camera.intrinsics(),
            config,
            arm,
            grid,
            signatures,
            rng: ChaCha8Rng::seed_from_u64(seed),
            q,
            lamp_on: false,
            limit_hit: false,
            tick: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn arm(&self) -> &Arm {
        &self.arm
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn rover(&self) -> RoverPose {
        self.rover
    }

    pub fn set_rover(&mut self, pose: RoverPose) {
        self.rover = pose;
    }

    pub fn q(&self) -> JointConfig {
        self.q
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Advances simulated time without moving.
    pub fn wait(&mut self, ticks: u64) {
        self.tick += ticks;
    }

    /// Puts the arm at `q` directly, without actuation noise.
    pub fn set_joints(&mut self, q: JointConfig) {
        let (q, hit) = self.arm.limits.clamp(&q);
        self.q = q;
        self.limit_hit = hit;
    }

    pub fn set_lamp(&mut self, on: bool) {
        self.lamp_on = on;
    }

    pub fn lamp_on(&self) -> bool {
        self.lamp_on
    }

    /// Applies commanded deltas plus actuation noise, clamps to the joint
    /// limits and waits out the settling interval.
    pub fn step_arm(&mut self, delta: JointDelta) -> Result<EffectorState, SimError> {
        if !delta.is_finite() {
            return Err(SimError::NonFiniteDelta);
        }
        let mut q = self.q + delta;
        let sigma = self.config.actuation.sigma_act;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("positive sigma");
            q.gamma0 += n.sample(&mut self.rng);
            q.gamma1 += n.sample(&mut self.rng);
            q.gamma2 += n.sample(&mut self.rng);
        }
        let (q, hit) = self.arm.limits.clamp(&q);
        self.q = q;
        self.limit_hit = hit;
        self.tick += self.config.actuation.settle_ticks;
        Ok(self.state())
    }

    pub fn state(&self) -> EffectorState {
        let focus = self.focus_point();
        let defocus = focus.z - self.scene.ground_height(focus.x, focus.y);
        EffectorState {
            q: self.q,
            focus,
            defocus,
            lamp_on: self.lamp_on,
            settled: true,
            limit_hit: self.limit_hit,
            collision: defocus < self.config.rig.collision_defocus(),
            tick: self.tick,
        }
    }

    /// Effector-local `(radial, tangential, up)` offset from the wrist,
    /// expressed in the rover frame (tilted by the flex bias).
    fn effector_offset(&self, local: [f64; 3]) -> [f64; 3] {
        let eps = self.config.actuation.flex_bias;
        let (se, ce) = eps.sin_cos();
        let (s0, c0) = self.q.gamma0.sin_cos();
        let radial = local[0] * ce + local[2] * se;
        let up = -local[0] * se + local[2] * ce;
        [c0 * radial - s0 * local[1], s0 * radial + c0 * local[1], up]
    }

    fn rover_to_world(&self, p: [f64; 3]) -> CartesianPoint {
        let (x, y) = self.rover.to_world(p[0], p[1]);
        let z0 = self.scene.ground_height(self.rover.x, self.rover.y);
        CartesianPoint::new(x, y, z0 + p[2])
    }

    fn wrist_rover(&self) -> [f64; 3] {
        let w = self.arm.geometry.cartesian(&self.q);
        let b = self.config.rig.base_offset;
        [b[0] + w.x, b[1] + w.y, b[2] + w.z]
    }

    fn effector_point(&self, local: [f64; 3]) -> CartesianPoint {
        let w = self.wrist_rover();
        let o = self.effector_offset(local);
        self.rover_to_world([w[0] + o[0], w[1] + o[1], w[2] + o[2]])
    }

    pub fn focus_point(&self) -> CartesianPoint {
        self.effector_point([0.0, 0.0, -self.config.rig.effector_length])
    }

    pub fn camera_position(&self) -> CartesianPoint {
        let r = &self.config.rig;
        self.effector_point([
            r.camera_offset[0],
            r.camera_offset[1],
            -r.effector_length + r.camera_offset[2],
        ])
    }

    /// World yaw of the image `u` axis.
    pub fn camera_yaw(&self) -> f64 {
        self.rover.heading + self.q.gamma0 + self.config.rig.hand_eye_yaw
    }

    /// Pinhole projection of a world point into the current camera.
    pub fn project_world(&self, p: CartesianPoint) -> Option<PixelCoord> {
        let c = self.camera_position();
        let (s, co) = self.camera_yaw().sin_cos();
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let cam = CartesianPoint::new(co * dx + s * dy, -s * dx + co * dy, c.z - p.z);
        self.intrinsics.project(cam).ok()
    }

    pub fn particle_world(&self, p: &Particle) -> CartesianPoint {
        CartesianPoint::new(p.x, p.y, self.scene.ground_height(p.x, p.y))
    }

    /// Planar distance from the focus point to a world position (m).
    pub fn focus_error_to(&self, x: f64, y: f64) -> f64 {
        let f = self.focus_point();
        (f.x - x).hypot(f.y - y)
    }

    fn receiver_center(&self, defocus: f64) -> (f64, f64) {
        let f = self.focus_point();
        let dir = self.rover.heading + self.q.gamma0;
        let off = defocus * self.config.rig.receiver_angle_deg.to_radians().tan();
        (f.x + off * dir.cos(), f.y + off * dir.sin())
    }

    /// Fraction of the measured footprint covered by each material and
    /// particle. The footprint is the intersection of the emitter spot and
    /// the receiver's view, both of radius `r(d)`.
    pub fn footprint(&self) -> (BTreeMap<MaterialLabel, f64>, BTreeMap<usize, f64>, f64) {
        let f = self.focus_point();
        let defocus = f.z - self.scene.ground_height(f.x, f.y);
        let r = self.config.rig.spot_radius(defocus);
        let (rx, ry) = self.receiver_center(defocus);
        let step = self.config.nir.raster_step;
        let n = (r / step).ceil() as i64;
        let near = self.scene.particles_near(f.x, f.y, r);
        let mut both = (BTreeMap::new(), BTreeMap::new(), 0usize);
        let mut emitter_only = (BTreeMap::new(), BTreeMap::new(), 0usize);
        for i in -n..=n {
            for j in -n..=n {
                let (x, y) = (f.x + i as f64 * step, f.y + j as f64 * step);
                if (x - f.x).hypot(y - f.y) > r {
                    continue;
                }
                let hit = near.iter().rev().find(|p| p.contains(x, y));
                let (m, id) = match hit {
                    Some(p) => (p.material, Some(p.id)),
                    None => (MaterialLabel::Sand, None),
                };
                let add = |acc: &mut (
                    BTreeMap<MaterialLabel, usize>,
                    BTreeMap<usize, usize>,
                    usize,
                )| {
                    *acc.0.entry(m).or_default() += 1;
                    if let Some(id) = id {
                        *acc.1.entry(id).or_default() += 1;
                    }
                    acc.2 += 1;
                };
                add(&mut emitter_only);
                if (x - rx).hypot(y - ry) <= r {
                    add(&mut both);
                }
            }
        }
        let use_acc = if both.2 > 0 { both } else { emitter_only };
        let total = use_acc.2 as f64;
        (
            use_acc
                .0
                .into_iter()
                .map(|(k, v)| (k, v as f64 / total))
                .collect(),
            use_acc
                .1
                .into_iter()
                .map(|(k, v)| (k, v as f64 / total))
                .collect(),
            defocus,
        )
    }

    fn measure(&mut self) -> Result<NirSample, SimError> {
        if !self.lamp_on {
            return Err(SimError::LampOff);
        }
        let (weights, particle_weights, defocus) = self.footprint();
        let gain = self.config.nir.gain(defocus);
        let n = self.grid.len();
        let mut mix = vec![0.0; n];
        for (m, w) in &weights {
            let s = &self.signatures[m];
            for (acc, v) in mix.iter_mut().zip(s.values()) {
                *acc += w * v;
            }
        }
        let mean = mix.iter().sum::<f64>() / n as f64;
        let sigma = (mean / self.config.nir.snr_max).max(f64::MIN_POSITIVE);
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        let dark_level = self.config.nir.dark_level;
        let sample: Vec<f64> = mix
            .iter()
            .map(|m| (dark_level + gain * m + noise.sample(&mut self.rng)).max(0.0))
            .collect();
        let dark: Vec<f64> = (0..n)
            .map(|_| (dark_level + noise.sample(&mut self.rng)).max(0.0))
            .collect();
        self.tick += 1;
        Ok(NirSample {
            sample: Spectrum::new(self.grid.clone(), sample, SpectrumRole::Sample)
                .expect("grid-sized"),
            dark: Spectrum::new(self.grid.clone(), dark, SpectrumRole::Dark).expect("grid-sized"),
            weights,
            particle_weights,
            defocus,
            gain,
        })
    }

    /// Spectrometer reading at the current pose. Noise has a fixed
    /// `σ = mean(mix) / snr_max`, so the effective SNR is `snr_max · g(d)`.
    pub fn sample_nir(&mut self) -> Result<NirSample, SimError> {
        self.measure()
    }

    /// Sand reference and dark frame. Fails if the footprint touches a
    /// particle.
    pub fn acquire_reference(&mut self) -> Result<ReferencePair, SimError> {
        let (_, particles, _) = self.footprint();
        if !particles.is_empty() {
            return Err(SimError::ReferenceContaminated(
                particles.into_keys().collect(),
            ));
        }
        let m = self.measure()?;
        Ok(ReferencePair {
            reference: m.sample.with_role(SpectrumRole::Reference),
            dark: m.dark,
        })
    }
}
