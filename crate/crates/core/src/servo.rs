//! Closed-loop positioning of the NIR probe over a detected particle.
//!
//! The xy loop servos the NIR spot onto the target in the image. Descent is
//! driven by spot size until the SNR is high enough, and a square-spiral
//! search then looks for a valid measurement.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PixelCoord, ScaleCalibration};
use crate::classifier::{Prediction, TrainedClassifier};
use crate::kinematics::{
    Arm, CartesianPoint, JointConfig, JointDelta, KinematicsError, SingularityPolicy,
};
use crate::mailbox::Mailbox;
use crate::segmentation::{
    detect_candidates, detect_nir_spot, Detection, Illumination, SegmentationParams,
};
use crate::sim::{ReferencePair, SimConfig, SimError, World};
use crate::spectra::{
    assess_measurement, estimate_coverage, estimate_snr, CoverageEstimate, MaterialLabel,
    Measurement, SpectralLibrary, ValidityPolicy,
};

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("target lost at {phase} iteration {iter}")]
    TargetLost { phase: Phase, iter: usize },
    #[error("{phase} phase did not converge in {iters} iterations")]
    NotConverged { phase: Phase, iters: usize },
    #[error("descent stopped: next step would pass the collision margin ({reason})")]
    CollisionRisk { reason: String },
    #[error("no valid measurement after {probes} spiral probes")]
    TargetUnreachable { probes: usize },
    #[error("no clean sand reference near the target")]
    NoCleanReference,
    #[error("invalid servo parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "XY")]
    Xy,
    #[serde(rename = "DESCEND")]
    Descend,
    #[serde(rename = "TERMINAL")]
    Terminal,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Xy => "XY",
            Phase::Descend => "DESCEND",
            Phase::Terminal => "TERMINAL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoParams {
    /// Fraction of the estimated xy displacement commanded per step.
    pub lambda: f64,
    /// Half-width of the terminal search square (m).
    pub xy_tol: f64,
    /// XY phase is converged below this planar error (m).
    pub lock_tol: f64,
    pub snr_threshold: f64,
    /// Iteration cap per phase.
    pub max_iters: usize,
    pub spiral_step: f64,
    /// Spot diameter above `coarse_factor ×` the focused diameter selects
    /// coarse descent steps.
    pub coarse_factor: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Total fine descent allowed before giving up (m).
    pub fine_budget: f64,
    pub reference_offset: f64,
    /// Estimated footprint coverage needed to accept a terminal probe.
    pub min_coverage: f64,
    /// Absorbance band energy of bare sand; probes must exceed it.
    pub sand_energy_floor: f64,
    /// Detection frames per planner decision.
    pub planner_period_ticks: u64,
    /// Max image distance between consecutive target observations (px).
    pub gate_px: f64,
    pub validity: ValidityPolicy,
}

impl Default for ServoParams {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            xy_tol: 1e-3,
            lock_tol: 0.3e-3,
            snr_threshold: 0.6 * 15_000.0,
            max_iters: 80,
            spiral_step: 5e-4,
            coarse_factor: 3.0,
            coarse_step: 2e-3,
            fine_step: 0.25e-3,
            fine_budget: 6e-3,
            reference_offset: 4e-3,
            min_coverage: 0.95,
            sand_energy_floor: 0.005,
            planner_period_ticks: 6,
            gate_px: 40.0,
            validity: ValidityPolicy::default(),
        }
    }
}

impl ServoParams {
    pub fn validate(&self) -> Result<(), ServoError> {
        let bad = |m: &str| Err(ServoError::InvalidParameter(m.into()));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must be in (0, 1]");
        }
        if !(self.xy_tol > 0.0 && self.lock_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.spiral_step > 0.0 && self.coarse_step > 0.0 && self.fine_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.snr_threshold > 0.0 && self.coarse_factor > 1.0) {
            return bad("snr threshold must be positive and coarse factor > 1");
        }
        if self.max_iters == 0 || self.planner_period_ticks == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }

    /// Number of spiral probes covering the `±xy_tol` square.
    pub fn spiral_probes(&self) -> usize {
        let k = (self.xy_tol / self.spiral_step).ceil() as usize;
        (2 * k + 1).pow(2)
    }
}

/// What the controller knows about its own hardware.
#[derive(Debug, Clone, Copy)]
pub struct ServoContext {
    pub arm: Arm,
    pub intrinsics: CameraIntrinsics,
    pub calibration: ScaleCalibration,
    /// Image position of the focus point at scan height, used when the NIR
    /// spot is not visible.
    pub focus_pixel: PixelCoord,
    pub spot_radius_at_focus: f64,
    pub spot_growth: f64,
    /// Camera height above the focus point (m).
    pub camera_height: f64,
    pub collision_defocus: f64,
    pub segmentation: SegmentationParams,
}

impl ServoContext {
    pub fn from_config(
        cfg: &SimConfig,
        segmentation: SegmentationParams,
    ) -> Result<Self, SimError> {
        let intrinsics = cfg.camera.intrinsics();
        Ok(Self {
            arm: cfg.build_arm()?,
            intrinsics,
            calibration: cfg.calibration(),
            focus_pixel: cfg.rig.focus_pixel(&intrinsics),
            spot_radius_at_focus: cfg.rig.spot_radius_at_focus,
            spot_growth: cfg.rig.spot_growth,
            camera_height: cfg.rig.camera_offset[2],
            collision_defocus: cfg.rig.collision_defocus(),
            segmentation,
        })
    }

    /// Spot diameter in pixels at perfect focus.
    pub fn focused_spot_px(&self) -> f64 {
        2.0 * self.spot_radius_at_focus * self.intrinsics.omega / self.camera_height
    }

    /// Defocus implied by a spot diameter, assuming the focus is above the
    /// ground.
    pub fn defocus_from_spot(&self, diameter_px: f64) -> f64 {
        let k = diameter_px / (2.0 * self.intrinsics.omega);
        let d = (k * self.camera_height - self.spot_radius_at_focus) / (self.spot_growth - k);
        d.max(0.0)
    }

    /// Planar displacement for an image error at the current base angle.
    pub fn displacement(&self, q: &JointConfig, error: PixelCoord) -> (f64, f64) {
        self.calibration
            .yawed(q.gamma0)
            .pixel_to_displacement(error)
    }
}

/// Joint step moving the focus point `lambda` of the way toward the target.
pub fn servo_xy_step(
    ctx: &ServoContext,
    q: &JointConfig,
    target: PixelCoord,
    focus: PixelCoord,
    params: &ServoParams,
) -> Result<JointDelta, ServoError> {
    let (dx, dy) = ctx.displacement(q, focus.delta_to(&target));
    if dx == 0.0 && dy == 0.0 {
        return Ok(JointDelta::ZERO);
    }
    Ok(ctx.arm.solve_increment(
        q,
        CartesianPoint::new(dx, dy, 0.0),
        params.lambda,
        SingularityPolicy::Damped,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DescentProgress {
    pub fine_descended: f64,
    pub total_descended: f64,
    /// Last spot-based height estimate and `total_descended` when it was
    /// taken.
    pub anchor: Option<(f64, f64)>,
}

impl DescentProgress {
    /// Height above ground from the last trusted spot, dead-reckoned by the
    /// descent commanded since.
    pub fn height_estimate(&self) -> Option<f64> {
        self.anchor.map(|(h, at)| h - (self.total_descended - at))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DescendAction {
    Complete,
    Coarse(JointDelta),
    Fine(JointDelta),
}

/// A spot that is a whole filled disc. A dark particle larger than the spot
/// leaves only a thin, often broken ring whose area says nothing about the
/// height.
fn spot_is_whole(spot: &Detection) -> bool {
    let w = (spot.bbox.u_max - spot.bbox.u_min + 1) as f64;
    let h = (spot.bbox.v_max - spot.bbox.v_min + 1) as f64;
    let aspect = w / h;
    (0.75..=1.33).contains(&aspect) && spot.area >= 0.6 * std::f64::consts::FRAC_PI_4 * w * h
}

/// One height decision: coarse while the spot is clearly out of focus, fine
/// otherwise, done once the SNR threshold is reached. When the spot is not
/// usable the height is dead-reckoned from the last good one.
pub fn descend_step(
    ctx: &ServoContext,
    q: &JointConfig,
    spot: Option<&Detection>,
    snr: Option<f64>,
    progress: &mut DescentProgress,
    params: &ServoParams,
) -> Result<DescendAction, ServoError> {
    if snr.is_some_and(|s| s >= params.snr_threshold) {
        return Ok(DescendAction::Complete);
    }
    if let Some(d) = spot
        .filter(|s| spot_is_whole(s))
        .and_then(|s| s.spot_diameter)
    {
        progress.anchor = Some((ctx.defocus_from_spot(d), progress.total_descended));
    }
    let coarse_above = ctx.defocus_from_spot(params.coarse_factor * ctx.focused_spot_px());
    let est = progress.height_estimate();
    let coarse = est.is_some_and(|h| h > coarse_above);
    let step = if coarse {
        let h = est.expect("checked");
        if h - params.coarse_step <= ctx.collision_defocus {
            return Err(ServoError::CollisionRisk {
                reason: format!("estimated height {:.2} mm", h * 1e3),
            });
        }
        params.coarse_step
    } else {
        if progress.fine_descended + params.fine_step > params.fine_budget {
            return Err(ServoError::CollisionRisk {
                reason: format!(
                    "fine descent budget {:.2} mm used up",
                    params.fine_budget * 1e3
                ),
            });
        }
        params.fine_step
    };
    let delta = ctx.arm.solve_increment(
        q,
        CartesianPoint::new(0.0, 0.0, -step),
        1.0,
        SingularityPolicy::Damped,
    )?;
    progress.total_descended += step;
    Ok(if coarse {
        DescendAction::Coarse(delta)
    } else {
        progress.fine_descended += step;
        DescendAction::Fine(delta)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoRecord {
    pub iter: usize,
    pub phase: Phase,
    pub ex_px: f64,
    pub ey_px: f64,
    pub delta: [f64; 3],
    /// Focus height above ground (mm).
    pub z_mm: f64,
    pub snr: Option<f64>,
    pub valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ServoTrace {
    pub records: Vec<ServoRecord>,
    pub frames_dropped: u64,
}

pub const TRACE_HEADER: [&str; 10] = [
    "iter", "phase", "ex_px", "ey_px", "dγ0", "dγ1", "dγ2", "z_mm", "snr", "valid",
];

impl ServoTrace {
    fn push(
        &mut self,
        phase: Phase,
        error: PixelCoord,
        delta: JointDelta,
        world: &World,
        snr: Option<f64>,
        valid: Option<bool>,
    ) {
        self.records.push(ServoRecord {
            iter: self.records.len(),
            phase,
            ex_px: error.u,
            ey_px: error.v,
            delta: delta.as_array(),
            z_mm: world.state().defocus * 1e3,
            snr,
            valid,
        });
    }

    /// Phases never go backwards and iteration indices increase.
    pub fn is_ordered(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].phase <= w[1].phase && w[0].iter < w[1].iter)
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    pub fn csv_row(r: &ServoRecord) -> Vec<String> {
        vec![
            r.iter.to_string(),
            r.phase.to_string(),
            format!("{:.4}", r.ex_px),
            format!("{:.4}", r.ey_px),
            format!("{:.6e}", r.delta[0]),
            format!("{:.6e}", r.delta[1]),
            format!("{:.6e}", r.delta[2]),
            format!("{:.4}", r.z_mm),
            r.snr.map(|s| format!("{s:.1}")).unwrap_or_default(),
            r.valid.map(|v| v.to_string()).unwrap_or_default(),
        ]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        for r in &self.records {
            out.write_record(Self::csv_row(r))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A frame as seen by the planner. Frames taken while the arm settles carry
/// no detections.
#[derive(Debug, Clone)]
struct Frame {
    settled: bool,
    target: Option<Detection>,
    spot: Option<Detection>,
}

/// Detection stream feeding the planner through a latest-value mailbox.
struct Perception<'a> {
    ctx: &'a ServoContext,
    mailbox: Mailbox<Frame>,
    period: u64,
}

impl<'a> Perception<'a> {
    fn new(ctx: &'a ServoContext, period: u64) -> Self {
        Self {
            ctx,
            mailbox: Mailbox::new(),
            period,
        }
    }

    /// Posts the frames produced while the arm was moving, then one settled
    /// frame, and hands the planner the newest at its next tick.
    fn frame(
        &self,
        world: &mut World,
        since_tick: u64,
        near: Option<PixelCoord>,
        gate: f64,
        want_spot: bool,
    ) -> Frame {
        for _ in since_tick..world.tick() {
            self.mailbox.post(Frame {
                settled: false,
                target: None,
                spot: None,
            });
        }
        let lamp = world.lamp_on();
        let target = near.and_then(|n| {
            world.set_lamp(false);
            let img = world.render(Illumination::Led);
            detect_candidates(&img, &self.ctx.segmentation)
                .into_iter()
                .filter(|d| d.centroid.delta_to(&n).norm() <= gate)
                .min_by(|a, b| {
                    a.centroid
                        .delta_to(&n)
                        .norm()
                        .total_cmp(&b.centroid.delta_to(&n).norm())
                })
        });
        let spot = want_spot.then(|| {
            world.set_lamp(true);
            detect_nir_spot(&world.render(Illumination::NirLamp), &self.ctx.segmentation)
        });
        world.set_lamp(lamp);
        self.mailbox.post(Frame {
            settled: true,
            target,
            spot: spot.flatten(),
        });
        let wait = (self.period - world.tick() % self.period) % self.period;
        world.wait(wait);
        let (_, f) = self.mailbox.take().expect("frame just posted");
        debug_assert!(f.settled);
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XyOutcome {
    pub iterations: usize,
    pub final_error_px: PixelCoord,
    /// Last observed target pixel.
    pub target_px: PixelCoord,
}

/// XY phase. The target is observed under LED light and the focus point as
/// the NIR spot centroid; each step covers `λ` of the error until it is
/// within `lock_tol`.
pub fn run_xy(
    world: &mut World,
    ctx: &ServoContext,
    target_px: PixelCoord,
    params: &ServoParams,
    trace: &mut ServoTrace,
) -> Result<XyOutcome, ServoError> {
    let perception = Perception::new(ctx, params.planner_period_ticks);
    let mut last_target = target_px;
    let mut last_error = f64::INFINITY;
    let mut since = world.tick();
    for iter in 0..params.max_iters {
        let gate = params.gate_px.max(0.5 * last_error);
        let frame = perception.frame(world, since, Some(last_target), gate, true);
        let Some(target) = frame.target else {
            trace.frames_dropped += perception.mailbox.dropped();
            return Err(ServoError::TargetLost {
                phase: Phase::Xy,
                iter,
            });
        };
        last_target = target.centroid;
        let focus = frame.spot.map_or(ctx.focus_pixel, |s| s.centroid);
        let error = focus.delta_to(&target.centroid);
        last_error = error.norm();
        let (dx, dy) = ctx.displacement(&world.q(), error);
        if dx.hypot(dy) <= params.lock_tol {
            trace.push(Phase::Xy, error, JointDelta::ZERO, world, None, None);
            trace.frames_dropped += perception.mailbox.dropped();
            return Ok(XyOutcome {
                iterations: iter + 1,
                final_error_px: error,
                target_px: target.centroid,
            });
        }
        let delta = servo_xy_step(ctx, &world.q(), target.centroid, focus, params)?;
        trace.push(Phase::Xy, error, delta, world, None, None);
        since = world.tick();
        world.step_arm(delta)?;
    }
    trace.frames_dropped += perception.mailbox.dropped();
    Err(ServoError::NotConverged {
        phase: Phase::Xy,
        iters: params.max_iters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOutcome {
    pub iterations: usize,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    pub snr: f64,
}

/// Lowers the effector with the lamp on until the spectrometer SNR reaches
/// the threshold.
pub fn run_descent(
    world: &mut World,
    ctx: &ServoContext,
    params: &ServoParams,
    trace: &mut ServoTrace,
) -> Result<DescentOutcome, ServoError> {
    let perception = Perception::new(ctx, params.planner_period_ticks);
    world.set_lamp(true);
    let mut progress = DescentProgress::default();
    let (mut coarse, mut fine) = (0, 0);
    let mut since = world.tick();
    for iter in 0..params.max_iters {
        let frame = perception.frame(world, since, None, 0.0, true);
        let m = world.sample_nir()?;
        let snr = estimate_snr(&m.sample, &m.dark);
        let action = descend_step(
            ctx,
            &world.q(),
            frame.spot.as_ref(),
            Some(snr),
            &mut progress,
            params,
        );
        let action = match action {
            Ok(a) => a,
            Err(e) => {
                trace.push(
                    Phase::Descend,
                    PixelCoord::default(),
                    JointDelta::ZERO,
                    world,
                    Some(snr),
                    None,
                );
                return Err(e);
            }
        };
        let delta = match action {
            DescendAction::Complete => {
                trace.push(
                    Phase::Descend,
                    PixelCoord::default(),
                    JointDelta::ZERO,
                    world,
                    Some(snr),
                    None,
                );
                return Ok(DescentOutcome {
                    iterations: iter + 1,
                    coarse_steps: coarse,
                    fine_steps: fine,
                    snr,
                });
            }
            DescendAction::Coarse(d) => {
                coarse += 1;
                d
            }
            DescendAction::Fine(d) => {
                fine += 1;
                d
            }
        };
        trace.push(
            Phase::Descend,
            PixelCoord::default(),
            delta,
            world,
            Some(snr),
            None,
        );
        since = world.tick();
        let s = world.step_arm(delta)?;
        if s.collision {
            return Err(ServoError::CollisionRisk {
                reason: "lens below the collision margin".into(),
            });
        }
    }
    Err(ServoError::NotConverged {
        phase: Phase::Descend,
        iters: params.max_iters,
    })
}

fn move_planar(world: &mut World, ctx: &ServoContext, dx: f64, dy: f64) -> Result<(), ServoError> {
    let delta = ctx.arm.solve_increment(
        &world.q(),
        CartesianPoint::new(dx, dy, 0.0),
        1.0,
        SingularityPolicy::Damped,
    )?;
    world.step_arm(delta)?;
    Ok(())
}

fn return_to(world: &mut World, q: JointConfig) -> Result<(), ServoError> {
    let delta = q - world.q();
    world.step_arm(delta)?;
    Ok(())
}

/// Moves off the target to bare sand, records a reference and a dark frame,
/// and comes back. Sites are tried at `reference_offset` and 1.5× that in
/// four directions; a site is skipped if the camera sees a candidate near
/// the spot or the footprint turns out to touch a particle.
pub fn take_reference(
    world: &mut World,
    ctx: &ServoContext,
    params: &ServoParams,
) -> Result<ReferencePair, ServoError> {
    let home = world.q();
    let lamp = world.lamp_on();
    let dirs = [(0.0, 1.0), (0.0, -1.0), (1.0, 0.0), (-1.0, 0.0)];
    for scale in [1.0, 1.5] {
        for (ux, uy) in dirs {
            let r = params.reference_offset * scale;
            move_planar(world, ctx, ux * r, uy * r)?;
            world.set_lamp(false);
            let img = world.render(Illumination::Led);
            let clear_px = 0.5 * r / ctx.calibration.meters_per_pixel;
            let busy = detect_candidates(&img, &ctx.segmentation)
                .iter()
                .any(|d| d.centroid.delta_to(&ctx.focus_pixel).norm() < clear_px);
            world.set_lamp(true);
            let got = if busy {
                None
            } else {
                world.acquire_reference().ok()
            };
            return_to(world, home)?;
            world.set_lamp(lamp);
            if let Some(pair) = got {
                return Ok(pair);
            }
        }
    }
    Err(ServoError::NoCleanReference)
}

/// Offsets `(i, j)` of an outward square spiral starting at the origin.
pub fn square_spiral(n: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(n);
    let (mut x, mut y) = (0i32, 0i32);
    let dirs = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let mut run = 1;
    let mut d = 0;
    out.push((0, 0));
    while out.len() < n {
        for _ in 0..2 {
            for _ in 0..run {
                if out.len() >= n {
                    return out;
                }
                x += dirs[d].0;
                y += dirs[d].1;
                out.push((x, y));
            }
            d = (d + 1) % 4;
        }
        run += 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct ProbeRecord {
    pub index: usize,
    pub valid: bool,
    pub snr: f64,
    pub band_energy: f64,
    pub coverage: Option<CoverageEstimate>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TerminalOutcome {
    pub measurement: Measurement,
    pub coverage: CoverageEstimate,
    pub prediction: Option<Prediction>,
    pub probes: Vec<ProbeRecord>,
}

/// Spiral search from the current pose. Each probe settles, measures and is
/// accepted when the absorbance is valid, carries more band energy than bare
/// sand, and the estimated coverage is high enough.
pub fn terminal_refine(
    world: &mut World,
    ctx: &ServoContext,
    reference: &ReferencePair,
    params: &ServoParams,
    library: &SpectralLibrary,
    classifier: Option<&TrainedClassifier>,
    trace: &mut ServoTrace,
) -> Result<TerminalOutcome, ServoError> {
    world.set_lamp(true);
    let spiral = square_spiral(params.spiral_probes());
    let mut probes = Vec::new();
    let mut prev = (0, 0);
    for (index, &(i, j)) in spiral.iter().enumerate() {
        let mut delta = JointDelta::ZERO;
        if index > 0 {
            let (dx, dy) = (
                (i - prev.0) as f64 * params.spiral_step,
                (j - prev.1) as f64 * params.spiral_step,
            );
            delta = ctx.arm.solve_increment(
                &world.q(),
                CartesianPoint::new(dx, dy, 0.0),
                1.0,
                SingularityPolicy::Damped,
            )?;
            world.step_arm(delta)?;
        }
        prev = (i, j);
        let m = world.sample_nir()?;
        let assessed =
            assess_measurement(&m.sample, &m.dark, &reference.reference, &params.validity);
        let snr = estimate_snr(&m.sample, &m.dark);
        let (valid, energy, coverage, prediction) = match &assessed {
            Ok(meas) => {
                let cov = estimate_coverage(
                    &m.sample,
                    &m.dark,
                    &reference.reference,
                    &reference.dark,
                    library,
                    &MaterialLabel::TARGETS,
                );
                let pred =
                    match classifier {
                        Some(c) => Some(c.predict(&meas.absorbance.spectrum).map_err(|e| {
                            ServoError::InvalidParameter(format!("classifier: {e}"))
                        })?),
                        None => None,
                    };
                (true, meas.absorbance.band_energy(), cov, pred)
            }
            Err(_) => (false, 0.0, None, None),
        };
        trace.push(
            Phase::Terminal,
            PixelCoord::default(),
            delta,
            world,
            Some(snr),
            Some(valid),
        );
        probes.push(ProbeRecord {
            index,
            valid,
            snr,
            band_energy: energy,
            coverage,
            margin: prediction.as_ref().map(|p| p.margin),
        });
        let accepted = valid
            && energy > params.sand_energy_floor
            && coverage.is_some_and(|c| c.coverage >= params.min_coverage);
        if accepted {
            return Ok(TerminalOutcome {
                measurement: assessed.expect("valid"),
                coverage: coverage.expect("checked"),
                prediction,
                probes,
            });
        }
    }
    Err(ServoError::TargetUnreachable {
        probes: spiral.len(),
    })
}

/// Points in an engagement where a harness may inspect the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    XyConverged,
    DescentComplete,
    ReferenceTaken,
    TerminalComplete,
}

#[derive(Debug, Clone)]
pub struct Engagement {
    pub trace: ServoTrace,
    pub xy: Option<XyOutcome>,
    pub descent: Option<DescentOutcome>,
    pub result: Result<TerminalOutcome, String>,
}

/// Full approach on one image target: XY, descent, reference, terminal.
/// `observe` is called at each checkpoint that is reached.
#[allow(clippy::too_many_arguments)]
pub fn engage(
    world: &mut World,
    ctx: &ServoContext,
    target_px: PixelCoord,
    params: &ServoParams,
    library: &SpectralLibrary,
    classifier: Option<&TrainedClassifier>,
    observe: &mut dyn FnMut(Checkpoint, &World),
) -> Result<Engagement, ServoError> {
    params.validate()?;
    let mut trace = ServoTrace::default();
    world.set_lamp(false);
    let xy = run_xy(world, ctx, target_px, params, &mut trace)?;
    observe(Checkpoint::XyConverged, world);
    let descent = run_descent(world, ctx, params, &mut trace)?;
    observe(Checkpoint::DescentComplete, world);
    let result = take_reference(world, ctx, params).and_then(|reference| {
        observe(Checkpoint::ReferenceTaken, world);
        terminal_refine(
            world, ctx, &reference, params, library, classifier, &mut trace,
        )
    });
    observe(Checkpoint::TerminalComplete, world);
    world.set_lamp(false);
    Ok(Engagement {
        trace,
        xy: Some(xy),
        descent: Some(descent),
        result: result.map_err(|e| e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ActuationParams, Particle, ParticleColor, Scene, Terrain};
    use crate::spectra::WavelengthGrid;
    use std::sync::Arc;

    fn setup(
        actuation: ActuationParams,
        offset: (f64, f64),
        diameter: f64,
    ) -> (World, ServoContext) {
        let cfg = SimConfig {
            actuation,
            ..SimConfig::default()
        };
        let scene = Scene::new(Terrain::flat(), vec![], 11).unwrap();
        let mut w = World::new(
            scene,
            cfg,
            &SpectralLibrary::default_nir(),
            Arc::new(WavelengthGrid::default_nir()),
            5,
        )
        .unwrap();
        let f = w.focus_point();
        w.scene.particles.push(Particle {
            id: 0,
            x: f.x + offset.0,
            y: f.y + offset.1,
            diameter,
            color: ParticleColor::Blue,
            material: MaterialLabel::Pp,
        });
        let ctx = ServoContext::from_config(&cfg, SegmentationParams::default()).unwrap();
        (w, ctx)
    }

    #[test]
    fn zero_error_gives_zero_step() {
        let (w, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        let p = PixelCoord::new(100.0, 50.0);
        let d = servo_xy_step(&ctx, &w.q(), p, p, &ServoParams::default()).unwrap();
        assert_eq!(d, JointDelta::ZERO);
    }

    #[test]
    fn xy_error_contracts_by_one_minus_lambda() {
        let (mut w, ctx) = setup(ActuationParams::ideal(), (0.012, -0.008), 3e-3);
        let params = ServoParams::default();
        let mut trace = ServoTrace::default();
        run_xy(&mut w, &ctx, ctx.focus_pixel, &params, &mut trace).ok();
        let errs: Vec<f64> = trace
            .records
            .iter()
            .map(|r| r.ex_px.hypot(r.ey_px))
            .collect();
        assert!(errs.len() > 5);
        // linearized plant oracle: e_{k+1} = (1 - λ) e_k
        for w in errs[..4].windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - 0.8).abs() < 0.05, "ratio {ratio}");
        }
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn descent_from_scan_height() {
        let (mut w, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        let params = ServoParams::default();
        let mut trace = ServoTrace::default();
        let out = run_descent(&mut w, &ctx, &params, &mut trace).unwrap();
        assert!(out.coarse_steps > 0 && out.fine_steps > 0);
        assert!(out.iterations < 40);
        assert!(out.snr >= params.snr_threshold);
        assert!(w.state().defocus.abs() < 0.3e-3);
    }

    #[test]
    fn descent_onto_bump_never_collides() {
        let (mut w, ctx) = setup(ActuationParams::default(), (0.0, 0.0), 3e-3);
        let f = w.focus_point();
        w.scene.terrain = Terrain::flat().with_bump(crate::sim::Bump {
            x: f.x,
            y: f.y,
            height: 3e-3,
            sigma: 0.01,
        });
        assert!((w.state().defocus - 0.017).abs() < 1e-4);
        let mut trace = ServoTrace::default();
        let out = run_descent(&mut w, &ctx, &ServoParams::default(), &mut trace).unwrap();
        assert!(out.iterations < 40);
        assert!(w.state().defocus.abs() < 0.3e-3);
        let lowest = trace
            .records
            .iter()
            .map(|r| r.z_mm)
            .fold(f64::INFINITY, f64::min);
        assert!(lowest * 1e-3 > ctx.collision_defocus);
    }

    #[test]
    fn descent_done_immediately_when_snr_high() {
        let (w, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        let a = descend_step(
            &ctx,
            &w.q(),
            None,
            Some(1e5),
            &mut DescentProgress::default(),
            &ServoParams::default(),
        )
        .unwrap();
        assert_eq!(a, DescendAction::Complete);
    }

    #[test]
    fn fine_budget_guards_collision() {
        let (w, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        let p = ServoParams::default();
        let mut used = DescentProgress {
            fine_descended: p.fine_budget,
            total_descended: 0.02,
            anchor: None,
        };
        assert!(matches!(
            descend_step(&ctx, &w.q(), None, Some(0.0), &mut used, &p),
            Err(ServoError::CollisionRisk { .. })
        ));
    }

    #[test]
    fn spot_size_inverts_to_defocus() {
        let (_, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        for d in [0.0, 1e-3, 5e-3, 20e-3] {
            let r = 0.5e-3 + 0.3 * d;
            let px = 2.0 * r * ctx.intrinsics.omega / (0.08 + d);
            assert!((ctx.defocus_from_spot(px) - d).abs() < 1e-9);
        }
    }

    #[test]
    fn spiral_covers_square() {
        let s = square_spiral(25);
        assert_eq!(s[0], (0, 0));
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 25);
        assert!(s.iter().all(|(i, j)| i.abs() <= 2 && j.abs() <= 2));
        assert_eq!(ServoParams::default().spiral_probes(), 25);
    }

    fn terminal_with_offset(
        offset: (f64, f64),
        with_particle: bool,
    ) -> Result<TerminalOutcome, ServoError> {
        let (mut w, ctx) = setup(ActuationParams::ideal(), (0.0, 0.0), 3e-3);
        if !with_particle {
            w.scene.particles.clear();
        }
        let params = ServoParams::default();
        let mut trace = ServoTrace::default();
        run_descent(&mut w, &ctx, &params, &mut trace).unwrap();
        move_planar(&mut w, &ctx, offset.0, offset.1).unwrap();
        let reference = take_reference(&mut w, &ctx, &params).unwrap();
        terminal_refine(
            &mut w,
            &ctx,
            &reference,
            &params,
            &SpectralLibrary::default_nir(),
            None,
            &mut trace,
        )
    }

    #[test]
    fn terminal_single_probe_when_centred() {
        let out = terminal_with_offset((0.0, 0.0), true).unwrap();
        assert_eq!(out.probes.len(), 1);
        assert_eq!(out.coverage.material, MaterialLabel::Pp);
    }

    #[test]
    fn terminal_recovers_from_offset() {
        // 0.8 mm off a 3 mm particle: the first ring of the spiral suffices
        for dir in [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (0.6, 0.8)] {
            let out = terminal_with_offset((0.8e-3 * dir.0, 0.8e-3 * dir.1), true).unwrap();
            assert!(
                out.probes.len() <= 9,
                "{dir:?}: {} probes",
                out.probes.len()
            );
        }
    }

    #[test]
    fn terminal_exhausts_without_particle() {
        assert!(matches!(
            terminal_with_offset((0.0, 0.0), false),
            Err(ServoError::TargetUnreachable { probes: 25 })
        ));
    }
}
