//! Survey mission driven by the state machine in [`fsm`].
//!
//! The rover scans a plot in boustrophedon lanes and engages each candidate
//! with the servo pipeline. Every transition is logged so a seeded run can be
//! replayed byte for byte.

pub mod config;
pub mod fsm;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    default_power_table, endurance_report, ClassifierConfig, EnduranceReport, MissionConfig,
    PlotConfig, PowerEntry, PowerLine, RoverConfig,
};
pub use fsm::{next_state, MissionEvent, MissionState, ProtocolError, TRANSITIONS};

use crate::camera::PixelCoord;
use crate::classifier::{synthesize_dataset, train, ClassifierError, TrainedClassifier};
use crate::kinematics::{JointConfig, KinematicsError};
use crate::segmentation::{detect_candidates, Detection, DetectionKind, Illumination};
use crate::servo::{
    run_descent, run_xy, take_reference, terminal_refine, ServoContext, ServoError, ServoTrace,
    TRACE_HEADER,
};
use crate::sim::{RoverPose, SimError, World, SCAN_REACH};
use crate::spectra::{SpectralLibrary, WavelengthGrid};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Detection ticks per second of simulated time.
pub const TICK_HZ: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: usize,
    pub tick: u64,
    pub state: MissionState,
    pub event: MissionEvent,
    pub next: MissionState,
    pub target_id: Option<usize>,
    pub payload: String,
}

pub const LOG_HEADER: [&str; 7] = [
    "seq",
    "time_s",
    "state",
    "event",
    "next_state",
    "target_id",
    "payload",
];

/// Append-only record of every state transition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MissionLog {
    records: Vec<LogRecord>,
}

impl MissionLog {
    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LOG_HEADER)?;
        for r in &self.records {
            out.write_record([
                r.seq.to_string(),
                format!("{:.3}", r.tick as f64 / TICK_HZ),
                r.state.to_string(),
                r.event.to_string(),
                r.next.to_string(),
                r.target_id.map(|t| t.to_string()).unwrap_or_default(),
                r.payload.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn states_visited(&self) -> Vec<MissionState> {
        let mut v: Vec<MissionState> = self
            .records
            .iter()
            .flat_map(|r| [r.state, r.next])
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

/// State machine plus its log.
struct Controller {
    state: MissionState,
    log: MissionLog,
}

impl Controller {
    fn fire(
        &mut self,
        world: &World,
        event: MissionEvent,
        target: Option<usize>,
        payload: String,
    ) -> Result<MissionState, MissionError> {
        let next = next_state(self.state, event)?;
        self.log.records.push(LogRecord {
            seq: self.log.records.len(),
            tick: world.tick(),
            state: self.state,
            event,
            next,
            target_id: target,
            payload,
        });
        self.state = next;
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub target_id: usize,
    /// World position estimated from the scan image (m).
    pub estimate: [f64; 2],
    /// Focus point when the episode ended (m).
    pub final_focus: [f64; 2],
    pub outcome: String,
    pub predicted: Option<String>,
    pub margin: Option<f64>,
    pub probes: usize,
    /// Ground-truth particle this target was matched to.
    pub particle_id: Option<usize>,
    pub true_material: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub seed: u64,
    pub particles_total: usize,
    pub found: usize,
    pub missed: usize,
    pub out_of_swath: usize,
    pub false_positives: usize,
    pub engagements: usize,
    pub valid_samples: usize,
    pub failed_samples: usize,
    pub aborted: usize,
    pub correctly_classified: usize,
    /// Correct over found; `None` when nothing was found.
    pub classification_accuracy: Option<f64>,
    pub per_class: BTreeMap<String, usize>,
    pub lanes: usize,
    pub waypoints: usize,
    pub path_length_m: f64,
    pub area_covered_m2: f64,
    pub duration_s: f64,
    pub states_visited: Vec<MissionState>,
    pub targets: Vec<TargetRecord>,
}

#[derive(Debug, Clone)]
pub struct MissionOutput {
    pub log: MissionLog,
    pub episodes: Vec<(usize, ServoTrace)>,
    pub summary: MissionSummary,
}

pub fn load_library(
    cfg: &ClassifierConfig,
    grid: &WavelengthGrid,
) -> Result<SpectralLibrary, MissionError> {
    match &cfg.library {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            SpectralLibrary::from_json(&text, grid).map_err(|e| MissionError::Config(e.to_string()))
        }
        None => Ok(SpectralLibrary::default_nir()),
    }
}

pub fn load_or_train(
    cfg: &ClassifierConfig,
    library: &SpectralLibrary,
    grid: &Arc<WavelengthGrid>,
) -> Result<TrainedClassifier, MissionError> {
    match &cfg.model {
        Some(p) => Ok(TrainedClassifier::load(p)?),
        None => {
            let rows = synthesize_dataset(library, grid, &cfg.dataset)?;
            Ok(train(&rows, cfg.variant, &cfg.train)?)
        }
    }
}

/// Lateral focus offsets of the scan poses across one swath.
fn scan_offsets(cfg: &MissionConfig, half_view: f64) -> Vec<f64> {
    let n = cfg.plot.scan_poses;
    if n == 1 {
        return vec![0.0];
    }
    let span = (cfg.rover.swath_m - 2.0 * half_view).max(0.0);
    let limit = 0.9 * SCAN_REACH;
    (0..n)
        .map(|i| (span * (i as f64 / (n - 1) as f64 - 0.5)).clamp(-limit, limit))
        .collect()
}

fn lane_centers(cfg: &MissionConfig) -> Vec<f64> {
    let p = &cfg.plot;
    let n = (p.width / cfg.rover.swath_m).ceil().max(1.0) as usize;
    let first = p.y_center - 0.5 * (n as f64 - 1.0) * cfg.rover.swath_m;
    (0..n)
        .map(|k| first + k as f64 * cfg.rover.swath_m)
        .collect()
}

fn variance(v: &[usize]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<usize>() as f64 / n;
    v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
}

struct Survey<'a> {
    cfg: &'a MissionConfig,
    ctx: ServoContext,
    library: &'a SpectralLibrary,
    classifier: &'a TrainedClassifier,
    world: World,
    ctl: Controller,
    /// Positions already engaged (estimates and final focus points).
    visited: Vec<[f64; 2]>,
    targets: Vec<TargetRecord>,
    episodes: Vec<(usize, ServoTrace)>,
    path_length: f64,
    aborted: usize,
}

impl Survey<'_> {
    fn move_to(&mut self, q: JointConfig) -> Result<(), MissionError> {
        let delta = q - self.world.q();
        self.world.step_arm(delta)?;
        Ok(())
    }

    fn scan_pose(&self, lateral: f64) -> Result<JointConfig, MissionError> {
        let g = (lateral / SCAN_REACH).asin();
        let b = self.cfg.sim.rig.base_offset;
        let target = self.cfg.sim.wrist_for_focus(
            b[0] + SCAN_REACH * g.cos(),
            b[1] + SCAN_REACH * g.sin(),
            self.cfg.sim.rig.scan_height,
        );
        let seed = self.cfg.sim.nominal_pose()?;
        Ok(self.world.arm().inverse_position(target, seed)?)
    }

    /// Model-based world position of an image point: the commanded focus
    /// point plus the calibrated image offset.
    fn estimate(&self, px: PixelCoord) -> [f64; 2] {
        let q = self.world.q();
        let w = self.world.arm().geometry.cartesian(&q);
        let b = self.cfg.sim.rig.base_offset;
        let (dx, dy) = self
            .ctx
            .displacement(&q, self.ctx.focus_pixel.delta_to(&px));
        let rover = self.world.rover();
        let (x, y) = rover.to_world(b[0] + w.x + dx, b[1] + w.y + dy);
        [x, y]
    }

    fn in_lane(&self, p: [f64; 2], lane: f64) -> bool {
        let plot = &self.cfg.plot;
        p[0] >= plot.x_start
            && p[0] <= plot.x_end
            && (p[1] - plot.y_center).abs() <= 0.5 * plot.width
            && (p[1] - lane).abs() <= 0.5 * self.cfg.rover.swath_m
    }

    fn reachable(&self, p: [f64; 2]) -> bool {
        let (x, y) = self.world.rover().to_rover(p[0], p[1]);
        let b = self.cfg.sim.rig.base_offset;
        let (dx, dy) = (x - b[0], y - b[1]);
        let r = dx.hypot(dy);
        dx >= 0.0 && r >= self.cfg.plot.reach_min && r <= self.cfg.plot.reach_max
    }

    fn fresh_candidates(&self, lane: f64) -> Vec<(Detection, [f64; 2])> {
        let img = self.world.render(Illumination::Led);
        let r = self.cfg.plot.dedup_radius;
        detect_candidates(&img, &self.cfg.segmentation)
            .into_iter()
            .filter(|d| d.kind == DetectionKind::CandidateParticle)
            .map(|d| {
                let e = self.estimate(d.centroid);
                (d, e)
            })
            .filter(|(_, e)| self.in_lane(*e, lane) && self.reachable(*e))
            .filter(|(_, e)| {
                self.visited
                    .iter()
                    .all(|v| (v[0] - e[0]).hypot(v[1] - e[1]) > r)
            })
            .collect()
    }

    fn fire(
        &mut self,
        event: MissionEvent,
        target: Option<usize>,
        payload: String,
    ) -> Result<(), MissionError> {
        self.ctl.fire(&self.world, event, target, payload)?;
        Ok(())
    }

    fn stow(&mut self) -> Result<(), MissionError> {
        self.world.set_lamp(false);
        self.move_to(JointConfig::from_array(self.cfg.stow_pose))
    }

    /// Abort to STOW and come back to scanning at the same waypoint.
    fn abort_and_resume(
        &mut self,
        target: Option<usize>,
        reason: String,
        scan_q: JointConfig,
    ) -> Result<(), MissionError> {
        self.aborted += 1;
        self.fire(MissionEvent::Abort, target, reason)?;
        self.stow()?;
        self.fire(MissionEvent::Resume, target, String::new())?;
        self.fire(MissionEvent::WaypointReached, target, "redeploy".into())?;
        self.move_to(scan_q)
    }

    fn focus_xy(&self) -> [f64; 2] {
        let f = self.world.focus_point();
        [f.x, f.y]
    }

    fn record(
        &mut self,
        id: usize,
        estimate: [f64; 2],
        outcome: &str,
        probes: usize,
    ) -> &mut TargetRecord {
        let final_focus = self.focus_xy();
        self.visited.push(final_focus);
        self.targets.push(TargetRecord {
            target_id: id,
            estimate,
            final_focus,
            outcome: outcome.into(),
            predicted: None,
            margin: None,
            probes,
            particle_id: None,
            true_material: None,
            correct: false,
        });
        self.targets.last_mut().expect("just pushed")
    }

    /// One candidate from SCAN back to SCAN (or through STOW on failure).
    fn engage(
        &mut self,
        det: &Detection,
        estimate: [f64; 2],
        scan_q: JointConfig,
    ) -> Result<(), MissionError> {
        let id = self.targets.len();
        self.visited.push(estimate);
        self.fire(
            MissionEvent::CandidateFound,
            Some(id),
            format!(
                "u={:.2};v={:.2};x={:.4};y={:.4};area={:.0}",
                det.centroid.u, det.centroid.v, estimate[0], estimate[1], det.area
            ),
        )?;
        let mut trace = ServoTrace::default();
        let params = self.cfg.servo;

        let xy = match run_xy(
            &mut self.world,
            &self.ctx,
            det.centroid,
            &params,
            &mut trace,
        ) {
            Ok(xy) => xy,
            Err(e @ (ServoError::TargetLost { .. } | ServoError::NotConverged { .. })) => {
                self.record(id, estimate, "target_lost", 0);
                self.episodes.push((id, trace));
                self.fire(MissionEvent::TargetLost, Some(id), e.to_string())?;
                return self.move_to(scan_q);
            }
            Err(e) => return Err(e.into()),
        };
        self.fire(
            MissionEvent::XyConverged,
            Some(id),
            format!(
                "iters={};err_px={:.3}",
                xy.iterations,
                xy.final_error_px.norm()
            ),
        )?;

        let descent = match run_descent(&mut self.world, &self.ctx, &params, &mut trace) {
            Ok(d) => d,
            Err(e) => {
                self.record(id, estimate, "descent_failed", 0);
                self.episodes.push((id, trace));
                return self.abort_and_resume(Some(id), e.to_string(), scan_q);
            }
        };
        self.fire(
            MissionEvent::SnrReached,
            Some(id),
            format!("iters={};snr={:.1}", descent.iterations, descent.snr),
        )?;

        let reference = match take_reference(&mut self.world, &self.ctx, &params) {
            Ok(r) => r,
            Err(e) => {
                self.record(id, estimate, "no_reference", 0);
                self.episodes.push((id, trace));
                return self.abort_and_resume(Some(id), e.to_string(), scan_q);
            }
        };
        self.fire(MissionEvent::ReferenceClean, Some(id), String::new())?;

        let result = terminal_refine(
            &mut self.world,
            &self.ctx,
            &reference,
            &params,
            self.library,
            Some(self.classifier),
            &mut trace,
        );
        match result {
            Ok(t) => {
                self.fire(
                    MissionEvent::SampleDone,
                    Some(id),
                    format!(
                        "valid=true;probes={};coverage={:.3}",
                        t.probes.len(),
                        t.coverage.coverage
                    ),
                )?;
                let pred = t.prediction.clone();
                let rec = self.record(id, estimate, "sampled", t.probes.len());
                rec.predicted = pred.as_ref().map(|p| p.label.name().to_string());
                rec.margin = pred.as_ref().map(|p| p.margin);
                let payload = match &pred {
                    Some(p) => format!("label={};margin={:.3}", p.label, p.margin),
                    None => "label=none".into(),
                };
                self.fire(MissionEvent::Logged, Some(id), payload)?;
            }
            Err(ServoError::TargetUnreachable { probes }) => {
                self.fire(
                    MissionEvent::SampleDone,
                    Some(id),
                    format!("valid=false;probes={probes}"),
                )?;
                self.record(id, estimate, "no_sample", probes);
                self.fire(MissionEvent::Logged, Some(id), "label=no_sample".into())?;
            }
            Err(e) => return Err(e.into()),
        }
        self.episodes.push((id, trace));
        self.world.set_lamp(false);
        self.move_to(scan_q)
    }

    /// Scans all poses at the current waypoint; returns the number of
    /// candidates engaged.
    fn scan_waypoint(&mut self, lane: f64, offsets: &[f64]) -> Result<usize, MissionError> {
        let mut engaged = 0;
        for &lat in offsets {
            let q = self.scan_pose(lat)?;
            self.move_to(q)?;
            for _ in 0..32 {
                let Some((det, est)) = self.fresh_candidates(lane).into_iter().next() else {
                    break;
                };
                self.engage(&det, est, q)?;
                engaged += 1;
            }
        }
        Ok(engaged)
    }

    fn drive_to(&mut self, pose: RoverPose) -> Result<(), MissionError> {
        let cur = self.world.rover();
        let d = (pose.x - cur.x).hypot(pose.y - cur.y);
        self.path_length += d;
        self.world
            .wait((d / self.cfg.rover.speed_mps * TICK_HZ).round() as u64);
        self.world.set_rover(pose);
        Ok(())
    }
}

/// Runs a full seeded survey. Config errors surface before anything moves.
pub fn run_mission(cfg: &MissionConfig, seed: u64) -> Result<MissionOutput, MissionError> {
    cfg.validate()?;
    let grid = Arc::new(WavelengthGrid::default_nir());
    let library = load_library(&cfg.classifier, &grid)?;
    let classifier = load_or_train(&cfg.classifier, &library, &grid)?;
    run_mission_with(cfg, seed, &library, &classifier)
}

pub fn run_mission_with(
    cfg: &MissionConfig,
    seed: u64,
    library: &SpectralLibrary,
    classifier: &TrainedClassifier,
) -> Result<MissionOutput, MissionError> {
    cfg.validate()?;
    let grid = Arc::new(WavelengthGrid::default_nir());
    let scene = cfg.scene.generate(seed)?;
    let world = World::new(scene, cfg.sim, library, grid, seed)?;
    let ctx = ServoContext::from_config(&cfg.sim, cfg.segmentation)?;
    let half_view = 0.5 * ctx.intrinsics.height.min(ctx.intrinsics.width) as f64
        / ctx.intrinsics.omega
        * cfg.sim.rig.nominal_zc();
    let mut s = Survey {
        cfg,
        ctx,
        library,
        classifier,
        world,
        ctl: Controller {
            state: MissionState::Stow,
            log: MissionLog::default(),
        },
        visited: Vec::new(),
        targets: Vec::new(),
        episodes: Vec::new(),
        path_length: 0.0,
        aborted: 0,
    };
    let offsets = scan_offsets(cfg, half_view);
    let lanes = lane_centers(cfg);
    let reach = cfg.sim.rig.base_offset[0] + SCAN_REACH;
    let plot = &cfg.plot;

    // the rover starts stowed at the first waypoint
    let start = RoverPose::new(plot.x_start - reach, lanes[0], 0.0);
    s.world.set_rover(start);
    s.stow()?;
    s.fire(MissionEvent::Resume, None, "start".into())?;

    let mut counts: Vec<usize> = Vec::new();
    let mut waypoints = 0;
    for (k, &lane) in lanes.iter().enumerate() {
        let forward = k % 2 == 0;
        let heading = if forward { 0.0 } else { std::f64::consts::PI };
        let mut along = if forward { plot.x_start } else { plot.x_end };
        loop {
            let pose = RoverPose::new(
                along - reach * heading.cos(),
                lane - reach * heading.sin(),
                heading,
            );
            s.drive_to(pose)?;
            waypoints += 1;
            s.fire(
                MissionEvent::WaypointReached,
                None,
                format!("lane={k};x={along:.4};y={lane:.4}"),
            )?;
            let n = s.scan_waypoint(lane, &offsets)?;
            counts.push(n);
            s.stow()?;
            s.fire(MissionEvent::NoCandidates, None, format!("engaged={n}"))?;

            let window = &counts[counts.len().saturating_sub(plot.variance_window)..];
            let step = if window.len() >= 2 && variance(window) > plot.variance_threshold {
                plot.dense_spacing
            } else {
                plot.waypoint_spacing
            };
            let next = if forward { along + step } else { along - step };
            let done_at = if forward { plot.x_end } else { plot.x_start };
            if (forward && along >= plot.x_end) || (!forward && along <= plot.x_start) {
                break;
            }
            along = if forward {
                next.min(done_at)
            } else {
                next.max(done_at)
            };
        }
    }
    s.fire(MissionEvent::Abort, None, "mission_complete".into())?;

    let summary = summarize(&s, seed, lanes.len(), waypoints);
    Ok(MissionOutput {
        log: s.ctl.log,
        episodes: s.episodes,
        summary,
    })
}

fn summarize(s: &Survey<'_>, seed: u64, lanes: usize, waypoints: usize) -> MissionSummary {
    let plot = &s.cfg.plot;
    let particles = &s.world.scene.particles;
    let in_plot = |x: f64, y: f64| {
        x >= plot.x_start && x <= plot.x_end && (y - plot.y_center).abs() <= 0.5 * plot.width
    };
    let mut targets = s.targets.clone();
    targets.sort_by_key(|t| t.target_id);
    let mut first_hit: BTreeMap<usize, usize> = BTreeMap::new();
    let mut false_positives = 0;
    for t in &mut targets {
        let probe = if t.outcome == "sampled" || t.outcome == "no_sample" {
            t.final_focus
        } else {
            t.estimate
        };
        let hit = particles
            .iter()
            .map(|p| (p, (p.x - probe[0]).hypot(p.y - probe[1])))
            .filter(|(p, d)| *d <= p.radius() + 5e-3)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match hit {
            Some((p, _)) => {
                t.particle_id = Some(p.id);
                t.true_material = Some(p.material.name().to_string());
                t.correct = t.predicted.as_deref() == Some(p.material.name());
                first_hit.entry(p.id).or_insert(t.target_id);
            }
            None => false_positives += 1,
        }
    }
    let mut found = 0;
    let mut missed = 0;
    let mut out_of_swath = 0;
    let mut correct = 0;
    for p in particles {
        if !in_plot(p.x, p.y) {
            out_of_swath += 1;
        } else if let Some(&tid) = first_hit.get(&p.id) {
            found += 1;
            if targets[tid].correct {
                correct += 1;
            }
        } else {
            missed += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for t in &targets {
        let key = t.predicted.clone().unwrap_or_else(|| t.outcome.clone());
        *per_class.entry(key).or_insert(0) += 1;
    }
    MissionSummary {
        seed,
        particles_total: particles.len(),
        found,
        missed,
        out_of_swath,
        false_positives,
        engagements: targets.len(),
        valid_samples: targets.iter().filter(|t| t.outcome == "sampled").count(),
        failed_samples: targets.iter().filter(|t| t.outcome == "no_sample").count(),
        aborted: s.aborted,
        correctly_classified: correct,
        classification_accuracy: (found > 0).then(|| correct as f64 / found as f64),
        per_class,
        lanes,
        waypoints,
        path_length_m: s.path_length,
        area_covered_m2: lanes as f64 * (plot.x_end - plot.x_start) * s.cfg.rover.swath_m,
        duration_s: s.world.tick() as f64 / TICK_HZ,
        states_visited: s.ctl.log.states_visited(),
        targets,
    }
}

pub fn write_episodes<W: Write>(episodes: &[(usize, ServoTrace)], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["target_id"];
    header.extend(TRACE_HEADER);
    out.write_record(&header)?;
    for (id, trace) in episodes {
        for r in &trace.records {
            let mut row = vec![id.to_string()];
            row.extend(ServoTrace::csv_row(r));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub const MISSION_FILES: [&str; 3] = ["mission_log.csv", "episode.csv", "summary.json"];
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub seed: u64,
    pub config: MissionConfig,
    pub files: Vec<String>,
}

/// File contents of a mission run, keyed by file name.
pub fn render_outputs(
    out: &MissionOutput,
) -> Result<BTreeMap<&'static str, Vec<u8>>, MissionError> {
    let mut log = Vec::new();
    out.log.write_csv(&mut log)?;
    let mut episodes = Vec::new();
    write_episodes(&out.episodes, &mut episodes)?;
    let mut summary = serde_json::to_vec_pretty(&out.summary)?;
    summary.push(b'\n');
    Ok(BTreeMap::from([
        (MISSION_FILES[0], log),
        (MISSION_FILES[1], episodes),
        (MISSION_FILES[2], summary),
    ]))
}

pub fn write_outputs(
    dir: &Path,
    cfg: &MissionConfig,
    seed: u64,
    out: &MissionOutput,
) -> Result<(), MissionError> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in render_outputs(out)? {
        std::fs::write(dir.join(name), bytes)?;
    }
    let manifest = RunManifest {
        version: 1,
        seed,
        config: cfg.clone(),
        files: MISSION_FILES.iter().map(|s| s.to_string()).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileComparison {
    pub file: String,
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub seed: u64,
    pub identical: bool,
    pub files: Vec<FileComparison>,
}

/// Re-runs the mission recorded next to `log` (a run directory or any file
/// inside it) and compares every output byte for byte.
pub fn replay(log: &Path) -> Result<ReplayReport, MissionError> {
    let dir: PathBuf = if log.is_dir() {
        log.to_path_buf()
    } else {
        log.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let out = run_mission(&manifest.config, manifest.seed)?;
    let fresh = render_outputs(&out)?;
    let mut files = Vec::new();
    for name in &manifest.files {
        let old = std::fs::read(dir.join(name)).ok();
        let identical = match (old, fresh.get(name.as_str())) {
            (Some(a), Some(b)) => a == *b,
            _ => false,
        };
        files.push(FileComparison {
            file: name.clone(),
            identical,
        });
    }
    Ok(ReplayReport {
        seed: manifest.seed,
        identical: files.iter().all(|f| f.identical),
        files,
    })
}
