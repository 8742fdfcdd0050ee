//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Rotation2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpsurvey::classifier::{
    evaluate, synthesize_dataset, train, DatasetSpec, TrainOptions, Variant,
};
use mpsurvey::experiments::{
    run_sensitivity, run_sweep, write_sensitivity_csv, write_sweep_csv, SensitivityConfig,
    SweepConfig, SENSITIVITY_HEADER, SWEEP_HEADER,
};
use mpsurvey::kinematics::{ArmGeometry, CartesianPoint, JointConfig};
use mpsurvey::mission::{
    default_power_table, endurance_report, next_state, replay, run_mission, write_outputs,
    MissionConfig, MissionEvent, MissionState, RoverConfig,
};
use mpsurvey::segmentation::{detect_candidates, DetectionKind, Illumination, SegmentationParams};
use mpsurvey::sim::{Particle, ParticleColor, Scene, SimConfig, Terrain, TerrainParams, World};
use mpsurvey::spectra::{
    absorbance_unchecked, MaterialLabel, SpectralLibrary, Spectrum, SpectrumRole, WavelengthGrid,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid() -> Arc<WavelengthGrid> {
    Arc::new(WavelengthGrid::default_nir())
}

/// Last-joint position built from planar link rotations, written
/// independently of the library's closed form.
fn fk_oracle(g: &ArmGeometry, q: &JointConfig) -> CartesianPoint {
    // link 1 leans from vertical by γ1 + α, link 2 points below horizontal by γ1 + γ2
    let up = Vector2::new(0.0, 1.0);
    let fwd = Vector2::new(1.0, 0.0);
    let l1 = Rotation2::new(-(q.gamma1 + g.alpha_j)) * up * g.r1;
    let l2 = Rotation2::new(-(q.gamma1 + q.gamma2)) * fwd * g.r2;
    let p = l1 + l2;
    CartesianPoint::new(p.x * q.gamma0.cos(), p.x * q.gamma0.sin(), p.y)
}

fn c1_kinematics() -> Outcome {
    let cfg = SimConfig::default();
    let arm = cfg.build_arm().unwrap();
    let g = arm.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let (mut worst_rel, mut worst_fk, mut worst_cyl) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a: [f64; 3] =
            std::array::from_fn(|i| rng.random_range(arm.limits.lower[i]..=arm.limits.upper[i]));
        let q = JointConfig::from_array(a);
        let j = arm.image_jacobian(&q).unwrap();
        let mut fd = nalgebra::Matrix3::zeros();
        for k in 0..3 {
            let (mut qp, mut qm) = (a, a);
            qp[k] += h;
            qm[k] -= h;
            let d = (g.cartesian(&JointConfig::from_array(qp)).to_vector()
                - g.cartesian(&JointConfig::from_array(qm)).to_vector())
                / (2.0 * h);
            fd.set_column(k, &d);
        }
        worst_rel = worst_rel.max((j - fd).norm() / j.norm());
        let p = g.cartesian(&q);
        worst_fk = worst_fk.max((p - fk_oracle(&g, &q)).norm());
        worst_cyl = worst_cyl.max((g.cylindrical(&q).to_cartesian() - p).norm());
    }
    outcome(
        worst_rel < 1e-6 && worst_fk < 1e-12 && worst_cyl < 1e-15,
        format!("1000 configs: max Jacobian rel err {worst_rel:.2e}, FK vs oracle {worst_fk:.1e} m, cyl/cart {worst_cyl:.1e} m"),
    )
}

fn c2_servo(dir: &Path) -> Outcome {
    let cfg = SweepConfig::default();
    let rows = run_sweep(&cfg, &SpectralLibrary::default_nir(), &grid()).unwrap();
    let path = dir.join("sweep.csv");
    write_sweep_csv(&rows, std::fs::File::create(&path).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header_ok = text.lines().next() == Some(SWEEP_HEADER.join(",").as_str());
    let ok = rows.iter().filter(|r| r.success(1.0)).count();
    let worst = rows
        .iter()
        .filter_map(|r| r.after_mm)
        .fold(0.0f64, f64::max);
    outcome(
        rows.len() == 100 && ok >= 95 && header_ok,
        format!("{ok}/{} trials within 1.0 mm after terminal refine (worst {worst:.3} mm), csv header ok: {header_ok}", rows.len()),
    )
}

fn c3_sensitivity(dir: &Path) -> Outcome {
    let cfg = SensitivityConfig::default();
    let rows = run_sensitivity(&cfg, &SpectralLibrary::default_nir(), &grid()).unwrap();
    let path = dir.join("sensitivity.csv");
    write_sensitivity_csv(&rows, std::fs::File::create(&path).unwrap()).unwrap();
    let header_ok = std::fs::read_to_string(&path).unwrap().lines().next()
        == Some(SENSITIVITY_HEADER.join(",").as_str());
    let valid_ok = rows.iter().all(|r| r.valid == (r.offset_mm <= 0.5));
    let monotone = rows
        .windows(2)
        .all(|w| w[1].band_amplitude < w[0].band_amplitude);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{}mm:{}/{:.3}",
                r.offset_mm,
                if r.valid { "valid" } else { "invalid" },
                r.band_amplitude
            )
        })
        .collect();
    outcome(
        valid_ok && monotone && header_ok && rows.len() == 5,
        summary.join(" "),
    )
}

fn c4_absorbance() -> Outcome {
    let g = grid();
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut e0, mut e1) = (0.0f64, 0.0f64);
    let mut mask_ok = true;
    for _ in 0..200 {
        let dark: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
        let reference: Vec<f64> = dark
            .iter()
            .map(|d| d + rng.random_range(10.0..5000.0))
            .collect();
        let tenth: Vec<f64> = dark
            .iter()
            .zip(&reference)
            .map(|(d, r)| d + 0.1 * (r - d))
            .collect();
        let s = |v: &Vec<f64>, role| Spectrum::new(g.clone(), v.clone(), role).unwrap();
        let (d, r) = (
            s(&dark, SpectrumRole::Dark),
            s(&reference, SpectrumRole::Reference),
        );
        let a = absorbance_unchecked(&s(&reference, SpectrumRole::Sample), &d, &r).unwrap();
        e0 = a.spectrum.values().iter().fold(e0, |m, v| m.max(v.abs()));
        let a = absorbance_unchecked(&s(&tenth, SpectrumRole::Sample), &d, &r).unwrap();
        e1 = a
            .spectrum
            .values()
            .iter()
            .fold(e1, |m, v| m.max((v - 1.0).abs()));
        // push one point to a non-positive numerator and another to a non-positive denominator
        let (i, k) = (rng.random_range(0..n), rng.random_range(0..n));
        let mut bad_sample = tenth.clone();
        bad_sample[i] = dark[i] - rng.random_range(0.0..1.0);
        let mut bad_ref = reference.clone();
        bad_ref[k] = dark[k];
        let a = absorbance_unchecked(
            &s(&bad_sample, SpectrumRole::Sample),
            &d,
            &s(&bad_ref, SpectrumRole::Reference),
        )
        .unwrap();
        let expect: Vec<bool> = (0..n).map(|j| j == i || j == k).collect();
        mask_ok &= a.masked == expect;
    }
    outcome(
        e0 <= 1e-12 && e1 <= 1e-12 && mask_ok,
        format!("max |A| for S=R {e0:.1e}; max |A-1| for tenth {e1:.1e}; masking exact: {mask_ok}"),
    )
}

fn c5_classifier() -> Outcome {
    let lib = SpectralLibrary::default_nir();
    let g = grid();
    let mut lines = Vec::new();
    let (mut sum3, mut sumi) = (0.0, 0.0);
    let (mut paired_ok, mut snr_ok) = (true, true);
    for seed in 0..5u64 {
        let train_set = synthesize_dataset(
            &lib,
            &g,
            &DatasetSpec {
                seed: 100 + seed,
                ..Default::default()
            },
        )
        .unwrap();
        let test_set = synthesize_dataset(
            &lib,
            &g,
            &DatasetSpec {
                seed: 900 + seed,
                ..Default::default()
            },
        )
        .unwrap();
        let opts = TrainOptions {
            seed,
            ..Default::default()
        };
        let m3 = train(&train_set, Variant::Svm3, &opts).unwrap();
        let mi = train(&train_set, Variant::Svm3I, &opts).unwrap();
        let contaminated: Vec<_> = test_set
            .iter()
            .filter(|r| r.is_interferant())
            .cloned()
            .collect();
        let at_2000: Vec<_> = test_set
            .iter()
            .filter(|r| r.snr == 2000.0)
            .cloned()
            .collect();
        let a3 = evaluate(&m3, &contaminated).unwrap().accuracy;
        let ai = evaluate(&mi, &contaminated).unwrap().accuracy;
        let a2000 = evaluate(&mi, &at_2000).unwrap().accuracy;
        sum3 += a3;
        sumi += ai;
        paired_ok &= ai - a3 >= -0.01;
        snr_ok &= a2000 >= 0.86;
        lines.push(format!("s{seed} {a3:.3}/{ai:.3}/{a2000:.3}"));
    }
    outcome(
        paired_ok && snr_ok && sumi >= sum3,
        format!(
            "contaminated SVM3/SVM3+I, SVM3+I@2000 per seed: {}; mean {:.3} vs {:.3}",
            lines.join(", "),
            sum3 / 5.0,
            sumi / 5.0
        ),
    )
}

fn seeded_world(seed: u64, color: ParticleColor) -> (World, Particle) {
    let cfg = SimConfig::default();
    let terrain = Terrain::generate(&TerrainParams::default(), seed);
    let scene = Scene::new(terrain, vec![], seed).unwrap();
    let mut w = World::new(scene, cfg, &SpectralLibrary::default_nir(), grid(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = w.focus_point();
    let p = Particle {
        id: 0,
        x: f.x + rng.random_range(-0.03..0.03),
        y: f.y + rng.random_range(-0.03..0.03),
        diameter: 3e-3,
        color,
        material: MaterialLabel::Pet,
    };
    w.scene.particles.push(p.clone());
    (w, p)
}

fn detected(w: &World, p: &Particle, illumination: Illumination) -> bool {
    let truth = w.project_world(w.particle_world(p)).unwrap();
    let img = w.render(illumination);
    detect_candidates(&img, &SegmentationParams::default())
        .iter()
        .any(|d| {
            d.kind == DetectionKind::CandidateParticle && d.centroid.delta_to(&truth).norm() < 4.0
        })
}

fn c6_segmentation() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for color in [
        ParticleColor::Blue,
        ParticleColor::Red,
        ParticleColor::Green,
        ParticleColor::DimYellow,
    ] {
        let hits = (0..20u64)
            .filter(|s| {
                let (w, p) = seeded_world(*s, color);
                detected(&w, &p, Illumination::Led)
            })
            .count();
        pass &= if color == ParticleColor::DimYellow {
            hits == 0
        } else {
            hits == 20
        };
        parts.push(format!("{color:?} {hits}/20"));
    }
    // blue particle under the lamp spot disappears from the candidates
    let (mut w, p) = seeded_world(0, ParticleColor::Blue);
    let f = w.focus_point();
    w.scene.particles[0].x = f.x;
    w.scene.particles[0].y = f.y;
    w.set_lamp(true);
    let p = Particle {
        x: f.x,
        y: f.y,
        ..p
    };
    let occluded = !detected(&w, &p, Illumination::NirLamp);
    pass &= occluded;
    parts.push(format!("blue under NIR spot hidden: {occluded}"));
    outcome(pass, parts.join(", "))
}

fn c7_mission(dir: &Path) -> Outcome {
    let cfg = MissionConfig::default();
    let seed = cfg.seed;
    let out = run_mission(&cfg, seed).unwrap();
    let s = &out.summary;
    let run_dir = dir.join("mission");
    write_outputs(&run_dir, &cfg, seed, &out).unwrap();
    let report = replay(&run_dir.join("mission_log.csv")).unwrap();
    let accuracy = s.classification_accuracy.unwrap_or(0.0);
    let conserved = s.found + s.missed + s.out_of_swath == s.particles_total;
    outcome(
        s.particles_total == 10 && s.found >= 9 && accuracy >= 0.9 && report.identical && conserved,
        format!(
            "seed {seed}: {}/{} found, {}/{} correctly classified ({:.0}%), replay identical: {}, conservation: {conserved}",
            s.found, s.particles_total, s.correctly_classified, s.found, 100.0 * accuracy, report.identical
        ),
    )
}

fn c8_endurance() -> Outcome {
    let rover = RoverConfig {
        speed_mps: 0.016,
        battery_hours: 3.0,
        ..Default::default()
    };
    let r = endurance_report(&rover, &default_power_table()).unwrap();
    let pass = (r.path_length_m - 172.8).abs() < 1e-9
        && (r.area_m2 - 70.0).abs() <= 1.0
        && r.note.contains("not a measurement");
    outcome(
        pass,
        format!(
            "path {:.1} m, area {:.2} m² at swath {} m, note: \"{}\"",
            r.path_length_m, r.area_m2, r.swath_m, r.note
        ),
    )
}

fn c9_state_machine() -> Outcome {
    use MissionEvent as E;
    use MissionState as S;
    // declared edges, written out independently of the library table
    let declared = [
        (S::Navigate, E::WaypointReached, S::Scan),
        (S::Scan, E::CandidateFound, S::Track),
        (S::Scan, E::NoCandidates, S::Navigate),
        (S::Track, E::XyConverged, S::Descend),
        (S::Track, E::TargetLost, S::Scan),
        (S::Descend, E::SnrReached, S::Reference),
        (S::Reference, E::ReferenceClean, S::Sample),
        (S::Sample, E::SampleDone, S::Classify),
        (S::Classify, E::Logged, S::Scan),
        (S::Stow, E::Resume, S::Navigate),
    ];
    let lookup = |s: S, e: E| {
        if e == E::Abort {
            return Some(S::Stow);
        }
        declared.iter().find(|d| d.0 == s && d.1 == e).map(|d| d.2)
    };
    let mut mismatches = 0;
    for s in S::ALL {
        for e in E::ALL {
            if next_state(s, e).ok() != lookup(s, e) {
                mismatches += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = S::Stow;
    let (mut accepted, mut undeclared) = (0, 0);
    for _ in 0..10_000 {
        let e = E::ALL[rng.random_range(0..E::ALL.len())];
        match next_state(state, e) {
            Ok(n) => {
                accepted += 1;
                if lookup(state, e) != Some(n) {
                    undeclared += 1;
                }
                state = n;
            }
            Err(err) => {
                if lookup(state, e).is_some() || err.state != state || err.event != e {
                    undeclared += 1;
                }
            }
        }
    }
    outcome(
        mismatches == 0 && undeclared == 0,
        format!("{} pairs enumerated, {mismatches} mismatches; 10000-event fuzz: {accepted} accepted, {undeclared} undeclared", S::ALL.len() * E::ALL.len()),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Duration, Check)> = vec![
        (
            "1 kinematics/jacobian",
            Duration::from_secs(5),
            Box::new(c1_kinematics),
        ),
        (
            "2 servo convergence",
            Duration::from_secs(60),
            Box::new(|| c2_servo(dir.path())),
        ),
        (
            "3 nir sensitivity",
            Duration::from_secs(10),
            Box::new(|| c3_sensitivity(dir.path())),
        ),
        (
            "4 absorbance identities",
            Duration::from_secs(5),
            Box::new(c4_absorbance),
        ),
        (
            "5 classifier",
            Duration::from_secs(300),
            Box::new(c5_classifier),
        ),
        (
            "6 segmentation",
            Duration::from_secs(10),
            Box::new(c6_segmentation),
        ),
        (
            "7 end-to-end mission",
            Duration::from_secs(120),
            Box::new(|| c7_mission(dir.path())),
        ),
        (
            "8 endurance arithmetic",
            Duration::from_secs(5),
            Box::new(c8_endurance),
        ),
        (
            "9 state machine",
            Duration::from_secs(5),
            Box::new(c9_state_machine),
        ),
    ];
    let mut failed = Vec::new();
    for (name, limit, check) in &criteria {
        let t = Instant::now();
        let o = check();
        let took = t.elapsed();
        let pass = o.pass && took <= *limit;
        println!(
            "[{}] criterion {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
