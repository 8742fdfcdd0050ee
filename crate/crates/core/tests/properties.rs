use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use mpsurvey::camera::PixelCoord;
use mpsurvey::classifier::{synthesize_dataset, train, DatasetSpec, TrainedClassifier, Variant};
use mpsurvey::kinematics::{ArmGeometry, JointConfig, SingularityPolicy};
use mpsurvey::mission::{next_state, MissionEvent, MissionState, TRANSITIONS};
use mpsurvey::segmentation::{
    detect_candidates, Hsv, Illumination, SceneImage, SegmentationParams,
};
use mpsurvey::sim::SimConfig;
use mpsurvey::spectra::{
    absorbance_unchecked, add_noise, SpectralLibrary, Spectrum, SpectrumRole, WavelengthGrid,
};

fn grid() -> Arc<WavelengthGrid> {
    Arc::new(WavelengthGrid::default_nir())
}

fn joints() -> impl Strategy<Value = JointConfig> {
    (-1.5f64..1.5, -0.8f64..2.3, -1.4f64..1.7).prop_map(|(a, b, c)| JointConfig::new(a, b, c))
}

fn model() -> &'static TrainedClassifier {
    static M: OnceLock<TrainedClassifier> = OnceLock::new();
    M.get_or_init(|| {
        let spec = DatasetSpec {
            per_class: 5,
            ..Default::default()
        };
        let rows = synthesize_dataset(&SpectralLibrary::default_nir(), &grid(), &spec).unwrap();
        train(&rows, Variant::Svm3I, &Default::default()).unwrap()
    })
}

fn sand_image() -> SceneImage {
    SceneImage::filled(160, 120, Hsv::new(45.0, 0.3, 0.8), Illumination::Led)
}

fn disc(img: &mut SceneImage, cu: f64, cv: f64, r: f64) {
    for v in 0..img.height() {
        for u in 0..img.width() {
            if (u as f64 + 0.5 - cu).hypot(v as f64 + 0.5 - cv) <= r {
                img.set(u, v, Hsv::new(220.0, 0.8, 0.7));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jacobian_matches_central_differences(q in joints()) {
        let g = ArmGeometry::default();
        let j = g.jacobian(&q);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = q.as_array();
            let mut b = q.as_array();
            a[k] += h;
            b[k] -= h;
            let d = (g.cartesian(&JointConfig::from_array(a)).to_vector()
                - g.cartesian(&JointConfig::from_array(b)).to_vector()) / (2.0 * h);
            prop_assert!((j.column(k) - d).norm() <= 1e-7 * j.norm().max(1e-3));
        }
    }

    #[test]
    fn cylindrical_and_cartesian_agree(q in joints()) {
        let g = ArmGeometry::default();
        let c = g.cylindrical(&q);
        let p = g.cartesian(&q);
        prop_assert!((c.to_cartesian() - p).norm() == 0.0);
        prop_assert!((c.r.abs() - p.x.hypot(p.y)).abs() < 1e-15);
    }

    #[test]
    fn full_undamped_step_lands_on_target(dx in -2e-3f64..2e-3, dy in -2e-3f64..2e-3) {
        let cfg = SimConfig::default();
        let arm = cfg.build_arm().unwrap();
        let q = cfg.nominal_pose().unwrap();
        let d = mpsurvey::kinematics::CartesianPoint::new(dx, dy, 0.0);
        let step = arm.solve_increment(&q, d, 1.0, SingularityPolicy::Reject).unwrap();
        let moved = arm.geometry.cartesian(&(q + step)) - arm.geometry.cartesian(&q);
        // first-order step: residual is second order in the displacement
        prop_assert!((moved - d).norm() <= 50.0 * d.norm().powi(2) + 1e-12);
    }

    #[test]
    fn absorbance_identities(seed in 0u64..1000, scale in 0.01f64..0.99) {
        let g = grid();
        let reference = add_noise(&Spectrum::constant(g.clone(), 3000.0, SpectrumRole::Reference), 200.0, seed).unwrap();
        let dark = Spectrum::constant(g.clone(), 20.0, SpectrumRole::Dark);
        let same = absorbance_unchecked(&reference.clone().with_role(SpectrumRole::Sample), &dark, &reference).unwrap();
        prop_assert!(same.spectrum.values().iter().all(|v| v.abs() <= 1e-12));
        let scaled = reference.map(|r| 20.0 + scale * (r - 20.0)).with_role(SpectrumRole::Sample);
        let a = absorbance_unchecked(&scaled, &dark, &reference).unwrap();
        prop_assert!(a.spectrum.values().iter().all(|v| (v + scale.log10()).abs() <= 1e-12));
        prop_assert_eq!(a.masked_count(), 0);
    }

    #[test]
    fn margin_in_unit_interval(seed in 0u64..500, snr in 50.0f64..20000.0) {
        let g = grid();
        let base = Spectrum::constant(g, 0.05, SpectrumRole::Absorbance);
        let noisy = add_noise(&base, snr, seed).unwrap().with_role(SpectrumRole::Absorbance);
        let p = model().predict(&noisy).unwrap();
        prop_assert!((0.0..=1.0).contains(&p.margin));
        let votes: usize = p.votes.values().sum();
        let k = model().classes.len();
        prop_assert_eq!(votes, k * (k - 1) / 2);
    }

    #[test]
    fn fsm_random_sequences_stay_on_declared_edges(events in prop::collection::vec(0usize..11, 1..400)) {
        let mut s = MissionState::Stow;
        for i in events {
            let e = MissionEvent::ALL[i];
            match next_state(s, e) {
                Ok(n) => {
                    let declared = e == MissionEvent::Abort
                        || TRANSITIONS.contains(&(s, e, n));
                    prop_assert!(declared, "{s} --{e}--> {n}");
                    if e == MissionEvent::Abort {
                        prop_assert_eq!(n, MissionState::Stow);
                    }
                    s = n;
                }
                Err(err) => {
                    prop_assert_eq!((err.state, err.event), (s, e));
                    prop_assert!(!TRANSITIONS.iter().any(|t| t.0 == s && t.1 == e));
                }
            }
        }
    }

    #[test]
    fn segmentation_is_translation_equivariant(du in -40i32..40, dv in -30i32..30, r in 4.0f64..12.0) {
        let params = SegmentationParams { min_area: 10.0, ..Default::default() };
        let (cu, cv) = (80.0, 60.0);
        let mut a = sand_image();
        disc(&mut a, cu, cv, r);
        let mut b = sand_image();
        disc(&mut b, cu + du as f64, cv + dv as f64, r);
        let da = detect_candidates(&a, &params);
        let db = detect_candidates(&b, &params);
        prop_assert_eq!(da.len(), 1);
        prop_assert_eq!(db.len(), 1);
        let shifted = PixelCoord::new(da[0].centroid.u + du as f64, da[0].centroid.v + dv as f64);
        prop_assert!(db[0].centroid.delta_to(&shifted).norm() < 1e-9);
        prop_assert_eq!(da[0].area, db[0].area);
    }
}
