use std::sync::Arc;

use mpsurvey::classifier::{synthesize_dataset, train, DatasetSpec, TrainedClassifier, Variant};
use mpsurvey::mission::{render_outputs, run_mission_with, MissionConfig, MissionState};
use mpsurvey::spectra::{SpectralLibrary, WavelengthGrid};

fn fixture() -> (SpectralLibrary, TrainedClassifier) {
    let lib = SpectralLibrary::default_nir();
    let grid = Arc::new(WavelengthGrid::default_nir());
    let rows = synthesize_dataset(&lib, &grid, &DatasetSpec::default()).unwrap();
    let clf = train(&rows, Variant::Svm3I, &Default::default()).unwrap();
    (lib, clf)
}

/// Short plot with particles scattered beyond its edges.
fn spill_config() -> MissionConfig {
    let mut cfg = MissionConfig::default();
    cfg.plot.x_end = 0.65;
    cfg.scene.particles = 8;
    cfg.scene.x_min = 0.05;
    cfg.scene.x_max = 0.9;
    cfg.scene.y_min = -0.3;
    cfg.scene.y_max = 0.3;
    cfg
}

#[test]
fn same_seed_gives_identical_outputs() {
    let (lib, clf) = fixture();
    let cfg = spill_config();
    let a = render_outputs(&run_mission_with(&cfg, 11, &lib, &clf).unwrap()).unwrap();
    let b = render_outputs(&run_mission_with(&cfg, 11, &lib, &clf).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = render_outputs(&run_mission_with(&cfg, 12, &lib, &clf).unwrap()).unwrap();
    assert_ne!(a["mission_log.csv"], c["mission_log.csv"]);
}

#[test]
fn particles_are_conserved() {
    let (lib, clf) = fixture();
    let cfg = spill_config();
    let mut saw_out_of_swath = false;
    for seed in 0..4 {
        let s = run_mission_with(&cfg, seed, &lib, &clf).unwrap().summary;
        assert_eq!(
            s.found + s.missed + s.out_of_swath,
            s.particles_total,
            "seed {seed}"
        );
        saw_out_of_swath |= s.out_of_swath > 0;
    }
    assert!(saw_out_of_swath);
}

#[test]
fn log_is_a_valid_walk_ending_stowed() {
    let (lib, clf) = fixture();
    let out = run_mission_with(&spill_config(), 3, &lib, &clf).unwrap();
    let recs = out.log.records();
    assert_eq!(recs[0].state, MissionState::Stow);
    for (i, w) in recs.windows(2).enumerate() {
        assert_eq!(w[0].next, w[1].state, "break at record {i}");
        assert!(w[0].tick <= w[1].tick);
    }
    assert_eq!(recs.last().unwrap().next, MissionState::Stow);
    assert!(recs.iter().enumerate().all(|(i, r)| r.seq == i));
}

#[test]
fn shipped_config_is_the_default() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(
        MissionConfig::load(&path).unwrap(),
        MissionConfig::default()
    );
}
