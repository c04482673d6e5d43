use hbsel_core::codebook::Codebook;
use hbsel_core::SystemConfig;
use std::path::PathBuf;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn reference_file_matches_reference_setup() {
    let cfg = SystemConfig::load(configs().join("reference.toml")).unwrap();
    assert_eq!((cfg.num_users, cfg.n_max, cfg.n_rf), (20, 10, 10));
    assert_eq!(cfg.power_w, 2.0);
    assert_eq!(cfg.noise_w, 1e-15);
    assert_eq!(cfg.delta, 0.1);
    assert_eq!((cfg.n_s, cfg.steps), (40, 120));
    assert_eq!(
        (cfg.array.n_x, cfg.array.n_y, cfg.array.carrier_hz),
        (8, 2, 28e9)
    );
    assert_eq!(cfg.array.downtilt_deg, 10.0);
    assert_eq!(
        (
            cfg.geometry.bs_height_m,
            cfg.geometry.cell_radius_m,
            cfg.geometry.speed_kmh
        ),
        (7.0, 100.0, 4.0)
    );
    assert_eq!((cfg.ml.train_episodes, cfg.ml.epochs), (12000, 300));
    assert_eq!(cfg.ml.hidden, vec![500, 200]);
    assert_eq!(Codebook::from_config(&cfg).unwrap().len(), 256);
}

#[test]
fn desk_file_only_changes_the_budget() {
    let reference = SystemConfig::load(configs().join("reference.toml")).unwrap();
    let desk = SystemConfig::load(configs().join("desk.toml")).unwrap();
    assert_eq!(
        (
            desk.ml.train_episodes,
            desk.ml.epochs,
            desk.experiment.test_episodes
        ),
        (500, 50, 200)
    );
    let mut expected = reference.clone();
    expected.ml.train_episodes = 500;
    expected.ml.epochs = 50;
    expected.experiment.test_episodes = 200;
    expected.experiment.out_dir = "out/desk".into();
    assert_eq!(desk, expected);
    // The built-in defaults are the desk setup.
    let mut defaults = SystemConfig::default();
    defaults.experiment.out_dir = desk.experiment.out_dir.clone();
    assert_eq!(defaults, desk);
}

#[test]
fn tiny_file_allows_exhaustive_search() {
    let cfg = SystemConfig::load(configs().join("tiny.toml")).unwrap();
    let per_episode =
        hbsel_core::schedulers::subset_count(cfg.num_users, cfg.n_max) * cfg.steps as u128;
    assert!(per_episode <= cfg.scheduler.exhaustive_cap as u128);
}
