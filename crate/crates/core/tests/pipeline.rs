use fairseg::datagen::{
    generate_dataset, read_gen_config, split_dataset, write_dataset, GenConfig,
};
use fairseg::dataio::{decode_ppm, encode_ppm, load_checkpoint, read_dataset_dir, save_checkpoint};
use fairseg::evaluate::{fairness_report, predict, robustness_sweep};
use fairseg::homotopy::ScheduleKind;
use fairseg::perturb::PerturbKind;
use fairseg::trainer::{train, TrainConfig, TrainMode};

fn small() -> GenConfig {
    GenConfig {
        count: 16,
        size: 24,
        seed: 5,
        ..GenConfig::default()
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let written = write_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(read_gen_config(dir.path()).unwrap(), Some(cfg.clone()));

    let read = read_dataset_dir(dir.path(), 6).unwrap();
    assert_eq!(read.len(), written.len());
    for (w, r) in written.iter().zip(&read) {
        assert_eq!(w.sample_id, r.sample_id);
        assert_eq!(w.mask, r.mask);
        assert_eq!(w.attributes, r.attributes);
        // Images are stored quantized to 8 bits.
        assert_eq!(r.image, decode_ppm(&encode_ppm(&w.image)).unwrap());
    }
}

#[test]
fn generation_is_independent_of_directory() {
    let a = generate_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let b = write_dataset(&small(), dir.path()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trained_checkpoint_reloads_with_identical_predictions() {
    let records = generate_dataset(&small()).unwrap();
    let (train_set, test_set) = split_dataset(&records, 0.75, 1).unwrap();
    let mut cfg = TrainConfig::new(TrainMode::Multi, ScheduleKind::Sigmoid, 3, 9);
    cfg.adam.learning_rate = 1e-2;
    let out = train(&cfg, &train_set).unwrap();
    assert_eq!(out.log.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&out.params, &cfg.run_meta(), &path).unwrap();
    let (params, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(params, out.params);
    assert_eq!(meta, cfg.run_meta());
    for r in &test_set {
        assert_eq!(predict(&params, &r.image), predict(&out.params, &r.image));
    }

    let rows = robustness_sweep(&params, &test_set, &[PerturbKind::Blur], &[0.2, 0.6], 0).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].degradation, 0.0);
    let groups = fairness_report(&params, &test_set, &["smiling".to_owned()]).unwrap();
    assert_eq!(groups[0].count_0 + groups[0].count_1, test_set.len());
}
