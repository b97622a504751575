use qipf::baselines::{mc_dropout_uncertainty, Method};
use qipf::pipeline::export::{heatmap_path, quantize, METRICS_FILE, REPORT_FILE, TIMINGS_FILE};
use qipf::pipeline::{
    evaluate_external, export, export_dataset_features, read_pgm, run_experiment, ExperimentConfig,
    Granularity,
};
use qipf::seed::{derive_seed, Stream};
use qipf::toymodel::{generate_scene, train, SceneConfig};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        train_frames: 6,
        val_frames: 2,
        test_frames: 3,
        mc_passes: 10,
        ensemble_size: 3,
        ..ExperimentConfig::default()
    };
    cfg.classifier.epochs = 4;
    cfg.qipf.silverman_grid = vec![1.0, 10.0];
    cfg
}

#[test]
fn noise_free_scenes_are_nearly_error_free() {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.noise = 0.0;
    cfg.ood_val = false;
    cfg.ood_test = false;
    cfg.classifier.epochs = 30;
    let out = run_experiment(&cfg).unwrap();
    assert!(
        out.report.test_pixel_error_rate < 0.02,
        "{}",
        out.report.test_pixel_error_rate
    );
    for m in &out.report.methods {
        let at_zero = &m.sweep.entries[0];
        assert_eq!(at_zero.t, 0.0);
        let pa = at_zero.scores.pa.unwrap_or(1.0);
        assert!(pa >= 0.95, "{}: PA {pa} at t=0", m.method);
    }
}

#[test]
fn export_writes_every_artifact() {
    let cfg = small_config();
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&out, dir.path()).unwrap();

    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,t,PA,PU,PAvPU"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 * cfg.t_grid.len());
    for method in Method::ALL {
        assert!(rows
            .iter()
            .any(|r| r.starts_with(&format!("{},", method.name()))));
    }
    assert!(!csv.contains("NaN") && !csv.contains("nan"));

    let json = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(json, out.report.to_json().unwrap());
    assert!(dir.path().join(TIMINGS_FILE).exists());
    assert!(out
        .timings
        .uncertainty_seconds
        .iter()
        .all(|(_, s)| *s > 0.0));

    for (method, maps) in &out.test_maps {
        assert_eq!(maps.len(), cfg.test_frames);
        for (i, map) in maps.iter().enumerate() {
            let back = read_pgm(heatmap_path(dir.path(), method.name(), i)).unwrap();
            assert_eq!(back, quantize(map));
        }
    }
}

#[test]
fn forward_pass_counts_per_method() {
    let cfg = small_config();
    let report = run_experiment(&cfg).unwrap().report;
    let passes = |m: Method| report.method(m).unwrap().forward_passes_per_frame.clone();
    assert_eq!(passes(Method::Qipf), vec![1; 3]);
    assert_eq!(passes(Method::Softmax), vec![1; 3]);
    assert_eq!(passes(Method::McDropout), vec![10; 3]);
    assert_eq!(passes(Method::Ensemble), vec![3; 3]);
}

#[test]
fn seed_override_changes_the_report() {
    let cfg = small_config();
    let a = run_experiment(&cfg).unwrap().report.to_json().unwrap();
    let b = run_experiment(&ExperimentConfig {
        seed: 7,
        ..cfg.clone()
    })
    .unwrap()
    .report
    .to_json()
    .unwrap();
    assert_ne!(a, b);
    assert_eq!(a, run_experiment(&cfg).unwrap().report.to_json().unwrap());
}

#[test]
fn per_class_granularity_runs() {
    let mut cfg = small_config();
    cfg.qipf.granularity = Granularity::Class;
    cfg.qipf.silverman_cv = false;
    let report = run_experiment(&cfg).unwrap().report;
    assert!(report.silverman_cv.is_empty());
    assert_eq!(report.silverman_factor, cfg.qipf.silverman_factor);
    assert!(report.method(Method::Qipf).unwrap().average.pavpu.is_some());
}

#[test]
fn external_features_round_trip() {
    let cfg = small_config();
    let (features, labels) = export_dataset_features(&cfg).unwrap();
    assert_eq!(features.shape(), &[11, 32, 32, 3]);
    assert_eq!(labels.shape(), &[11, 32, 32]);

    let out = evaluate_external(features.clone(), labels.clone(), &cfg).unwrap();
    let methods: Vec<Method> = out.report.methods.iter().map(|m| m.method).collect();
    assert_eq!(methods, vec![Method::Qipf, Method::Softmax]);

    // The external path on the classifier's own features agrees with the
    // full run for both methods it covers.
    let full = run_experiment(&cfg).unwrap().report;
    for m in [Method::Qipf, Method::Softmax] {
        assert_eq!(
            out.report.method(m).unwrap().sweep,
            full.method(m).unwrap().sweep
        );
    }

    let too_few = features
        .slice_axis(ndarray::Axis(0), (0..5).into())
        .to_owned();
    assert!(evaluate_external(too_few, labels.clone(), &cfg).is_err());
    let mut bad_labels = labels;
    bad_labels[[0, 0, 0]] = 7.0;
    assert!(evaluate_external(features, bad_labels, &cfg).is_err());
}

#[test]
fn mc_dropout_converges_with_passes() {
    let cfg = ExperimentConfig::default();
    let scenes: Vec<_> = (0..cfg.train_frames as u64)
        .map(|i| generate_scene(derive_seed(cfg.seed, Stream::TrainScenes, i), &cfg.scene).unwrap())
        .collect();
    let model = train(
        &scenes,
        &cfg.classifier,
        3,
        derive_seed(cfg.seed, Stream::Classifier, 0),
    )
    .unwrap();
    let test = generate_scene(
        99,
        &SceneConfig {
            ood: true,
            ..cfg.scene.clone()
        },
    )
    .unwrap();
    let a = mc_dropout_uncertainty(&model, &test, 100, 1).unwrap();
    let b = mc_dropout_uncertainty(&model, &test, 200, 2).unwrap();
    let mad = (&a.values - &b.values).mapv(f64::abs).mean().unwrap();
    assert!(mad < 0.05, "mean absolute difference {mad}");
}

#[test]
fn shipped_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");
    assert_eq!(
        ExperimentConfig::from_file(path).unwrap(),
        ExperimentConfig::default()
    );
}
