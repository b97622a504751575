//! Timing benchmark of the test-time uncertainty phases.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, QipfSettings};
use super::experiment::{generate_dataset, mc_phase, qipf_phase};
use super::fields::fit_fields;
use crate::error::{Error, Result, StageExt};
use crate::seed::{derive_seed, Stream};
use crate::toymodel::{generate_scene, train, CountingModel, FeatureTensor, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub n_max: usize,
    pub modes: usize,
    /// Fastest QIPF phase over the repetitions, all test frames.
    pub seconds: f64,
    pub forward_passes_per_frame: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub reps: usize,
    pub test_frames: usize,
    pub base: BenchCase,
    pub double_n: BenchCase,
    pub double_m: BenchCase,
    pub mc_passes: usize,
    pub mc_seconds: f64,
    pub mc_forward_passes_per_frame: Vec<usize>,
}

impl BenchReport {
    pub fn n_ratio(&self) -> f64 {
        self.double_n.seconds / self.base.seconds
    }

    pub fn m_ratio(&self) -> f64 {
        self.double_m.seconds / self.base.seconds
    }
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Times the QIPF phase at `(n_max, m)`, `(2 n_max, m)` and `(n_max, 2 m)`
/// and the MC-dropout phase, each as the fastest of `reps` repetitions.
/// Repetitions cycle through all four phases so drift in machine load
/// affects each alike.
///
/// The density fields draw on a pool of `2 n_max` in-distribution frames so
/// both sample sizes are actually reached.
pub fn bench(cfg: &ExperimentConfig, reps: usize) -> Result<BenchReport> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig(
            "bench needs at least one repetition".into(),
        ));
    }
    let data = generate_dataset(cfg).stage("scenes")?;
    let classifier = train(
        &data.train,
        &cfg.classifier,
        cfg.scene.classes,
        derive_seed(cfg.seed, Stream::Classifier, 0),
    )
    .stage("train")?;

    let pool_cfg = SceneConfig {
        ood: false,
        ..cfg.scene.clone()
    };
    let n_max = cfg.qipf.n_max;
    let (pool, pool_labels): (Vec<FeatureTensor>, Vec<_>) = (0..2 * n_max as u64)
        .map(|i| {
            let scene = generate_scene(derive_seed(cfg.seed, Stream::BenchScenes, i), &pool_cfg)?;
            Ok((classifier.forward(&scene, false, 0)?, scene.labels))
        })
        .collect::<Result<Vec<_>>>()
        .stage("features")?
        .into_iter()
        .unzip();

    let counted = CountingModel::new(&classifier);
    let shapes = [
        (n_max, cfg.qipf.modes),
        (2 * n_max, cfg.qipf.modes),
        (n_max, 2 * cfg.qipf.modes),
    ];
    let fields = shapes
        .iter()
        .map(|&(n_max, modes)| {
            let settings = QipfSettings {
                n_max,
                modes,
                ..cfg.qipf.clone()
            };
            fit_fields(
                &pool,
                &pool_labels,
                cfg.scene.classes,
                &settings,
                cfg.qipf.silverman_factor,
                derive_seed(cfg.seed, Stream::Subsample, 0),
            )
        })
        .collect::<Result<Vec<_>>>()
        .stage("qipf-fit")?;

    let mut qipf_best = [f64::INFINITY; 3];
    let mut qipf_passes = vec![Vec::new(); 3];
    let mut mc_seconds = f64::INFINITY;
    let mut mc_passes = Vec::new();
    for _ in 0..reps {
        for (i, f) in fields.iter().enumerate() {
            let ((_, passes), secs) = time(|| qipf_phase(&counted, f, &data.test)).stage("qipf")?;
            qipf_best[i] = qipf_best[i].min(secs);
            qipf_passes[i] = passes;
        }
        let ((_, passes), secs) = time(|| {
            mc_phase(&counted, &data.test, cfg.mc_passes, |i| {
                derive_seed(cfg.seed, Stream::McDropout, i as u64)
            })
        })
        .stage("mc_dropout")?;
        mc_seconds = mc_seconds.min(secs);
        mc_passes = passes;
    }
    let mut cases = shapes.iter().zip(qipf_best).zip(qipf_passes).map(
        |((&(n_max, modes), seconds), passes)| BenchCase {
            n_max,
            modes,
            seconds,
            forward_passes_per_frame: passes,
        },
    );
    let (base, double_n, double_m) = (
        cases.next().expect("three cases"),
        cases.next().expect("three cases"),
        cases.next().expect("three cases"),
    );

    Ok(BenchReport {
        threads: rayon::current_num_threads(),
        reps,
        test_frames: data.test.len(),
        base,
        double_n,
        double_m,
        mc_passes: cfg.mc_passes,
        mc_seconds,
        mc_forward_passes_per_frame: mc_passes,
    })
}
