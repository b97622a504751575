//! End-to-end run: scenes, classifier and ensemble training, QIPF fitting,
//! the four uncertainty maps per test frame, and the threshold sweeps.

use std::time::Instant;

use ndarray::{Array2, ArrayD, Axis, Ix3, Ix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fields::{fit_fields, qipf_uncertainty_map, QipfFields};
use crate::baselines::{ensemble_uncertainty, mc_dropout_uncertainty, softmax_uncertainty, Method};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{
    confusion, error_map, patch_accuracy, patch_mean, scores, sweep, threshold_value, Scores,
    ThresholdSweep,
};
use crate::seed::{derive_seed, Stream};
use crate::toymodel::{
    generate_scene, train, CountingModel, FeatureModel, FeatureTensor, PixelClassifier,
    SceneConfig, SceneSample,
};

/// Threshold position used to score Silverman factors on validation frames.
pub const CV_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let split = |count: usize, stream: Stream, ood: bool| -> Result<Vec<SceneSample>> {
        let scene = SceneConfig {
            ood,
            ..cfg.scene.clone()
        };
        (0..count as u64)
            .map(|i| generate_scene(derive_seed(cfg.seed, stream, i), &scene))
            .collect()
    };
    Ok(Dataset {
        train: split(cfg.train_frames, Stream::TrainScenes, false)?,
        val: split(cfg.val_frames, Stream::ValScenes, cfg.ood_val)?,
        test: split(cfg.test_frames, Stream::TestScenes, cfg.ood_test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// Smallest and largest patch uncertainty over the validation frames.
    pub u_min: f64,
    pub u_max: f64,
    /// Classifier forward passes spent on each test frame.
    pub forward_passes_per_frame: Vec<usize>,
    /// Counts pooled over all test frames at each threshold.
    pub sweep: ThresholdSweep,
    /// Scores averaged over the threshold grid within each frame, then over frames.
    pub average: Scores,
    pub mean_uncertainty_ood: Option<f64>,
    pub mean_uncertainty_in_distribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub factor: f64,
    pub pavpu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub classifier_train_accuracy: Option<f64>,
    pub silverman_factor: f64,
    pub silverman_cv: Vec<FactorScore>,
    pub flagged_fields: usize,
    pub test_pixel_error_rate: f64,
    pub methods: Vec<MethodReport>,
}

impl RunReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Wall-clock measurements, kept apart from [`RunReport`] so the report
/// stays reproducible byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTimings {
    /// Worker threads available to the parallel stages.
    pub threads: usize,
    pub train_seconds: f64,
    pub qipf_fit_seconds: f64,
    /// Test-time uncertainty phase of each method over all test frames.
    pub uncertainty_seconds: Vec<(Method, f64)>,
}

impl PhaseTimings {
    pub fn seconds(&self, method: Method) -> Option<f64> {
        self.uncertainty_seconds
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: PhaseTimings,
    /// Per method, the pixel uncertainty map of every test frame.
    pub test_maps: Vec<(Method, Vec<Array2<f64>>)>,
    pub test_errors: Vec<Array2<bool>>,
}

/// Feature-level inputs shared by the synthetic and external-feature runs.
struct FeatureSplits {
    classes: usize,
    train: Vec<FeatureTensor>,
    train_labels: Vec<Array2<usize>>,
    val: Vec<FeatureTensor>,
    val_errors: Vec<Array2<bool>>,
    test: Vec<FeatureTensor>,
    test_errors: Vec<Array2<bool>>,
}

fn patch_values(maps: &[Array2<f64>], patch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for m in maps {
        out.extend(patch_mean(m, patch)?.iter().copied());
    }
    Ok(out)
}

fn patch_flags(errors: &[Array2<bool>], patch: usize) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for e in errors {
        out.extend(patch_accuracy(e, patch)?.iter().copied());
    }
    Ok(out)
}

fn value_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = values.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// PAvPU at [`CV_THRESHOLD`] with the range taken from the same frames.
fn validation_pavpu(
    maps: &[Array2<f64>],
    errors: &[Array2<bool>],
    patch: usize,
) -> Result<Option<f64>> {
    let unc = patch_values(maps, patch)?;
    let acc = patch_flags(errors, patch)?;
    let (lo, hi) = value_range(&unc);
    let counts = confusion(&acc, &unc, threshold_value(lo, hi, CV_THRESHOLD)?)?;
    Ok(scores(&counts).pavpu)
}

struct MethodMaps {
    method: Method,
    val: Vec<Array2<f64>>,
    test: Vec<Array2<f64>>,
    passes: Vec<usize>,
}

fn evaluate_method(
    maps: &MethodMaps,
    test_errors: &[Array2<bool>],
    ood_masks: Option<&[Array2<bool>]>,
    cfg: &ExperimentConfig,
) -> Result<MethodReport> {
    let (u_min, u_max) = value_range(&patch_values(&maps.val, cfg.patch)?);

    let pooled = sweep(
        &patch_flags(test_errors, cfg.patch)?,
        &patch_values(&maps.test, cfg.patch)?,
        u_min,
        u_max,
        &cfg.t_grid,
    )?;

    let mut per_frame = Vec::with_capacity(maps.test.len());
    for (map, errors) in maps.test.iter().zip(test_errors) {
        let acc: Vec<bool> = patch_accuracy(errors, cfg.patch)?.iter().copied().collect();
        let unc: Vec<f64> = patch_mean(map, cfg.patch)?.iter().copied().collect();
        per_frame.push(sweep(&acc, &unc, u_min, u_max, &cfg.t_grid)?.mean_scores());
    }
    let average = Scores {
        pa: mean_defined(per_frame.iter().map(|s| s.pa)),
        pu: mean_defined(per_frame.iter().map(|s| s.pu)),
        pavpu: mean_defined(per_frame.iter().map(|s| s.pavpu)),
    };

    let masked_mean = |want: bool| -> Option<f64> {
        let masks = ood_masks?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (map, mask) in maps.test.iter().zip(masks) {
            for (&v, &m) in map.iter().zip(mask) {
                if m == want {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    };

    Ok(MethodReport {
        method: maps.method,
        u_min,
        u_max,
        forward_passes_per_frame: maps.passes.clone(),
        sweep: pooled,
        average,
        mean_uncertainty_ood: masked_mean(true),
        mean_uncertainty_in_distribution: masked_mean(false),
    })
}

struct QipfSelection {
    factor: f64,
    cv: Vec<FactorScore>,
    fields: QipfFields,
}

fn select_qipf(splits: &FeatureSplits, cfg: &ExperimentConfig) -> Result<QipfSelection> {
    let fit_seed = derive_seed(cfg.seed, Stream::Subsample, 0);
    let fit = |factor: f64| {
        fit_fields(
            &splits.train,
            &splits.train_labels,
            splits.classes,
            &cfg.qipf,
            factor,
            fit_seed,
        )
    };
    if !cfg.qipf.silverman_cv {
        return Ok(QipfSelection {
            factor: cfg.qipf.silverman_factor,
            cv: Vec::new(),
            fields: fit(cfg.qipf.silverman_factor)?,
        });
    }

    let mut best: Option<(f64, f64, QipfFields)> = None;
    let mut cv = Vec::with_capacity(cfg.qipf.silverman_grid.len());
    for &factor in &cfg.qipf.silverman_grid {
        let fields = fit(factor)?;
        let maps = splits
            .val
            .iter()
            .map(|ft| qipf_uncertainty_map(&fields, ft).map(|m| m.values))
            .collect::<Result<Vec<_>>>()?;
        let pavpu = validation_pavpu(&maps, &splits.val_errors, cfg.patch)?;
        cv.push(FactorScore { factor, pavpu });
        let score = pavpu.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((factor, score, fields));
        }
    }
    let (factor, _, fields) = best.expect("non-empty grid");
    Ok(QipfSelection { factor, cv, fields })
}

fn error_maps(features: &[FeatureTensor], scenes: &[SceneSample]) -> Result<Vec<Array2<bool>>> {
    features
        .iter()
        .zip(scenes)
        .map(|(ft, s)| error_map(&ft.preds, &s.labels))
        .collect()
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// The QIPF test phase: one deterministic forward per frame, then density
/// evaluation of every pixel.
pub fn qipf_phase<M: FeatureModel>(
    model: &CountingModel<'_, M>,
    fields: &QipfFields,
    scenes: &[SceneSample],
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let mut maps = Vec::with_capacity(scenes.len());
    let mut passes = Vec::with_capacity(scenes.len());
    for s in scenes {
        let ft = model.forward(s, false, 0)?;
        maps.push(qipf_uncertainty_map(fields, &ft)?.values);
        passes.push(model.reset());
    }
    Ok((maps, passes))
}

/// The MC-dropout test phase; frame `i` uses seed `seeds(i)`.
pub fn mc_phase<M: FeatureModel + Sync>(
    model: &CountingModel<'_, M>,
    scenes: &[SceneSample],
    passes: usize,
    seeds: impl Fn(usize) -> u64,
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let mut maps = Vec::with_capacity(scenes.len());
    let mut counts = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        maps.push(mc_dropout_uncertainty(model, s, passes, seeds(i))?.values);
        counts.push(model.reset());
    }
    Ok((maps, counts))
}

fn softmax_phase<M: FeatureModel>(
    model: &CountingModel<'_, M>,
    scenes: &[SceneSample],
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let mut maps = Vec::with_capacity(scenes.len());
    let mut passes = Vec::with_capacity(scenes.len());
    for s in scenes {
        maps.push(softmax_uncertainty(&model.forward(s, false, 0)?).values);
        passes.push(model.reset());
    }
    Ok((maps, passes))
}

fn ensemble_phase<M: FeatureModel + Sync>(
    members: &[CountingModel<'_, M>],
    scenes: &[SceneSample],
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let mut maps = Vec::with_capacity(scenes.len());
    let mut passes = Vec::with_capacity(scenes.len());
    for s in scenes {
        maps.push(ensemble_uncertainty(members, s)?.values);
        passes.push(members.iter().map(CountingModel::reset).sum());
    }
    Ok((maps, passes))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let classes = cfg.scene.classes;
    let data = generate_dataset(cfg).stage("scenes")?;

    let ((classifier, ensemble), train_seconds) = timed(|| {
        let classifier = train(
            &data.train,
            &cfg.classifier,
            classes,
            derive_seed(cfg.seed, Stream::Classifier, 0),
        )
        .stage("train")?;
        let ensemble = (0..cfg.ensemble_size as u64)
            .into_par_iter()
            .map(|i| {
                train(
                    &data.train,
                    &cfg.classifier,
                    classes,
                    derive_seed(cfg.seed, Stream::Ensemble, i),
                )
            })
            .collect::<Result<Vec<PixelClassifier>>>()
            .stage("ensemble")?;
        Ok((classifier, ensemble))
    })?;

    let forward_all = |scenes: &[SceneSample]| -> Result<Vec<FeatureTensor>> {
        scenes
            .iter()
            .map(|s| classifier.forward(s, false, 0))
            .collect()
    };
    let splits = (|| {
        let train = forward_all(&data.train)?;
        let val = forward_all(&data.val)?;
        let test = forward_all(&data.test)?;
        Ok(FeatureSplits {
            classes,
            train_labels: data.train.iter().map(|s| s.labels.clone()).collect(),
            val_errors: error_maps(&val, &data.val)?,
            test_errors: error_maps(&test, &data.test)?,
            train,
            val,
            test,
        })
    })()
    .stage("features")?;

    let (selection, qipf_fit_seconds) = timed(|| select_qipf(&splits, cfg)).stage("qipf-fit")?;

    let val_count = data.val.len();
    let mc_seed = |i: usize| derive_seed(cfg.seed, Stream::McDropout, i as u64);

    let counted = CountingModel::new(&classifier);
    let members: Vec<CountingModel<'_, PixelClassifier>> =
        ensemble.iter().map(CountingModel::new).collect();

    let mut method_maps = Vec::new();
    let mut uncertainty_seconds = Vec::new();
    for method in Method::ALL {
        let (val, _) = match method {
            Method::Qipf => qipf_phase(&counted, &selection.fields, &data.val).stage("qipf")?,
            Method::Softmax => softmax_phase(&counted, &data.val).stage("softmax")?,
            Method::McDropout => {
                mc_phase(&counted, &data.val, cfg.mc_passes, mc_seed).stage("mc_dropout")?
            }
            Method::Ensemble => {
                ensemble_phase(&members, &data.val).stage("ensemble-uncertainty")?
            }
        };
        let ((test, passes), secs) = match method {
            Method::Qipf => {
                timed(|| qipf_phase(&counted, &selection.fields, &data.test)).stage("qipf")?
            }
            Method::Softmax => timed(|| softmax_phase(&counted, &data.test)).stage("softmax")?,
            Method::McDropout => timed(|| {
                mc_phase(&counted, &data.test, cfg.mc_passes, |i| {
                    mc_seed(val_count + i)
                })
            })
            .stage("mc_dropout")?,
            Method::Ensemble => {
                timed(|| ensemble_phase(&members, &data.test)).stage("ensemble-uncertainty")?
            }
        };
        uncertainty_seconds.push((method, secs));
        method_maps.push(MethodMaps {
            method,
            val,
            test,
            passes,
        });
    }

    let ood_masks: Vec<Array2<bool>> = data.test.iter().map(|s| s.ood_mask.clone()).collect();
    let methods = method_maps
        .iter()
        .map(|m| evaluate_method(m, &splits.test_errors, Some(&ood_masks), cfg))
        .collect::<Result<Vec<_>>>()
        .stage("metrics")?;

    let report = RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        classifier_train_accuracy: Some(classifier.train_accuracy()),
        silverman_factor: selection.factor,
        silverman_cv: selection.cv,
        flagged_fields: selection.fields.flagged(),
        test_pixel_error_rate: pixel_error_rate(&splits.test_errors),
        methods,
    };
    Ok(RunOutput {
        report,
        timings: PhaseTimings {
            threads: rayon::current_num_threads(),
            train_seconds,
            qipf_fit_seconds,
            uncertainty_seconds,
        },
        test_maps: method_maps
            .into_iter()
            .map(|m| (m.method, m.test))
            .collect(),
        test_errors: splits.test_errors,
    })
}

fn pixel_error_rate(errors: &[Array2<bool>]) -> f64 {
    let total: usize = errors.iter().map(|e| e.len()).sum();
    let wrong: usize = errors
        .iter()
        .map(|e| e.iter().filter(|&&w| w).count())
        .sum();
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

/// Evaluates QIPF and softmax uncertainty on externally computed features.
///
/// `features` is `N x H x W x F` logits and `labels` is `N x H x W` ground
/// truth. The first `train_frames` frames build the density fields, the
/// next `val_frames` fix the uncertainty ranges (and the Silverman factor),
/// and the following `test_frames` are scored.
pub fn evaluate_external(
    features: ArrayD<f64>,
    labels: ArrayD<f64>,
    cfg: &ExperimentConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    let features = features
        .into_dimensionality::<Ix4>()
        .map_err(|_| Error::ShapeMismatch("features must be N x H x W x F".into()))?;
    let labels = labels
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::ShapeMismatch("labels must be N x H x W".into()))?;
    let (n, h, w, f) = features.dim();
    if labels.dim() != (n, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "labels {:?} do not match features {:?}",
            labels.dim(),
            (n, h, w, f)
        )));
    }
    let needed = cfg.train_frames + cfg.val_frames + cfg.test_frames;
    if n < needed {
        return Err(Error::ShapeMismatch(format!(
            "{n} frames supplied, configuration needs {needed}"
        )));
    }
    if labels
        .iter()
        .any(|&l| !(l >= 0.0 && l.fract() == 0.0 && l < f as f64))
    {
        return Err(Error::ShapeMismatch(format!(
            "labels must be integers in 0..{f}"
        )));
    }

    let tensors = features
        .axis_iter(Axis(0))
        .map(|frame| FeatureTensor::from_features(frame.to_owned()))
        .collect::<Result<Vec<_>>>()
        .stage("features")?;
    let label_maps: Vec<Array2<usize>> = labels
        .axis_iter(Axis(0))
        .map(|frame| frame.mapv(|l| l as usize))
        .collect();

    let errors_for = |range: std::ops::Range<usize>| -> Result<Vec<Array2<bool>>> {
        range
            .map(|i| error_map(&tensors[i].preds, &label_maps[i]))
            .collect()
    };
    let (tr, va) = (cfg.train_frames, cfg.train_frames + cfg.val_frames);
    let splits = FeatureSplits {
        classes: f,
        train: tensors[..tr].to_vec(),
        train_labels: label_maps[..tr].to_vec(),
        val: tensors[tr..va].to_vec(),
        val_errors: errors_for(tr..va)?,
        test: tensors[va..needed].to_vec(),
        test_errors: errors_for(va..needed)?,
    };

    let (selection, qipf_fit_seconds) = timed(|| select_qipf(&splits, cfg)).stage("qipf-fit")?;

    let qipf_maps = |frames: &[FeatureTensor]| -> Result<Vec<Array2<f64>>> {
        frames
            .iter()
            .map(|ft| qipf_uncertainty_map(&selection.fields, ft).map(|m| m.values))
            .collect()
    };
    let softmax_maps = |frames: &[FeatureTensor]| -> Vec<Array2<f64>> {
        frames
            .iter()
            .map(|ft| softmax_uncertainty(ft).values)
            .collect()
    };

    let (qipf_test, qipf_secs) = timed(|| qipf_maps(&splits.test)).stage("qipf")?;
    let (softmax_test, softmax_secs) = timed(|| Ok(softmax_maps(&splits.test)))?;
    let method_maps = vec![
        MethodMaps {
            method: Method::Qipf,
            val: qipf_maps(&splits.val).stage("qipf")?,
            test: qipf_test,
            passes: Vec::new(),
        },
        MethodMaps {
            method: Method::Softmax,
            val: softmax_maps(&splits.val),
            test: softmax_test,
            passes: Vec::new(),
        },
    ];
    let methods = method_maps
        .iter()
        .map(|m| evaluate_method(m, &splits.test_errors, None, cfg))
        .collect::<Result<Vec<_>>>()
        .stage("metrics")?;

    let report = RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        classifier_train_accuracy: None,
        silverman_factor: selection.factor,
        silverman_cv: selection.cv,
        flagged_fields: selection.fields.flagged(),
        test_pixel_error_rate: pixel_error_rate(&splits.test_errors),
        methods,
    };
    Ok(RunOutput {
        report,
        timings: PhaseTimings {
            threads: rayon::current_num_threads(),
            train_seconds: 0.0,
            qipf_fit_seconds,
            uncertainty_seconds: vec![(Method::Qipf, qipf_secs), (Method::Softmax, softmax_secs)],
        },
        test_maps: method_maps
            .into_iter()
            .map(|m| (m.method, m.test))
            .collect(),
        test_errors: splits.test_errors,
    })
}

/// Features of every generated frame (train, then validation, then test)
/// from a classifier trained as in [`run_experiment`], stacked as
/// `N x H x W x C` logits, with the matching `N x H x W` labels.
pub fn export_dataset_features(cfg: &ExperimentConfig) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
    cfg.validate()?;
    let data = generate_dataset(cfg).stage("scenes")?;
    let classifier = train(
        &data.train,
        &cfg.classifier,
        cfg.scene.classes,
        derive_seed(cfg.seed, Stream::Classifier, 0),
    )
    .stage("train")?;
    let scenes: Vec<&SceneSample> = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .collect();
    let frames = scenes
        .iter()
        .map(|s| classifier.forward(s, false, 0).map(|ft| ft.features))
        .collect::<Result<Vec<_>>>()
        .stage("features")?;
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let features = ndarray::stack(Axis(0), &views)
        .expect("equal frame shapes")
        .into_dyn();
    let label_views: Vec<Array2<f64>> =
        scenes.iter().map(|s| s.labels.mapv(|l| l as f64)).collect();
    let label_views: Vec<_> = label_views.iter().map(|l| l.view()).collect();
    let labels = ndarray::stack(Axis(0), &label_views)
        .expect("equal frame shapes")
        .into_dyn();
    Ok((features, labels))
}
