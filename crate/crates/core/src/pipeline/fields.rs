//! Density fields over classifier features, one per pixel location (or per
//! class), and the QIPF uncertainty map they produce.

use ndarray::Array2;
use rayon::prelude::*;

use super::config::{Granularity, QipfSettings};
use crate::baselines::{Method, UncertaintyMap};
use crate::error::{Error, Result};
use crate::kde::{silverman_bandwidth, subsample, SampleSet, Whitening};
use crate::qipf::{fit_with, normalized_uncertainty, QipfModel};
use crate::seed::child_seed;
use crate::toymodel::FeatureTensor;

/// Fitted QIPF models. `None` marks a location (or class) whose samples
/// could not support a field; it reports maximum uncertainty.
#[derive(Debug, Clone)]
pub enum QipfFields {
    PerPixel {
        height: usize,
        width: usize,
        modes: usize,
        models: Vec<Option<QipfModel>>,
    },
    PerClass {
        modes: usize,
        models: Vec<Option<QipfModel>>,
    },
}

/// Subsample, optionally whiten, pick `factor` x Silverman and fit.
/// Degenerate sample sets yield `Ok(None)`.
pub fn fit_location(
    samples: SampleSet,
    settings: &QipfSettings,
    factor: f64,
    seed: u64,
) -> Result<Option<QipfModel>> {
    let samples = subsample(&samples, settings.n_max, seed);
    let (samples, whitening) = if settings.whiten {
        let w = Whitening::fit(&samples);
        (w.apply_set(&samples)?, Some(w))
    } else {
        (samples, None)
    };
    let sigma = match silverman_bandwidth(&samples) {
        Ok(s) => s.scaled(factor)?,
        Err(Error::DegenerateSamples(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match fit_with(samples, sigma, settings.modes, settings.normalization) {
        Ok(model) => Ok(Some(match whitening {
            Some(w) => model.with_whitening(w),
            None => model,
        })),
        Err(Error::DegenerateField) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_frames(frames: &[FeatureTensor]) -> Result<(usize, usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no training frames".into()))?;
    let dim = first.features.dim();
    if let Some(bad) = frames.iter().find(|f| f.features.dim() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "training frame {:?} differs from {:?}",
            bad.features.dim(),
            dim
        )));
    }
    Ok(dim)
}

/// One field per pixel location from that location's features across the
/// training frames. Location `i` (row-major) subsamples with
/// `child_seed(seed, i)`.
pub fn fit_qipf_per_pixel(
    train: &[FeatureTensor],
    settings: &QipfSettings,
    factor: f64,
    seed: u64,
) -> Result<QipfFields> {
    if train.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "per-pixel fields need at least 2 training frames, got {}",
            train.len()
        )));
    }
    let (height, width, feats) = check_frames(train)?;
    let models = (0..height * width)
        .into_par_iter()
        .map(|loc| {
            let (r, c) = (loc / width, loc % width);
            let mut data = Vec::with_capacity(train.len() * feats);
            for frame in train {
                data.extend_from_slice(frame.feature(r, c));
            }
            let samples = SampleSet::new(
                Array2::from_shape_vec((train.len(), feats), data).expect("row width"),
            )?;
            fit_location(samples, settings, factor, child_seed(seed, loc as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QipfFields::PerPixel {
        height,
        width,
        modes: settings.modes,
        models,
    })
}

/// One field per class from every training pixel carrying that label.
pub fn fit_qipf_per_class(
    train: &[FeatureTensor],
    labels: &[Array2<usize>],
    classes: usize,
    settings: &QipfSettings,
    factor: f64,
    seed: u64,
) -> Result<QipfFields> {
    let (h, w, feats) = check_frames(train)?;
    if labels.len() != train.len() || labels.iter().any(|l| l.dim() != (h, w)) {
        return Err(Error::ShapeMismatch(
            "label maps do not match training frames".into(),
        ));
    }
    let models = (0..classes)
        .into_par_iter()
        .map(|class| {
            let mut data = Vec::new();
            for (frame, lab) in train.iter().zip(labels) {
                for ((r, c), &l) in lab.indexed_iter() {
                    if l == class {
                        data.extend_from_slice(frame.feature(r, c));
                    }
                }
            }
            if data.is_empty() {
                return Ok(None);
            }
            let rows = data.len() / feats;
            let samples =
                SampleSet::new(Array2::from_shape_vec((rows, feats), data).expect("row width"))?;
            fit_location(samples, settings, factor, child_seed(seed, class as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QipfFields::PerClass {
        modes: settings.modes,
        models,
    })
}

pub fn fit_fields(
    train: &[FeatureTensor],
    labels: &[Array2<usize>],
    classes: usize,
    settings: &QipfSettings,
    factor: f64,
    seed: u64,
) -> Result<QipfFields> {
    match settings.granularity {
        Granularity::Pixel => fit_qipf_per_pixel(train, settings, factor, seed),
        Granularity::Class => fit_qipf_per_class(train, labels, classes, settings, factor, seed),
    }
}

impl QipfFields {
    pub fn modes(&self) -> usize {
        match self {
            QipfFields::PerPixel { modes, .. } | QipfFields::PerClass { modes, .. } => *modes,
        }
    }

    /// Number of locations (or classes) without a usable field.
    pub fn flagged(&self) -> usize {
        match self {
            QipfFields::PerPixel { models, .. } | QipfFields::PerClass { models, .. } => {
                models.iter().filter(|m| m.is_none()).count()
            }
        }
    }
}

/// Per pixel: argmax moment index of the pixel's field at its test feature,
/// divided by the mode count. Pixels without a field get 1.
pub fn qipf_uncertainty_map(fields: &QipfFields, test: &FeatureTensor) -> Result<UncertaintyMap> {
    let (h, w) = (test.height(), test.width());
    let modes = fields.modes();
    if let QipfFields::PerPixel { height, width, .. } = fields {
        if (*height, *width) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "fields cover {height}x{width}, frame is {h}x{w}"
            )));
        }
    }
    let values = (0..h * w)
        .into_par_iter()
        .map(|loc| {
            let (r, c) = (loc / w, loc % w);
            let model = match fields {
                QipfFields::PerPixel { models, .. } => models[loc].as_ref(),
                QipfFields::PerClass { models, .. } => {
                    models.get(test.preds[[r, c]]).and_then(Option::as_ref)
                }
            };
            match model {
                Some(m) => {
                    let spectrum = m.moments(test.feature(r, c))?;
                    Ok(normalized_uncertainty(spectrum.uncertainty_index(), modes))
                }
                None => Ok(1.0),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    UncertaintyMap::new(
        Array2::from_shape_vec((h, w), values).expect("one value per pixel"),
        Method::Qipf,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(count: usize, seed: u64) -> Vec<FeatureTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                FeatureTensor::from_features(Array3::from_shape_simple_fn((16, 16, 3), || {
                    rng.random_range(-3.0..3.0)
                }))
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn one_model_per_location() {
        let frames = random_frames(2, 1);
        let fields = fit_qipf_per_pixel(&frames, &QipfSettings::default(), 1.0, 5).unwrap();
        match &fields {
            QipfFields::PerPixel { models, .. } => {
                assert_eq!(models.len(), 256);
                for m in models.iter().flatten() {
                    assert_eq!(m.samples().len(), 2);
                }
            }
            _ => unreachable!(),
        }
        assert_eq!(fields.flagged(), 0);
    }

    #[test]
    fn identical_features_are_flagged() {
        let frame = random_frames(1, 2).pop().unwrap();
        let frames = vec![frame.clone(), frame.clone(), frame.clone()];
        let fields = fit_qipf_per_pixel(&frames, &QipfSettings::default(), 1.0, 5).unwrap();
        assert_eq!(fields.flagged(), 256);
        let map = qipf_uncertainty_map(&fields, &frame).unwrap();
        assert!(map.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn maps_are_deterministic() {
        let frames = random_frames(6, 3);
        let test = random_frames(1, 4).pop().unwrap();
        let settings = QipfSettings {
            n_max: 4,
            ..QipfSettings::default()
        };
        let a = qipf_uncertainty_map(
            &fit_qipf_per_pixel(&frames, &settings, 1.0, 9).unwrap(),
            &test,
        )
        .unwrap();
        let b = qipf_uncertainty_map(
            &fit_qipf_per_pixel(&frames, &settings, 1.0, 9).unwrap(),
            &test,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn per_class_fields() {
        let frames = random_frames(3, 5);
        let labels: Vec<Array2<usize>> = frames.iter().map(|f| f.preds.clone()).collect();
        let fields =
            fit_qipf_per_class(&frames, &labels, 4, &QipfSettings::default(), 1.0, 1).unwrap();
        // Only 3 logit channels, so class 3 never appears.
        assert_eq!(fields.flagged(), 1);
        let map = qipf_uncertainty_map(&fields, &frames[0]).unwrap();
        assert_eq!(map.values.dim(), (16, 16));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let frames = random_frames(2, 6);
        let fields = fit_qipf_per_pixel(&frames, &QipfSettings::default(), 1.0, 0).unwrap();
        let other = FeatureTensor::from_features(Array3::zeros((8, 8, 3))).unwrap();
        assert!(matches!(
            qipf_uncertainty_map(&fields, &other),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(fit_qipf_per_pixel(&frames[..1], &QipfSettings::default(), 1.0, 0).is_err());
    }
}
