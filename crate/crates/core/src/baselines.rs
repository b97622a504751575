//! Comparison uncertainty estimators: softmax confidence, Monte-Carlo
//! dropout and deep ensembles. Each yields a per-pixel map in `[0, 1]`.

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::child_seed;
use crate::toymodel::{argmax, FeatureModel, FeatureTensor, SceneSample};

pub const DEFAULT_MC_PASSES: usize = 100;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qipf,
    Softmax,
    McDropout,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Qipf,
        Method::Softmax,
        Method::McDropout,
        Method::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qipf => "qipf",
            Method::Softmax => "softmax",
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub values: Array2<f64>,
    pub method: Method,
}

impl UncertaintyMap {
    /// Values are clamped into `[0, 1]`; non-finite entries are rejected.
    pub fn new(values: Array2<f64>, method: Method) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("uncertainty map"));
        }
        Ok(Self {
            values: values.mapv_into(|v| v.clamp(0.0, 1.0)),
            method,
        })
    }
}

/// `1 - max_c p_c` per pixel.
pub fn softmax_uncertainty(ft: &FeatureTensor) -> UncertaintyMap {
    let values = ft.probs.map_axis(Axis(2), |p| {
        1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    UncertaintyMap::new(values, Method::Softmax).expect("softmax outputs are finite")
}

/// Entropy of each pixel's probability vector divided by `ln C`.
pub fn normalized_entropy(probs: &Array3<f64>) -> Array2<f64> {
    let classes = probs.dim().2;
    let norm = (classes as f64).ln();
    probs.map_axis(Axis(2), |p| {
        let h: f64 = p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
        if norm > 0.0 {
            (h / norm).clamp(0.0, 1.0)
        } else {
            0.0
        }
    })
}

/// Predictive entropy of the mean softmax over `passes` dropout forwards.
/// Pass `i` uses dropout seed `child_seed(seed, i)`.
pub fn mc_dropout_uncertainty<M>(
    model: &M,
    sample: &SceneSample,
    passes: usize,
    seed: u64,
) -> Result<UncertaintyMap>
where
    M: FeatureModel + Sync,
{
    if passes < 2 {
        return Err(Error::InvalidPasses(passes));
    }
    let runs: Vec<FeatureTensor> = (0..passes as u64)
        .into_par_iter()
        .map(|i| model.forward(sample, true, child_seed(seed, i)))
        .collect::<Result<_>>()?;

    let mut mean = Array3::<f64>::zeros(runs[0].probs.dim());
    for run in &runs {
        mean += &run.probs;
    }
    mean /= passes as f64;
    UncertaintyMap::new(normalized_entropy(&mean), Method::McDropout)
}

/// Per pixel: population standard deviation across members of the
/// probability each assigns to the ensemble-mean prediction, divided by its
/// maximum possible value 0.5.
///
/// Member values are sorted before every reduction so the result does not
/// depend on member order.
pub fn ensemble_uncertainty<M>(models: &[M], sample: &SceneSample) -> Result<UncertaintyMap>
where
    M: FeatureModel + Sync,
{
    if models.len() < 2 {
        return Err(Error::HeterogeneousEnsemble(format!(
            "need at least 2 members, got {}",
            models.len()
        )));
    }
    let arch = models[0].architecture();
    if let Some(other) = models
        .iter()
        .map(FeatureModel::architecture)
        .find(|a| *a != arch)
    {
        return Err(Error::HeterogeneousEnsemble(format!(
            "member architecture {other:?} differs from {arch:?}"
        )));
    }
    let outputs: Vec<FeatureTensor> = models
        .par_iter()
        .map(|m| m.forward(sample, false, 0))
        .collect::<Result<_>>()?;
    Ok(ensemble_from_outputs(&outputs))
}

pub(crate) fn ensemble_from_outputs(outputs: &[FeatureTensor]) -> UncertaintyMap {
    let (h, w, classes) = outputs[0].probs.dim();
    let k = outputs.len() as f64;
    let mut values = Array2::zeros((h, w));
    let mut member = vec![0.0; outputs.len()];
    let mut class_mean = vec![0.0; classes];
    for r in 0..h {
        for c in 0..w {
            for (cls, slot) in class_mean.iter_mut().enumerate() {
                for (m, out) in member.iter_mut().zip(outputs) {
                    *m = out.probs[[r, c, cls]];
                }
                member.sort_by(f64::total_cmp);
                *slot = member.iter().sum::<f64>() / k;
            }
            let pred = argmax(&class_mean);
            for (m, out) in member.iter_mut().zip(outputs) {
                *m = out.probs.slice(s![r, c, ..])[pred];
            }
            member.sort_by(f64::total_cmp);
            // Shifted by the smallest value: equal members give exactly 0.
            let base = member[0];
            let shift = member.iter().map(|p| p - base).sum::<f64>() / k;
            let var = member
                .iter()
                .map(|p| (p - base - shift).powi(2))
                .sum::<f64>()
                / k;
            values[[r, c]] = var.sqrt() / 0.5;
        }
    }
    UncertaintyMap::new(values, Method::Ensemble).expect("finite probabilities")
}
