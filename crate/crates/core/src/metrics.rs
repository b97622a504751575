//! Patch-level evaluation of uncertainty maps against segmentation errors.
//!
//! Patches are split into accurate/inaccurate by the error map and into
//! certain/uncertain by thresholding the patch-mean uncertainty at
//! `u_th = u_min + t (u_max - u_min)`. From the four counts:
//!
//! * PA    = n_ac / (n_ac + n_ic)     -- p(accurate | certain)
//! * PU    = n_iu / (n_ic + n_iu)     -- p(uncertain | inaccurate)
//! * PAvPU = (n_ac + n_iu) / total
//!
//! A patch whose uncertainty equals the threshold counts as uncertain.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PATCH: usize = 8;

/// `0.00, 0.05, ..., 1.00`.
pub fn default_t_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn error_map(preds: &Array2<usize>, truth: &Array2<usize>) -> Result<Array2<bool>> {
    if preds.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?} vs ground truth {:?}",
            preds.dim(),
            truth.dim()
        )));
    }
    Ok(ndarray::Zip::from(preds)
        .and(truth)
        .map_collect(|p, t| p != t))
}

fn patch_grid(dim: (usize, usize), patch: usize) -> Result<(usize, usize)> {
    if patch == 0 {
        return Err(Error::InvalidPatch(patch));
    }
    Ok((dim.0.div_ceil(patch), dim.1.div_ceil(patch)))
}

/// Mean of each `patch x patch` block. Trailing partial blocks average
/// over the pixels they actually contain.
pub fn patch_mean(map: &Array2<f64>, patch: usize) -> Result<Array2<f64>> {
    let (gh, gw) = patch_grid(map.dim(), patch)?;
    let mut sums = Array2::<f64>::zeros((gh, gw));
    let mut counts = Array2::<usize>::zeros((gh, gw));
    for ((r, c), &v) in map.indexed_iter() {
        sums[[r / patch, c / patch]] += v;
        counts[[r / patch, c / patch]] += 1;
    }
    Ok(ndarray::Zip::from(&sums)
        .and(&counts)
        .map_collect(|s, &n| s / n as f64))
}

/// A patch is accurate iff strictly more than half of its pixels are
/// correctly segmented.
pub fn patch_accuracy(errors: &Array2<bool>, patch: usize) -> Result<Array2<bool>> {
    let (gh, gw) = patch_grid(errors.dim(), patch)?;
    let mut correct = Array2::<usize>::zeros((gh, gw));
    let mut counts = Array2::<usize>::zeros((gh, gw));
    for ((r, c), &wrong) in errors.indexed_iter() {
        counts[[r / patch, c / patch]] += 1;
        if !wrong {
            correct[[r / patch, c / patch]] += 1;
        }
    }
    Ok(ndarray::Zip::from(&correct)
        .and(&counts)
        .map_collect(|&ok, &n| 2 * ok > n))
}

pub fn threshold_value(u_min: f64, u_max: f64, t: f64) -> Result<f64> {
    if !(u_min.is_finite() && u_max.is_finite()) || u_max < u_min {
        return Err(Error::InvalidRange {
            min: u_min,
            max: u_max,
        });
    }
    Ok(u_min + t * (u_max - u_min))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_ac: u64,
    pub n_au: u64,
    pub n_ic: u64,
    pub n_iu: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.n_ac += rhs.n_ac;
        self.n_au += rhs.n_au;
        self.n_ic += rhs.n_ic;
        self.n_iu += rhs.n_iu;
    }
}

pub fn confusion(accurate: &[bool], uncertainty: &[f64], u_th: f64) -> Result<ConfusionCounts> {
    if accurate.len() != uncertainty.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} accuracy flags vs {} uncertainty values",
            accurate.len(),
            uncertainty.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (&acc, &u) in accurate.iter().zip(uncertainty) {
        match (acc, u >= u_th) {
            (true, false) => counts.n_ac += 1,
            (true, true) => counts.n_au += 1,
            (false, false) => counts.n_ic += 1,
            (false, true) => counts.n_iu += 1,
        }
    }
    Ok(counts)
}

/// PA, PU and PAvPU; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub pa: Option<f64>,
    pub pu: Option<f64>,
    pub pavpu: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    Scores {
        pa: ratio(c.n_ac, c.n_ac + c.n_ic),
        pu: ratio(c.n_iu, c.n_ic + c.n_iu),
        pavpu: ratio(c.n_ac + c.n_iu, c.total()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub t: f64,
    pub u_th: f64,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub entries: Vec<SweepEntry>,
}

pub fn validate_t_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidConfig(
            "threshold grid values must lie in [0, 1]".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "threshold grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn sweep(
    accurate: &[bool],
    uncertainty: &[f64],
    u_min: f64,
    u_max: f64,
    t_grid: &[f64],
) -> Result<ThresholdSweep> {
    validate_t_grid(t_grid)?;
    let entries = t_grid
        .iter()
        .map(|&t| {
            let u_th = threshold_value(u_min, u_max, t)?;
            let counts = confusion(accurate, uncertainty, u_th)?;
            Ok(SweepEntry {
                t,
                u_th,
                counts,
                scores: scores(&counts),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdSweep { entries })
}

impl ThresholdSweep {
    /// Mean of each score over the entries where it is defined.
    pub fn mean_scores(&self) -> Scores {
        let mean = |pick: fn(&Scores) -> Option<f64>| {
            let vals: Vec<f64> = self
                .entries
                .iter()
                .filter_map(|e| pick(&e.scores))
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Scores {
            pa: mean(|s| s.pa),
            pu: mean(|s| s.pu),
            pavpu: mean(|s| s.pavpu),
        }
    }
}
