//! Gaussian information potential field (IPF) over a set of feature vectors.
//!
//! The field at a point `x` is the mean of unnormalized Gaussian kernels
//! centred on the samples,
//!
//! ```text
//! psi(x) = 1/n * sum_i exp(-|z_i - x|^2 / (2 sigma^2))
//! ```
//!
//! so `psi(z) = 1` for a single sample evaluated at itself. The missing
//! `(2 pi sigma^2)^(-d/2)` density factor cancels in every ratio the
//! decomposition in [`crate::qipf`] takes. Gradient and Laplacian are
//! evaluated analytically in the same pass as the value.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;

use crate::error::{Error, Result};

/// An immutable `n x d` set of finite feature vectors.
///
/// Rows are stored in canonical (lexicographic) order, so kernel sums are
/// accumulated in the same order regardless of how the caller arranged
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
}

impl SampleSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 {
            return Err(Error::InvalidSamples("no samples".into()));
        }
        if d == 0 {
            return Err(Error::InvalidSamples("zero feature dimensions".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("sample set"));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| lexicographic(data.row(a), data.row(b)));
        let data = data.select(Axis(0), &order);
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InvalidSamples(e.to_string()))?;
        Self::new(data)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }
}

fn lexicographic(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Isotropic Gaussian kernel width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self(sigma))
        } else {
            Err(Error::InvalidBandwidth(sigma))
        }
    }

    pub fn sigma(self) -> f64 {
        self.0
    }

    pub fn scaled(self, factor: f64) -> Result<Self> {
        Self::new(self.0 * factor)
    }
}

/// Value, gradient and Laplacian of the field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

/// Silverman's rule of thumb with the d-dimensional exponent:
/// `sigma = s * (4 / ((d + 2) n))^(1 / (d + 4))`, where `s` is the mean of
/// the per-dimension sample standard deviations.
pub fn silverman_bandwidth(samples: &SampleSet) -> Result<Bandwidth> {
    let n = samples.len();
    let d = samples.dim();
    if n < 2 {
        return Err(Error::DegenerateSamples(format!(
            "Silverman bandwidth needs at least 2 samples, got {n}"
        )));
    }
    let spread = samples.rows().std_axis(Axis(0), 1.0).mean().unwrap_or(0.0);
    if spread.is_nan() || spread <= 0.0 {
        return Err(Error::DegenerateSamples("samples have zero spread".into()));
    }
    let (n, d) = (n as f64, d as f64);
    Bandwidth::new(spread * (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0)))
}

/// Evaluates the field, its gradient and its Laplacian at `point`.
///
/// For finite inputs the value is strictly positive unless every kernel
/// underflows, which only happens for points hundreds of bandwidths away
/// from all samples.
pub fn ipf_eval(samples: &SampleSet, sigma: Bandwidth, point: &[f64]) -> Result<FieldEval> {
    let d = samples.dim();
    if point.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: point.len(),
        });
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("evaluation point"));
    }

    let s2 = sigma.sigma() * sigma.sigma();
    let inv_2s2 = 0.5 / s2;
    let dim_term = d as f64 / s2;

    let mut value = 0.0;
    let mut gradient = vec![0.0; d];
    let mut laplacian = 0.0;
    let mut diff = vec![0.0; d];
    for row in samples.rows().outer_iter() {
        let mut r2 = 0.0;
        for ((slot, &z), &x) in diff.iter_mut().zip(row.iter()).zip(point) {
            *slot = z - x;
            r2 += *slot * *slot;
        }
        let k = (-r2 * inv_2s2).exp();
        value += k;
        for (g, &dz) in gradient.iter_mut().zip(&diff) {
            *g += k * dz;
        }
        laplacian += k * (r2 / (s2 * s2) - dim_term);
    }

    let n = samples.len() as f64;
    gradient.iter_mut().for_each(|g| *g /= n * s2);
    Ok(FieldEval {
        value: value / n,
        gradient,
        laplacian: laplacian / n,
    })
}

pub fn ipf_batch(
    samples: &SampleSet,
    sigma: Bandwidth,
    points: &[Vec<f64>],
) -> Result<Vec<FieldEval>> {
    points.iter().map(|p| ipf_eval(samples, sigma, p)).collect()
}

/// Draws `n_max` rows uniformly without replacement; sets that already fit
/// are returned unchanged.
pub fn subsample(samples: &SampleSet, n_max: usize, seed: u64) -> SampleSet {
    let n = samples.len();
    if n <= n_max {
        return samples.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, n_max).into_vec();
    picked.sort_unstable();
    SampleSet {
        data: samples.data.select(Axis(0), &picked),
    }
}

/// Per-dimension standardization fitted on a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Whitening {
    /// Dimensions with zero spread are centred but left unscaled.
    pub fn fit(samples: &SampleSet) -> Self {
        let rows = samples.rows();
        let mean = rows.mean_axis(Axis(0)).expect("non-empty sample set");
        let ddof = if samples.len() > 1 { 1.0 } else { 0.0 };
        let std = rows.std_axis(Axis(0), ddof);
        Self {
            mean: mean.to_vec(),
            inv_std: std
                .iter()
                .map(|&s| if s > 0.0 { 1.0 / s } else { 1.0 })
                .collect(),
        }
    }

    pub fn apply(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(x, (m, s))| (x - m) * s)
            .collect()
    }

    pub fn apply_set(&self, samples: &SampleSet) -> Result<SampleSet> {
        let mut data = samples.data.clone();
        for mut row in data.outer_iter_mut() {
            for (x, (m, s)) in row.iter_mut().zip(self.mean.iter().zip(&self.inv_std)) {
                *x = (*x - m) * s;
            }
        }
        SampleSet::new(data)
    }
}
