//! Moment decomposition of the quantum information potential field (QIPF).
//!
//! The IPF `psi` of a sample set is normalized to a wave function `u = psi / N`
//! and projected onto Hermite polynomials, `psi_k = h_k(u)`. Each mode gets
//! the quantum-potential functional
//!
//! ```text
//! H_k(x) = E_k + (sigma^2 / 2) * lap(psi_k)(x) / psi_k(x)
//! lap(psi_k) = h_k''(u) |grad u|^2 + h_k'(u) lap(u)
//! ```
//!
//! where `E_k` is the negated minimum of the ratio term over the calibration
//! (training) samples, so every mode is non-negative there. The index of the
//! largest mode is the uncertainty score of a point.

mod hermite;

pub use hermite::{hermite_eval, HermiteBasis, HermiteValue, MAX_HERMITE_ORDER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{ipf_eval, Bandwidth, FieldEval, SampleSet, Whitening};

/// `|psi_k|` below this is treated as a node of the mode: skipped during
/// calibration and reported as 0 during evaluation.
pub const ZERO_GUARD: f64 = 1e-12;

/// Default number of modes.
pub const DEFAULT_MODES: usize = 12;

/// How the raw field is scaled into a wave function before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the L2 norm of the field over the calibration samples.
    #[default]
    L2,
    /// Divide by the largest field value over the calibration samples.
    Max,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization `{other}` (expected l2 or max)"
            ))),
        }
    }
}

/// A fitted decomposer for one density field.
#[derive(Debug, Clone)]
pub struct QipfModel {
    samples: SampleSet,
    sigma: Bandwidth,
    normalizer: f64,
    e_lower: Vec<f64>,
    basis: HermiteBasis,
    whitening: Option<Whitening>,
}

/// `H_1 ..= H_m` at one point; entry `k - 1` holds `H_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpectrum {
    values: Vec<f64>,
}

pub fn fit(samples: SampleSet, sigma: Bandwidth, modes: usize) -> Result<QipfModel> {
    fit_with(samples, sigma, modes, Normalization::L2)
}

pub fn fit_with(
    samples: SampleSet,
    sigma: Bandwidth,
    modes: usize,
    normalization: Normalization,
) -> Result<QipfModel> {
    if modes == 0 {
        return Err(Error::InvalidConfig(
            "at least one QIPF mode is required".into(),
        ));
    }
    let basis = HermiteBasis::new(modes)?;

    let fields: Vec<FieldEval> = samples
        .rows()
        .outer_iter()
        .map(|row| ipf_eval(&samples, sigma, row.as_slice().expect("standard layout")))
        .collect::<Result<_>>()?;

    let normalizer = match normalization {
        Normalization::L2 => fields.iter().map(|f| f.value * f.value).sum::<f64>().sqrt(),
        Normalization::Max => fields.iter().map(|f| f.value).fold(0.0, f64::max),
    };
    if normalizer.is_nan() || normalizer <= 0.0 || normalizer.is_infinite() {
        return Err(Error::DegenerateField);
    }

    let mut minima = vec![f64::INFINITY; modes];
    let mut scratch = vec![None; modes];
    for field in &fields {
        mode_ratios(field, normalizer, sigma, basis, &mut scratch);
        for (min, ratio) in minima.iter_mut().zip(&scratch) {
            if let Some(r) = *ratio {
                *min = min.min(r);
            }
        }
    }
    // A mode that vanishes on every calibration point has no bound to enforce.
    let e_lower = minima
        .into_iter()
        .map(|m| if m.is_finite() { -m } else { 0.0 })
        .collect();

    Ok(QipfModel {
        samples,
        sigma,
        normalizer,
        e_lower,
        basis,
        whitening: None,
    })
}

/// One projected mode `psi_k = h_k(psi / N)` and its Laplacian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeField {
    pub value: f64,
    pub laplacian: f64,
}

/// Chain rule: `lap h_k(u) = h_k''(u) |grad u|^2 + h_k'(u) lap u`.
fn for_each_mode(
    field: &FieldEval,
    normalizer: f64,
    basis: HermiteBasis,
    mut f: impl FnMut(usize, ModeField),
) {
    let u = field.value / normalizer;
    let grad_sq = field.gradient.iter().map(|g| g * g).sum::<f64>() / (normalizer * normalizer);
    let lap = field.laplacian / normalizer;

    let mut herm = [HermiteValue {
        value: 0.0,
        first: 0.0,
        second: 0.0,
    }; MAX_HERMITE_ORDER + 1];
    let herm = &mut herm[..=basis.max_order()];
    basis.eval_into(u, herm);

    for (k, h) in herm[1..].iter().enumerate() {
        f(
            k,
            ModeField {
                value: h.value,
                laplacian: h.second * grad_sq + h.first * lap,
            },
        );
    }
}

/// `(sigma^2 / 2) lap(psi_k) / psi_k` for `k = 1..=m`, or `None` where the
/// mode is within [`ZERO_GUARD`] of a node.
fn mode_ratios(
    field: &FieldEval,
    normalizer: f64,
    sigma: Bandwidth,
    basis: HermiteBasis,
    out: &mut [Option<f64>],
) {
    let half_s2 = 0.5 * sigma.sigma() * sigma.sigma();
    for_each_mode(field, normalizer, basis, |k, mode| {
        out[k] = (mode.value.abs() >= ZERO_GUARD).then(|| half_s2 * mode.laplacian / mode.value);
    });
}

impl QipfModel {
    /// Attaches a feature standardization applied to every evaluation
    /// point. The model's samples must already be in standardized units.
    pub fn with_whitening(mut self, whitening: Whitening) -> Self {
        self.whitening = Some(whitening);
        self
    }

    pub fn modes(&self) -> usize {
        self.e_lower.len()
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn e_lower(&self) -> &[f64] {
        &self.e_lower
    }

    pub fn sigma(&self) -> Bandwidth {
        self.sigma
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    fn field(&self, point: &[f64]) -> Result<FieldEval> {
        match &self.whitening {
            Some(w) => {
                if point.len() != self.samples.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.samples.dim(),
                        got: point.len(),
                    });
                }
                ipf_eval(&self.samples, self.sigma, &w.apply(point))
            }
            None => ipf_eval(&self.samples, self.sigma, point),
        }
    }

    /// `psi_k` and its Laplacian for `k = 1..=m`.
    pub fn mode_fields(&self, point: &[f64]) -> Result<Vec<ModeField>> {
        let field = self.field(point)?;
        let mut out = Vec::with_capacity(self.modes());
        for_each_mode(&field, self.normalizer, self.basis, |_, mode| {
            out.push(mode)
        });
        Ok(out)
    }

    /// Unclamped `H_k` values; `None` marks modes at a node.
    pub fn raw_moments(&self, point: &[f64]) -> Result<Vec<Option<f64>>> {
        let field = self.field(point)?;
        let mut out = vec![None; self.modes()];
        mode_ratios(&field, self.normalizer, self.sigma, self.basis, &mut out);
        for (slot, e) in out.iter_mut().zip(&self.e_lower) {
            *slot = slot.map(|r| e + r);
        }
        Ok(out)
    }

    pub fn moments(&self, point: &[f64]) -> Result<MomentSpectrum> {
        let values = self
            .raw_moments(point)?
            .into_iter()
            .map(|h| match h {
                Some(v) if v.is_finite() => v.max(0.0),
                Some(v) if v == f64::INFINITY => f64::MAX,
                _ => 0.0,
            })
            .collect();
        Ok(MomentSpectrum { values })
    }
}

impl MomentSpectrum {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based index of the largest moment; ties go to the lowest index.
    pub fn uncertainty_index(&self) -> usize {
        uncertainty_index(&self.values)
    }
}

pub fn uncertainty_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best + 1
}

pub fn normalized_uncertainty(index: usize, modes: usize) -> f64 {
    debug_assert!((1..=modes).contains(&index));
    index as f64 / modes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_set(n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        SampleSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_sample_fit() {
        let s = SampleSet::from_rows(&[vec![0.4]]).unwrap();
        let model = fit(s, Bandwidth::new(1.0).unwrap(), 1).unwrap();
        assert_eq!(model.normalizer(), 1.0);
        assert_eq!(model.modes(), 1);
    }

    #[test]
    fn moments_non_negative_on_calibration_points() {
        let s = normal_set(60, 5);
        let sigma = crate::kde::silverman_bandwidth(&s).unwrap();
        let model = fit(s.clone(), sigma, 12).unwrap();
        let mut hit_zero = [false; 12];
        for row in s.rows().outer_iter() {
            let raw = model.raw_moments(row.as_slice().unwrap()).unwrap();
            for (k, h) in raw.iter().enumerate() {
                if let Some(h) = h {
                    assert!(*h >= 0.0, "mode {} negative: {h}", k + 1);
                    hit_zero[k] |= *h == 0.0;
                }
            }
        }
        assert!(hit_zero.iter().all(|&z| z));
    }

    #[test]
    fn fit_is_deterministic() {
        let s = normal_set(500, 9);
        let sigma = crate::kde::silverman_bandwidth(&s).unwrap();
        let a = fit(s.clone(), sigma, 12).unwrap();
        let b = fit(s, sigma, 12).unwrap();
        assert!(a.e_lower().iter().all(|e| e.is_finite()));
        assert_eq!(a.e_lower(), b.e_lower());
        assert_eq!(a.moments(&[1.7]).unwrap(), b.moments(&[1.7]).unwrap());
    }

    #[test]
    fn node_of_a_mode_reports_zero() {
        // With max normalization a lone sample evaluates to u = 1 at itself;
        // pick the point where u hits the root 1/sqrt(2) of h_2.
        let s = SampleSet::from_rows(&[vec![0.0]]).unwrap();
        let sigma = Bandwidth::new(1.0).unwrap();
        let model = fit_with(s, sigma, 3, Normalization::Max).unwrap();
        let x = (2.0 * (2.0f64).sqrt().ln()).sqrt(); // exp(-x^2/2) = 1/sqrt(2)
        let raw = model.raw_moments(&[x]).unwrap();
        let spectrum = model.moments(&[x]).unwrap();
        assert!(spectrum.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        if raw[1].is_none() {
            assert_eq!(spectrum.values()[1], 0.0);
        }
    }

    #[test]
    fn fit_errors() {
        let s = normal_set(5, 1);
        let sigma = Bandwidth::new(1.0).unwrap();
        assert!(matches!(
            fit(s.clone(), sigma, 33),
            Err(Error::OrderTooLarge { .. })
        ));
        assert!(fit(s.clone(), sigma, 0).is_err());
        let model = fit(s, sigma, 3).unwrap();
        assert!(matches!(
            model.moments(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn argmax_index() {
        assert_eq!(uncertainty_index(&[0.1, 0.9, 0.3]), 2);
        assert_eq!(uncertainty_index(&[0.5, 0.5]), 1);
        assert_eq!(uncertainty_index(&[0.0, 0.0, 0.0]), 1);
    }

    #[test]
    fn normalized_index() {
        assert_eq!(normalized_uncertainty(12, 12), 1.0);
        assert!((normalized_uncertainty(1, 12) - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(normalized_uncertainty(6, 12), 0.5);
    }

    #[test]
    fn whitened_model_evaluates_in_raw_units() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![100.0 + i as f64, 0.01 * i as f64])
            .collect();
        let s = SampleSet::from_rows(&rows).unwrap();
        let w = Whitening::fit(&s);
        let ws = w.apply_set(&s).unwrap();
        let sigma = crate::kde::silverman_bandwidth(&ws).unwrap();
        let model = fit(ws, sigma, 4).unwrap().with_whitening(w);
        let spec = model.moments(&[110.0, 0.1]).unwrap();
        assert_eq!(spec.values().len(), 4);
        assert!(spec.values().iter().all(|v| v.is_finite()));
    }
}
