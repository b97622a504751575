//! One-hidden-layer pixel classifier trained with minibatch SGD.
//!
//! `input -> ReLU(W1 x + b1) -> dropout -> W2 h + b2 = logits -> softmax`.
//! The logits are the pre-softmax feature space handed to the density
//! models.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{feature_matrix, SceneSample, FEATURE_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            lr: 0.1,
            epochs: 10,
            batch: 64,
            dropout_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "hidden width and batch size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassifier {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    dropout_rate: f64,
    train_accuracy: f64,
    loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Per-pixel classifier outputs for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    /// `H x W x F` pre-softmax activations.
    pub features: Array3<f64>,
    /// `H x W x C` softmax of `features`.
    pub probs: Array3<f64>,
    pub preds: Array2<usize>,
}

impl FeatureTensor {
    /// Derives probabilities and predictions from raw logits.
    pub fn from_features(features: Array3<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("feature tensor"));
        }
        let (h, w, c) = features.dim();
        if c == 0 {
            return Err(Error::ShapeMismatch(
                "feature tensor has no channels".into(),
            ));
        }
        let mut probs = features.clone();
        let mut preds = Array2::zeros((h, w));
        for ((r, col), pred) in preds.indexed_iter_mut() {
            let mut lane = probs.slice_mut(s![r, col, ..]);
            softmax_in_place(lane.as_slice_mut().expect("contiguous lane"));
            *pred = argmax(lane.as_slice().expect("contiguous lane"));
        }
        Ok(Self {
            features,
            probs,
            preds,
        })
    }

    pub fn height(&self) -> usize {
        self.features.dim().0
    }

    pub fn width(&self) -> usize {
        self.features.dim().1
    }

    pub fn channels(&self) -> usize {
        self.features.dim().2
    }

    pub fn feature(&self, row: usize, col: usize) -> &[f64] {
        let (_, w, c) = self.features.dim();
        let start = (row * w + col) * c;
        &self.features.as_slice().expect("standard layout")[start..start + c]
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

impl PixelClassifier {
    /// Glorot-uniform weights, zero biases.
    pub fn init(
        inputs: usize,
        hidden: usize,
        classes: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_out: usize, fan_in: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-a..a))
        };
        let w1 = glorot(hidden, inputs);
        let w2 = glorot(classes, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(classes),
            dropout_rate,
            train_accuracy: 0.0,
            loss_history: Vec::new(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Pixel accuracy on the training scenes after the last epoch.
    pub fn train_accuracy(&self) -> f64 {
        self.train_accuracy
    }

    /// Full-data training loss before the first epoch and after each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.w1.dim() == other.w1.dim() && self.w2.dim() == other.w2.dim()
    }

    fn hidden_pre(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1.t()) + &self.b1
    }

    /// Logits for each row of `x`; `mask` multiplies the hidden activations.
    pub(crate) fn logits(&self, x: ArrayView2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
        let mut hidden = self.hidden_pre(x).mapv_into(|v| v.max(0.0));
        if let Some(m) = mask {
            hidden *= m;
        }
        hidden.dot(&self.w2.t()) + &self.b2
    }

    /// Mean softmax cross-entropy of `x` against `labels` and its gradient.
    pub(crate) fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        mask: Option<&Array2<f64>>,
    ) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let pre = self.hidden_pre(x);
        let mut act = pre.mapv(|v| v.max(0.0));
        if let Some(m) = mask {
            act *= m;
        }
        let mut dz = act.dot(&self.w2.t()) + &self.b2;

        let mut loss = 0.0;
        for (mut row, &y) in dz.outer_iter_mut().zip(labels) {
            let z = row.as_slice_mut().expect("contiguous row");
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            softmax_in_place(z);
            z[y] -= 1.0;
            z.iter_mut().for_each(|v| *v /= n);
        }

        let w2 = dz.t().dot(&act);
        let b2 = dz.sum_axis(Axis(0));
        let mut da = dz.dot(&self.w2);
        if let Some(m) = mask {
            da *= m;
        }
        da.zip_mut_with(&pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = da.t().dot(&x);
        let b1 = da.sum_axis(Axis(0));
        (loss / n, Gradients { w1, b1, w2, b2 })
    }

    fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
    }

    /// Per-pixel forward pass over a frame. With `dropout_on` the hidden
    /// layer is masked by seeded inverted dropout; otherwise `seed` is
    /// unused and the pass is deterministic.
    pub fn forward(
        &self,
        sample: &SceneSample,
        dropout_on: bool,
        seed: u64,
    ) -> Result<FeatureTensor> {
        if self.inputs() != FEATURE_LEN {
            return Err(Error::DimensionMismatch {
                expected: self.inputs(),
                got: FEATURE_LEN,
            });
        }
        let (h, w) = (sample.height(), sample.width());
        let x = feature_matrix(sample);
        let mask = (dropout_on && self.dropout_rate > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dropout_mask(h * w, self.hidden(), self.dropout_rate, &mut rng)
        });
        let logits = self.logits(x.view(), mask.as_ref());
        let features = logits
            .into_shape_with_order((h, w, self.classes()))
            .expect("one logit row per pixel");
        FeatureTensor::from_features(features)
    }
}

pub fn train(
    scenes: &[SceneSample],
    hyper: &TrainConfig,
    classes: usize,
    seed: u64,
) -> Result<PixelClassifier> {
    hyper.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidConfig(
            "training needs at least one scene".into(),
        ));
    }
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {classes}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PixelClassifier::init(
        FEATURE_LEN,
        hyper.hidden,
        classes,
        hyper.dropout_rate,
        rng.random(),
    );

    let blocks: Vec<Array2<f64>> = scenes.iter().map(feature_matrix).collect();
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal feature widths");
    let labels: Vec<usize> = scenes
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidConfig(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let full_loss = |m: &PixelClassifier| m.loss_and_gradients(x.view(), &labels, None).0;
    model.loss_history.push(full_loss(&model));

    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut batch_labels = Vec::with_capacity(hyper.batch);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let xb = x.select(Axis(0), chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let mask = (hyper.dropout_rate > 0.0)
                .then(|| dropout_mask(chunk.len(), hyper.hidden, hyper.dropout_rate, &mut rng));
            let (loss, grads) = model.loss_and_gradients(xb.view(), &batch_labels, mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            model.sgd_step(&grads, hyper.lr);
        }
        let loss = full_loss(&model);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        model.loss_history.push(loss);
    }

    let logits = model.logits(x.view(), None);
    let correct = logits
        .outer_iter()
        .zip(&labels)
        .filter(|(z, &y)| argmax(z.as_slice().expect("contiguous row")) == y)
        .count();
    model.train_accuracy = correct as f64 / labels.len() as f64;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::scene::{generate_scene, SceneConfig};

    fn scenes(noise: f64, count: u64) -> Vec<SceneSample> {
        let cfg = SceneConfig {
            noise,
            ..SceneConfig::default()
        };
        (0..count)
            .map(|s| generate_scene(s, &cfg).unwrap())
            .collect()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut model = PixelClassifier::init(FEATURE_LEN, 6, 3, 0.0, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        model.b1.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        model.b2.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        let x = Array2::from_shape_simple_fn((10, FEATURE_LEN), || rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let (_, grads) = model.loss_and_gradients(x.view(), &labels, None);

        let h = 1e-6;
        let loss = |m: &PixelClassifier| m.loss_and_gradients(x.view(), &labels, None).0;
        let check = |analytic: f64, numeric: f64| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "analytic {analytic} vs numeric {numeric}"
            );
        };

        macro_rules! probe {
            ($field:ident) => {
                for idx in 0..model.$field.len() {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    plus.$field.as_slice_mut().unwrap()[idx] += h;
                    minus.$field.as_slice_mut().unwrap()[idx] -= h;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    check(grads.$field.as_slice().unwrap()[idx], numeric);
                }
            };
        }
        probe!(w1);
        probe!(b1);
        probe!(w2);
        probe!(b2);
    }

    #[test]
    fn separable_scenes_train_to_high_accuracy() {
        let data = scenes(0.0, 4);
        let model = train(&data, &TrainConfig::default(), 3, 1).unwrap();
        assert!(
            model.train_accuracy() >= 0.99,
            "accuracy {}",
            model.train_accuracy()
        );
        let hist = model.loss_history();
        assert_eq!(hist.len(), TrainConfig::default().epochs + 1);
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn zero_epochs_keeps_the_initialization() {
        let data = scenes(0.05, 1);
        let hyper = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let a = train(&data, &hyper, 3, 8).unwrap();
        let init = PixelClassifier::init(FEATURE_LEN, hyper.hidden, 3, hyper.dropout_rate, {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            rng.random()
        });
        assert_eq!(a.w1, init.w1);
        assert_eq!(a.w2, init.w2);
        assert_eq!(a.b1, init.b1);
    }

    #[test]
    fn training_is_deterministic() {
        let data = scenes(0.05, 2);
        let hyper = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(&data, &hyper, 3, 5).unwrap(),
            train(&data, &hyper, 3, 5).unwrap()
        );
    }

    #[test]
    fn divergence_is_reported() {
        let data = scenes(0.05, 1);
        let hyper = TrainConfig {
            lr: 1e300,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&data, &hyper, 3, 0),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn forward_contracts() {
        let data = scenes(0.05, 1);
        let model = PixelClassifier::init(FEATURE_LEN, 16, 3, 0.3, 2);
        let a = model.forward(&data[0], false, 1).unwrap();
        assert_eq!(a, model.forward(&data[0], false, 2).unwrap());
        assert_ne!(a, model.forward(&data[0], true, 2).unwrap());

        for lane in a.probs.lanes(Axis(2)) {
            assert!((lane.sum() - 1.0).abs() < 1e-9);
        }
        for ((r, c), &p) in a.preds.indexed_iter() {
            let lane = a.probs.slice(s![r, c, ..]);
            assert_eq!(p, argmax(lane.as_slice().unwrap()));
        }

        let no_drop = PixelClassifier {
            dropout_rate: 0.0,
            ..model
        };
        assert_eq!(
            no_drop.forward(&data[0], true, 3).unwrap(),
            no_drop.forward(&data[0], false, 0).unwrap()
        );
    }

    #[test]
    fn softmax_ties_pick_lowest_class() {
        let ft = FeatureTensor::from_features(Array3::zeros((1, 1, 3))).unwrap();
        assert_eq!(ft.preds[[0, 0]], 0);
        assert!(FeatureTensor::from_features(Array3::from_elem((1, 1, 2), f64::NAN)).is_err());
    }
}
