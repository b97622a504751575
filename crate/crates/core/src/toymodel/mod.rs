//! Desk-scale stand-in for a segmentation network: synthetic scenes and a
//! small pixel classifier whose logits serve as the feature space.

mod classifier;
mod scene;

pub use classifier::{train, FeatureTensor, PixelClassifier, TrainConfig};
pub use scene::{
    feature_matrix, generate_scene, pixel_features, SceneConfig, SceneSample, DEFAULT_OOD_COLOR,
    DEFAULT_PALETTE, FEATURE_LEN,
};

pub(crate) use classifier::argmax;

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::Result;

/// Anything that maps a frame to per-pixel features, optionally with
/// test-time dropout.
pub trait FeatureModel {
    fn forward(&self, sample: &SceneSample, dropout_on: bool, seed: u64) -> Result<FeatureTensor>;

    fn dropout_rate(&self) -> f64;

    /// `(inputs, hidden, classes)`.
    fn architecture(&self) -> (usize, usize, usize);
}

impl FeatureModel for PixelClassifier {
    fn forward(&self, sample: &SceneSample, dropout_on: bool, seed: u64) -> Result<FeatureTensor> {
        PixelClassifier::forward(self, sample, dropout_on, seed)
    }

    fn dropout_rate(&self) -> f64 {
        PixelClassifier::dropout_rate(self)
    }

    fn architecture(&self) -> (usize, usize, usize) {
        (self.inputs(), self.hidden(), self.classes())
    }
}

/// Counts forward passes made through the wrapped model.
#[derive(Debug)]
pub struct CountingModel<'a, M> {
    inner: &'a M,
    passes: AtomicUsize,
}

impl<'a, M> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            passes: AtomicUsize::new(0),
        }
    }

    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> usize {
        self.passes.swap(0, Ordering::Relaxed)
    }
}

impl<M: FeatureModel> FeatureModel for CountingModel<'_, M> {
    fn forward(&self, sample: &SceneSample, dropout_on: bool, seed: u64) -> Result<FeatureTensor> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.inner.forward(sample, dropout_on, seed)
    }

    fn dropout_rate(&self) -> f64 {
        self.inner.dropout_rate()
    }

    fn architecture(&self) -> (usize, usize, usize) {
        self.inner.architecture()
    }
}
