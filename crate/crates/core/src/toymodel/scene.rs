//! Synthetic labeled scenes: a background with painted circles, rectangles
//! and stripes, one colour per class plus Gaussian pixel noise.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of [`pixel_features`]: a 3x3 RGB neighbourhood plus two coordinates.
pub const FEATURE_LEN: usize = 29;

pub const DEFAULT_PALETTE: [[f64; 3]; 4] = [
    [0.15, 0.15, 0.15],
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.30, 0.85],
];

/// Colour painted over the out-of-distribution region; far from every
/// palette entry.
pub const DEFAULT_OOD_COLOR: [f64; 3] = [0.95, 0.90, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub palette: Vec<[f64; 3]>,
    pub noise: f64,
    pub shapes: usize,
    pub ood: bool,
    pub ood_color: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: 3,
            palette: DEFAULT_PALETTE.to_vec(),
            noise: 0.05,
            shapes: 4,
            ood: false,
            ood_color: DEFAULT_OOD_COLOR,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.height < 16 || self.width < 16 {
            return bad(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            ));
        }
        if !(3..=4).contains(&self.classes) {
            return bad(format!("classes must be 3 or 4, got {}", self.classes));
        }
        if self.palette.len() < self.classes {
            return bad(format!(
                "palette has {} colours for {} classes",
                self.palette.len(),
                self.classes
            ));
        }
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !self.palette.iter().all(in_unit) || !in_unit(&self.ood_color) {
            return bad("colours must lie in [0, 1]".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!(
                "noise must be a non-negative number, got {}",
                self.noise
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `H x W x 3`, values in `[0, 1]`.
    pub image: Array3<f64>,
    pub labels: Array2<usize>,
    pub ood_mask: Array2<bool>,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Circle {
        cy: f64,
        cx: f64,
        r: f64,
    },
    Rect {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    },
    Stripe {
        vertical: bool,
        start: usize,
        thickness: usize,
    },
}

impl Shape {
    fn random(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        let short = height.min(width);
        match rng.random_range(0..3) {
            0 => {
                let r = rng.random_range(3.0..(short as f64 / 4.0).max(3.5));
                Shape::Circle {
                    cy: rng.random_range(r..height as f64 - r),
                    cx: rng.random_range(r..width as f64 - r),
                    r,
                }
            }
            1 => {
                let h = rng.random_range(4..=height / 2);
                let w = rng.random_range(4..=width / 2);
                Shape::Rect {
                    top: rng.random_range(0..=height - h),
                    left: rng.random_range(0..=width - w),
                    h,
                    w,
                }
            }
            _ => {
                let vertical = rng.random_bool(0.5);
                let extent = if vertical { width } else { height };
                let thickness = rng.random_range(2..=4);
                Shape::Stripe {
                    vertical,
                    start: rng.random_range(0..=extent - thickness),
                    thickness,
                }
            }
        }
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Circle { cy, cx, r } => {
                let (dy, dx) = (row as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
                dy * dy + dx * dx <= r * r
            }
            Shape::Rect { top, left, h, w } => {
                (top..top + h).contains(&row) && (left..left + w).contains(&col)
            }
            Shape::Stripe {
                vertical,
                start,
                thickness,
            } => {
                let at = if vertical { col } else { row };
                (start..start + thickness).contains(&at)
            }
        }
    }
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneSample> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels = Array2::<usize>::zeros((h, w));
    let mut colors = Array3::<f64>::zeros((h, w, 3));
    let mut ood_mask = Array2::from_elem((h, w), false);

    let mut paint = |shape: &Shape, class: usize, color: &[f64; 3], ood: bool| {
        for r in 0..h {
            for c in 0..w {
                if shape.contains(r, c) {
                    labels[[r, c]] = class;
                    for ch in 0..3 {
                        colors[[r, c, ch]] = color[ch];
                    }
                    ood_mask[[r, c]] = ood;
                }
            }
        }
    };

    let everywhere = Shape::Rect {
        top: 0,
        left: 0,
        h,
        w,
    };
    paint(&everywhere, 0, &config.palette[0], false);
    for _ in 0..config.shapes {
        let shape = Shape::random(&mut rng, h, w);
        let class = rng.random_range(1..config.classes);
        paint(&shape, class, &config.palette[class], false);
    }
    if config.ood {
        // Painted last so the region is never occluded. It carries an
        // ordinary foreground label, only its colour leaves the palette.
        let shape = loop {
            let s = Shape::random(&mut rng, h, w);
            if !matches!(s, Shape::Stripe { .. }) {
                break s;
            }
        };
        let class = rng.random_range(1..config.classes);
        paint(&shape, class, &config.ood_color, true);
    }

    let image = if config.noise > 0.0 {
        let noise = Normal::new(0.0, config.noise).expect("validated noise");
        colors.mapv(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
    } else {
        colors
    };

    Ok(SceneSample {
        image,
        labels,
        ood_mask,
    })
}

/// The 3x3 colour neighbourhood (edge-replicated, row-major, RGB
/// interleaved) followed by `row / H` and `col / W`.
pub fn pixel_features(sample: &SceneSample, row: usize, col: usize) -> Result<Vec<f64>> {
    let (h, w) = (sample.height(), sample.width());
    if row >= h || col >= w {
        return Err(Error::OutOfBounds {
            row,
            col,
            height: h,
            width: w,
        });
    }
    let mut out = Vec::with_capacity(FEATURE_LEN);
    write_pixel_features(sample, row, col, &mut out);
    Ok(out)
}

pub(crate) fn write_pixel_features(
    sample: &SceneSample,
    row: usize,
    col: usize,
    out: &mut Vec<f64>,
) {
    let (h, w) = (sample.height(), sample.width());
    for dr in [-1isize, 0, 1] {
        let r = (row as isize + dr).clamp(0, h as isize - 1) as usize;
        for dc in [-1isize, 0, 1] {
            let c = (col as isize + dc).clamp(0, w as isize - 1) as usize;
            for ch in 0..3 {
                out.push(sample.image[[r, c, ch]]);
            }
        }
    }
    out.push(row as f64 / h as f64);
    out.push(col as f64 / w as f64);
}

/// Features of every pixel, row-major, as an `(H*W) x FEATURE_LEN` matrix.
pub fn feature_matrix(sample: &SceneSample) -> Array2<f64> {
    let (h, w) = (sample.height(), sample.width());
    let mut flat = Vec::with_capacity(h * w * FEATURE_LEN);
    for r in 0..h {
        for c in 0..w {
            write_pixel_features(sample, r, c, &mut flat);
        }
    }
    Array2::from_shape_vec((h * w, FEATURE_LEN), flat).expect("feature length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> SceneConfig {
        SceneConfig {
            noise: 0.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn noise_free_regions_are_exact() {
        let cfg = noiseless();
        let s = generate_scene(4, &cfg).unwrap();
        for ((r, c), &label) in s.labels.indexed_iter() {
            for ch in 0..3 {
                assert_eq!(s.image[[r, c, ch]], cfg.palette[label][ch]);
            }
        }
        assert!(!s.ood_mask.iter().any(|&m| m));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig {
            ood: true,
            ..SceneConfig::default()
        };
        assert_eq!(
            generate_scene(99, &cfg).unwrap(),
            generate_scene(99, &cfg).unwrap()
        );
        assert_ne!(
            generate_scene(99, &cfg).unwrap(),
            generate_scene(100, &cfg).unwrap()
        );
    }

    #[test]
    fn ood_region_leaves_the_palette() {
        let cfg = SceneConfig {
            ood: true,
            ..SceneConfig::default()
        };
        for seed in 0..20 {
            let s = generate_scene(seed, &cfg).unwrap();
            let n = s.ood_mask.iter().filter(|&&m| m).count();
            assert!(n > 0);
            let mut mean = [0.0; 3];
            for ((r, c), _) in s.ood_mask.indexed_iter().filter(|(_, &m)| m) {
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += s.image[[r, c, ch]] / n as f64;
                }
            }
            for color in &cfg.palette[..cfg.classes] {
                let dist = mean
                    .iter()
                    .zip(color)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 3.0 * cfg.noise, "seed {seed}: distance {dist}");
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SceneConfig {
                height: 8,
                ..SceneConfig::default()
            },
            SceneConfig {
                classes: 2,
                ..SceneConfig::default()
            },
            SceneConfig {
                classes: 5,
                ..SceneConfig::default()
            },
            SceneConfig {
                noise: -0.1,
                ..SceneConfig::default()
            },
            SceneConfig {
                palette: vec![[0.0; 3]; 2],
                ..SceneConfig::default()
            },
        ] {
            assert!(matches!(
                generate_scene(0, &cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn constant_image_features() {
        let s = generate_scene(
            0,
            &SceneConfig {
                shapes: 0,
                ..noiseless()
            },
        )
        .unwrap();
        let f = pixel_features(&s, 5, 7).unwrap();
        assert_eq!(f.len(), FEATURE_LEN);
        for triple in f[..27].chunks(3) {
            assert_eq!(triple, &DEFAULT_PALETTE[0]);
        }
        assert_eq!(f[27], 5.0 / 32.0);
        assert_eq!(f[28], 7.0 / 32.0);
    }

    #[test]
    fn corner_replication() {
        let s = generate_scene(1, &SceneConfig::default()).unwrap();
        let f = pixel_features(&s, 0, 0).unwrap();
        assert_eq!(f.len(), FEATURE_LEN);
        // Top-left neighbour replicates the corner pixel itself.
        assert_eq!(&f[0..3], &f[12..15]);
        assert!(matches!(
            pixel_features(&s, 32, 0),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn noisy_pixels_are_distinct() {
        let s = generate_scene(2, &SceneConfig::default()).unwrap();
        assert_ne!(
            pixel_features(&s, 10, 10).unwrap(),
            pixel_features(&s, 20, 3).unwrap()
        );
        let m = feature_matrix(&s);
        assert_eq!(
            m.row(10 * 32 + 10).to_vec(),
            pixel_features(&s, 10, 10).unwrap()
        );
    }
}
