use ndarray::{Array2, Array3};
use proptest::prelude::*;
use qipf::baselines::{ensemble_uncertainty, UncertaintyMap};
use qipf::kde::{ipf_eval, silverman_bandwidth, Bandwidth, SampleSet};
use qipf::metrics::{confusion, scores, sweep};
use qipf::qipf::{fit, hermite_eval, uncertainty_index};
use qipf::toymodel::{generate_scene, FeatureTensor, PixelClassifier, SceneConfig, FEATURE_LEN};

fn sample_rows(max_n: usize, max_d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_d).prop_flat_map(move |d| {
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), 1..=max_n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_ignores_sample_order(rows in sample_rows(20, 4), shift in 0usize..20, sigma in 0.2..2.0f64) {
        let d = rows[0].len();
        let mut rotated = rows.clone();
        rotated.rotate_left(shift % rows.len());
        rotated.reverse();
        let a = SampleSet::from_rows(&rows).unwrap();
        let b = SampleSet::from_rows(&rotated).unwrap();
        let sigma = Bandwidth::new(sigma).unwrap();
        let x = vec![0.3; d];
        prop_assert_eq!(ipf_eval(&a, sigma, &x).unwrap(), ipf_eval(&b, sigma, &x).unwrap());
    }

    #[test]
    fn field_value_in_unit_interval(rows in sample_rows(20, 4), sigma in 0.2..2.0f64, t in -1.0..1.0f64) {
        let d = rows[0].len();
        let set = SampleSet::from_rows(&rows).unwrap();
        let v = ipf_eval(&set, Bandwidth::new(sigma).unwrap(), &vec![t; d]).unwrap().value;
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn argmax_ignores_positive_scaling(values in prop::collection::vec(0.0..10.0f64, 1..16), c in 1e-3..1e3f64) {
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        prop_assert_eq!(uncertainty_index(&values), uncertainty_index(&scaled));
    }

    #[test]
    fn sweep_counts_are_monotone(
        data in prop::collection::vec((any::<bool>(), 0.0..1.0f64), 1..60),
        lo in 0.0..0.5f64,
        hi in 0.5..1.0f64,
    ) {
        let (acc, unc): (Vec<bool>, Vec<f64>) = data.into_iter().unzip();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let s = sweep(&acc, &unc, lo, hi, &grid).unwrap();
        let accurate = acc.iter().filter(|&&a| a).count() as u64;
        for pair in s.entries.windows(2) {
            prop_assert!(pair[1].counts.n_au <= pair[0].counts.n_au);
            prop_assert!(pair[1].counts.n_iu <= pair[0].counts.n_iu);
        }
        for e in &s.entries {
            prop_assert_eq!(e.counts.n_ac + e.counts.n_au, accurate);
            for v in [e.scores.pa, e.scores.pu, e.scores.pavpu].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(e.scores, scores(&confusion(&acc, &unc, e.u_th).unwrap()));
        }
    }
}

/// Second derivative of x -> h_k(psi(x) / N) by central differences,
/// against the chain-rule Laplacian.
#[test]
fn mode_laplacian_matches_finite_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for _ in 0..40 {
        let n = rng.random_range(3..30);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let set = SampleSet::from_rows(&rows).unwrap();
        let sigma = silverman_bandwidth(&set).unwrap();
        let model = fit(set.clone(), sigma, 8).unwrap();
        let x = rng.random_range(-2.5..2.5);
        let mode = |k: usize, x: f64| {
            let u = ipf_eval(&set, sigma, &[x]).unwrap().value / model.normalizer();
            hermite_eval(k, u).unwrap().value
        };
        let h = 1e-3 * sigma.sigma();
        for (i, analytic) in model.mode_fields(&[x]).unwrap().iter().enumerate() {
            let k = i + 1;
            let fd = (-mode(k, x + 2.0 * h) + 16.0 * mode(k, x + h) - 30.0 * mode(k, x)
                + 16.0 * mode(k, x - h)
                - mode(k, x - 2.0 * h))
                / (12.0 * h * h);
            // Floor the scale where the second derivative is itself near zero.
            let scale = analytic
                .laplacian
                .abs()
                .max(1e-3 / (sigma.sigma() * sigma.sigma()));
            assert!(
                (analytic.laplacian - fd).abs() <= 1e-5 * scale,
                "k={k} x={x}: chain rule {} vs fd {fd}",
                analytic.laplacian
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 320);
}

fn noisy_scene() -> qipf::toymodel::SceneSample {
    generate_scene(3, &SceneConfig::default()).unwrap()
}

#[test]
fn ensemble_ignores_member_order() {
    let members: Vec<PixelClassifier> = (0..5)
        .map(|i| PixelClassifier::init(FEATURE_LEN, 8, 3, 0.1, i))
        .collect();
    let scene = noisy_scene();
    let base = ensemble_uncertainty(&members, &scene).unwrap();
    let mut reordered = members.clone();
    reordered.reverse();
    reordered.swap(0, 2);
    assert_eq!(base, ensemble_uncertainty(&reordered, &scene).unwrap());
}

#[test]
fn maps_stay_in_unit_interval() {
    let logits = Array3::from_shape_fn((4, 4, 3), |(r, c, k)| {
        (r as f64 - c as f64) * k as f64 * 40.0
    });
    let ft = FeatureTensor::from_features(logits).unwrap();
    let map = qipf::baselines::softmax_uncertainty(&ft);
    assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(UncertaintyMap::new(
        Array2::from_elem((1, 1), f64::NAN),
        qipf::baselines::Method::Softmax
    )
    .is_err());
}
