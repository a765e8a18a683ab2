//! Property-based checks of the library's invariants.

use proptest::prelude::*;

use dynae::datagen::gen_three_well;
use dynae::eval::{affine_recovery, distribution_shape};
use dynae::ndmath::{finite_diff_check, Activation, FeedForwardNet, Mat, Rng};
use dynae::partition::{regular_space_cluster, welltempered_counts};
use dynae::swdist::{sample_directions, sliced_w2};
use dynae::trainer::{run_training, TrainConfig};

fn mat(rows: usize, cols: usize, seed: u64) -> Mat {
    Mat::from_vec(rows, cols, Rng::new(seed).normal_vec(rows * cols)).unwrap()
}

/// `z A + b` for a 2×2 matrix `a` given row-major.
fn affine_map(z: &Mat, a: [f64; 4], b: [f64; 2]) -> Mat {
    let mut out = Mat::zeros(z.rows(), 2);
    for r in 0..z.rows() {
        let (x, y) = (z.get(r, 0), z.get(r, 1));
        out.set(r, 0, x * a[0] + y * a[2] + b[0]);
        out.set(r, 1, x * a[1] + y * a[3] + b[1]);
    }
    out
}

fn max_over_min(v: &[usize]) -> f64 {
    let occupied: Vec<f64> = v.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    occupied.iter().cloned().fold(0.0, f64::max) / occupied.iter().cloned().fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mlp_gradients_match_finite_differences(
        seed in any::<u64>(),
        hidden in 1usize..6,
        tanh in any::<bool>(),
        x in proptest::collection::vec(-2.0..2.0f64, 3),
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let net = FeedForwardNet::new(&[3, hidden, 2], act, seed).unwrap();
        let loss = |y: &[f64]| (0.5 * y.iter().map(|v| v * v).sum::<f64>(), y.to_vec());
        let report = finite_diff_check(&net, &x, loss, 1e-5, 1e-4).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn affine_r2_is_invariant_under_invertible_affine_maps(
        seed in any::<u64>(),
        a in proptest::array::uniform4(-3.0..3.0f64),
        b in proptest::array::uniform2(-10.0..10.0f64),
    ) {
        prop_assume!((a[0] * a[3] - a[1] * a[2]).abs() > 0.1);
        let truth = mat(300, 2, seed);
        let noise = mat(300, 2, seed ^ 1);
        let z = affine_map(&truth, [1.0, 0.3, 0.2, 1.0], [0.0; 2]).map(f64::tanh);
        let z = Mat::from_vec(300, 2, z.as_slice().iter().zip(noise.as_slice()).map(|(p, q)| p + 0.3 * q).collect()).unwrap();
        let before = affine_recovery(&z, &truth).unwrap().affine_r2;
        let after = affine_recovery(&affine_map(&z, a, b), &truth).unwrap().affine_r2;
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn procrustes_is_invariant_under_similarity_maps(
        seed in any::<u64>(),
        angle in 0.0..std::f64::consts::TAU,
        scale in 0.1..10.0f64,
        reflect in any::<bool>(),
        b in proptest::array::uniform2(-10.0..10.0f64),
    ) {
        let truth = mat(200, 2, seed);
        let z = affine_map(&truth, [1.0, 0.4, 0.0, 1.0], [0.0; 2]);
        let (c, s) = (scale * angle.cos(), scale * angle.sin());
        let flip = if reflect { -1.0 } else { 1.0 };
        let moved = affine_map(&z, [c, s, -s * flip, c * flip], b);
        let before = affine_recovery(&z, &truth).unwrap().procrustes_error;
        let after = affine_recovery(&moved, &truth).unwrap().procrustes_error;
        prop_assert!(before > 1e-3, "a shear must register: {}", before);
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn shape_statistics_ignore_per_dimension_standardization(
        seed in any::<u64>(),
        scales in proptest::array::uniform2(0.01..100.0f64),
        shifts in proptest::array::uniform2(-50.0..50.0f64),
    ) {
        let z = mat(500, 2, seed).map(|v| v * v.abs());
        let moved = affine_map(&z, [scales[0], 0.0, 0.0, scales[1]], shifts);
        for (p, q) in distribution_shape(&z).unwrap().iter().zip(distribution_shape(&moved).unwrap()) {
            prop_assert!((p.kurtosis - q.kurtosis).abs() < 1e-9);
            prop_assert!((p.ks_uniform - q.ks_uniform).abs() < 1e-9);
            prop_assert!((p.ks_gaussian - q.ks_gaussian).abs() < 1e-9);
            prop_assert!((p.spread_ratio - q.spread_ratio).abs() < 1e-9);
        }
    }

    #[test]
    fn sliced_w2_ignores_sample_order(seed in any::<u64>(), n in 1usize..60, d in 1usize..4) {
        let mut rng = Rng::new(seed);
        let a = mat(n, d, seed);
        let b = mat(n, d, seed.wrapping_add(1));
        let dirs = sample_directions(d, 10, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let base = sliced_w2(&a, &b, &dirs).unwrap();
        prop_assert!((sliced_w2(&a.select_rows(&perm), &b, &dirs).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        prop_assert!((sliced_w2(&a, &b.select_rows(&perm), &dirs).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn sliced_w2_grows_with_translation_in_1d(seed in any::<u64>(), n in 1usize..60, t1 in 0.0..5.0f64, dt in 0.01..5.0f64) {
        let mut rng = Rng::new(seed);
        let a = mat(n, 1, seed);
        let dirs = sample_directions(1, 1, &mut rng).unwrap();
        let shifted = |t: f64| a.map(|v| v + t);
        // translating a copy of `a` by t gives exactly t²; strictly increasing in t
        let near = sliced_w2(&a, &shifted(t1), &dirs).unwrap();
        let far = sliced_w2(&a, &shifted(t1 + dt), &dirs).unwrap();
        prop_assert!(far > near, "{} !> {}", far, near);
    }

    #[test]
    fn tempering_flattens_the_bin_distribution(
        raw in proptest::collection::vec(50usize..5000, 2..30),
    ) {
        let n: usize = raw.iter().sum();
        prop_assume!(max_over_min(&raw) >= 1.5);
        let gammas = [1.0, 2.0, 5.0, f64::INFINITY];
        let ratios: Vec<f64> = gammas.iter().map(|&g| max_over_min(&welltempered_counts(&raw, g, n).unwrap())).collect();
        for w in ratios.windows(2) {
            prop_assert!(w[1] < w[0], "ratios {:?} for γ {:?}", ratios, gammas);
        }
    }

    #[test]
    fn reclustering_is_deterministic(seed in any::<u64>(), n in 1usize..400, d_min in 0.05..2.0f64) {
        let points = mat(n, 2, seed);
        prop_assert_eq!(regular_space_cluster(&points, d_min).unwrap(), regular_space_cluster(&points, d_min).unwrap());
    }
}

#[test]
fn three_well_rep_loss_trends_down_over_the_first_ten_epochs() {
    let ds = gen_three_well(20_000, 0.01, 10, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let run = run_training(ds.observations.frames(), &cfg).unwrap();
    let total: Vec<f64> = run
        .metrics
        .iter()
        .map(|m| m.rec + cfg.beta_at(m.epoch) * m.reg)
        .collect();
    let avg: Vec<f64> = total.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(avg.last().unwrap() < avg.first().unwrap(), "moving averages {avg:?}");
}
