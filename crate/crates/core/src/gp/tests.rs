use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn random_dataset(n: usize, dim: usize, outputs: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-2.0..2.0));
    let y = DMatrix::from_fn(n, outputs, |i, j| (x[(i, 0)] * (1.0 + j as f64)).sin() + 0.3 * x[(i, dim - 1)] + 0.05 * rng.random::<f64>());
    Dataset::new(x, y).unwrap()
}

/// Dense oracle: builds K from pairwise kernel calls and solves with LU.
fn dense_oracle(data: &Dataset, h: &KernelHyper, j: usize, x: &[f64]) -> (f64, f64) {
    let n = data.len();
    let row = |i: usize| data.inputs().row(i).iter().copied().collect::<Vec<_>>();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            k[(a, b)] = matern32(&row(a), &row(b), h.length_scale, h.signal_var);
        }
        k[(a, a)] += h.signal_var * JITTER + h.noise_std * h.noise_std;
    }
    let ks = DVector::from_fn(n, |i, _| matern32(&row(i), x, h.length_scale, h.signal_var));
    let lu = k.lu();
    let alpha = lu.solve(&data.targets().column(j).into_owned()).unwrap();
    let kinv_ks = lu.solve(&ks).unwrap();
    (ks.dot(&alpha), h.signal_var - ks.dot(&kinv_ks))
}

#[test]
fn single_point_posterior_is_scalar_algebra() {
    let x = DMatrix::from_row_slice(1, 1, &[0.3]);
    let y = DMatrix::from_row_slice(1, 1, &[1.7]);
    let data = Dataset::new(x, y).unwrap();
    let sigma = 0.4;
    let h = KernelHyper::new(0.9, sigma, 1.0);
    let model = GpModel::from_hyperparams(&data, GpHyperparams::uniform(h, 1), GpMode::Exact, 0, false).unwrap();
    let q = [1.1];
    let (mu, _) = model.posterior(&q).unwrap();
    let expected = matern32(&q, &[0.3], 0.9, 1.0) * 1.7 / (1.0 + sigma * sigma);
    assert_abs_diff_eq!(mu[0], expected, epsilon = 1e-7);
}

#[test]
fn interpolates_training_points_without_noise() {
    let data = random_dataset(15, 2, 1, 3);
    let h = KernelHyper::new(1.0, 1e-6, 1.0);
    let model = GpModel::from_hyperparams(&data, GpHyperparams::uniform(h, 1), GpMode::Exact, 0, false).unwrap();
    for i in 0..15 {
        let x: Vec<f64> = data.inputs().row(i).iter().copied().collect();
        let (mu, var) = model.posterior(&x).unwrap();
        assert_abs_diff_eq!(mu[0], data.targets()[(i, 0)], epsilon = 1e-6);
        assert!(var[0] < 1e-6, "{}", var[0]);
    }
}

#[test]
fn exact_posterior_matches_dense_oracle() {
    let data = random_dataset(50, 3, 2, 11);
    let hyper = GpHyperparams { outputs: vec![KernelHyper::new(0.7, 0.1, 1.4), KernelHyper::new(2.0, 0.3, 0.5)] };
    let model = GpModel::from_hyperparams(&data, hyper.clone(), GpMode::Exact, 0, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
        let (mu, var) = model.posterior(&x).unwrap();
        for j in 0..2 {
            let (om, ov) = dense_oracle(&data, &hyper.outputs[j], j, &x);
            assert_abs_diff_eq!(mu[j], om, epsilon = 1e-8);
            assert_abs_diff_eq!(var[j], ov.max(0.0), epsilon = 1e-8);
        }
    }
}

#[test]
fn inducing_with_all_points_matches_exact() {
    let data = random_dataset(60, 2, 2, 21);
    let hyper = GpHyperparams { outputs: vec![KernelHyper::new(0.8, 0.1, 1.0), KernelHyper::new(1.5, 0.2, 2.0)] };
    let exact = GpModel::from_hyperparams(&data, hyper.clone(), GpMode::Exact, 0, true).unwrap();
    let fitc = GpModel::from_hyperparams(&data, hyper, GpMode::Inducing { count: 60 }, 0, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
        let (m1, v1) = exact.posterior(&x).unwrap();
        let (m2, v2) = fitc.posterior(&x).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(m1[j], m2[j], epsilon = 1e-6);
            assert_abs_diff_eq!(v1[j], v2[j], epsilon = 1e-6);
        }
    }
}

#[test]
fn recovers_hyperparameters_of_a_known_gp() {
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..8.0));
    let pts = Points::from_rows(&x);
    let truth = KernelHyper::new(1.0, 0.1, 1.0);
    let k = likelihood::kernel_matrix(&pts.cross_distances(&pts), &KernelHyper { noise_std: 0.0, ..truth });
    let l = k.cholesky().unwrap().unpack();
    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = l * e;
    let y = DMatrix::from_fn(n, 1, |i, _| f[i] + truth.noise_std * rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y).unwrap();
    let config = FitConfig {
        init: KernelHyper::new(0.5, 0.5, 0.5),
        mode: GpMode::Exact,
        normalize: false,
        ..FitConfig::default()
    };
    let model = GpModel::fit(&data, &config).unwrap();
    let got = model.hyperparams().outputs[0];
    let ratio = |a: f64, b: f64| (a / b).max(b / a);
    assert!(ratio(got.length_scale, 1.0) < 1.5, "{got:?}");
    assert!(ratio(got.noise_std, 0.1) < 1.5, "{got:?}");
}

#[test]
fn inducing_support_is_independent_of_dataset_size() {
    for n in [400, 1200] {
        let data = random_dataset(n, 4, 2, n as u64);
        let config = FitConfig { mode: GpMode::Inducing { count: 50 }, max_iters: 30, hyper_subset: 100, ..FitConfig::default() };
        let model = GpModel::fit(&data, &config).unwrap();
        assert_eq!(model.support_size(), 50);
        let (_, var) = model.posterior(&[0.0; 4]).unwrap();
        assert!(var.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn json_round_trip_and_format_tag() {
    let data = random_dataset(30, 2, 2, 8);
    let hyper = GpHyperparams::uniform(KernelHyper::default(), 2);
    for mode in [GpMode::Exact, GpMode::Inducing { count: 10 }] {
        let model = GpModel::from_hyperparams(&data, hyper.clone(), mode, 1, true).unwrap();
        let back = GpModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back.posterior(&[0.2, -0.4]).unwrap(), model.posterior(&[0.2, -0.4]).unwrap());
        assert_eq!(back.mode(), mode);
    }
    let bad = GpModel::from_hyperparams(&data, hyper, GpMode::Exact, 0, true)
        .unwrap()
        .to_json()
        .unwrap()
        .replace(FORMAT_TAG, "other/9");
    assert!(matches!(GpModel::from_json(&bad), Err(Error::Format(_))));
}

#[test]
fn rejects_wrong_query_dimension() {
    let data = random_dataset(10, 2, 1, 1);
    let model =
        GpModel::from_hyperparams(&data, GpHyperparams::uniform(KernelHyper::default(), 1), GpMode::Exact, 0, true).unwrap();
    assert!(matches!(model.posterior(&[0.0]), Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn variance_bounded_by_prior(seed in 0u64..1000, qx in -4.0..4.0f64, qy in -4.0..4.0f64,
                                 l in 0.1..3.0f64, sigma in 0.01..1.0f64, s2 in 0.1..3.0f64) {
        let data = random_dataset(25, 2, 1, seed);
        let h = KernelHyper::new(l, sigma, s2);
        for mode in [GpMode::Exact, GpMode::Inducing { count: 8 }] {
            let model = GpModel::from_hyperparams(&data, GpHyperparams::uniform(h, 1), mode, seed, false).unwrap();
            let (_, var) = model.posterior(&[qx, qy]).unwrap();
            prop_assert!(var[0] >= 0.0);
            prop_assert!(var[0] <= s2 + sigma * sigma + 1e-12);
        }
    }

    #[test]
    fn more_data_never_increases_variance(seed in 0u64..1000, qx in -3.0..3.0f64, qy in -3.0..3.0f64) {
        let data = random_dataset(21, 2, 1, seed);
        let h = GpHyperparams::uniform(KernelHyper::new(0.8, 0.1, 1.0), 1);
        let fewer = data.subset(&(0..20).collect::<Vec<_>>());
        let a = GpModel::from_hyperparams(&fewer, h.clone(), GpMode::Exact, 0, false).unwrap();
        let b = GpModel::from_hyperparams(&data, h, GpMode::Exact, 0, false).unwrap();
        let va = a.posterior(&[qx, qy]).unwrap().1[0];
        let vb = b.posterior(&[qx, qy]).unwrap().1[0];
        prop_assert!(vb <= va + 1e-12);
    }

    #[test]
    fn permuting_outputs_permutes_posteriors(seed in 0u64..1000, qx in -3.0..3.0f64, qy in -3.0..3.0f64) {
        let data = random_dataset(20, 2, 3, seed);
        let perm = [2usize, 0, 1];
        let hs = [KernelHyper::new(0.5, 0.1, 1.0), KernelHyper::new(1.0, 0.2, 0.5), KernelHyper::new(2.0, 0.05, 2.0)];
        let y = data.targets();
        let yp = DMatrix::from_fn(20, 3, |i, j| y[(i, perm[j])]);
        let permuted = Dataset::new(data.inputs().clone(), yp).unwrap();
        let a = GpModel::from_hyperparams(&data, GpHyperparams { outputs: hs.to_vec() }, GpMode::Exact, 0, true).unwrap();
        let b = GpModel::from_hyperparams(&permuted, GpHyperparams { outputs: perm.iter().map(|&p| hs[p]).collect() }, GpMode::Exact, 0, true).unwrap();
        let (ma, va) = a.posterior(&[qx, qy]).unwrap();
        let (mb, vb) = b.posterior(&[qx, qy]).unwrap();
        for j in 0..3 {
            prop_assert!((mb[j] - ma[perm[j]]).abs() < 1e-12);
            prop_assert!((vb[j] - va[perm[j]]).abs() < 1e-12);
        }
    }
}
