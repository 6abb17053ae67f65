mod common;

use cellsvm::dataio::Dataset;
use cellsvm::kernel::{cross_matrix, dataset_token, gram_matrix, kernel_eval, KernelCache, KernelFamily, KernelSpec};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn plug_in_values() {
    let g1 = KernelSpec::gaussian(1.0).unwrap();
    assert_eq!(kernel_eval(&g1, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
    let g2 = KernelSpec::gaussian(2.0).unwrap();
    let v = kernel_eval(&g2, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
    assert!((v - (-1f64).exp()).abs() < 1e-15);
    let lap = KernelSpec::laplacian(1.0).unwrap();
    let v = kernel_eval(&lap, &[0.0, 0.0], &[3.0, 0.0]).unwrap();
    assert!((v - (-3f64).exp()).abs() < 1e-15);
    assert!(kernel_eval(&g1, &[0.0], &[0.0, 1.0]).is_err());
    assert!(KernelSpec::gaussian(0.0).is_err());
    assert!(KernelSpec::gaussian(f64::INFINITY).is_err());
}

#[test]
fn gram_examples() {
    let twins = Dataset::from_rows(&[vec![0.4, 0.1], vec![0.4, 0.1]], vec![0.0; 2]).unwrap();
    let k = gram_matrix(&KernelSpec::gaussian(0.5).unwrap(), &twins, 1);
    assert_eq!(k.values(), &[1.0, 1.0, 1.0, 1.0]);

    let line = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0.0; 3]).unwrap();
    let k = gram_matrix(&KernelSpec::gaussian(1.0).unwrap(), &line, 1);
    assert!((k.get(0, 2) - (-4f64).exp()).abs() < 1e-15);
}

#[test]
fn worker_count_does_not_change_matrices() {
    let mut r = rng(1);
    let data = uniform_data(&mut r, 500, 3);
    let other = uniform_data(&mut r, 77, 3);
    for spec in [KernelSpec::gaussian(0.3).unwrap(), KernelSpec::laplacian(0.8).unwrap()] {
        let a = gram_matrix(&spec, &data, 1);
        let b = gram_matrix(&spec, &data, 8);
        assert_eq!(a.values(), b.values());
        let c1 = cross_matrix(&spec, &other, &data, 1).unwrap();
        let c8 = cross_matrix(&spec, &other, &data, 8).unwrap();
        assert_eq!(c1.values(), c8.values());
    }
}

#[test]
fn cross_matrix_matches_eval_and_gram() {
    let mut r = rng(2);
    let a = uniform_data(&mut r, 20, 4);
    let b = uniform_data(&mut r, 13, 4);
    let spec = KernelSpec::gaussian(0.7).unwrap();
    let c = cross_matrix(&spec, &a, &b, 2).unwrap();
    for i in 0..20 {
        for j in 0..13 {
            let want = kernel_eval(&spec, a.sample(i), b.sample(j)).unwrap();
            assert!((c.get(i, j) - want).abs() < 1e-12);
        }
    }
    let self_cross = cross_matrix(&spec, &a, &a, 1).unwrap();
    let g = gram_matrix(&spec, &a, 1);
    for (x, y) in self_cross.values().iter().zip(g.values()) {
        assert!((x - y).abs() < 1e-12);
    }
    let wrong = uniform_data(&mut r, 3, 2);
    assert!(cross_matrix(&spec, &a, &wrong, 1).is_err());
}

#[test]
fn cache_contract() {
    let mut r = rng(3);
    let data = uniform_data(&mut r, 10, 2);
    let token = dataset_token(&(0..10).collect::<Vec<_>>());
    let mut cache = KernelCache::new(4);
    let g = KernelSpec::gaussian(0.25).unwrap();
    cache.get(&g, &data, token, 1);
    cache.get(&g, &data, token, 1);
    assert_eq!((cache.hits(), cache.misses()), (1, 1));
    let nudged = KernelSpec::gaussian(0.25 + 1e-18).unwrap();
    cache.get(&nudged, &data, token, 1);
    assert_eq!(cache.hits(), 2);

    let mut tiny = KernelCache::new(1);
    let g2 = KernelSpec::gaussian(0.5).unwrap();
    for _ in 0..3 {
        tiny.get(&g, &data, token, 1);
        tiny.get(&g2, &data, token, 1);
    }
    assert_eq!((tiny.hits(), tiny.misses()), (0, 6));

    let other_token = dataset_token(&(1..11).collect::<Vec<_>>());
    assert_ne!(token, other_token);
}

#[test]
fn libsvm_convention_bridge() {
    for g in [8.0, 1.0, 0.125, 2f64.powi(-15)] {
        let gamma = KernelSpec::gamma_from_libsvm(g);
        let spec = KernelSpec::gaussian(gamma).unwrap();
        let libsvm = spec.libsvm_coefficient();
        assert!((libsvm - g).abs() <= 1e-15 * g);
        let (x, u) = ([0.1, 0.9], [0.4, 0.2]);
        let d2: f64 = x.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
        let want = (-g * d2).exp();
        assert!((kernel_eval(&spec, &x, &u).unwrap() - want).abs() < 1e-14);
    }
}

fn dataset(dim: usize, max_n: usize) -> impl Strategy<Value = Dataset> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(0.0f64..1.0, n * dim).prop_map(move |v| Dataset::new(v, vec![0.0; n], dim).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_unit_diagonal_and_psd(data in (1usize..=4).prop_flat_map(|d| dataset(d, 64)), gamma in 0.05f64..5.0, laplace in any::<bool>()) {
        let family = if laplace { KernelFamily::Laplacian } else { KernelFamily::GaussianRbf };
        let spec = KernelSpec::new(family, gamma).unwrap();
        let k = gram_matrix(&spec, &data, 1);
        let n = data.len();
        for i in 0..n {
            prop_assert!((k.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert!((k.get(i, j) - k.get(j, i)).abs() <= 1e-12);
                prop_assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            }
        }
        let m = DMatrix::from_row_slice(n, n, k.values());
        let smallest = m.symmetric_eigenvalues().min();
        prop_assert!(smallest >= -1e-8, "smallest eigenvalue {}", smallest);
    }

    #[test]
    fn kernel_increases_with_bandwidth(x in prop::collection::vec(0.0f64..1.0, 3), u in prop::collection::vec(0.0f64..1.0, 3), g in 0.05f64..3.0, step in 0.01f64..2.0, laplace in any::<bool>()) {
        prop_assume!(x != u);
        let family = if laplace { KernelFamily::Laplacian } else { KernelFamily::GaussianRbf };
        let a = kernel_eval(&KernelSpec::new(family, g).unwrap(), &x, &u).unwrap();
        let b = kernel_eval(&KernelSpec::new(family, g + step).unwrap(), &x, &u).unwrap();
        prop_assert!(b > a || (a == 1.0 && b == 1.0), "{} !< {}", a, b);
    }
}
