//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use cellsvm::dataio::Dataset;
use cellsvm::kernel::{gram_matrix, KernelMatrix, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let features: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
    Dataset::new(features, vec![0.0; n], d).unwrap()
}

pub fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn gram(gamma: f64, data: &Dataset) -> KernelMatrix {
    gram_matrix(&KernelSpec::gaussian(gamma).unwrap(), data, 1)
}

pub fn to_dmatrix(k: &KernelMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(k.rows(), k.cols(), k.values())
}

/// Least-squares coefficients from `(K + n*lambda*I) beta = y` by LU.
pub fn ls_direct(k: &KernelMatrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let a = to_dmatrix(k) + DMatrix::identity(n, n) * (n as f64 * lambda);
    let b = DVector::from_column_slice(y);
    a.lu().solve(&b).expect("regularized system is nonsingular").as_slice().to_vec()
}

/// `lambda * b'Kb + mean weighted hinge` evaluated directly.
pub fn hinge_primal(k: &KernelMatrix, y: &[f64], lambda: f64, weight: f64, beta: &[f64]) -> f64 {
    let n = y.len();
    let km = to_dmatrix(k);
    let b = DVector::from_column_slice(beta);
    let f = &km * &b;
    let risk: f64 = (0..n)
        .map(|i| {
            let w = if y[i] > 0.0 { weight } else { 1.0 };
            w * (1.0 - y[i] * f[i]).max(0.0)
        })
        .sum::<f64>()
        / n as f64;
    lambda * b.dot(&f) + risk
}

/// Accelerated projected gradient on `max sum(a) - a'Qa/2, 0 <= a_i <= C_i`,
/// `Q_ij = y_i y_j K_ij`, `C_i = w_i / (2 lambda n)`. Returns `beta = y .* a`.
/// Stops after `max_steps` or once the primal/dual gap of the iterate is below `rel_gap`.
pub fn hinge_reference(k: &KernelMatrix, y: &[f64], lambda: f64, weight: f64, max_steps: usize, rel_gap: f64) -> Vec<f64> {
    let n = y.len();
    let km = to_dmatrix(k);
    let yv = DVector::from_column_slice(y);
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * km[(i, j)]);
    let lip = q.clone().symmetric_eigenvalues().max().max(1e-12);
    let c = DVector::from_fn(n, |i, _| if y[i] > 0.0 { weight } else { 1.0 } / (2.0 * lambda * n as f64));
    let project = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(0.0, c[i]));
    let mut a = DVector::zeros(n);
    let mut z = a.clone();
    let mut t = 1.0f64;
    let dual = |a: &DVector<f64>| a.sum() - 0.5 * a.dot(&(&q * a));
    // objective scale factor turns the C-form values into lambda-form values
    let scale = 2.0 * lambda;
    for step in 0..max_steps {
        let grad = DVector::from_element(n, 1.0) - &q * &z;
        let next = project(&(&z + grad / lip));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &a) * ((t - 1.0) / t_next);
        a = next;
        t = t_next;
        if step % 1000 == 999 {
            let beta: Vec<f64> = a.component_mul(&yv).as_slice().to_vec();
            let p = hinge_primal(k, y, lambda, weight, &beta);
            let d = scale * dual(&a);
            if p - d <= rel_gap * p.abs().max(1e-300) {
                break;
            }
        }
    }
    a.component_mul(&yv).as_slice().to_vec()
}

/// Minimizer of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

pub fn pinball(tau: f64, r: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Fixture: `n` identical points with labels `i / n`, `i = 1..=n`.
pub fn constant_fixture(n: usize) -> (Dataset, Vec<f64>) {
    let y: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    (Dataset::new(vec![0.5; n], y.clone(), 1).unwrap(), y)
}

/// Empirical tau-quantile bracket `[y_(floor(n tau)), y_(ceil(n tau))]` (1-based order statistics, clamped).
pub fn quantile_bracket(sorted: &[f64], tau: f64) -> (f64, f64) {
    let n = sorted.len();
    let lo = ((n as f64 * tau).floor() as usize).clamp(1, n);
    let hi = ((n as f64 * tau).ceil() as usize).clamp(1, n);
    (sorted[lo - 1], sorted[hi - 1])
}
