//! Kernel functions, Gram/cross matrices and a bandwidth-keyed matrix cache.
//!
//! Bandwidths follow the convention `k(x, u) = exp(-|x - u|^2 / gamma^2)`
//! for the Gaussian RBF kernel and `exp(-|x - u| / gamma)` (Euclidean norm)
//! for the Laplacian kernel.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    GaussianRbf,
    Laplacian,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_rbf" | "rbf" | "0" => Ok(Self::GaussianRbf),
            "laplacian" | "poisson" | "1" => Ok(Self::Laplacian),
            other => Err(Error::Argument(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Argument(format!(
                "kernel bandwidth must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { family, gamma })
    }

    pub fn gaussian(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::GaussianRbf, gamma)
    }

    pub fn laplacian(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, gamma)
    }

    /// Bandwidth for a libsvm-style coefficient `g` in `exp(-g |x-u|^2)`.
    pub fn gamma_from_libsvm(g: f64) -> f64 {
        g.powf(-0.5)
    }

    /// The libsvm-style coefficient `1 / gamma^2` for this bandwidth.
    pub fn libsvm_coefficient(&self) -> f64 {
        1.0 / (self.gamma * self.gamma)
    }

    /// Kernel value from a squared Euclidean distance.
    #[inline]
    pub fn from_sq_dist(&self, sq: f64) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf => (-sq / (self.gamma * self.gamma)).exp(),
            KernelFamily::Laplacian => (-sq.sqrt() / self.gamma).exp(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared distance in expanded form from precomputed squared norms, clamped at zero.
#[inline]
pub(crate) fn sq_dist_expanded(a: &[f64], a_norm: f64, b: &[f64], b_norm: f64) -> f64 {
    (a_norm + b_norm - 2.0 * dot(a, b)).max(0.0)
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], u: &[f64]) -> Result<f64> {
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: u.len(),
        });
    }
    let sq = sq_dist_expanded(x, dot(x, x), u, dot(u, u));
    Ok(spec.from_sq_dist(sq))
}

pub(crate) fn squared_norms(data: &Dataset) -> Vec<f64> {
    data.samples().map(|r| dot(r, r)).collect()
}

/// Dense row-major kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    spec: KernelSpec,
}

impl KernelMatrix {
    /// Wraps explicit values; used for hand-built problems.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>, spec: KernelSpec) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            spec,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `out = K * v` for a square or rectangular matrix.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(i), v);
        }
    }
}

/// Symmetric Gram matrix over all samples of `data`.
pub fn gram_matrix(spec: &KernelSpec, data: &Dataset, workers: usize) -> KernelMatrix {
    let n = data.len();
    let norms = squared_norms(data);
    let mut values = vec![0.0; n * n];
    parallel::fill_rows(workers, &mut values, n, |i, row| {
        let xi = data.sample(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                1.0
            } else {
                spec.from_sq_dist(sq_dist_expanded(xi, norms[i], data.sample(j), norms[j]))
            };
        }
    });
    KernelMatrix {
        rows: n,
        cols: n,
        values,
        spec: *spec,
    }
}

/// `values[i][j] = k(rows_i, cols_j)`.
pub fn cross_matrix(
    spec: &KernelSpec,
    rows: &Dataset,
    cols: &Dataset,
    workers: usize,
) -> Result<KernelMatrix> {
    if rows.dim() != cols.dim() {
        return Err(Error::DimensionMismatch {
            expected: cols.dim(),
            found: rows.dim(),
        });
    }
    let r_norms = squared_norms(rows);
    let c_norms = squared_norms(cols);
    let m = cols.len();
    let mut values = vec![0.0; rows.len() * m];
    parallel::fill_rows(workers, &mut values, m, |i, row| {
        let xi = rows.sample(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = spec.from_sq_dist(sq_dist_expanded(xi, r_norms[i], cols.sample(j), c_norms[j]));
        }
    });
    Ok(KernelMatrix {
        rows: rows.len(),
        cols: m,
        values,
        spec: *spec,
    })
}

/// Content hash of a list of sample indices (FNV-1a), used as a dataset identity.
pub fn dataset_token(indices: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in indices {
        for b in (i as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h ^ indices.len() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    family: KernelFamily,
    gamma_bits: u64,
    token: u64,
}

impl CacheKey {
    pub fn new(spec: &KernelSpec, token: u64) -> Self {
        Self {
            family: spec.family,
            gamma_bits: spec.gamma.to_bits(),
            token,
        }
    }
}

/// Least-recently-used store of kernel matrices.
#[derive(Debug)]
pub struct KernelCache {
    capacity: usize,
    // Most recently used last.
    entries: Vec<(CacheKey, Arc<KernelMatrix>)>,
    hits: u64,
    misses: u64,
}

impl KernelCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached matrix for `key` and counts a hit, or counts a miss.
    pub fn lookup(&mut self, key: &CacheKey) -> Option<Arc<KernelMatrix>> {
        match self.entries.iter().position(|(k, _)| k == key) {
            Some(pos) => {
                let entry = self.entries.remove(pos);
                let m = Arc::clone(&entry.1);
                self.entries.push(entry);
                self.hits += 1;
                Some(m)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, key: CacheKey, matrix: Arc<KernelMatrix>) {
        if self.capacity == 0 {
            return;
        }
        if let Some(pos) = self.entries.iter().position(|(k, _)| *k == key) {
            self.entries.remove(pos);
        }
        while self.entries.len() >= self.capacity {
            self.entries.remove(0);
        }
        self.entries.push((key, matrix));
    }

    /// Gram matrix of `data` for `spec`, computed on a miss.
    pub fn get(
        &mut self,
        spec: &KernelSpec,
        data: &Dataset,
        token: u64,
        workers: usize,
    ) -> Arc<KernelMatrix> {
        let key = CacheKey::new(spec, token);
        if let Some(m) = self.lookup(&key) {
            return m;
        }
        let m = Arc::new(gram_matrix(spec, data, workers));
        self.insert(key, Arc::clone(&m));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> Dataset {
        Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0.0; 3]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let g1 = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(kernel_eval(&g1, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        let g2 = KernelSpec::gaussian(2.0).unwrap();
        let v = kernel_eval(&g2, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        let l1 = KernelSpec::laplacian(1.0).unwrap();
        let v = kernel_eval(&l1, &[0.0], &[3.0]).unwrap();
        assert!((v - 0.049787).abs() < 1e-6);
        assert!(kernel_eval(&g1, &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        assert!(KernelSpec::laplacian(f64::INFINITY).is_err());
    }

    #[test]
    fn gram_examples() {
        let twins = Dataset::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0; 2]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let k = gram_matrix(&spec, &twins, 1);
        assert_eq!(k.values(), &[1.0, 1.0, 1.0, 1.0]);

        let k = gram_matrix(&spec, &line_data(), 2);
        assert!((k.get(0, 2) - (-4.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.get(0, 2), k.get(2, 0));
    }

    #[test]
    fn cross_matches_gram_and_eval() {
        let spec = KernelSpec::laplacian(0.7).unwrap();
        let d = line_data();
        let g = gram_matrix(&spec, &d, 1);
        let c = cross_matrix(&spec, &d, &d, 3).unwrap();
        assert_eq!(g, c);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), kernel_eval(&spec, d.sample(i), d.sample(j)).unwrap());
            }
        }
        let other = Dataset::from_rows(&[vec![0.0, 1.0]], vec![0.0]).unwrap();
        assert!(cross_matrix(&spec, &d, &other, 1).is_err());
    }

    #[test]
    fn libsvm_convention_bridge() {
        for g in [8.0, 2.0, 0.5, 2f64.powi(-15)] {
            let gamma = KernelSpec::gamma_from_libsvm(g);
            let spec = KernelSpec::gaussian(gamma).unwrap();
            let x = [0.1, 0.9];
            let u = [0.4, 0.2];
            let sq: f64 = (0.3f64).powi(2) + (0.7f64).powi(2);
            let ours = kernel_eval(&spec, &x, &u).unwrap();
            let theirs = (-g * sq).exp();
            assert!((ours - theirs).abs() <= 1e-15 * theirs.max(1e-300) + 1e-16);
            assert!((spec.libsvm_coefficient() - g).abs() <= 1e-15 * g);
        }
    }

    #[test]
    fn cache_hits_and_eviction() {
        let d = line_data();
        let s1 = KernelSpec::gaussian(1.0).unwrap();
        let s2 = KernelSpec::gaussian(2.0).unwrap();
        let mut cache = KernelCache::new(4);
        cache.get(&s1, &d, 1, 1);
        cache.get(&s1, &d, 1, 1);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));

        // Same binary value.
        let almost = KernelSpec::gaussian(1.0 + 1e-18).unwrap();
        cache.get(&almost, &d, 1, 1);
        assert_eq!(cache.hits(), 2);

        let mut one = KernelCache::new(1);
        for _ in 0..3 {
            one.get(&s1, &d, 1, 1);
            one.get(&s2, &d, 1, 1);
        }
        assert_eq!((one.hits(), one.misses()), (0, 6));
    }

    #[test]
    fn cache_distinguishes_tokens() {
        let d = line_data();
        let s = KernelSpec::gaussian(1.0).unwrap();
        let mut cache = KernelCache::new(4);
        cache.get(&s, &d, dataset_token(&[0, 1, 2]), 1);
        cache.get(&s, &d, dataset_token(&[0, 1]), 1);
        assert_eq!(cache.misses(), 2);
        assert_ne!(dataset_token(&[1, 2]), dataset_token(&[2, 1]));
    }
}
