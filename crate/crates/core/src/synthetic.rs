//! Seeded two-dimensional Gaussian mixtures with known densities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mean: [f64; 2],
    pub sd: f64,
}

/// Labels are +1 and -1; each class is an equal-weight isotropic mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub positive: Vec<Component>,
    pub negative: Vec<Component>,
    pub positive_prior: f64,
}

impl Mixture {
    /// Two interleaved bent bands.
    pub fn banana() -> Self {
        let arc = |cx: f64, cy: f64, r: f64, from: f64, to: f64, sd: f64| -> Vec<Component> {
            (0..5)
                .map(|i| {
                    let a = from + (to - from) * i as f64 / 4.0;
                    Component {
                        mean: [cx + r * a.cos(), cy + r * a.sin()],
                        sd,
                    }
                })
                .collect()
        };
        use std::f64::consts::PI;
        Self {
            positive: arc(0.0, 0.0, 1.0, 0.0, PI, 0.3),
            negative: arc(1.0, 0.3, 1.0, PI, 2.0 * PI, 0.3),
            positive_prior: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.positive.is_empty() || self.negative.is_empty() {
            return Err(Error::Argument("both classes need a component".into()));
        }
        if !(self.positive_prior > 0.0 && self.positive_prior < 1.0) {
            return Err(Error::Argument("prior must lie in (0, 1)".into()));
        }
        if self.positive.iter().chain(&self.negative).any(|c| !(c.sd > 0.0)) {
            return Err(Error::Argument("component sd must be positive".into()));
        }
        Ok(())
    }

    fn class_density(components: &[Component], x: [f64; 2]) -> f64 {
        let s: f64 = components
            .iter()
            .map(|c| {
                let d = (x[0] - c.mean[0]).powi(2) + (x[1] - c.mean[1]).powi(2);
                (-d / (2.0 * c.sd * c.sd)).exp() / (2.0 * std::f64::consts::PI * c.sd * c.sd)
            })
            .sum();
        s / components.len() as f64
    }

    /// Prior-weighted class densities `(positive, negative)` at `x`.
    pub fn weighted_densities(&self, x: [f64; 2]) -> (f64, f64) {
        (
            self.positive_prior * Self::class_density(&self.positive, x),
            (1.0 - self.positive_prior) * Self::class_density(&self.negative, x),
        )
    }

    pub fn bayes_label(&self, x: [f64; 2]) -> f64 {
        let (p, q) = self.weighted_densities(x);
        if p > q {
            1.0
        } else {
            -1.0
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let positive = rng.gen::<f64>() < self.positive_prior;
            let comps = if positive { &self.positive } else { &self.negative };
            let c = &comps[rng.gen_range(0..comps.len())];
            let noise = Normal::new(0.0, c.sd).map_err(|e| Error::Argument(e.to_string()))?;
            features.push(c.mean[0] + noise.sample(&mut rng));
            features.push(c.mean[1] + noise.sample(&mut rng));
            labels.push(if positive { 1.0 } else { -1.0 });
        }
        Dataset::new(features, labels, 2)
    }

    /// Monte Carlo estimate of the Bayes error as the mean of the smaller posterior.
    pub fn bayes_error(&self, samples: usize, seed: u64) -> Result<f64> {
        let data = self.sample(samples, seed)?;
        let total: f64 = (0..data.len())
            .map(|i| {
                let x = data.sample(i);
                let (p, q) = self.weighted_densities([x[0], x[1]]);
                if p + q > 0.0 {
                    p.min(q) / (p + q)
                } else {
                    0.5
                }
            })
            .sum();
        Ok(total / samples.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs_have_small_bayes_error() {
        let m = Mixture {
            positive: vec![Component { mean: [0.0, 0.0], sd: 0.5 }],
            negative: vec![Component { mean: [2.0, 0.0], sd: 0.5 }],
            positive_prior: 0.5,
        };
        // Two unit-variance-scaled normals 4 sd apart: Phi(-2).
        let b = m.bayes_error(200_000, 3).unwrap();
        assert!((b - 0.02275).abs() < 2e-3, "{b}");
    }

    #[test]
    fn sampling_is_seeded() {
        let m = Mixture::banana();
        assert_eq!(m.sample(50, 9).unwrap(), m.sample(50, 9).unwrap());
        assert_ne!(m.sample(50, 9).unwrap(), m.sample(50, 10).unwrap());
    }
}
