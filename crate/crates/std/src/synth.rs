//! Seeded synthetic data shaped like a transaction table: mostly Gaussian columns, a
//! heavy-tailed amount column with many repeated values, and a small positive class
//! that is shifted along a handful of directions.

use fedboost_core::Dataset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub rows: usize,
    pub features: usize,
    /// Fraction of positive rows, rounded to a whole count of at least one.
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { rows: 5000, features: 30, positive_rate: 0.02, seed: 0 }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.rows < 2 || spec.features == 0 || !(spec.positive_rate > 0.0 && spec.positive_rate < 1.0) {
        return Err(Error::Usage(format!("cannot generate {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positives = ((spec.rows as f64 * spec.positive_rate).round() as usize).clamp(1, spec.rows - 1);
    let mut labels: Vec<f64> = (0..spec.rows).map(|i| f64::from(u8::from(i < positives))).collect();
    labels.shuffle(&mut rng);

    // per-column shift applied to positives; only the first few columns carry signal
    let shifts: Vec<f64> =
        (0..spec.features).map(|j| if j < 6 { rng.random_range(1.0..2.5) * if j % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }).collect();
    let amount = LogNormal::new(3.0, 1.2).expect("valid parameters");
    let amount_col = spec.features - 1;

    let mut features = Vec::with_capacity(spec.rows * spec.features);
    for &y in &labels {
        let positive = y == 1.0;
        for (j, shift) in shifts.iter().enumerate() {
            let v = if j == amount_col && spec.features > 1 {
                let a: f64 = amount.sample(&mut rng) * if positive { 0.5 } else { 1.0 };
                (a * 100.0).round() / 100.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                let spread = if positive { 1.6 } else { 1.0 };
                z * spread + if positive { *shift } else { 0.0 }
            };
            features.push(v);
        }
    }
    let names = (0..spec.features)
        .map(|j| if j == amount_col && spec.features > 1 { "Amount".to_string() } else { format!("V{}", j + 1) })
        .collect();
    Ok(Dataset::new(features, labels, names)?)
}
