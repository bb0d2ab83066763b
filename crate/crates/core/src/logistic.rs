//! L2-regularized logistic regression fitted by Newton's method, with
//! feature standardization and F1-optimal thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub feature_names: Vec<String>,
    /// Bias first, then one weight per standardized feature.
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    /// Fits on rows of `x` with boolean targets. `l2` does not apply to the
    /// bias.
    pub fn fit(feature_names: &[&str], x: &[Vec<f64>], y: &[bool], l2: f64) -> Result<Logistic> {
        let m = x.len();
        let d = feature_names.len();
        if m == 0 || m != y.len() {
            return Err(Error::Training("no training rows".into()));
        }
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(Error::Training("both classes are needed".into()));
        }
        if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training("feature rows must be finite and complete".into()));
        }
        let means: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
        let scales: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / m as f64;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xm = DMatrix::from_fn(m, d + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                (x[i][j - 1] - means[j - 1]) / scales[j - 1]
            }
        });
        let yv = DVector::from_iterator(m, y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        let mut w = DVector::<f64>::zeros(d + 1);
        let mut reg = DMatrix::<f64>::identity(d + 1, d + 1) * l2.max(1e-6);
        reg[(0, 0)] = 1e-9;
        for _ in 0..100 {
            let z = &xm * &w;
            let p = z.map(sigmoid);
            let grad = xm.transpose() * (&p - &yv) + &reg * &w;
            let s = p.map(|v| (v * (1.0 - v)).max(1e-10));
            let xs = DMatrix::from_fn(m, d + 1, |i, j| xm[(i, j)] * s[i]);
            let hess = xm.transpose() * xs + &reg;
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Training("singular Hessian".into()))?
                .solve(&grad);
            w -= &step;
            if step.amax() < 1e-10 {
                break;
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("weights diverged".into()));
        }
        Ok(Logistic {
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
            weights: w.iter().copied().collect(),
            means,
            scales,
        })
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut z = self.weights[0];
        for (j, v) in features.iter().enumerate() {
            z += self.weights[j + 1] * (v - self.means[j]) / self.scales[j];
        }
        sigmoid(z)
    }
}

/// Threshold maximizing F1 for the positive class when predicting
/// `score >= threshold`. Ties prefer the higher threshold. The result is
/// clamped into (0, 1).
pub fn f1_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut best = (-1.0, 0.5);
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            if labels[idx[k]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + (positives - tp)) } else { 0.0 };
        if f1 > best.0 {
            best = (f1, s);
        }
    }
    best.1.clamp(1e-3, 1.0 - 1e-3)
}

/// Area under the ROC curve (ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    // Rank-sum with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += pairs[i..j].iter().filter(|p| p.1).count() as f64 * avg;
        i = j;
    }
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_a_separating_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..2000 {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let p = sigmoid(2.0 * a - 1.0 * b + 0.5);
            x.push(vec![a, b]);
            y.push(rng.random_bool(p));
        }
        let m = Logistic::fit(&["a", "b"], &x, &y, 1e-3).unwrap();
        // Unstandardize to compare with the generating weights.
        let wa = m.weights[1] / m.scales[0];
        let wb = m.weights[2] / m.scales[1];
        assert!((wa - 2.0).abs() < 0.3, "{wa}");
        assert!((wb + 1.0).abs() < 0.2, "{wb}");
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(Logistic::fit(&["a"], &[vec![1.0], vec![2.0]], &[true, true], 1.0).is_err());
    }

    #[test]
    fn auc_and_threshold() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]), 0.5);
        let t = f1_threshold(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]);
        assert_eq!(t, 0.8);
    }
}
