//! Batch-all triplet loss over strip embeddings and per-strip cross-entropy.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config("margin must be >= 0 and weights finite".into()));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient wrt the input.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct TripletValue {
    pub value: f64,
    pub grad: Array3<f64>,
    pub active: usize,
    pub total: usize,
}

/// Mean over strips of the per-strip Euclidean distance, for all pairs.
/// Also returns the per-strip norms `(B, B, S)`.
fn pairwise(emb: &Array3<f64>) -> (Array2<f64>, Array3<f64>) {
    let (b, s, d) = emb.dim();
    let mut dist = Array2::zeros((b, b));
    let mut norms = Array3::zeros((b, b, s));
    for i in 0..b {
        for j in i + 1..b {
            let mut acc = 0.0;
            for k in 0..s {
                let mut sq = 0.0;
                for t in 0..d {
                    let diff = emb[[i, k, t]] - emb[[j, k, t]];
                    sq += diff * diff;
                }
                let n = sq.sqrt();
                norms[[i, j, k]] = n;
                norms[[j, i, k]] = n;
                acc += n;
            }
            dist[[i, j]] = acc / s as f64;
            dist[[j, i]] = acc / s as f64;
        }
    }
    (dist, norms)
}

/// Batch-all triplet loss: the hinge `d(a,p) - d(a,n) + margin` averaged
/// over the triplets where it is positive.
pub fn triplet_loss(emb: &Array3<f64>, labels: &[usize], margin: f64) -> Result<TripletValue> {
    let (b, s, d) = emb.dim();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for {b} embeddings", labels.len())));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateBatch);
    }
    let (dist, norms) = pairwise(emb);
    let mut coeff = Array2::<f64>::zeros((b, b));
    let mut sum = 0.0;
    let mut active = 0usize;
    let mut total = 0usize;
    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..b {
                if labels[n] == labels[a] {
                    continue;
                }
                total += 1;
                let v = dist[[a, p]] - dist[[a, n]] + margin;
                if v > 0.0 {
                    sum += v;
                    active += 1;
                    coeff[[a, p]] += 1.0;
                    coeff[[a, n]] -= 1.0;
                }
            }
        }
    }
    let mut grad = Array3::zeros((b, s, d));
    if active == 0 {
        return Ok(TripletValue {
            value: 0.0,
            grad,
            active,
            total,
        });
    }
    let scale = 1.0 / (active as f64 * s as f64);
    for i in 0..b {
        for j in 0..b {
            let c = coeff[[i, j]];
            if c == 0.0 {
                continue;
            }
            for k in 0..s {
                let n = norms[[i, j, k]];
                if n == 0.0 {
                    continue;
                }
                let f = c * scale / n;
                for t in 0..d {
                    let g = f * (emb[[i, k, t]] - emb[[j, k, t]]);
                    grad[[i, k, t]] += g;
                    grad[[j, k, t]] -= g;
                }
            }
        }
    }
    Ok(TripletValue {
        value: sum / active as f64,
        grad,
        active,
        total,
    })
}

/// Softmax cross-entropy of every strip's logits, averaged over strips and batch.
pub fn ce_loss(logits: &Array3<f64>, labels: &[usize]) -> Result<LossValue> {
    let (b, s, c) = logits.dim();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for {b} logit rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let norm = 1.0 / (b * s) as f64;
    let mut grad = Array3::zeros((b, s, c));
    let mut value = 0.0;
    for i in 0..b {
        for k in 0..s {
            let row = logits.slice(ndarray::s![i, k, ..]);
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            value += lse - row[labels[i]];
            for j in 0..c {
                let p = (row[j] - lse).exp();
                grad[[i, k, j]] = norm * (p - f64::from(j == labels[i]));
            }
        }
    }
    Ok(LossValue {
        value: value * norm,
        grad,
    })
}

pub fn total_loss(l_tri: f64, l_ce: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * l_tri + cfg.beta * l_ce
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_emb(seed: u64, b: usize, s: usize, d: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((b, s, d), |_| rng.random_range(-1.0..1.0))
    }

    /// Three nested loops over explicit triplets.
    fn triplet_oracle(emb: &Array3<f64>, labels: &[usize], margin: f64) -> f64 {
        let (b, s, d) = emb.dim();
        let dist = |i: usize, j: usize| {
            (0..s)
                .map(|k| (0..d).map(|t| (emb[[i, k, t]] - emb[[j, k, t]]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / s as f64
        };
        let mut terms = Vec::new();
        for a in 0..b {
            for p in 0..b {
                for n in 0..b {
                    if a != p && labels[a] == labels[p] && labels[a] != labels[n] {
                        terms.push((dist(a, p) - dist(a, n) + margin).max(0.0));
                    }
                }
            }
        }
        let nz: Vec<f64> = terms.into_iter().filter(|&t| t > 0.0).collect();
        if nz.is_empty() {
            0.0
        } else {
            nz.iter().sum::<f64>() / nz.len() as f64
        }
    }

    #[test]
    fn hinge_arithmetic() {
        // Collinear one-dimensional points give exact pair distances.
        let emb = Array3::from_shape_vec((3, 1, 1), vec![0.0, 0.5, -1.0]).unwrap();
        assert_eq!(triplet_loss(&emb, &[0, 0, 1], 0.2).unwrap().value, 0.0);
        let emb = Array3::from_shape_vec((3, 1, 1), vec![0.0, 1.0, 0.9]).unwrap();
        let t = triplet_loss(&emb, &[0, 0, 1], 0.2).unwrap();
        // Anchor 0: 1.0 - 0.9 + 0.2; anchor 1: 1.0 - 0.1 + 0.2.
        assert!((t.value - (0.3 + 1.1) / 2.0).abs() < 1e-12);
        assert_eq!(t.active, 2);
    }

    #[test]
    fn triplet_matches_brute_force() {
        for seed in 0..20 {
            let emb = random_emb(seed, 8, 3, 4);
            let labels = [0, 0, 1, 1, 2, 2, 3, 3];
            let t = triplet_loss(&emb, &labels, 0.2).unwrap();
            assert!((t.value - triplet_oracle(&emb, &labels, 0.2)).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            triplet_loss(&random_emb(0, 3, 1, 2), &[4, 4, 4], 0.2),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let emb = random_emb(3, 6, 2, 3);
        let labels = [0, 0, 1, 1, 2, 2];
        let t = triplet_loss(&emb, &labels, 0.5).unwrap();
        let logits = random_emb(4, 6, 2, 3);
        let ce = ce_loss(&logits, &labels).unwrap();
        let h = 1e-6;
        for idx in [(0, 0, 0), (3, 1, 2), (5, 0, 1)] {
            let mut p = emb.clone();
            p[idx] += h;
            let mut m = emb.clone();
            m[idx] -= h;
            let fd = (triplet_loss(&p, &labels, 0.5).unwrap().value - triplet_loss(&m, &labels, 0.5).unwrap().value)
                / (2.0 * h);
            assert!((fd - t.grad[idx]).abs() < 1e-7);
            let mut p = logits.clone();
            p[idx] += h;
            let mut m = logits.clone();
            m[idx] -= h;
            let fd = (ce_loss(&p, &labels).unwrap().value - ce_loss(&m, &labels).unwrap().value) / (2.0 * h);
            assert!((fd - ce.grad[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn ce_special_cases() {
        let uniform = Array3::zeros((2, 3, 5));
        assert!((ce_loss(&uniform, &[1, 4]).unwrap().value - 5f64.ln()).abs() < 1e-12);
        let mut sharp = Array3::zeros((1, 2, 3));
        sharp[[0, 0, 2]] = 60.0;
        sharp[[0, 1, 2]] = 60.0;
        assert!(ce_loss(&sharp, &[2]).unwrap().value < 1e-20);
        assert!(matches!(
            ce_loss(&uniform, &[0, 5]),
            Err(Error::LabelOutOfRange { label: 5, classes: 5 })
        ));
    }

    #[test]
    fn ce_matches_log_sum_exp_oracle() {
        let logits = random_emb(9, 4, 3, 6) * 5.0;
        let labels = [0, 5, 2, 2];
        let mut expect = 0.0;
        for i in 0..4 {
            for k in 0..3 {
                let z: f64 = (0..6).map(|j| logits[[i, k, j]].exp()).sum();
                expect += z.ln() - logits[[i, k, labels[i]]];
            }
        }
        expect /= 12.0;
        assert!((ce_loss(&logits, &labels).unwrap().value - expect).abs() <= 1e-9);
    }

    #[test]
    fn total_is_weighted_sum() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(0.5, 2.0, &cfg), 2.5);
        assert_eq!(total_loss(0.5, 2.0, &LossConfig { beta: 0.0, ..cfg }), 0.5);
        assert_eq!(total_loss(0.0, 0.0, &cfg), 0.0);
    }

    proptest! {
        #[test]
        fn zero_loss_iff_every_anchor_is_separated(seed in 0u64..500, margin in 0.0f64..0.6) {
            let emb = random_emb(seed, 6, 2, 2);
            let labels = [0, 0, 1, 1, 2, 2];
            let (dist, _) = pairwise(&emb);
            let separated = (0..6).all(|a| {
                (0..6).filter(|&p| p != a && labels[p] == labels[a]).all(|p| {
                    (0..6).filter(|&n| labels[n] != labels[a]).all(|n| dist[[a, n]] >= dist[[a, p]] + margin)
                })
            });
            let value = triplet_loss(&emb, &labels, margin).unwrap().value;
            prop_assert_eq!(value == 0.0, separated);
        }
    }
}
