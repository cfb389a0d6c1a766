//! Linear probe: multinomial logistic regression on frozen features, used
//! to measure how much class information a representation carries.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Per-dimension mean and standard deviation fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant dimensions get unit scale and so map to zero.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("no rows to standardize".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: r.len() });
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Softmax classifier `argmax(W x + b)` over standardized inputs.
#[derive(Debug, Clone)]
pub struct SoftmaxProbe {
    standardizer: Standardizer,
    /// `n_classes x (d + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

fn scores(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()])
        .collect()
}

/// Largest eigenvalue of `X^T X / n` (bias column included), by power
/// iteration.
fn gram_norm(xs: &[Vec<f64>]) -> f64 {
    let d = xs[0].len() + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 1.0;
    for _ in 0..50 {
        let mut next = vec![0.0; d];
        for x in xs {
            let dot = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d - 1];
            next[..d - 1].iter_mut().zip(x).for_each(|(n, a)| *n += a * dot);
            next[d - 1] += dot;
        }
        next.iter_mut().for_each(|n| *n /= xs.len() as f64);
        lambda = next.iter().map(|n| n * n).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return 1.0;
        }
        v = next.into_iter().map(|n| n / lambda).collect();
    }
    lambda
}

impl SoftmaxProbe {
    /// Minimizes mean cross-entropy plus `l2/2 |W|^2` with accelerated
    /// gradient descent at step `1 / L`.
    pub fn fit(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, l2: f64, iterations: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        if n_classes < 2 || labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument("labels must lie in 0..n_classes with n_classes >= 2".into()));
        }
        let standardizer = Standardizer::fit(rows)?;
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
        let d = xs[0].len();
        let n = xs.len() as f64;
        // softmax cross-entropy has Hessian bounded by 1/2 of the Gram matrix
        let step = 1.0 / (0.5 * gram_norm(&xs) + l2);

        let zero = vec![vec![0.0; d + 1]; n_classes];
        let (mut w, mut prev, mut t) = (zero.clone(), zero.clone(), 1.0f64);
        for _ in 0..iterations {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            let y: Vec<Vec<f64>> = w
                .iter()
                .zip(&prev)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + beta * (p - q)).collect())
                .collect();
            let mut grad = zero.clone();
            for (x, &label) in xs.iter().zip(labels) {
                let mut p = scores(&y, x);
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                for (g, pk) in grad.iter_mut().zip(&p) {
                    g[..d].iter_mut().zip(x).for_each(|(gi, xi)| *gi += pk * xi / n);
                    g[d] += pk / n;
                }
            }
            let next: Vec<Vec<f64>> = y
                .iter()
                .zip(&grad)
                .map(|(yr, gr)| {
                    yr.iter()
                        .zip(gr)
                        .enumerate()
                        .map(|(i, (v, g))| v - step * (g + if i < d { l2 * v } else { 0.0 }))
                        .collect()
                })
                .collect();
            prev = std::mem::replace(&mut w, next);
            t = t_next;
        }
        Ok(SoftmaxProbe { standardizer, weights: w })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let s = scores(&self.weights, &self.standardizer.apply(row));
        (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0)
    }

    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = rows.iter().zip(labels).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / rows.len().max(1) as f64
    }
}

/// Fits a probe on a content-disjoint share of the rows and returns the
/// held-out accuracy. `train_fraction` of the distinct contents, rounded,
/// go to training.
pub fn content_split_accuracy(
    rows: &[Vec<f64>],
    labels: &[usize],
    contents: &[usize],
    n_classes: usize,
    train_fraction: f64,
    l2: f64,
    seed: u64,
) -> Result<f64> {
    let mut ids: Vec<usize> = contents.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("need at least two contents".into()));
    }
    ids.shuffle(&mut seed::stream(seed, &[]));
    let n_train = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train: std::collections::HashSet<usize> = ids[..n_train].iter().copied().collect();
    let (mut xa, mut ya, mut xb, mut yb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((r, &l), c) in rows.iter().zip(labels).zip(contents) {
        if train.contains(c) {
            xa.push(r.clone());
            ya.push(l);
        } else {
            xb.push(r.clone());
            yb.push(l);
        }
    }
    let probe = SoftmaxProbe::fit(&xa, &ya, n_classes, l2, 500)?;
    Ok(probe.accuracy(&xb, &yb))
}
