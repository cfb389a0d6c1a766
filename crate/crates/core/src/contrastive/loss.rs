//! Cosine similarity and the NT-Xent loss family.
//!
//! Every anchor's loss has the shape
//! `LSE_i - sum_j w_ij s_ij`, where `s_ij = cos(z_i, z_j) / tau`,
//! `LSE_i = log sum_{k != i} exp(s_ik)` and `w_ij` spreads unit mass over the
//! anchor's positives: uniformly over all same-class members for
//! synthetic-class anchors, entirely on the single partner for
//! unique-class anchors. The batch loss is the mean over anchors.

use crate::error::{Error, Result};

/// `u.v / (|u| |v|)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Projected embeddings of one batch with their class structure.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    /// Row-major `n x k`.
    pub z: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub labels: Vec<u64>,
    pub tau: f64,
    /// `true`: the anchor is its own class and its only positive is the one
    /// other row sharing its label.
    pub ugc_mask: Vec<bool>,
}

impl LabeledBatch {
    pub fn new(z: Vec<f64>, k: usize, labels: Vec<u64>, tau: f64, ugc_mask: Vec<bool>) -> Result<Self> {
        if k == 0 || z.len() % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {k}",
                z.len()
            )));
        }
        let n = z.len() / k;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("a batch needs at least 2 rows, got {n}")));
        }
        if labels.len() != n || ugc_mask.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if labels.len() != n { labels.len() } else { ugc_mask.len() },
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        Ok(LabeledBatch {
            z,
            n,
            k,
            labels,
            tau,
            ugc_mask,
        })
    }

    /// The pairwise-regime batch: rows `2b` and `2b + 1` are the two views
    /// of sample `b` and nothing else shares their label.
    pub fn paired_views(z: Vec<f64>, k: usize, tau: f64) -> Result<Self> {
        let n = if k == 0 { 0 } else { z.len() / k };
        let labels = (0..n as u64).map(|i| i / 2).collect();
        LabeledBatch::new(z, k, labels, tau, vec![true; n])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, count: self.n });
        }
        Ok(())
    }

    /// Other rows sharing the anchor's label.
    pub fn class_members(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.labels[j] == self.labels[i]).collect()
    }

    /// Positives of anchor `i` under the regime its mask selects.
    pub fn positives(&self, i: usize) -> Result<Vec<usize>> {
        let members = self.class_members(i);
        if self.ugc_mask[i] {
            if members.len() != 1 {
                return Err(Error::Unroutable {
                    anchor: i,
                    reason: format!(
                        "unique-class anchor needs exactly one partner, label {} has {}",
                        self.labels[i],
                        members.len()
                    ),
                });
            }
        } else if members.is_empty() {
            return Err(Error::Unroutable {
                anchor: i,
                reason: "synthetic-class anchor has no same-class member".into(),
            });
        }
        Ok(members)
    }
}

/// Unit-normalized rows and the `n x n` scaled similarity matrix.
struct Similarities {
    unit: Vec<f64>,
    norms: Vec<f64>,
    s: Vec<f64>,
    /// `log sum_{k != i} exp(s_ik)` per anchor, split as `max + tail` so
    /// that `lse - s_ij` keeps full precision when `s_ij` is the max.
    lse_max: Vec<f64>,
    lse_tail: Vec<f64>,
}

impl Similarities {
    /// `lse_i - target`
    fn minus(&self, i: usize, target: f64) -> f64 {
        (self.lse_max[i] - target) + self.lse_tail[i]
    }
}

fn similarities(batch: &LabeledBatch) -> Result<Similarities> {
    let (n, k) = (batch.n, batch.k);
    let mut unit = batch.z.clone();
    let mut norms = Vec::with_capacity(n);
    for row in unit.chunks_exact_mut(k) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        row.iter_mut().for_each(|x| *x /= norm);
        norms.push(norm);
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = unit[i * k..(i + 1) * k]
                .iter()
                .zip(&unit[j * k..(j + 1) * k])
                .map(|(a, b)| a * b)
                .sum();
            let v = dot.clamp(-1.0, 1.0) / batch.tau;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    let (lse_max, lse_tail) = (0..n)
        .map(|i| {
            let row = &s[i * n..(i + 1) * n];
            // max + ln(1 + sum of the other terms), exact when only one term exists
            let m = (0..n)
                .filter(|&j| j != i)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .expect("batch has at least two rows");
            let rest: f64 = (0..n).filter(|&j| j != i && j != m).map(|j| (row[j] - row[m]).exp()).sum();
            (row[m], rest.ln_1p())
        })
        .unzip();
    Ok(Similarities {
        unit,
        norms,
        s,
        lse_max,
        lse_tail,
    })
}

/// Supervised-contrastive loss of anchor `i` averaged over its class.
pub fn ntxent_syn(batch: &LabeledBatch, i: usize) -> Result<f64> {
    batch.check_index(i)?;
    let members = batch.class_members(i);
    if members.is_empty() {
        return Err(Error::SingletonClass { anchor: i });
    }
    let sim = similarities(batch)?;
    let n = batch.n;
    let mean_pos = members.iter().map(|&j| sim.s[i * n + j]).sum::<f64>() / members.len() as f64;
    Ok(sim.minus(i, mean_pos))
}

/// Loss of anchor `i` with the single designated positive `j`.
pub fn ntxent_pairwise(batch: &LabeledBatch, i: usize, j: usize) -> Result<f64> {
    batch.check_index(i)?;
    batch.check_index(j)?;
    if i == j {
        return Err(Error::InvalidArgument(format!("anchor {i} cannot be its own positive")));
    }
    let sim = similarities(batch)?;
    Ok(sim.minus(i, sim.s[i * batch.n + j]))
}

/// Mean over anchors, each routed to the pairwise or class-averaged loss by
/// its mask.
pub fn total_loss(batch: &LabeledBatch) -> Result<f64> {
    Ok(total_loss_with_grad(batch)?.0)
}

/// Batch loss and its gradient with respect to `z` (row-major `n x k`).
pub fn total_loss_with_grad(batch: &LabeledBatch) -> Result<(f64, Vec<f64>)> {
    let (n, k) = (batch.n, batch.k);
    let positives = (0..n).map(|i| batch.positives(i)).collect::<Result<Vec<_>>>()?;
    let sim = similarities(batch)?;

    // g[i][j] = d loss / d s_ij
    let mut g = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &sim.s[i * n..(i + 1) * n];
        for j in 0..n {
            if j != i {
                g[i * n + j] = (row[j] - sim.lse_max[i] - sim.lse_tail[i]).exp() / n as f64;
            }
        }
        let w = 1.0 / positives[i].len() as f64;
        let mut target = 0.0;
        for &j in &positives[i] {
            target += w * row[j];
            g[i * n + j] -= w / n as f64;
        }
        loss += sim.minus(i, target);
    }
    loss /= n as f64;

    // s_ij = u_i . u_j / tau, so d/du_i = sum_j (g_ij + g_ji) u_j / tau.
    let mut grad = vec![0.0; n * k];
    for i in 0..n {
        let du = &mut vec![0.0; k];
        for j in 0..n {
            let coeff = (g[i * n + j] + g[j * n + i]) / batch.tau;
            if coeff != 0.0 {
                for (d, u) in du.iter_mut().zip(&sim.unit[j * k..(j + 1) * k]) {
                    *d += coeff * u;
                }
            }
        }
        // Through u = z / |z|: dz = (du - u (u . du)) / |z|.
        let u = &sim.unit[i * k..(i + 1) * k];
        let proj: f64 = u.iter().zip(du.iter()).map(|(a, b)| a * b).sum();
        for c in 0..k {
            grad[i * k + c] = (du[c] - u[c] * proj) / sim.norms[i];
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, 3.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let want = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine_similarity(&u, &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.97463).abs() < 1e-5);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &u[..2]), Err(Error::ZeroVector)));
        assert!(cosine_similarity(&u, &u[..2]).is_err());
    }

    #[test]
    fn identical_embeddings_give_uniform_softmax() {
        let z = [0.3, -0.2, 0.9].repeat(4);
        let batch = LabeledBatch::new(z, 3, vec![7; 4], 0.1, vec![false; 4]).unwrap();
        for i in 0..4 {
            assert!((ntxent_syn(&batch, i).unwrap() - 3.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_class_is_an_error() {
        let z = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let batch = LabeledBatch::new(z, 2, vec![0, 0, 1], 0.1, vec![false; 3]).unwrap();
        assert!(matches!(ntxent_syn(&batch, 2), Err(Error::SingletonClass { anchor: 2 })));
        assert!(matches!(total_loss(&batch), Err(Error::Unroutable { anchor: 2, .. })));
    }

    #[test]
    fn two_element_batch_has_zero_pairwise_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let batch = LabeledBatch::paired_views(z, 4, 0.1).unwrap();
            assert_eq!(ntxent_pairwise(&batch, 0, 1).unwrap(), 0.0);
            assert_eq!(ntxent_pairwise(&batch, 1, 0).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_term_softmax_closed_form() {
        // s_ij = 1, s_ik = -1
        let z = vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        let batch = LabeledBatch::new(z, 2, vec![0, 0, 1], 0.1, vec![true, true, false]).unwrap();
        let got = ntxent_pairwise(&batch, 0, 1).unwrap();
        let want = (-20.0f64).exp().ln_1p();
        assert!((got - want).abs() < 1e-12 * want);
        assert!((got - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn pairwise_rejects_self_positive() {
        let batch = LabeledBatch::paired_views(vec![1.0, 0.0, 0.0, 1.0], 2, 0.5).unwrap();
        assert!(ntxent_pairwise(&batch, 1, 1).is_err());
        assert!(ntxent_pairwise(&batch, 0, 2).is_err());
    }

    #[test]
    fn unique_class_anchor_needs_exactly_one_partner() {
        let z = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let batch = LabeledBatch::new(z, 2, vec![0, 0, 0], 0.1, vec![true; 3]).unwrap();
        assert!(matches!(total_loss(&batch), Err(Error::Unroutable { .. })));
    }

    /// Explicit loops over the defining sums, no shared helpers.
    mod oracle {
        fn phi(u: &[f64], v: &[f64]) -> f64 {
            let mut dot = 0.0;
            let mut nu = 0.0;
            let mut nv = 0.0;
            for c in 0..u.len() {
                dot += u[c] * v[c];
                nu += u[c] * u[c];
                nv += v[c] * v[c];
            }
            dot / (nu.sqrt() * nv.sqrt())
        }

        fn row(z: &[f64], k: usize, i: usize) -> &[f64] {
            &z[i * k..(i + 1) * k]
        }

        pub fn term(z: &[f64], k: usize, tau: f64, i: usize, j: usize) -> f64 {
            let n = z.len() / k;
            let mut denom = 0.0;
            for m in 0..n {
                if m != i {
                    denom += (phi(row(z, k, i), row(z, k, m)) / tau).exp();
                }
            }
            -((phi(row(z, k, i), row(z, k, j)) / tau).exp() / denom).ln()
        }

        pub fn syn(z: &[f64], k: usize, labels: &[u64], tau: f64, i: usize) -> f64 {
            let mut sum = 0.0;
            let mut count = 0;
            for j in 0..labels.len() {
                if j != i && labels[j] == labels[i] {
                    sum += term(z, k, tau, i, j);
                    count += 1;
                }
            }
            sum / count as f64
        }

        pub fn total(z: &[f64], k: usize, labels: &[u64], ugc: &[bool], tau: f64) -> f64 {
            let n = labels.len();
            let mut sum = 0.0;
            for i in 0..n {
                if ugc[i] {
                    let j = (0..n).find(|&j| j != i && labels[j] == labels[i]).unwrap();
                    sum += term(z, k, tau, i, j);
                } else {
                    sum += syn(z, k, labels, tau, i);
                }
            }
            sum / n as f64
        }
    }

    fn random_z(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<f64> {
        (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-12) || (a - b).abs() < 1e-12
    }

    #[test]
    fn syn_matches_oracle_on_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_z(&mut rng, 8, 5);
        let labels = vec![0, 1, 0, 1, 1, 0, 0, 1];
        let batch = LabeledBatch::new(z.clone(), 5, labels.clone(), 0.1, vec![false; 8]).unwrap();
        for i in 0..8 {
            let want = oracle::syn(&z, 5, &labels, 0.1, i);
            assert!(rel_close(ntxent_syn(&batch, i).unwrap(), want, 1e-6));
        }
        let want = oracle::total(&z, 5, &labels, &[false; 8], 0.1);
        assert!(rel_close(total_loss(&batch).unwrap(), want, 1e-6));
    }

    #[test]
    fn pairwise_matches_oracle_on_sixteen_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = random_z(&mut rng, 16, 6);
        let batch = LabeledBatch::paired_views(z.clone(), 6, 0.1).unwrap();
        for i in 0..16 {
            let j = i ^ 1;
            let want = oracle::term(&z, 6, 0.1, i, j);
            assert!(rel_close(ntxent_pairwise(&batch, i, j).unwrap(), want, 1e-6));
        }
    }

    #[test]
    fn mixed_batch_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = random_z(&mut rng, 8, 4);
        // rows 0-3 are unique pairs, rows 4-7 one synthetic class of three plus its fourth member
        let labels = vec![100, 100, 101, 101, 0, 0, 0, 0];
        let ugc = vec![true, true, true, true, false, false, false, false];
        let batch = LabeledBatch::new(z.clone(), 4, labels.clone(), 0.2, ugc.clone()).unwrap();
        let want = oracle::total(&z, 4, &labels, &ugc, 0.2);
        assert!(rel_close(total_loss(&batch).unwrap(), want, 1e-6));
    }

    #[test]
    fn all_ugc_total_is_mean_of_pairwise_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z = random_z(&mut rng, 6, 3);
        let batch = LabeledBatch::paired_views(z, 3, 0.1).unwrap();
        let mean = (0..6).map(|i| ntxent_pairwise(&batch, i, i ^ 1).unwrap()).sum::<f64>() / 6.0;
        assert!((total_loss(&batch).unwrap() - mean).abs() < 1e-12);
    }

    fn batch_strategy() -> impl Strategy<Value = (Vec<f64>, usize, Vec<u64>, Vec<bool>, f64)> {
        (1usize..=8, 1usize..=8, 0.05f64..1.0).prop_flat_map(|(pairs, k, tau)| {
            let n = 2 * pairs;
            (
                proptest::collection::vec(-1.0f64..1.0, n * k),
                Just(k),
                proptest::collection::vec(0u64..3, pairs),
                proptest::collection::vec(any::<bool>(), pairs),
                Just(tau),
            )
                .prop_map(|(z, k, classes, unique, tau)| {
                    // pair p is either unique (label 1000 + p) or joins synthetic class classes[p]
                    let mut labels = Vec::new();
                    let mut ugc = Vec::new();
                    for p in 0..unique.len() {
                        let label = if unique[p] { 1000 + p as u64 } else { classes[p] };
                        labels.extend([label, label]);
                        ugc.extend([unique[p], unique[p]]);
                    }
                    (z, k, labels, ugc, tau)
                })
        })
    }

    fn nonzero_rows(z: &[f64], k: usize) -> bool {
        z.chunks_exact(k).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn total_matches_oracle((z, k, labels, ugc, tau) in batch_strategy()) {
            prop_assume!(nonzero_rows(&z, k));
            let batch = LabeledBatch::new(z.clone(), k, labels.clone(), tau, ugc.clone()).unwrap();
            let got = total_loss(&batch).unwrap();
            let want = oracle::total(&z, k, &labels, &ugc, tau);
            prop_assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
            for i in 0..batch.n {
                if !ugc[i] {
                    let want = oracle::syn(&z, k, &labels, tau, i);
                    prop_assert!(rel_close(ntxent_syn(&batch, i).unwrap(), want, 1e-6));
                }
            }
        }

        #[test]
        fn gradient_matches_central_differences((z, k, labels, ugc, tau) in batch_strategy()) {
            prop_assume!(nonzero_rows(&z, k));
            let batch = LabeledBatch::new(z.clone(), k, labels.clone(), tau, ugc.clone()).unwrap();
            let (_, grad) = total_loss_with_grad(&batch).unwrap();
            let h = 1e-5;
            for idx in 0..z.len() {
                let mut plus = batch.clone();
                plus.z[idx] += h;
                let mut minus = batch.clone();
                minus.z[idx] -= h;
                let fd = (total_loss(&plus).unwrap() - total_loss(&minus).unwrap()) / (2.0 * h);
                let scale = fd.abs().max(grad[idx].abs()).max(1e-3);
                prop_assert!((fd - grad[idx]).abs() <= 1e-4 * scale, "idx {idx}: {fd} vs {}", grad[idx]);
            }
        }

        #[test]
        fn loss_is_permutation_invariant((z, k, labels, ugc, tau) in batch_strategy(), seed in any::<u64>()) {
            prop_assume!(nonzero_rows(&z, k));
            let n = labels.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pz: Vec<f64> = perm.iter().flat_map(|&i| z[i * k..(i + 1) * k].to_vec()).collect();
            let pl: Vec<u64> = perm.iter().map(|&i| labels[i]).collect();
            let pu: Vec<bool> = perm.iter().map(|&i| ugc[i]).collect();
            let a = total_loss(&LabeledBatch::new(z, k, labels, tau, ugc).unwrap()).unwrap();
            let b = total_loss(&LabeledBatch::new(pz, k, pl, tau, pu).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn pairwise_is_nonnegative((z, k, _l, _u, tau) in batch_strategy()) {
            prop_assume!(nonzero_rows(&z, k));
            let batch = LabeledBatch::paired_views(z, k, tau).unwrap();
            for i in 0..batch.n {
                prop_assert!(ntxent_pairwise(&batch, i, i ^ 1).unwrap() >= 0.0);
            }
        }

        #[test]
        fn lower_temperature_sharpens_a_dominant_positive(
            pos in 0.5f64..1.0,
            negs in proptest::collection::vec(-1.0f64..0.45, 1..6),
            tau in 0.05f64..1.0,
        ) {
            // anchor e0; positive and negatives placed at prescribed cosines in the e0-e1 plane
            let at = |c: f64| vec![c, (1.0 - c * c).max(0.0).sqrt()];
            let mut z = vec![1.0, 0.0];
            z.extend(at(pos));
            for &c in &negs {
                z.extend(at(c));
            }
            let n = z.len() / 2;
            let labels: Vec<u64> = (0..n as u64).map(|i| if i < 2 { 0 } else { i }).collect();
            let mk = |t: f64| LabeledBatch::new(z.clone(), 2, labels.clone(), t, vec![false; n]).unwrap();
            let hot = ntxent_pairwise(&mk(tau), 0, 1).unwrap();
            let cold = ntxent_pairwise(&mk(tau * 0.5), 0, 1).unwrap();
            prop_assert!(cold < hot || (hot == 0.0 && cold == 0.0));
        }
    }

    #[test]
    fn rejects_malformed_batches() {
        assert!(LabeledBatch::new(vec![1.0, 2.0], 2, vec![0], 0.1, vec![true]).is_err());
        assert!(LabeledBatch::new(vec![1.0; 4], 2, vec![0, 0], 0.0, vec![true; 2]).is_err());
        assert!(LabeledBatch::new(vec![1.0; 4], 2, vec![0], 0.1, vec![true; 2]).is_err());
        assert!(LabeledBatch::new(vec![1.0; 5], 2, vec![0, 0], 0.1, vec![true; 2]).is_err());
    }
}
