//! Linear-kernel epsilon support-vector regression. The dual is solved by a
//! primal-dual interior-point method (Mehrotra predictor-corrector), whose
//! step count, unlike that of SMO, does not grow with C.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const TO_BOUNDARY: f64 = 0.995;
/// Iterations without progress before giving up.
const STALL: usize = 5;
/// Primal regularization of the Newton diagonal, relative to the label scale.
const PROXIMAL: f64 = 1e-10;

/// `f(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvr {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearSvr {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b
    }

    /// `1/2 |w|^2 + C sum max(0, |f(x_i) - y_i| - eps)`.
    pub fn primal_objective(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let reg = 0.5 * self.w.iter().map(|v| v * v).sum::<f64>();
        let loss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| ((self.predict_one(x) - y).abs() - self.epsilon).max(0.0))
            .sum();
        reg + self.c * loss
    }
}

/// Dual solution alongside the model, for optimality checks.
#[derive(Debug, Clone)]
pub struct SvrSolution {
    pub model: LinearSvr,
    /// `alpha_i - alpha*_i` per training row.
    pub coef: Vec<f64>,
    /// Value of the dual maximization problem.
    pub dual_objective: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix `C X X^T`.
struct Kernel {
    gram: DMatrix<f64>,
}

impl Kernel {
    fn new(xs: &[Vec<f64>], c: f64) -> Self {
        let (l, d) = (xs.len(), xs[0].len());
        let x = DMatrix::from_fn(l, d, |i, j| xs[i][j]);
        Kernel { gram: (&x * x.transpose()) * c }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.gram * v
    }

    /// Cholesky factor of `diag(1/e) + K`, shifted slightly because a
    /// rank-deficient `K` can be indefinite in floating point. A Woodbury
    /// update through the feature dimension would be cheaper but loses the
    /// badly scaled diagonal near convergence.
    fn factor(&self, e: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        let mut a = self.gram.clone();
        let shift = 1e-12 * (1.0 + self.gram.diagonal().amax());
        for i in 0..e.len() {
            a[(i, i)] += 1.0 / e[i] + shift;
        }
        a.cholesky().ok_or_else(|| {
            Error::InvalidArgument("interior-point Newton system is not positive definite; are the features finite?".into())
        })
    }
}

/// Newton solver for `(H + diag(d1, d2)) [x1; x2] = [r1; r2]` with
/// `H = [K -K; -K K]`, reduced to one `l x l` system in `x1 - x2`.
struct Newton<'a> {
    kernel: &'a Kernel,
    d1: DVector<f64>,
    d2: DVector<f64>,
    e: DVector<f64>,
    factored: Cholesky<f64, Dyn>,
}

impl<'a> Newton<'a> {
    fn new(kernel: &'a Kernel, d1: DVector<f64>, d2: DVector<f64>) -> Result<Self> {
        let e = d1.map(|v| 1.0 / v) + d2.map(|v| 1.0 / v);
        let factored = kernel.factor(&e)?;
        Ok(Newton {
            kernel,
            d1,
            d2,
            e,
            factored,
        })
    }

    /// Two rounds of iterative refinement absorb the round-off of the badly
    /// scaled diagonal near convergence.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut x1, mut x2) = self.solve_once(r1, r2);
        for _ in 0..2 {
            let kb = self.kernel.apply(&(&x1 - &x2));
            let e1 = r1 - (&kb + self.d1.component_mul(&x1));
            let e2 = r2 - (-&kb + self.d2.component_mul(&x2));
            let (c1, c2) = self.solve_once(&e1, &e2);
            x1 += c1;
            x2 += c2;
        }
        (x1, x2)
    }

    fn solve_once(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let t = r1.component_div(&self.d1) - r2.component_div(&self.d2);
        let beta = self.factored.solve(&t.component_div(&self.e));
        let kb = self.kernel.apply(&beta);
        ((r1 - &kb).component_div(&self.d1), (r2 + &kb).component_div(&self.d2))
    }
}

/// Largest step in (0, 1] keeping `v + t dv` strictly positive.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).fold(1.0, |t, (x, d)| t.min(-x / d))
}

/// Midpoint of the interval of biases minimizing the primal for fixed `w`.
/// The loss in `b` is piecewise linear with unit slope changes at
/// `r_i - eps` and `r_i + eps`, `r_i = y_i - w . x_i`; its slope is zero
/// between the `l`-th and `l + 1`-th of those breakpoints.
fn best_bias(xs: &[Vec<f64>], ys: &[f64], w: &[f64], epsilon: f64) -> f64 {
    let mut knots: Vec<f64> = xs
        .iter()
        .zip(ys)
        .flat_map(|(x, y)| {
            let r = y - dot(w, x);
            [r - epsilon, r + epsilon]
        })
        .collect();
    knots.sort_by(f64::total_cmp);
    let l = xs.len();
    (knots[l - 1] + knots[l]) / 2.0
}

/// Fits an epsilon-SVR with box constraint `c`. The dual variables are
/// scaled to `[0, 1]`; iteration stops once the mean complementarity gap,
/// the dual residual and the equality residual are all below `tolerance`
/// (label units).
pub fn fit_svr(xs: &[Vec<f64>], ys: &[f64], c: f64, epsilon: f64, tolerance: f64) -> Result<SvrSolution> {
    let l = xs.len();
    if l == 0 || ys.len() != l {
        return Err(Error::DimensionMismatch { expected: l, found: ys.len() });
    }
    if !(c > 0.0 && c.is_finite()) || !(epsilon >= 0.0) || !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "svr needs C > 0, epsilon >= 0 and a positive tolerance (got {c}, {epsilon}, {tolerance})"
        )));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidArgument("ragged feature rows".into()));
    }
    let kernel = Kernel::new(xs, c);
    let y = DVector::from_column_slice(ys);
    // alpha (sign +1) is v1, alpha* (sign -1) is v2, both as fractions of C
    let p1 = y.map(|v| epsilon - v);
    let p2 = y.map(|v| epsilon + v);
    let scale = 1.0 + p1.amax().max(p2.amax());
    let mut v1 = DVector::from_element(l, 0.5);
    let mut v2 = DVector::from_element(l, 0.5);
    let mut lambda = 0.0;
    // dual-feasible start: z - s equals the gradient at v
    let theta = scale;
    let mut z1 = p1.map(|g| g.max(0.0) + theta);
    let mut s1 = p1.map(|g| (-g).max(0.0) + theta);
    let mut z2 = p2.map(|g| g.max(0.0) + theta);
    let mut s2 = p2.map(|g| (-g).max(0.0) + theta);
    let pairs = 2.0 * (2 * l) as f64;
    let mut best = (f64::INFINITY, v1.clone(), v2.clone(), 0);

    let mut iter = 0;
    let mut converged = false;
    loop {
        let kb = kernel.apply(&(&v1 - &v2));
        // gradient of 1/2 v'Hv + p'v minus the equality multiplier
        let rd1 = &kb + &p1 - DVector::from_element(l, lambda) - &z1 + &s1;
        let rd2 = -&kb + &p2 + DVector::from_element(l, lambda) - &z2 + &s2;
        let rp = v1.sum() - v2.sum();
        let w1 = v1.map(|v| 1.0 - v);
        let w2 = v2.map(|v| 1.0 - v);
        let mu = (v1.dot(&z1) + v2.dot(&z2) + w1.dot(&s1) + w2.dot(&s2)) / pairs;
        let dual_res = rd1.amax().max(rd2.amax());
        let merit = mu.max(dual_res).max(rp.abs());
        if !merit.is_finite() {
            break;
        }
        if merit < best.0 {
            best = (merit, v1.clone(), v2.clone(), iter);
        } else if iter >= best.3 + STALL {
            break;
        }
        if merit <= tolerance {
            converged = true;
            break;
        }
        if iter == MAX_ITER {
            break;
        }
        iter += 1;

        // proximal term: with epsilon = 0 the sum v1 + v2 is free and the
        // unregularized system turns singular near the optimum
        let rho = PROXIMAL * scale;
        let newton = Newton::new(
            &kernel,
            (z1.component_div(&v1) + s1.component_div(&w1)).add_scalar(rho),
            (z2.component_div(&v2) + s2.component_div(&w2)).add_scalar(rho),
        )?;
        let (ma1, ma2) = newton.solve(&DVector::from_element(l, 1.0), &DVector::from_element(l, -1.0));
        let a_ma = ma1.sum() - ma2.sum();
        // direction for complementarity targets (rz, rs) per half
        let direction = |rz1: &DVector<f64>, rs1: &DVector<f64>, rz2: &DVector<f64>, rs2: &DVector<f64>| {
            let r1 = -&rd1 + rz1.component_div(&v1) - rs1.component_div(&w1);
            let r2 = -&rd2 + rz2.component_div(&v2) - rs2.component_div(&w2);
            let (x1, x2) = newton.solve(&r1, &r2);
            let dl = (-rp - (x1.sum() - x2.sum())) / a_ma;
            let dv1 = x1 + &ma1 * dl;
            let dv2 = x2 + &ma2 * dl;
            let dz1 = (rz1 - z1.component_mul(&dv1)).component_div(&v1);
            let dz2 = (rz2 - z2.component_mul(&dv2)).component_div(&v2);
            let ds1 = (rs1 + s1.component_mul(&dv1)).component_div(&w1);
            let ds2 = (rs2 + s2.component_mul(&dv2)).component_div(&w2);
            (dv1, dv2, dl, dz1, dz2, ds1, ds2)
        };
        let step = |dv1: &DVector<f64>, dv2: &DVector<f64>, dz1: &DVector<f64>, dz2: &DVector<f64>, ds1: &DVector<f64>, ds2: &DVector<f64>| {
            [
                max_step(&v1, dv1),
                max_step(&v2, dv2),
                max_step(&w1, &-dv1),
                max_step(&w2, &-dv2),
                max_step(&z1, dz1),
                max_step(&z2, dz2),
                max_step(&s1, ds1),
                max_step(&s2, ds2),
            ]
            .into_iter()
            .fold(1.0, f64::min)
        };

        // predictor
        let (av1, av2, _, az1, az2, as1, as2) =
            direction(&-v1.component_mul(&z1), &-w1.component_mul(&s1), &-v2.component_mul(&z2), &-w2.component_mul(&s2));
        let t = step(&av1, &av2, &az1, &az2, &as1, &as2);
        let comp = |v: &DVector<f64>, dv: &DVector<f64>, z: &DVector<f64>, dz: &DVector<f64>| (v + dv * t).dot(&(z + dz * t));
        let mu_aff = (comp(&v1, &av1, &z1, &az1)
            + comp(&v2, &av2, &z2, &az2)
            + comp(&w1, &-&av1, &s1, &as1)
            + comp(&w2, &-&av2, &s2, &as2))
            / pairs;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let target = sigma * mu;
        let rz1 = (-v1.component_mul(&z1) - av1.component_mul(&az1)).add_scalar(target);
        let rz2 = (-v2.component_mul(&z2) - av2.component_mul(&az2)).add_scalar(target);
        let rs1 = (-w1.component_mul(&s1) + av1.component_mul(&as1)).add_scalar(target);
        let rs2 = (-w2.component_mul(&s2) + av2.component_mul(&as2)).add_scalar(target);
        let (dv1, dv2, dl, dz1, dz2, ds1, ds2) = direction(&rz1, &rs1, &rz2, &rs2);
        let t = (TO_BOUNDARY * step(&dv1, &dv2, &dz1, &dz2, &ds1, &ds2)).min(1.0);
        v1 += dv1 * t;
        v2 += dv2 * t;
        lambda += dl * t;
        z1 += dz1 * t;
        z2 += dz2 * t;
        s1 += ds1 * t;
        s2 += ds2 * t;
    }
    if !converged {
        log::warn!(
            "svr stopped after {iter} iterations at gap {:.3e}, above tolerance {tolerance}",
            best.0
        );
    }
    // round-off can spoil late iterates; keep the best one seen
    let (_, v1, v2, _) = best;

    let beta = &v1 - &v2;
    let coef: Vec<f64> = beta.iter().map(|b| c * b).collect();
    let mut w = vec![0.0; d];
    for (x, a) in xs.iter().zip(&coef) {
        w.iter_mut().zip(x).for_each(|(wi, xi)| *wi += a * xi);
    }
    let b = best_bias(xs, ys, &w, epsilon);
    // dual max value = -(1/2 u'Hu + p'u) with u = C v
    let quad = beta.dot(&kernel.apply(&beta));
    let dual_objective = -c * (0.5 * quad + p1.dot(&v1) + p2.dot(&v2));
    Ok(SvrSolution {
        model: LinearSvr {
            w,
            b,
            c,
            epsilon,
            iterations: iter,
            converged,
        },
        coef,
        dual_objective,
    })
}
