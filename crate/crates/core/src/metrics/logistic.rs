//! Five-parameter logistic mapping from objective predictions to subjective
//! scores, fitted by damped (Levenberg-Marquardt) least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 10_000;
const GRADIENT_TOLERANCE: f64 = 1e-10;

/// Where the offset `b5` enters the curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticForm {
    /// `(b1 - b2) / (1 + exp(-(x - b3) / b4)) + b5`
    #[default]
    Standard,
    /// `(b1 - b2) / (1 + exp(-(x - b3) / b4) + b5)`, the offset inside the
    /// denominator.
    OffsetInDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta: [f64; 5],
    pub form: LogisticForm,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticParams {
    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.beta, self.form, x)
    }
}

#[inline]
fn eval(b: &[f64; 5], form: LogisticForm, x: f64) -> f64 {
    let e = (-(x - b[2]) / b[3]).exp();
    match form {
        LogisticForm::Standard => (b[0] - b[1]) / (1.0 + e) + b[4],
        LogisticForm::OffsetInDenominator => (b[0] - b[1]) / (1.0 + e + b[4]),
    }
}

/// Partial derivatives of the curve with respect to `b1..b5`.
#[inline]
fn jacobian_row(b: &[f64; 5], form: LogisticForm, x: f64) -> [f64; 5] {
    let amp = b[0] - b[1];
    let e = (-(x - b[2]) / b[3]).exp();
    let den = match form {
        LogisticForm::Standard => 1.0 + e,
        LogisticForm::OffsetInDenominator => 1.0 + e + b[4],
    };
    let d_den = -amp / (den * den);
    // d e / d b3 = e / b4 ; d e / d b4 = e (x - b3) / b4^2
    let d3 = d_den * e / b[3];
    let d4 = d_den * e * (x - b[2]) / (b[3] * b[3]);
    let d5 = match form {
        LogisticForm::Standard => 1.0,
        LogisticForm::OffsetInDenominator => d_den,
    };
    [1.0 / den, -1.0 / den, d3, d4, d5]
}

fn sse(b: &[f64; 5], form: LogisticForm, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = eval(b, form, xi) - yi;
            r * r
        })
        .sum()
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve5(mut a: [[f64; 5]; 5], mut rhs: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let pivot = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| a[row][k] * out[k]).sum();
        out[row] = (rhs[row] - s) / a[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

struct Fit {
    beta: [f64; 5],
    sse: f64,
    converged: bool,
    iterations: usize,
}

fn levenberg_marquardt(start: [f64; 5], form: LogisticForm, x: &[f64], y: &[f64]) -> Fit {
    let mut beta = start;
    let mut cost = sse(&beta, form, x, y);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(1.0);

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&xi, &yi) in x.iter().zip(y) {
            let r = eval(&beta, form, xi) - yi;
            let j = jacobian_row(&beta, form, xi);
            for a in 0..5 {
                jtr[a] += j[a] * r;
                for b in 0..5 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let grad_norm = jtr.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < GRADIENT_TOLERANCE || cost < 1e-30 * scale {
            converged = true;
            break;
        }
        let max_diag = (0..5).map(|i| jtj[i][i]).fold(0.0f64, f64::max);
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..5 {
                damped[i][i] += lambda * jtj[i][i].max(1e-9 * max_diag).max(1e-300);
            }
            let step = solve5(damped, jtr.map(|g| -g));
            if let Some(step) = step {
                let mut candidate = beta;
                for i in 0..5 {
                    candidate[i] += step[i];
                }
                let c = sse(&candidate, form, x, y);
                if c.is_finite() && candidate[3] != 0.0 && c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    let step_small = step
                        .iter()
                        .zip(&candidate)
                        .all(|(s, b)| s.abs() <= 1e-15 * (1.0 + b.abs()));
                    beta = candidate;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-15);
                    improved = true;
                    if step_small || (rel < 1e-15 && rel >= 0.0 && c < 1e-20 * scale) {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left at machine precision: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Fit {
        beta,
        sse: cost,
        converged,
        iterations,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fits the logistic mapping `pred -> mos`.
///
/// Two deterministic starts are tried and the lower residual wins: the
/// conventional one (`b1 = max(mos)`, `b2 = min(mos)`, `b3 = mean(pred)`,
/// `b4 = std(pred) / 4`, `b5 = 0`) and a near-linear one whose wide `b4`
/// makes the curve close to the least-squares line.
pub fn logistic_fit(pred: &[f64], mos: &[f64], form: LogisticForm) -> Result<LogisticParams> {
    if pred.len() != mos.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            found: mos.len(),
        });
    }
    if pred.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "logistic fit needs at least 5 points, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(mos).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in logistic fit input".into()));
    }
    let mx = mean(pred);
    let var_x = pred.iter().map(|p| (p - mx) * (p - mx)).sum::<f64>() / pred.len() as f64;
    if var_x == 0.0 {
        return Err(Error::InvalidArgument("logistic fit of constant predictions".into()));
    }
    let std_x = var_x.sqrt();
    let my = mean(mos);
    let mos_max = mos.iter().copied().fold(f64::MIN, f64::max);
    let mos_min = mos.iter().copied().fold(f64::MAX, f64::min);

    let conventional = [mos_max, mos_min, mx, std_x / 4.0, 0.0];

    let cov = pred.iter().zip(mos).map(|(p, m)| (p - mx) * (m - my)).sum::<f64>() / pred.len() as f64;
    let slope = cov / var_x;
    let range = pred.iter().copied().fold(f64::MIN, f64::max) - pred.iter().copied().fold(f64::MAX, f64::min);
    let width = 10.0 * range;
    let amp = 4.0 * width * slope;
    let near_linear = match form {
        LogisticForm::Standard => [mos_min + amp, mos_min, mx, width, my - amp / 2.0],
        // The offset cannot shift this form; start from the conventional
        // amplitude with a wide slope instead.
        LogisticForm::OffsetInDenominator => [mos_max, mos_min, mx, width, 0.0],
    };

    let best = [conventional, near_linear]
        .into_iter()
        .map(|start| levenberg_marquardt(start, form, pred, mos))
        .min_by(|a, b| a.sse.total_cmp(&b.sse))
        .expect("two starts");

    Ok(LogisticParams {
        beta: best.beta,
        form,
        converged: best.converged,
        iterations: best.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{lcc, rmse};
    use proptest::prelude::*;

    #[test]
    fn recovers_synthetic_curve() {
        let truth = [90.0, 10.0, 0.5, 0.15, 5.0];
        let x: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| eval(&truth, LogisticForm::Standard, v)).collect();
        let fit = logistic_fit(&x, &y, LogisticForm::Standard).unwrap();
        let fitted: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
        assert!(rmse(&fitted, &y).unwrap() < 1e-6, "{fit:?}");
        assert!(fit.converged);
        assert!((fit.beta[0] - fit.beta[1] - 80.0).abs() < 1e-4);
        assert!((fit.beta[2] - 0.5).abs() < 1e-6);
        assert!((fit.beta[3] - 0.15).abs() < 1e-6);
    }

    #[test]
    fn offset_in_denominator_form_recovers_its_own_curve() {
        let truth = [60.0, 10.0, 0.4, 0.2, 0.3];
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| eval(&truth, LogisticForm::OffsetInDenominator, v))
            .collect();
        let fit = logistic_fit(&x, &y, LogisticForm::OffsetInDenominator).unwrap();
        let fitted: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
        assert!(rmse(&fitted, &y).unwrap() < 1e-5, "{fit:?}");
    }

    #[test]
    fn constant_mos_gives_flat_curve() {
        let x = [0.1, 0.4, 0.2, 0.9, 0.5, 0.7];
        let y = [42.0; 6];
        let fit = logistic_fit(&x, &y, LogisticForm::Standard).unwrap();
        for &v in &x {
            assert!((fit.eval(v) - 42.0).abs() < 1e-9);
        }
    }

    #[test]
    fn preconditions() {
        assert!(logistic_fit(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], LogisticForm::Standard).is_err());
        assert!(logistic_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], LogisticForm::Standard).is_err());
        assert!(logistic_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0], LogisticForm::Standard).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = [70.0, 20.0, 0.3, 0.2, 0.5];
        for form in [LogisticForm::Standard, LogisticForm::OffsetInDenominator] {
            for &x in &[0.0, 0.25, 0.8] {
                let j = jacobian_row(&b, form, x);
                for k in 0..5 {
                    let h = 1e-6;
                    let (mut up, mut dn) = (b, b);
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (eval(&up, form, x) - eval(&dn, form, x)) / (2.0 * h);
                    assert!((fd - j[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{form:?} k={k}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fitting_never_hurts_linear_correlation(
            seedx in proptest::collection::vec(0.0f64..1.0, 12..40),
            noise in proptest::collection::vec(-1.0f64..1.0, 40),
            slope in 5.0f64..40.0,
            sigma in 0.0f64..8.0,
        ) {
            let y: Vec<f64> = seedx
                .iter()
                .zip(&noise)
                .map(|(x, n)| 30.0 + slope * x + sigma * n)
                .collect();
            let Ok(raw) = lcc(&seedx, &y) else { return Ok(()) };
            let fit = logistic_fit(&seedx, &y, LogisticForm::Standard).unwrap();
            prop_assume!(fit.converged);
            let fitted: Vec<f64> = seedx.iter().map(|&x| fit.eval(x)).collect();
            let after = lcc(&fitted, &y).unwrap();
            prop_assert!(after >= raw - 1e-9, "raw {raw}, fitted {after}");
        }
    }
}
