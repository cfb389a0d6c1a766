//! Correlation and error metrics between predicted quality and subjective
//! scores, plus the median / standard-deviation aggregation used to report
//! repeated train/test trials.

mod logistic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use logistic::{logistic_fit, LogisticForm, LogisticParams};

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} paired values, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in metric input".into()));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
pub fn srocc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt, 3)?;
    pearson_unchecked(&average_ranks(pred), &average_ranks(gt))
}

/// Pearson linear correlation coefficient.
pub fn lcc(fitted: &[f64], mos: &[f64]) -> Result<f64> {
    check_pair(fitted, mos, 3)?;
    pearson_unchecked(fitted, mos)
}

pub fn rmse(fitted: &[f64], mos: &[f64]) -> Result<f64> {
    check_pair(fitted, mos, 1)?;
    let mse = fitted
        .iter()
        .zip(mos)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / fitted.len() as f64;
    Ok(mse.sqrt())
}

/// Median with the mean-of-middle-two convention for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sample_std(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("std of an empty list".into()));
    }
    if values.len() == 1 {
        return Ok(0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Metrics of one train/test trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial_id: usize,
    pub srocc: f64,
    pub lcc: f64,
    pub rmse: f64,
    pub logistic: LogisticParams,
}

/// Scores `pred` against `mos`: SROCC on the raw predictions, LCC and RMSE
/// after mapping predictions through a fitted logistic.
pub fn score_trial(trial_id: usize, pred: &[f64], mos: &[f64], form: LogisticForm) -> Result<TrialMetrics> {
    let srocc = srocc(pred, mos)?;
    let logistic = logistic_fit(pred, mos, form)?;
    let fitted: Vec<f64> = pred.iter().map(|&x| logistic.eval(x)).collect();
    Ok(TrialMetrics {
        trial_id,
        srocc,
        lcc: lcc(&fitted, mos)?,
        rmse: rmse(&fitted, mos)?,
        logistic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub srocc: f64,
    pub lcc: f64,
    pub rmse: f64,
}

/// Per-metric medians and sample standard deviations over trials.
pub fn aggregate(per_trial: &[TrialMetrics]) -> Result<(Summary, Summary)> {
    if per_trial.is_empty() {
        return Err(Error::InvalidArgument("no trials to aggregate".into()));
    }
    let col = |f: fn(&TrialMetrics) -> f64| per_trial.iter().map(f).collect::<Vec<_>>();
    let (s, l, r) = (col(|t| t.srocc), col(|t| t.lcc), col(|t| t.rmse));
    Ok((
        Summary {
            srocc: median(&s)?,
            lcc: median(&l)?,
            rmse: median(&r)?,
        },
        Summary {
            srocc: sample_std(&s)?,
            lcc: sample_std(&l)?,
            rmse: sample_std(&r)?,
        },
    ))
}

/// Result of a repeated-trial evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_trial: Vec<TrialMetrics>,
    pub median_srocc: f64,
    pub median_lcc: f64,
    pub median_rmse: f64,
    pub std_srocc: f64,
    pub std_lcc: f64,
    pub std_rmse: f64,
}

impl MetricsReport {
    pub fn from_trials(per_trial: Vec<TrialMetrics>) -> Result<Self> {
        let (med, std) = aggregate(&per_trial)?;
        Ok(MetricsReport {
            per_trial,
            median_srocc: med.srocc,
            median_lcc: med.lcc,
            median_rmse: med.rmse,
            std_srocc: std.srocc,
            std_lcc: std.lcc,
            std_rmse: std.rmse,
        })
    }
}
