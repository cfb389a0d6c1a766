//! Quality regression on frozen features: content-disjoint splits,
//! cross-validated linear SVR, the repeated-trial protocol, and the
//! full-reference difference features.

mod svr;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureBank, VideoFeature};
use crate::metrics::{score_trial, LogisticForm, MetricsReport, TrialMetrics};
use crate::probe::Standardizer;
use crate::seed;

pub use svr::{fit_svr, LinearSvr, SvrSolution};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Dark,
    Bright,
}

/// Subjective score of one video. FR labels name the pristine reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLabel {
    pub video_id: String,
    pub content_id: String,
    pub score: f64,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_id: Option<String>,
}

/// Reads `video_id,content_id,score,condition[,reference_id]` rows.
pub fn read_labels(path: &Path) -> Result<Vec<QualityLabel>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Serialization(format!("{}: {e}", path.display())),
        })?;
    let mut labels = Vec::new();
    for row in reader.deserialize::<QualityLabel>() {
        let mut l = row.map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        if l.reference_id.as_deref() == Some("") {
            l.reference_id = None;
        }
        labels.push(l);
    }
    validate_labels(&labels)?;
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[QualityLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["video_id", "content_id", "score", "condition", "reference_id"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for l in labels {
        let cond = match l.condition {
            Condition::Dark => "dark",
            Condition::Bright => "bright",
        };
        w.write_record([
            l.video_id.as_str(),
            l.content_id.as_str(),
            &l.score.to_string(),
            cond,
            l.reference_id.as_deref().unwrap_or(""),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn validate_labels(labels: &[QualityLabel]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.video_id.as_str()) {
            return Err(Error::DuplicateId(l.video_id.clone()));
        }
        if !l.score.is_finite() {
            return Err(Error::InvalidArgument(format!("score of {} is not finite", l.video_id)));
        }
    }
    Ok(())
}

/// One train/test partition; every video follows its content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub trial_id: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub content_map: BTreeMap<String, String>,
}

/// `trials` content-disjoint splits with `round(ratio * contents)` training
/// contents, clamped so both sides are nonempty.
pub fn make_splits(labels: &[QualityLabel], ratio: f64, trials: usize, seed: u64) -> Result<Vec<EvalSplit>> {
    validate_labels(labels)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let content_map: BTreeMap<String, String> =
        labels.iter().map(|l| (l.video_id.clone(), l.content_id.clone())).collect();
    let contents: Vec<&str> = labels
        .iter()
        .map(|l| l.content_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if contents.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 contents to split, found {}",
            contents.len()
        )));
    }
    let n_train = ((ratio * contents.len() as f64).round() as usize).clamp(1, contents.len() - 1);
    Ok((0..trials)
        .map(|trial_id| {
            let mut order = contents.clone();
            order.shuffle(&mut seed::stream(seed, &[trial_id as u64]));
            let train: HashSet<&str> = order[..n_train].iter().copied().collect();
            let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
            for l in labels {
                if train.contains(l.content_id.as_str()) {
                    train_ids.push(l.video_id.clone());
                } else {
                    test_ids.push(l.video_id.clone());
                }
            }
            EvalSplit {
                trial_id,
                train_ids,
                test_ids,
                content_map: content_map.clone(),
            }
        })
        .collect())
}

/// Hyperparameter search space of the regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorSpec {
    pub c_grid: Vec<f64>,
    /// Tube widths as multiples of the training-label standard deviation.
    pub epsilon_grid: Vec<f64>,
    pub folds: usize,
    pub standardize: bool,
    /// Solver stopping gap relative to the label standard deviation.
    pub tolerance: f64,
    pub logistic: LogisticForm,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            c_grid: (-3..=3).map(|e| 10f64.powi(e)).collect(),
            epsilon_grid: vec![0.1, 1.0],
            folds: 5,
            standardize: true,
            tolerance: 1e-6,
            logistic: LogisticForm::Standard,
        }
    }
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.epsilon_grid.is_empty() {
            return Err(Error::Config("regressor grids must be nonempty".into()));
        }
        if self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("C values must be positive".into()));
        }
        if self.epsilon_grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::Config("epsilon values must be nonnegative".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Grid in tie-break order: smaller C first, then smaller epsilon.
    fn points(&self) -> Vec<(f64, f64)> {
        let mut cs = self.c_grid.clone();
        let mut es = self.epsilon_grid.clone();
        cs.sort_by(f64::total_cmp);
        es.sort_by(f64::total_cmp);
        cs.iter().flat_map(|&c| es.iter().map(move |&e| (c, e))).collect()
    }
}

/// Standardization plus linear SVR, or a constant for degenerate labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub dim: usize,
    pub standardizer: Option<Standardizer>,
    pub svr: Option<LinearSvr>,
    pub constant: Option<f64>,
    /// Selected `(C, epsilon fraction)`.
    pub selected: (f64, f64),
    pub cv_rmse: f64,
}

impl QualityModel {
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        features
            .iter()
            .map(|f| {
                if f.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: f.len(),
                    });
                }
                if let Some(c) = self.constant {
                    return Ok(c);
                }
                let svr = self.svr.as_ref().expect("fitted model holds an svr or a constant");
                Ok(match &self.standardizer {
                    Some(s) => svr.predict_one(&s.apply(f)),
                    None => svr.predict_one(f),
                })
            })
            .collect()
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn fit_point(xs: &[Vec<f64>], ys: &[f64], spec: &RegressorSpec, c: f64, eps_frac: f64) -> Result<QualityModel> {
    let sd = std_dev(ys);
    let dim = xs[0].len();
    if sd == 0.0 {
        return Ok(QualityModel {
            dim,
            standardizer: None,
            svr: None,
            constant: Some(ys[0]),
            selected: (c, eps_frac),
            cv_rmse: 0.0,
        });
    }
    let standardizer = if spec.standardize { Some(Standardizer::fit(xs)?) } else { None };
    let zs: Vec<Vec<f64>> = match &standardizer {
        Some(s) => xs.iter().map(|x| s.apply(x)).collect(),
        None => xs.to_vec(),
    };
    let sol = fit_svr(&zs, ys, c, eps_frac * sd, spec.tolerance * sd)?;
    Ok(QualityModel {
        dim,
        standardizer,
        svr: Some(sol.model),
        constant: None,
        selected: (c, eps_frac),
        cv_rmse: f64::NAN,
    })
}

/// Grid search by content-grouped k-fold cross-validation on the training
/// set, then a refit on all of it. Constant labels give a constant model.
pub fn cv_fit(
    xs: &[Vec<f64>],
    ys: &[f64],
    groups: &[String],
    spec: &RegressorSpec,
    seed: u64,
) -> Result<(QualityModel, Vec<String>)> {
    spec.validate()?;
    let mut warnings = Vec::new();
    if xs.len() != ys.len() || xs.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len().min(groups.len()),
        });
    }
    if xs.len() < spec.folds {
        return Err(Error::InvalidArgument(format!(
            "{} training videos cannot fill {} folds",
            xs.len(),
            spec.folds
        )));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training data".into()));
    }
    let points = spec.points();
    if std_dev(ys) == 0.0 {
        warnings.push("training labels are constant; fitted a constant predictor".to_string());
        let (c, e) = points[0];
        return Ok((fit_point(xs, ys, spec, c, e)?, warnings));
    }

    let mut contents: Vec<&str> = groups.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    contents.shuffle(&mut seed::stream(seed, &[]));
    let folds = spec.folds.min(contents.len());
    if folds < spec.folds {
        warnings.push(format!(
            "only {} training contents; using {folds} folds instead of {}",
            contents.len(),
            spec.folds
        ));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 training contents".into()));
    }
    let fold_of: HashMap<&str, usize> = contents.iter().enumerate().map(|(i, c)| (*c, i % folds)).collect();
    let assignment: Vec<usize> = groups.iter().map(|g| fold_of[g.as_str()]).collect();

    let resolution = spec.tolerance * std_dev(ys);
    let mut best: Option<((f64, f64), f64)> = None;
    for &(c, e) in &points {
        let mut sq = 0.0;
        for f in 0..folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..xs.len() {
                if assignment[i] == f {
                    vx.push(xs[i].clone());
                    vy.push(ys[i]);
                } else {
                    tx.push(xs[i].clone());
                    ty.push(ys[i]);
                }
            }
            let m = fit_point(&tx, &ty, spec, c, e)?;
            sq += m.predict(&vx)?.iter().zip(&vy).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
        }
        let rmse = (sq / xs.len() as f64).sqrt();
        // gains within solver precision keep the earlier, smaller grid point
        if best.is_none_or(|(_, r)| rmse < r - resolution) {
            best = Some(((c, e), rmse));
        }
    }
    let ((c, e), rmse) = best.expect("grid is nonempty");
    let mut model = fit_point(xs, ys, spec, c, e)?;
    model.cv_rmse = rmse;
    Ok((model, warnings))
}

/// `|ref - dist|` elementwise.
pub fn fr_feature(reference: &VideoFeature, distorted: &VideoFeature) -> Result<Vec<f32>> {
    if reference.vector.len() != distorted.vector.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.vector.len(),
            found: distorted.vector.len(),
        });
    }
    if reference.checkpoint_hash != distorted.checkpoint_hash {
        return Err(Error::InvalidArgument(format!(
            "{} and {} were extracted with different checkpoints",
            reference.video_id, distorted.video_id
        )));
    }
    Ok(reference.vector.iter().zip(&distorted.vector).map(|(a, b)| (a - b).abs()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nr,
    Fr,
}

/// Regression input for every labeled video.
pub fn design_rows(bank: &FeatureBank, labels: &[QualityLabel], mode: Mode) -> Result<HashMap<String, Vec<f64>>> {
    let index = bank.index();
    let get = |id: &str| index.get(id).copied().ok_or_else(|| Error::MissingFeatures(id.to_string()));
    labels
        .iter()
        .map(|l| {
            let dist = get(&l.video_id)?;
            let row: Vec<f64> = match mode {
                Mode::Nr => dist.vector.iter().map(|&v| v as f64).collect(),
                Mode::Fr => {
                    let ref_id = l.reference_id.as_deref().ok_or_else(|| {
                        Error::InvalidArgument(format!("FR label {} names no reference", l.video_id))
                    })?;
                    fr_feature(get(ref_id)?, dist)?.into_iter().map(|v| v as f64).collect()
                }
            };
            Ok((l.video_id.clone(), row))
        })
        .collect()
}

/// Outcome of one trial; failed trials carry the reason instead of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    /// Absent when the trial failed before model selection.
    pub selected_c: Option<f64>,
    pub selected_epsilon: Option<f64>,
    pub test_ids: Vec<String>,
    pub predictions: Vec<f64>,
    pub metrics: Option<TrialMetrics>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

/// Everything `evaluate` writes, minus run-specific timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub trials_requested: usize,
    pub spec: RegressorSpec,
    pub config_hash: String,
    pub summary: Option<MetricsReport>,
    pub excluded_trials: Vec<usize>,
    pub trials: Vec<TrialRecord>,
}

impl EvaluationReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: EvaluationReport = serde_json::from_str(&text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Version {
                found: r.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(r)
    }
}

fn config_hash(spec: &RegressorSpec, mode: Mode, trials: usize, seed: u64) -> Result<String> {
    let text = serde_json::to_string(&(spec, mode, trials, seed))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn run_trial(
    split: &EvalSplit,
    rows: &HashMap<String, Vec<f64>>,
    scores: &HashMap<&str, f64>,
    spec: &RegressorSpec,
    seed: u64,
) -> Result<TrialRecord> {
    let test: HashSet<&str> = split.test_ids.iter().map(String::as_str).collect();
    // every row the fit sees is recorded and audited against the test set
    let mut touched: Vec<&str> = Vec::new();
    let (mut xs, mut ys, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for id in &split.train_ids {
        touched.push(id);
        xs.push(rows[id].clone());
        ys.push(scores[id.as_str()]);
        groups.push(split.content_map[id].clone());
    }
    if let Some(leak) = touched.iter().find(|id| test.contains(*id)) {
        return Err(Error::InvalidArgument(format!("test video {leak} reached the training set")));
    }
    let (model, warnings) = cv_fit(&xs, &ys, &groups, spec, seed)?;
    let tx: Vec<Vec<f64>> = split.test_ids.iter().map(|id| rows[id].clone()).collect();
    let ty: Vec<f64> = split.test_ids.iter().map(|id| scores[id.as_str()]).collect();
    let predictions = model.predict(&tx)?;
    let (metrics, error) = match score_trial(split.trial_id, &predictions, &ty, spec.logistic) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(TrialRecord {
        trial_id: split.trial_id,
        selected_c: Some(model.selected.0),
        selected_epsilon: Some(model.selected.1),
        test_ids: split.test_ids.clone(),
        predictions,
        metrics,
        error,
        warnings,
    })
}

/// Repeated content-disjoint train/test evaluation. Trials that fail are
/// excluded from the summary with a warning; the summary is absent when
/// none succeed.
pub fn run_protocol(
    bank: &FeatureBank,
    labels: &[QualityLabel],
    spec: &RegressorSpec,
    trials: usize,
    mode: Mode,
    seed: u64,
) -> Result<EvaluationReport> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let rows = design_rows(bank, labels, mode)?;
    let scores: HashMap<&str, f64> = labels.iter().map(|l| (l.video_id.as_str(), l.score)).collect();
    let splits = make_splits(labels, 0.8, trials, seed)?;
    let records: Vec<TrialRecord> = splits
        .par_iter()
        .map(|s| {
            run_trial(s, &rows, &scores, spec, seed::derive_seed(seed, &[1, s.trial_id as u64])).unwrap_or_else(|e| {
                TrialRecord {
                    trial_id: s.trial_id,
                    selected_c: None,
                    selected_epsilon: None,
                    test_ids: s.test_ids.clone(),
                    predictions: Vec::new(),
                    metrics: None,
                    error: Some(e.to_string()),
                    warnings: Vec::new(),
                }
            })
        })
        .collect();
    let mut excluded = Vec::new();
    let mut good = Vec::new();
    for r in &records {
        match (&r.metrics, &r.error) {
            (Some(m), _) => good.push(m.clone()),
            (None, err) => {
                log::warn!("trial {} excluded: {}", r.trial_id, err.as_deref().unwrap_or("unknown failure"));
                excluded.push(r.trial_id);
            }
        }
    }
    let summary = if good.is_empty() { None } else { Some(MetricsReport::from_trials(good)?) };
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode,
        seed,
        trials_requested: trials,
        spec: spec.clone(),
        config_hash: config_hash(spec, mode, trials, seed)?,
        summary,
        excluded_trials: excluded,
        trials: records,
    })
}

/// A regressor fit on every labeled video, for scoring new videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityHead {
    pub mode: Mode,
    pub checkpoint_hash: String,
    pub model: QualityModel,
    pub warnings: Vec<String>,
}

impl QualityHead {
    pub fn fit(bank: &FeatureBank, labels: &[QualityLabel], spec: &RegressorSpec, mode: Mode, seed: u64) -> Result<Self> {
        let rows = design_rows(bank, labels, mode)?;
        let xs: Vec<Vec<f64>> = labels.iter().map(|l| rows[&l.video_id].clone()).collect();
        let ys: Vec<f64> = labels.iter().map(|l| l.score).collect();
        let groups: Vec<String> = labels.iter().map(|l| l.content_id.clone()).collect();
        let (model, warnings) = cv_fit(&xs, &ys, &groups, spec, seed)?;
        let hashes: BTreeSet<&str> = bank.records().iter().map(|r| r.checkpoint_hash.as_str()).collect();
        Ok(QualityHead {
            mode,
            checkpoint_hash: hashes.into_iter().collect::<Vec<_>>().join(","),
            model,
            warnings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn predict(&self, feature: &[f32]) -> Result<f64> {
        let row: Vec<f64> = feature.iter().map(|&v| v as f64).collect();
        Ok(self.model.predict(&[row])?[0])
    }
}
