//! Repeated k-fold cross-validation, paired significance and parameter sweeps.
//!
//! Fold partitions depend only on the seed, the sample count and the fold
//! count, so reports of different learners on the same data are paired
//! fold-by-fold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::cart::fit_tree;
use crate::concepts::ViewMatrix;
use crate::data::Trait;
use crate::vgbdt::{train_rows, BoostingConfig, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("{samples} samples cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("need at least 2 folds and 1 repeat")]
    BadFolds,
    #[error("user `{0}` has no label")]
    MissingLabel(String),
    #[error("view {view} out of range (have {views})")]
    BadView { view: usize, views: usize },
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Shuffles `0..n` and deals positions round-robin into `folds` folds.
pub fn fold_partition(n: usize, folds: usize, seed: u64, repeat: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, &format!("folds/{repeat}")));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    out
}

/// Rows in K·d layout with labels, the common input of every learner.
#[derive(Debug, Clone)]
pub struct CvData<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<f64>,
    pub views: Vec<String>,
    pub feature_dim: usize,
}

impl<'a> CvData<'a> {
    pub fn from_views(views: &'a ViewMatrix, labels: &BTreeMap<String, f64>) -> Result<Self, EvalError> {
        let (rows, labels) = views.labeled_rows(labels).map_err(EvalError::MissingLabel)?;
        Ok(Self {
            rows,
            labels,
            views: views.concept_order.clone(),
            feature_dim: views.feature_dim,
        })
    }

    fn block(&self, row: &'a [f64], view: usize) -> &'a [f64] {
        &row[view * self.feature_dim..(view + 1) * self.feature_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learner {
    /// Predicts the training-label mean.
    Mean,
    Vgbdt(BoostingConfig),
    /// A single regression tree on one view's block, fit to the labels.
    SingleViewCart {
        view: usize,
        max_leaves: usize,
        min_leaf: usize,
    },
}

impl Learner {
    pub fn describe(&self) -> String {
        match self {
            Learner::Mean => "mean".into(),
            Learner::Vgbdt(c) => format!(
                "vgbdt(M={},J={},shrinkage={},min_leaf={},distinct_views={})",
                c.rounds, c.max_leaves, c.shrinkage, c.min_leaf, c.distinct_views
            ),
            Learner::SingleViewCart { view, max_leaves, min_leaf } => {
                format!("cart(view={view},J={max_leaves},min_leaf={min_leaf})")
            }
        }
    }

    fn fit_predict(&self, data: &CvData, train: &[usize], test: &[usize], trait_: Trait) -> Result<Vec<f64>, EvalError> {
        let ys: Vec<f64> = train.iter().map(|&i| data.labels[i]).collect();
        match *self {
            Learner::Mean => {
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                Ok(vec![mean; test.len()])
            }
            Learner::Vgbdt(cfg) => {
                let rows: Vec<&[f64]> = train.iter().map(|&i| data.rows[i]).collect();
                let (model, _) = train_rows(&rows, &ys, &data.views, data.feature_dim, &cfg, trait_)?;
                test.iter()
                    .map(|&i| model.predict(data.rows[i]).map_err(EvalError::from))
                    .collect()
            }
            Learner::SingleViewCart { view, max_leaves, min_leaf } => {
                if view >= data.views.len() {
                    return Err(EvalError::BadView {
                        view,
                        views: data.views.len(),
                    });
                }
                let rows: Vec<&[f64]> = train.iter().map(|&i| data.block(data.rows[i], view)).collect();
                let tree = fit_tree(&rows, &ys, max_leaves, min_leaf).map_err(ModelError::from)?;
                Ok(test.iter().map(|&i| tree.predict(data.block(data.rows[i], view))).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
///
/// Zero-variance differences give `p = 1` when their mean is zero and `p = 0`
/// otherwise.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<PairedTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::Empty);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTest {
            t_statistic: t,
            degrees_of_freedom: df,
            p_value: p,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(PairedTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub trait_: Trait,
    pub learner: String,
    pub folds: usize,
    pub repeats: usize,
    /// Held-out RMSE per (repeat, fold), repeat-major.
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub baseline: Option<String>,
    pub test: Option<PairedTest>,
}

impl CvReport {
    pub fn p_value(&self) -> Option<f64> {
        self.test.map(|t| t.p_value)
    }

    /// Attaches a paired test against `baseline`'s fold RMSEs.
    pub fn compare_to(&mut self, baseline: &CvReport) -> Result<(), EvalError> {
        self.test = Some(paired_significance(&self.fold_rmse, &baseline.fold_rmse)?);
        self.baseline = Some(baseline.learner.clone());
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn cross_validate(
    data: &CvData,
    learner: &Learner,
    folds: usize,
    repeats: usize,
    seed: u64,
    trait_: Trait,
) -> Result<CvReport, EvalError> {
    if folds < 2 || repeats == 0 {
        return Err(EvalError::BadFolds);
    }
    let n = data.rows.len();
    if n < folds {
        return Err(EvalError::TooFewSamples { samples: n, folds });
    }
    let mut fold_rmse = Vec::with_capacity(folds * repeats);
    for repeat in 0..repeats {
        let partition = fold_partition(n, folds, seed, repeat);
        for test in &partition {
            let train: Vec<usize> = partition
                .iter()
                .filter(|p| !std::ptr::eq(*p, test))
                .flatten()
                .copied()
                .collect();
            let pred = learner.fit_predict(data, &train, test, trait_)?;
            let truth: Vec<f64> = test.iter().map(|&i| data.labels[i]).collect();
            fold_rmse.push(rmse(&pred, &truth)?);
        }
    }
    let (mean_rmse, std_rmse) = mean_std(&fold_rmse);
    Ok(CvReport {
        trait_,
        learner: learner.describe(),
        folds,
        repeats,
        fold_rmse,
        mean_rmse,
        std_rmse,
        baseline: None,
        test: None,
    })
}

/// Cross-validates a single-view tree on every view and returns the view
/// with the lowest mean RMSE (lowest index on ties) with its report.
pub fn best_single_view(
    data: &CvData,
    max_leaves: usize,
    min_leaf: usize,
    folds: usize,
    repeats: usize,
    seed: u64,
    trait_: Trait,
) -> Result<(usize, CvReport), EvalError> {
    let mut best: Option<(usize, CvReport)> = None;
    for view in 0..data.views.len() {
        let learner = Learner::SingleViewCart {
            view,
            max_leaves,
            min_leaf,
        };
        let report = cross_validate(data, &learner, folds, repeats, seed, trait_)?;
        if best.as_ref().is_none_or(|(_, b)| report.mean_rmse < b.mean_rmse) {
            best = Some((view, report));
        }
    }
    best.ok_or(EvalError::Empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Number of boosting rounds (questions).
    Rounds,
    /// Leaf budget (options per question).
    Leaves,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::Rounds => "M",
            SweepParam::Leaves => "J",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: usize,
    pub report: CvReport,
}

/// Cross-validates `base` with one parameter varied; every row is compared
/// against the mean predictor on the same folds.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    data: &CvData,
    base: &BoostingConfig,
    param: SweepParam,
    values: &[usize],
    folds: usize,
    repeats: usize,
    seed: u64,
    trait_: Trait,
) -> Result<Vec<SweepRow>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    let baseline = cross_validate(data, &Learner::Mean, folds, repeats, seed, trait_)?;
    values
        .iter()
        .map(|&value| {
            let mut cfg = *base;
            match param {
                SweepParam::Rounds => cfg.rounds = value,
                SweepParam::Leaves => cfg.max_leaves = value,
            }
            let mut report = cross_validate(data, &Learner::Vgbdt(cfg), folds, repeats, seed, trait_)?;
            report.compare_to(&baseline)?;
            Ok(SweepRow { param, value, report })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `param,value,trait,mean_rmse,std_rmse,p_value`
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,trait,mean_rmse,std_rmse,p_value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.param.label(),
            r.value,
            r.report.trait_,
            r.report.mean_rmse,
            r.report.std_rmse,
            fmt_opt(r.report.p_value())
        );
    }
    out
}

/// One row per (repeat, fold): `trait,learner,repeat,fold,rmse`
pub fn fold_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("trait,learner,repeat,fold,rmse\n");
    for r in reports {
        for (i, v) in r.fold_rmse.iter().enumerate() {
            let _ = writeln!(out, "{},\"{}\",{},{},{}", r.trait_, r.learner, i / r.folds, i % r.folds, v);
        }
    }
    out
}

/// `trait,learner,mean_rmse,std_rmse,baseline,t_statistic,p_value`
pub fn summary_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("trait,learner,mean_rmse,std_rmse,baseline,t_statistic,p_value\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},\"{}\",{},{},\"{}\",{},{}",
            r.trait_,
            r.learner,
            r.mean_rmse,
            r.std_rmse,
            r.baseline.clone().unwrap_or_default(),
            fmt_opt(r.test.map(|t| t.t_statistic)),
            fmt_opt(r.p_value())
        );
    }
    out
}

/// Line chart of mean RMSE against the swept value, one line per trait.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for r in rows {
        x_min = x_min.min(r.value as f64);
        x_max = x_max.max(r.value as f64);
        y_min = y_min.min(r.report.mean_rmse);
        y_max = y_max.max(r.report.mean_rmse);
    }
    let sx = |x: f64| PAD + (x - x_min) / (x_max - x_min).max(1e-9) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_min) / (y_max - y_min).max(1e-9) * (H - 2.0 * PAD);
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    let param = rows.first().map_or("", |r| r.param.label());
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{param} vs mean RMSE ({y_min:.3} to {y_max:.3})</text>",
        PAD,
        PAD / 2.0
    );
    for (c, t) in Trait::ALL.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.report.trait_ == *t)
            .map(|r| format!("{:.1},{:.1}", sx(r.value as f64), sy(r.report.mean_rmse)))
            .collect();
        if points.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"><title>{t}</title></polyline>",
            colors[c],
            points.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}
