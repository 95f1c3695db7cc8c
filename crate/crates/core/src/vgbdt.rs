//! View-restricted gradient boosting.
//!
//! Each boosting round fits one regression tree per candidate view (feature
//! block) to the current residuals and keeps the view whose tree leaves the
//! least squared error. The ensemble predicts
//! `F0 + shrinkage * sum_m tree_m(block_{view_m}(x))`.
//!
//! Leaf values are stored unscaled; shrinkage is applied once to the sum of
//! tree outputs. Questionnaire scoring uses the same expression, so scores
//! computed from leaf choices match `predict` bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cart::{fit_tree_presorted, CartError, Presorted, RegressionTree, TreeJson};
use crate::concepts::ViewMatrix;
use crate::data::Trait;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no labels to train on")]
    EmptyLabels,
    #[error("user `{0}` has no label")]
    MissingLabel(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{rounds} rounds requested with distinct views but only {views} views exist")]
    TooManyRounds { rounds: usize, views: usize },
    #[error("invalid boosting config: {0}")]
    InvalidConfig(String),
    #[error("input has {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Tree(#[from] CartError),
    #[error("unsupported model version {found} (expected {MODEL_VERSION})")]
    Version { found: u64 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostingConfig {
    /// Boosting rounds; one questionnaire question each.
    pub rounds: usize,
    /// Leaf budget per tree; one answer option each.
    pub max_leaves: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Exclude views already chosen by earlier rounds.
    pub distinct_views: bool,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            max_leaves: 5,
            shrinkage: 0.5,
            min_leaf: 2,
            distinct_views: false,
        }
    }
}

impl BoostingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "shrinkage {} outside (0, 1]",
                self.shrinkage
            )));
        }
        if self.max_leaves == 0 {
            return Err(ModelError::InvalidConfig("max_leaves must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ModelError::InvalidConfig("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub view: usize,
    pub concept: String,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgbdtModel {
    pub trait_: Trait,
    pub f0: f64,
    pub shrinkage: f64,
    pub feature_dim: usize,
    /// Concept name of each view, in view order.
    pub views: Vec<String>,
    pub rounds: Vec<Round>,
}

/// Per-round bookkeeping from training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// Training SSE of the ensemble after `m` rounds, for `m = 0..=M`.
    pub sse: Vec<f64>,
    /// Ensemble output on each training row after the final round.
    pub fitted: Vec<f64>,
}

/// Trains on rows already in K·d layout; `labels[i]` belongs to `rows[i]`.
pub fn train_rows(
    rows: &[&[f64]],
    labels: &[f64],
    views: &[String],
    feature_dim: usize,
    cfg: &BoostingConfig,
    trait_: Trait,
) -> Result<(VgbdtModel, TrainingTrace), ModelError> {
    cfg.validate()?;
    let n = rows.len();
    if n == 0 {
        return Err(ModelError::EmptyLabels);
    }
    if n < 2 {
        return Err(ModelError::TooFewSamples(n));
    }
    if labels.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let k = views.len();
    let width = k * feature_dim;
    if let Some(row) = rows.iter().find(|r| r.len() != width) {
        return Err(ModelError::DimensionMismatch {
            expected: width,
            found: row.len(),
        });
    }
    if cfg.distinct_views && cfg.rounds > k {
        return Err(ModelError::TooManyRounds {
            rounds: cfg.rounds,
            views: k,
        });
    }

    let f0 = labels.iter().sum::<f64>() / n as f64;
    // Running sum of unscaled tree outputs per row.
    let mut raw = vec![0.0; n];
    let fitted = |raw: &[f64]| -> Vec<f64> { raw.iter().map(|s| f0 + cfg.shrinkage * s).collect() };
    let sse = |fit: &[f64]| -> f64 { labels.iter().zip(fit).map(|(p, f)| (p - f) * (p - f)).sum() };
    let mut trace = TrainingTrace {
        sse: vec![sse(&fitted(&raw))],
        fitted: Vec::new(),
    };

    let blocks: Vec<Vec<&[f64]>> = (0..k)
        .map(|view| {
            rows.iter()
                .map(|r| &r[view * feature_dim..(view + 1) * feature_dim])
                .collect()
        })
        .collect();
    let presorted: Vec<Presorted> = blocks.iter().map(|b| Presorted::new(b)).collect();

    let mut used = vec![false; k];
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let current = fitted(&raw);
        let residuals: Vec<f64> = labels.iter().zip(&current).map(|(p, f)| p - f).collect();
        let mut best: Option<(usize, RegressionTree)> = None;
        for view in 0..k {
            if cfg.distinct_views && used[view] {
                continue;
            }
            let tree = fit_tree_presorted(&blocks[view], &residuals, &presorted[view], cfg.max_leaves, cfg.min_leaf)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| tree.training_sse() < b.training_sse())
            {
                best = Some((view, tree));
            }
        }
        let Some((view, tree)) = best else {
            return Err(ModelError::InvalidConfig("no candidate views".into()));
        };
        for (s, row) in raw.iter_mut().zip(rows) {
            *s += tree.predict(&row[view * feature_dim..(view + 1) * feature_dim]);
        }
        used[view] = true;
        rounds.push(Round {
            view,
            concept: views[view].clone(),
            tree,
        });
        trace.sse.push(sse(&fitted(&raw)));
    }
    trace.fitted = fitted(&raw);

    Ok((
        VgbdtModel {
            trait_,
            f0,
            shrinkage: cfg.shrinkage,
            feature_dim,
            views: views.to_vec(),
            rounds,
        },
        trace,
    ))
}

/// Trains one trait's ensemble on a view matrix. Rows are taken in user-id
/// order; every user must have a label.
pub fn train(
    views: &ViewMatrix,
    labels: &BTreeMap<String, f64>,
    cfg: &BoostingConfig,
    trait_: Trait,
) -> Result<VgbdtModel, ModelError> {
    train_traced(views, labels, cfg, trait_).map(|(m, _)| m)
}

pub fn train_traced(
    views: &ViewMatrix,
    labels: &BTreeMap<String, f64>,
    cfg: &BoostingConfig,
    trait_: Trait,
) -> Result<(VgbdtModel, TrainingTrace), ModelError> {
    if labels.is_empty() || views.rows.is_empty() {
        return Err(ModelError::EmptyLabels);
    }
    let (rows, ys) = views.labeled_rows(labels).map_err(ModelError::MissingLabel)?;
    train_rows(&rows, &ys, &views.concept_order, views.feature_dim, cfg, trait_)
}

impl VgbdtModel {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn input_len(&self) -> usize {
        self.num_views() * self.feature_dim
    }

    fn check(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn block<'a>(&self, x: &'a [f64], view: usize) -> &'a [f64] {
        &x[view * self.feature_dim..(view + 1) * self.feature_dim]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check(x)?;
        let mut sum = 0.0;
        for round in &self.rounds {
            sum += round.tree.predict(self.block(x, round.view));
        }
        Ok(self.f0 + self.shrinkage * sum)
    }

    /// Leaf index reached in each round's tree.
    pub fn route(&self, x: &[f64]) -> Result<Vec<usize>, ModelError> {
        self.check(x)?;
        Ok(self
            .rounds
            .iter()
            .map(|r| r.tree.assign_leaf(self.block(x, r.view)))
            .collect())
    }

    /// Score from one chosen leaf per round, in round order.
    pub fn score_leaves(&self, leaves: &[usize]) -> Option<f64> {
        if leaves.len() != self.rounds.len() {
            return None;
        }
        let mut sum = 0.0;
        for (round, &leaf) in self.rounds.iter().zip(leaves) {
            sum += round.tree.leaf_value(leaf)?;
        }
        Some(self.f0 + self.shrinkage * sum)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_VERSION,
            trait_: self.trait_,
            f0: self.f0,
            shrinkage: self.shrinkage,
            feature_dim: self.feature_dim,
            views: self.views.clone(),
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundFile {
                    view: r.view,
                    concept: r.concept.clone(),
                    tree: r.tree.to_json(),
                    training_sse: Some(r.tree.training_sse()),
                })
                .collect(),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_file()).expect("model serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Hex SHA-256 of the serialized model.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_bytes()))
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => return Err(ModelError::Version { found: v }),
            None => return Err(ModelError::Corrupt("missing version".into())),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if !file.f0.is_finite() || !(file.shrinkage > 0.0 && file.shrinkage <= 1.0) {
            return Err(ModelError::Corrupt("invalid F0 or shrinkage".into()));
        }
        let mut rounds = Vec::with_capacity(file.rounds.len());
        for (m, r) in file.rounds.into_iter().enumerate() {
            if r.view >= file.views.len() || file.views[r.view] != r.concept {
                return Err(ModelError::Corrupt(format!(
                    "round {} refers to view {} ({}) inconsistently",
                    m + 1,
                    r.view,
                    r.concept
                )));
            }
            let tree = RegressionTree::from_json(&r.tree, r.training_sse.unwrap_or(f64::NAN))?;
            if tree.max_feature().is_some_and(|f| f >= file.feature_dim) {
                return Err(ModelError::Corrupt(format!("round {} reads past the view width", m + 1)));
            }
            rounds.push(Round {
                view: r.view,
                concept: r.concept,
                tree,
            });
        }
        Ok(Self {
            trait_: file.trait_,
            f0: file.f0,
            shrinkage: file.shrinkage,
            feature_dim: file.feature_dim,
            views: file.views,
            rounds,
        })
    }
}

pub fn save_model(model: &VgbdtModel, path: &Path) -> Result<(), ModelError> {
    crate::io::write_atomic(path, &model.to_json_bytes()).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<VgbdtModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    VgbdtModel::from_json_bytes(&bytes)
}

/// `model.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub shrinkage: f64,
    pub feature_dim: usize,
    pub views: Vec<String>,
    pub rounds: Vec<RoundFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFile {
    pub view: usize,
    pub concept: String,
    pub tree: TreeJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_sse: Option<f64>,
}
