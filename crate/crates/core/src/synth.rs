//! Synthetic datasets with planted step-function signal.
//!
//! Every user favorites exactly one image per concept, so a user's view block
//! equals that image's features. On each informative view, feature `t` of the
//! block carries a level `c` in `0..L` for trait `t`, encoded as a value in
//! `[c/L, (c+1)/L)`, and the trait label gains `amplitude * (2c/(L-1) - 1)`:
//! a staircase from `-amplitude` to `+amplitude`. All other features and
//! views are uniform noise. Labels get Gaussian noise and are clamped to
//! `[-4, 4]`.
//!
//! With two levels the patterns are assigned round-robin over all `2^V`
//! combinations and then shuffled, so when the user count is a multiple of
//! `2^V` the design is fully balanced and the per-view components are exactly
//! orthogonal. With more levels each view's levels are balanced and shuffled
//! independently.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::concepts::{build_views, ConceptHierarchy, ViewAgg, ViewMatrix};
use crate::data::{Dataset, ImageRecord, Trait, UserRecord, TRAIT_MAX, TRAIT_MIN};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_users: usize,
    pub num_views: usize,
    pub feature_dim: usize,
    pub informative_views: Vec<usize>,
    /// Steps per planted staircase; at least 2.
    pub levels: usize,
    /// One amplitude per informative view.
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    /// Unfavored images added to each concept on top of the users' favorites.
    pub pool_images_per_concept: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let informative_views = vec![3, 10, 17, 24, 31];
        Self {
            seed: 42,
            num_users: 104,
            num_views: 36,
            feature_dim: 16,
            levels: 2,
            amplitudes: vec![1.4, 1.0, 0.7, 0.5, 0.35],
            informative_views,
            noise_std: 0.5,
            pool_images_per_concept: 100,
        }
    }
}

/// One planted staircase: trait `trait_` gains `value(x)` where `x` is
/// feature `feature` of view `view`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedStep {
    pub trait_: Trait,
    pub view: usize,
    pub feature: usize,
    pub levels: usize,
    pub amplitude: f64,
}

impl PlantedStep {
    pub fn level(&self, x: f64) -> usize {
        ((x * self.levels as f64).floor().max(0.0) as usize).min(self.levels - 1)
    }

    pub fn value(&self, x: f64) -> f64 {
        step_value(self.amplitude, self.level(x), self.levels)
    }
}

fn step_value(amplitude: f64, level: usize, levels: usize) -> f64 {
    amplitude * (2.0 * level as f64 / (levels - 1) as f64 - 1.0)
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub views: ViewMatrix,
    pub labels: BTreeMap<Trait, BTreeMap<String, f64>>,
    pub concepts: Vec<String>,
    pub planted: Vec<PlantedStep>,
}

pub fn concept_name(view: usize) -> String {
    format!("concept_{view:02}")
}

pub fn user_name(i: usize) -> String {
    format!("user_{i:03}")
}

/// Two-level hierarchy over the synthetic concepts: six groups under one root.
pub fn synthetic_hierarchy(num_views: usize) -> ConceptHierarchy {
    let mut edges: Vec<(String, String)> = (0..num_views)
        .map(|k| (concept_name(k), format!("group_{}", k % 6)))
        .collect();
    let groups: BTreeSet<String> = edges.iter().map(|(_, g)| g.clone()).collect();
    edges.extend(groups.into_iter().map(|g| (g, "entity".to_string())));
    ConceptHierarchy::from_edges(edges).expect("synthetic hierarchy is acyclic")
}

impl SynthSpec {
    fn check(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Infeasible(m));
        if self.num_users < 2 {
            return fail("need at least 2 users".into());
        }
        if self.levels < 2 {
            return fail("need at least 2 levels".into());
        }
        if self.num_views == 0 || self.feature_dim == 0 {
            return fail("need at least one view and one feature".into());
        }
        let distinct: BTreeSet<_> = self.informative_views.iter().collect();
        if distinct.len() != self.informative_views.len() {
            return fail("informative views repeat".into());
        }
        if let Some(v) = self.informative_views.iter().find(|&&v| v >= self.num_views) {
            return fail(format!("informative view {v} outside [0, {})", self.num_views));
        }
        if !self.informative_views.is_empty() && self.feature_dim < Trait::ALL.len() {
            return fail(format!("informative views need at least {} features", Trait::ALL.len()));
        }
        if self.amplitudes.len() != self.informative_views.len() {
            return fail("one amplitude per informative view required".into());
        }
        if self.amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return fail("amplitudes must be finite and non-negative".into());
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return fail("noise_std must be finite and non-negative".into());
        }
        if self.informative_views.len() > 20 {
            return fail("at most 20 informative views".into());
        }
        Ok(())
    }
}

fn level_feature(rng: &mut impl Rng, level: usize, levels: usize) -> f64 {
    let u: f64 = rng.random_range(0.0..1.0);
    (level as f64 + u) / levels as f64
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.check()?;
    let n = spec.num_users;
    let k = spec.num_views;
    let d = spec.feature_dim;
    let v = spec.informative_views.len();
    let concepts: Vec<String> = (0..k).map(concept_name).collect();
    let users: Vec<String> = (0..n).map(user_name).collect();

    // levels[t][i][j] = level of user i for trait t on informative view j.
    let levels: Vec<Vec<Vec<usize>>> = Trait::ALL
        .iter()
        .map(|t| {
            if spec.levels == 2 {
                let combos = 1usize << v;
                let mut codes: Vec<usize> = (0..n).map(|i| i % combos).collect();
                codes.shuffle(&mut crate::rng::stream(spec.seed, &format!("levels/{t}")));
                codes.iter().map(|c| (0..v).map(|j| c >> j & 1).collect()).collect()
            } else {
                let mut per_user = vec![Vec::with_capacity(v); n];
                for j in 0..v {
                    let mut codes: Vec<usize> = (0..n).map(|i| i % spec.levels).collect();
                    codes.shuffle(&mut crate::rng::stream(spec.seed, &format!("levels/{t}/{j}")));
                    for (row, c) in per_user.iter_mut().zip(codes) {
                        row.push(c);
                    }
                }
                per_user
            }
        })
        .collect();
    let informative_slot: BTreeMap<usize, usize> =
        spec.informative_views.iter().enumerate().map(|(j, &view)| (view, j)).collect();

    let mut images = BTreeMap::new();
    let mut favorites: Vec<Vec<String>> = vec![Vec::with_capacity(k); n];
    let mut feature_rng = crate::rng::stream(spec.seed, "features");
    for (view, concept) in concepts.iter().enumerate() {
        let slot = informative_slot.get(&view).copied();
        for (i, fav) in favorites.iter_mut().enumerate() {
            let mut features: Vec<f64> = (0..d).map(|_| feature_rng.random_range(0.0..1.0)).collect();
            if let Some(j) = slot {
                for (t, codes) in levels.iter().enumerate() {
                    features[t] = level_feature(&mut feature_rng, codes[i][j], spec.levels);
                }
            }
            let id = format!("img_{view:02}_{i:03}");
            fav.push(id.clone());
            images.insert(
                id.clone(),
                ImageRecord {
                    image_id: id,
                    features,
                    detected_concepts: BTreeSet::from([concept.clone()]),
                },
            );
        }
        let mut pool_rng = crate::rng::stream(spec.seed, &format!("pool/{view}"));
        for p in 0..spec.pool_images_per_concept {
            let features: Vec<f64> = (0..d).map(|_| pool_rng.random_range(0.0..1.0)).collect();
            let id = format!("pool_{view:02}_{p:03}");
            images.insert(
                id.clone(),
                ImageRecord {
                    image_id: id,
                    features,
                    detected_concepts: BTreeSet::from([concept.clone()]),
                },
            );
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let mut noise_rng = crate::rng::stream(spec.seed, "noise");
    let mut labels: BTreeMap<Trait, BTreeMap<String, f64>> = BTreeMap::new();
    let mut user_traits: Vec<BTreeMap<Trait, f64>> = vec![BTreeMap::new(); n];
    for (t, &trait_) in Trait::ALL.iter().enumerate() {
        let per_user = labels.entry(trait_).or_default();
        for i in 0..n {
            let mut y = 0.0;
            for (j, a) in spec.amplitudes.iter().enumerate() {
                y += step_value(*a, levels[t][i][j], spec.levels);
            }
            if spec.noise_std > 0.0 {
                y += noise.sample(&mut noise_rng);
            }
            let y = y.clamp(TRAIT_MIN, TRAIT_MAX);
            per_user.insert(users[i].clone(), y);
            user_traits[i].insert(trait_, y);
        }
        if v > 0 && spec.amplitudes.iter().any(|a| *a > 0.0) {
            let first = per_user.values().next().copied();
            if per_user.values().all(|y| Some(*y) == first) {
                return Err(SynthError::Infeasible(format!(
                    "range clamp leaves trait {trait_} constant"
                )));
            }
        }
    }

    let users_map: BTreeMap<String, UserRecord> = users
        .iter()
        .zip(favorites)
        .zip(user_traits)
        .map(|((id, favorite_image_ids), traits)| {
            (
                id.clone(),
                UserRecord {
                    user_id: id.clone(),
                    favorite_image_ids,
                    traits,
                },
            )
        })
        .collect();
    let dataset = Dataset {
        images,
        users: users_map,
        feature_dim: d,
    };
    let everyone: BTreeSet<String> = users.into_iter().collect();
    let views = build_views(&dataset, &concepts, &everyone, ViewAgg::Mean)
        .expect("every synthetic user favorites one image per concept");

    let planted = Trait::ALL
        .iter()
        .enumerate()
        .flat_map(|(t, &trait_)| {
            spec.informative_views
                .iter()
                .zip(&spec.amplitudes)
                .map(move |(&view, &amplitude)| PlantedStep {
                    trait_,
                    view,
                    feature: t,
                    levels: spec.levels,
                    amplitude,
                })
        })
        .collect();

    Ok(SynthData {
        dataset,
        views,
        labels,
        concepts,
        planted,
    })
}
