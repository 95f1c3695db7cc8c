//! Concept universe: hypernym expansion, per-concept image/user sets,
//! eligibility filtering and multi-view user representations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::Deserialize;
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("cycle detected in concept hierarchy through `{0}`")]
    Cycle(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no concept is favored by at least {0} users")]
    NoCoFavoredConcept(usize),
    #[error("user `{user}` has no favorite image under concept `{concept}`")]
    MissingView { user: String, concept: String },
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

/// Child → parent relation between concepts.
///
/// Always acyclic. Concepts without children sit at level 1; a parent's
/// level is one more than its shallowest child's.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptHierarchy {
    parents: BTreeMap<String, Vec<String>>,
    level: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct HierarchyFile {
    edges: Vec<EdgeRecord>,
}

#[derive(Deserialize)]
struct EdgeRecord {
    child: String,
    parent: String,
}

impl ConceptHierarchy {
    pub fn from_edges<I, S>(edges: I) -> Result<Self, ConceptError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (child, parent) in edges {
            let (child, parent) = (child.into(), parent.into());
            parents.entry(parent.clone()).or_default();
            let list = parents.entry(child).or_default();
            if !list.contains(&parent) {
                list.push(parent);
            }
        }
        let level = compute_levels(&parents)?;
        Ok(Self { parents, level })
    }

    /// Reads `{"edges": [{"child": .., "parent": ..}, ..]}`.
    pub fn load_json(path: &Path) -> Result<Self, ConceptError> {
        let file_err = |reason: String| ConceptError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let parsed: HierarchyFile = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        Self::from_edges(parsed.edges.into_iter().map(|e| (e.child, e.parent)))
    }

    pub fn parents_of(&self, concept: &str) -> &[String] {
        self.parents.get(concept).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn level(&self, concept: &str) -> Option<usize> {
        self.level.get(concept).copied()
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.parents.keys().map(String::as_str)
    }

    /// All ancestors reachable from `concept` in at most `max_steps` parent steps.
    pub fn ancestors_within(&self, concept: &str, max_steps: usize) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([(concept.to_string(), 0usize)]);
        while let Some((c, depth)) = queue.pop_front() {
            if depth == max_steps {
                continue;
            }
            for p in self.parents_of(&c) {
                if seen.insert(p.clone()) {
                    queue.push_back((p.clone(), depth + 1));
                }
            }
        }
        seen
    }
}

fn compute_levels(parents: &BTreeMap<String, Vec<String>>) -> Result<BTreeMap<String, usize>, ConceptError> {
    // Kahn's algorithm from the leaves (concepts nobody names as parent) upward.
    let mut pending_children: BTreeMap<&str, usize> = parents.keys().map(|k| (k.as_str(), 0)).collect();
    for ps in parents.values() {
        for p in ps {
            *pending_children.get_mut(p.as_str()).expect("parents registered") += 1;
        }
    }
    let mut level: BTreeMap<String, usize> = BTreeMap::new();
    let mut queue: VecDeque<&str> = pending_children
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(c, _)| *c)
        .collect();
    for c in &queue {
        level.insert(c.to_string(), 1);
    }
    while let Some(c) = queue.pop_front() {
        let child_level = level[c];
        for p in &parents[c] {
            let entry = level.entry(p.clone()).or_insert(usize::MAX);
            *entry = (*entry).min(child_level + 1);
            let n = pending_children.get_mut(p.as_str()).expect("parents registered");
            *n -= 1;
            if *n == 0 {
                queue.push_back(p.as_str());
            }
        }
    }
    if let Some((c, _)) = pending_children.iter().find(|(_, n)| **n > 0) {
        return Err(ConceptError::Cycle(c.to_string()));
    }
    Ok(level)
}

/// Augments every image's concepts with all ancestors within `extra_levels`
/// parent steps. Original concepts are retained.
pub fn expand_concepts(ds: &Dataset, hierarchy: &ConceptHierarchy, extra_levels: usize) -> Result<Dataset, ConceptError> {
    compute_levels(&hierarchy.parents)?;
    let mut out = ds.clone();
    for image in out.images.values_mut() {
        let mut expanded = image.detected_concepts.clone();
        for c in &image.detected_concepts {
            expanded.extend(hierarchy.ancestors_within(c, extra_levels));
        }
        image.detected_concepts = expanded;
    }
    Ok(out)
}

/// Per-concept image set and the set of users who favorited any of them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptIndex {
    pub image_sets: BTreeMap<String, BTreeSet<String>>,
    pub user_sets: BTreeMap<String, BTreeSet<String>>,
}

pub fn build_index(ds: &Dataset) -> ConceptIndex {
    let mut idx = ConceptIndex::default();
    for image in ds.images.values() {
        for c in &image.detected_concepts {
            idx.image_sets.entry(c.clone()).or_default().insert(image.image_id.clone());
        }
    }
    for user in ds.users.values() {
        for image in ds.favorites_of(user) {
            for c in &image.detected_concepts {
                idx.user_sets.entry(c.clone()).or_default().insert(user.user_id.clone());
            }
        }
    }
    idx
}

/// Concepts favored by at least `min_users` users, each with a seeded uniform
/// sample of `sample_to` of its users (sorted).
///
/// The sample depends only on `(seed, concept)`, not on which other concepts
/// are present.
pub fn eligible_concepts(
    idx: &ConceptIndex,
    min_users: usize,
    sample_to: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<String>>, ConceptError> {
    if min_users == 0 {
        return Err(ConceptError::InvalidArgument("min_users must be at least 1".into()));
    }
    if sample_to > min_users {
        return Err(ConceptError::InvalidArgument(format!(
            "sample_to ({sample_to}) exceeds min_users ({min_users})"
        )));
    }
    let mut out = BTreeMap::new();
    for (concept, users) in &idx.user_sets {
        if users.len() < min_users {
            continue;
        }
        let pool: Vec<&String> = users.iter().collect();
        let mut rng = crate::rng::stream(seed, &format!("eligible/{concept}"));
        let mut picked: Vec<String> = index::sample(&mut rng, pool.len(), sample_to)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        picked.sort();
        out.insert(concept.clone(), picked);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoFavored {
    /// Concepts in selection order.
    pub concepts: Vec<String>,
    pub common_users: BTreeSet<String>,
}

struct Bits(Vec<u64>);

impl Bits {
    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn and_count(&self, other: &Bits) -> usize {
        self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Greedy search for a large concept set whose user sets share at least
/// `min_common_users` users.
///
/// Concepts are ranked by user-set size (descending, then name). From each
/// qualifying start concept the search repeatedly adds the concept that keeps
/// the running intersection largest, stopping before it would fall below the
/// threshold. The longest list wins; ties go to the larger intersection, then
/// to the earlier start.
pub fn co_favored_concepts(idx: &ConceptIndex, min_common_users: usize) -> Result<CoFavored, ConceptError> {
    if min_common_users == 0 {
        return Err(ConceptError::InvalidArgument("min_common_users must be at least 1".into()));
    }
    let universe: Vec<&String> = idx
        .user_sets
        .values()
        .flatten()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let position: BTreeMap<&String, usize> = universe.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let words = universe.len().div_ceil(64);

    let mut ranked: Vec<(&String, Bits, usize)> = idx
        .user_sets
        .iter()
        .map(|(c, users)| {
            let mut bits = vec![0u64; words];
            for u in users {
                let i = position[u];
                bits[i / 64] |= 1 << (i % 64);
            }
            (c, Bits(bits), users.len())
        })
        .collect();
    ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));

    let mut best: Option<(Vec<usize>, Bits)> = None;
    for start in 0..ranked.len() {
        if ranked[start].2 < min_common_users {
            break;
        }
        let mut chosen = vec![start];
        let mut common = Bits(ranked[start].1 .0.clone());
        loop {
            let mut pick: Option<(usize, usize)> = None;
            for (i, cand) in ranked.iter().enumerate() {
                if chosen.contains(&i) {
                    continue;
                }
                let n = common.and_count(&cand.1);
                if n >= min_common_users && pick.is_none_or(|(_, best_n)| n > best_n) {
                    pick = Some((i, n));
                }
            }
            match pick {
                Some((i, _)) => {
                    common = common.and(&ranked[i].1);
                    chosen.push(i);
                }
                None => break,
            }
        }
        let better = match &best {
            None => true,
            Some((b_chosen, b_common)) => {
                chosen.len() > b_chosen.len()
                    || (chosen.len() == b_chosen.len() && common.count() > b_common.count())
            }
        };
        if better {
            best = Some((chosen, common));
        }
    }

    let (chosen, common) = best.ok_or(ConceptError::NoCoFavoredConcept(min_common_users))?;
    let common_users = universe
        .iter()
        .enumerate()
        .filter(|(i, _)| common.0[i / 64] >> (i % 64) & 1 == 1)
        .map(|(_, u)| (*u).clone())
        .collect();
    Ok(CoFavored {
        concepts: chosen.into_iter().map(|i| ranked[i].0.clone()).collect(),
        common_users,
    })
}

/// Reads a plain-text concept list, one concept per line; blank lines skipped.
pub fn load_concept_list(path: &Path) -> Result<Vec<String>, ConceptError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConceptError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// How a user's several favorites under one concept become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewAgg {
    /// Element-wise mean over all of the user's favorites carrying the concept.
    #[default]
    Mean,
    /// The first such favorite, in favorite order.
    First,
}

impl FromStr for ViewAgg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(ViewAgg::Mean),
            "first" => Ok(ViewAgg::First),
            other => Err(format!("unknown view aggregation `{other}` (expected mean or first)")),
        }
    }
}

/// Users represented as K concatenated feature blocks of width d.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub concept_order: Vec<String>,
    pub feature_dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
    /// Number of favorites that contributed to each (user, concept) block.
    pub coverage: BTreeMap<(String, String), usize>,
}

impl ViewMatrix {
    pub fn num_views(&self) -> usize {
        self.concept_order.len()
    }

    pub fn row_len(&self) -> usize {
        self.num_views() * self.feature_dim
    }

    pub fn block<'a>(&self, row: &'a [f64], view: usize) -> &'a [f64] {
        &row[view * self.feature_dim..(view + 1) * self.feature_dim]
    }

    /// Rows paired with labels, in user-id order. Users without a label are
    /// reported by id.
    pub fn labeled_rows<'a>(
        &'a self,
        labels: &BTreeMap<String, f64>,
    ) -> Result<(Vec<&'a [f64]>, Vec<f64>), String> {
        let mut xs = Vec::with_capacity(self.rows.len());
        let mut ys = Vec::with_capacity(self.rows.len());
        for (user, row) in &self.rows {
            let y = labels.get(user).ok_or_else(|| user.clone())?;
            xs.push(row.as_slice());
            ys.push(*y);
        }
        Ok((xs, ys))
    }
}

/// Builds each user's K·d representation over `concepts`.
pub fn build_views(
    ds: &Dataset,
    concepts: &[String],
    common_users: &BTreeSet<String>,
    agg: ViewAgg,
) -> Result<ViewMatrix, ConceptError> {
    let d = ds.feature_dim;
    let mut rows = BTreeMap::new();
    let mut coverage = BTreeMap::new();
    for user_id in common_users {
        let user = ds.users.get(user_id).ok_or_else(|| ConceptError::UnknownUser(user_id.clone()))?;
        let mut row = Vec::with_capacity(concepts.len() * d);
        for concept in concepts {
            let mut block = vec![0.0; d];
            let mut count = 0usize;
            for image in ds.favorites_of(user).filter(|i| i.detected_concepts.contains(concept)) {
                for (acc, v) in block.iter_mut().zip(&image.features) {
                    *acc += v;
                }
                count += 1;
                if agg == ViewAgg::First {
                    break;
                }
            }
            if count == 0 {
                return Err(ConceptError::MissingView {
                    user: user_id.clone(),
                    concept: concept.clone(),
                });
            }
            if count > 1 {
                let n = count as f64;
                block.iter_mut().for_each(|v| *v /= n);
            }
            row.extend(block);
            coverage.insert((user_id.clone(), concept.clone()), count);
        }
        rows.insert(user_id.clone(), row);
    }
    Ok(ViewMatrix {
        concept_order: concepts.to_vec(),
        feature_dim: d,
        rows,
        coverage,
    })
}
