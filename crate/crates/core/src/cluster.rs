//! Affinity propagation over feature vectors.
//!
//! Similarity is negative squared Euclidean distance; the diagonal holds the
//! preference (by default the median off-diagonal similarity). Message passing
//! follows the usual damped responsibility/availability updates.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot cluster zero items")]
    Empty,
    #[error("similarity matrix must be square and finite")]
    BadMatrix,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preference {
    Median,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    pub preference: Preference,
    /// Seed for the symmetry-breaking jitter.
    pub seed: u64,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 500,
            convergence_iter: 25,
            preference: Preference::Median,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub exemplar: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub exemplar_of: Vec<usize>,
    /// Largest first; equal sizes ordered by exemplar index.
    pub clusters: Vec<Cluster>,
    pub converged: bool,
    pub iterations: usize,
}

/// Dense similarity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Similarity {
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    fn set(&mut self, i: usize, k: usize, v: f64) {
        self.values[i * self.n + k] = v;
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// `S[i][j] = -|f_i - f_j|^2` off the diagonal; the diagonal holds the preference.
pub fn similarity_matrix(features: &[&[f64]], preference: Preference) -> Similarity {
    let n = features.len();
    let mut s = Similarity {
        n,
        values: vec![0.0; n * n],
    };
    let mut off = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let v = -squared_distance(features[i], features[k]);
                s.set(i, k, v);
                off.push(v);
            }
        }
    }
    let pref = match preference {
        Preference::Value(v) => v,
        Preference::Median if off.is_empty() => 0.0,
        Preference::Median => median(&mut off),
    };
    for i in 0..n {
        s.set(i, i, pref);
    }
    s
}

/// Sum of member-to-exemplar similarities, exemplars contributing their preference.
pub fn net_similarity(s: &Similarity, exemplar_of: &[usize]) -> f64 {
    exemplar_of.iter().enumerate().map(|(i, &e)| s.get(i, e)).sum()
}

/// Assigns every item to its most similar exemplar; exemplars to themselves.
/// Ties go to the lower exemplar index.
fn assign(s: &Similarity, exemplars: &[usize]) -> Vec<usize> {
    (0..s.n)
        .map(|i| {
            if exemplars.contains(&i) {
                return i;
            }
            let mut best = exemplars[0];
            for &e in &exemplars[1..] {
                if s.get(i, e) > s.get(i, best) {
                    best = e;
                }
            }
            best
        })
        .collect()
}

pub fn affinity_propagation(s: &Similarity, cfg: &ApConfig) -> Result<ApResult, ClusterError> {
    let n = s.n;
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if s.values.len() != n * n || s.values.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::BadMatrix);
    }
    if !(0.5..1.0).contains(&cfg.damping) {
        return Err(ClusterError::InvalidConfig(format!("damping {} outside [0.5, 1)", cfg.damping)));
    }
    if cfg.convergence_iter == 0 {
        return Err(ClusterError::InvalidConfig("convergence_iter must be at least 1".into()));
    }
    if n == 1 {
        return Ok(finish(s, vec![0], true, 0));
    }

    // Jitter of at most 1e-12 relative magnitude breaks exact ties between
    // symmetric configurations.
    let mut sim = s.values.clone();
    let mut rng = crate::rng::stream(cfg.seed, "ap-jitter");
    for v in sim.iter_mut() {
        let u: f64 = rng.random_range(-1.0..1.0);
        *v += (f64::EPSILON * v.abs() + 1e-300).min(1e-12) * u;
    }

    let damping = cfg.damping;
    let mut resp = vec![0.0; n * n];
    let mut avail = vec![0.0; n * n];
    let mut history: Vec<Vec<bool>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut new_vals = vec![0.0; n];
    // A stable exemplar set only counts once messages have also settled;
    // with heavy damping the set can sit still long before that.
    let scale = sim.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let settle_tol = 1e-6 * (1.0 + scale);

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let mut delta = 0.0f64;
        // Responsibilities.
        for i in 0..n {
            let row = i * n;
            let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = avail[row + k] + sim[row + k];
                if v > first {
                    second = first;
                    first = v;
                    first_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first_k { second } else { first };
                let fresh = sim[row + k] - competitor;
                let old = resp[row + k];
                resp[row + k] = damping * old + (1.0 - damping) * fresh;
                delta = delta.max((resp[row + k] - old).abs());
            }
        }
        // Availabilities.
        for k in 0..n {
            let mut col_sum = 0.0;
            for i in 0..n {
                let r = resp[i * n + k];
                col_sum += if i == k { r } else { r.max(0.0) };
            }
            for (i, slot) in new_vals.iter_mut().enumerate() {
                let r = resp[i * n + k];
                *slot = if i == k {
                    col_sum - r
                } else {
                    (col_sum - r.max(0.0)).min(0.0)
                };
            }
            for i in 0..n {
                let a = &mut avail[i * n + k];
                let old = *a;
                *a = damping * old + (1.0 - damping) * new_vals[i];
                delta = delta.max((*a - old).abs());
            }
        }

        let is_exemplar: Vec<bool> = (0..n).map(|k| avail[k * n + k] + resp[k * n + k] > 0.0).collect();
        history.push(is_exemplar);
        if history.len() > cfg.convergence_iter {
            history.remove(0);
        }
        if history.len() == cfg.convergence_iter
            && delta <= settle_tol
            && history.iter().all(|h| h == &history[0])
            && history[0].iter().any(|&e| e)
        {
            converged = true;
            break;
        }
    }

    let last = history.last().expect("at least one iteration ran");
    let mut exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        log::warn!("affinity propagation found no exemplars; falling back to one cluster");
        let best = (0..n)
            .max_by(|&a, &b| {
                let va = avail[a * n + a] + resp[a * n + a];
                let vb = avail[b * n + b] + resp[b * n + b];
                va.total_cmp(&vb).then(b.cmp(&a))
            })
            .expect("n >= 2");
        exemplars.push(best);
        converged = false;
    }
    if !converged {
        log::warn!("affinity propagation did not converge after {iterations} iterations");
    }

    let mut exemplars = refine(s, &exemplars);
    while let Some(better) = improve_once(s, &exemplars) {
        exemplars = refine(s, &better);
    }
    Ok(finish(s, exemplars, converged, iterations))
}

/// Each cluster's exemplar becomes the member with the largest summed
/// similarity to the other members.
fn refine(s: &Similarity, exemplars: &[usize]) -> Vec<usize> {
    let labels = assign(s, exemplars);
    let mut refined = Vec::with_capacity(exemplars.len());
    for &e in exemplars {
        let members: Vec<usize> = (0..s.n).filter(|&i| labels[i] == e).collect();
        let score = |j: usize| -> f64 { members.iter().filter(|&&i| i != j).map(|&i| s.get(i, j)).sum() };
        let mut best = members[0];
        for &j in &members[1..] {
            if score(j) > score(best) {
                best = j;
            }
        }
        refined.push(best);
    }
    refined.sort_unstable();
    refined.dedup();
    refined
}

/// Best single add-or-drop move on the exemplar set, if any strictly raises
/// net similarity. Symmetric inputs (e.g. duplicate points) and slowly
/// drifting messages can leave redundant or missing exemplars.
fn improve_once(s: &Similarity, exemplars: &[usize]) -> Option<Vec<usize>> {
    let current = net_similarity(s, &assign(s, exemplars));
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |candidate: Vec<usize>| {
        let gain = net_similarity(s, &assign(s, &candidate)) - current;
        let floor = 1e-12 * (1.0 + current.abs());
        if gain > floor && best.as_ref().is_none_or(|(g, _)| gain > *g) {
            best = Some((gain, candidate));
        }
    };
    if exemplars.len() > 1 {
        for drop in 0..exemplars.len() {
            let mut rest = exemplars.to_vec();
            rest.remove(drop);
            consider(rest);
        }
    }
    for add in (0..s.n).filter(|i| !exemplars.contains(i)) {
        let mut more = exemplars.to_vec();
        more.push(add);
        more.sort_unstable();
        consider(more);
    }
    best.map(|(_, e)| e)
}

fn finish(s: &Similarity, exemplars: Vec<usize>, converged: bool, iterations: usize) -> ApResult {
    let exemplar_of = assign(s, &exemplars);
    let mut clusters: Vec<Cluster> = exemplars
        .iter()
        .map(|&e| Cluster {
            exemplar: e,
            members: (0..s.n).filter(|&i| exemplar_of[i] == e).collect(),
        })
        .collect();
    clusters.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.exemplar.cmp(&b.exemplar)));
    ApResult {
        exemplar_of,
        clusters,
        converged,
        iterations,
    }
}
