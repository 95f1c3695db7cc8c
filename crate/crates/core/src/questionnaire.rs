//! Compiles per-trait ensembles into a choose-your-favorite-image
//! questionnaire and scores response sheets against it.
//!
//! Round `m` of a trait's ensemble becomes one question about that round's
//! concept. Every leaf of the round's tree gets one option image: the concept's
//! images are routed through the tree, clustered with affinity propagation,
//! and for each leaf the image closest to the exemplar of the preferred
//! cluster is chosen. A subject's score is `F0 + shrinkage * sum_m A[m][choice_m]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{affinity_propagation, similarity_matrix, squared_distance, ApConfig, ApResult, ClusterError};
use crate::concepts::ConceptIndex;
use crate::data::{Dataset, Trait};
use crate::vgbdt::VgbdtModel;

#[derive(Debug, Error)]
pub enum QuestionnaireError {
    #[error("trait {trait_} round {round}: concept `{concept}` has no images")]
    EmptyConcept { trait_: Trait, round: usize, concept: String },
    #[error("trait {trait_} round {round}: no image of concept `{concept}` reaches leaves {leaves:?}")]
    MissingLeaves {
        trait_: Trait,
        round: usize,
        concept: String,
        leaves: Vec<usize>,
    },
    #[error("image `{image}` has {found} features but the model expects {expected}")]
    FeatureWidth { image: String, expected: usize, found: usize },
    #[error("cluster_choice must be at least 1")]
    BadClusterChoice,
    #[error("no models to compile")]
    NoModels,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("missing choice for trait {trait_} round {round}")]
    MissingChoice { trait_: Trait, round: usize },
    #[error("trait {trait_} round {round}: no option with leaf index {leaf}")]
    UnknownLeaf { trait_: Trait, round: usize, leaf: usize },
    #[error("choice refers to unknown question: trait {trait_} round {round}")]
    UnknownQuestion { trait_: Trait, round: usize },
    #[error("duplicate choice for trait {trait_} round {round}")]
    DuplicateChoice { trait_: Trait, round: usize },
    #[error("response is for version `{found}` but questionnaire is `{expected}`")]
    VersionMismatch { expected: String, found: String },
    #[error("invalid questionnaire: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOption {
    pub image_id: String,
    pub leaf_index: usize,
    pub leaf_value: f64,
    /// Size rank (1 = largest) of the cluster the image was taken from.
    pub cluster_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub round: usize,
    pub concept: String,
    /// Sorted by leaf index.
    pub options: Vec<ImageOption>,
    /// Presentation order as indices into `options`.
    pub display_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSection {
    #[serde(rename = "F0")]
    pub f0: f64,
    pub shrinkage: f64,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub model_hashes: BTreeMap<Trait, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub version_id: String,
    pub cluster_choice: usize,
    pub traits: BTreeMap<Trait, TraitSection>,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub version_id: String,
    /// 1 = take options from the largest cluster, 2 = second largest, ...
    pub cluster_choice: usize,
    pub ap: ApConfig,
    pub seed: u64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            version_id: "v1".into(),
            cluster_choice: 1,
            ap: ApConfig::default(),
            seed: 42,
        }
    }
}

/// Cluster ranks to try for a preferred rank: the preferred one, then
/// smaller clusters, then larger ones nearest first.
fn rank_search_order(preferred: usize, count: usize) -> Vec<usize> {
    let start = preferred.min(count);
    (start..=count).chain((1..start).rev()).collect()
}

struct ConceptClusters {
    ids: Vec<String>,
    result: ApResult,
}

pub fn design_questionnaire(
    models: &BTreeMap<Trait, VgbdtModel>,
    ds: &Dataset,
    idx: &ConceptIndex,
    opts: &DesignOptions,
) -> Result<Questionnaire, QuestionnaireError> {
    if opts.cluster_choice == 0 {
        return Err(QuestionnaireError::BadClusterChoice);
    }
    if models.is_empty() {
        return Err(QuestionnaireError::NoModels);
    }
    let mut cache: BTreeMap<String, ConceptClusters> = BTreeMap::new();
    let mut traits = BTreeMap::new();
    let mut model_hashes = BTreeMap::new();

    for (&trait_, model) in models {
        model_hashes.insert(trait_, model.content_hash());
        let mut used: BTreeSet<String> = BTreeSet::new();
        let mut questions = Vec::with_capacity(model.rounds.len());
        for (m, round) in model.rounds.iter().enumerate() {
            let round_no = m + 1;
            let concept = &round.concept;
            let images = idx
                .image_sets
                .get(concept)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| QuestionnaireError::EmptyConcept {
                    trait_,
                    round: round_no,
                    concept: concept.clone(),
                })?;

            if !cache.contains_key(concept) {
                let ids: Vec<String> = images.iter().cloned().collect();
                let mut feats: Vec<&[f64]> = Vec::with_capacity(ids.len());
                for id in &ids {
                    let image = ds.images.get(id).ok_or_else(|| {
                        QuestionnaireError::Invalid(format!("concept index names unknown image `{id}`"))
                    })?;
                    if image.features.len() != model.feature_dim {
                        return Err(QuestionnaireError::FeatureWidth {
                            image: id.clone(),
                            expected: model.feature_dim,
                            found: image.features.len(),
                        });
                    }
                    feats.push(&image.features);
                }
                let s = similarity_matrix(&feats, opts.ap.preference);
                let result = affinity_propagation(&s, &opts.ap)?;
                cache.insert(concept.clone(), ConceptClusters { ids, result });
            }
            let clusters = &cache[concept];
            let features = |i: usize| -> &[f64] { &ds.images[&clusters.ids[i]].features };

            let labels: Vec<usize> = (0..clusters.ids.len())
                .map(|i| round.tree.assign_leaf(features(i)))
                .collect();
            let leaf_values = round.tree.leaf_values();
            let missing: Vec<usize> = (1..=leaf_values.len()).filter(|j| !labels.contains(j)).collect();
            if !missing.is_empty() {
                return Err(QuestionnaireError::MissingLeaves {
                    trait_,
                    round: round_no,
                    concept: concept.clone(),
                    leaves: missing,
                });
            }

            let order = rank_search_order(opts.cluster_choice, clusters.result.clusters.len());
            let mut options = Vec::with_capacity(leaf_values.len());
            for (j, &value) in leaf_values.iter().enumerate() {
                let leaf = j + 1;
                let (rank, image) = order
                    .iter()
                    .find_map(|&rank| {
                        let cluster = &clusters.result.clusters[rank - 1];
                        let exemplar = features(cluster.exemplar);
                        cluster
                            .members
                            .iter()
                            .copied()
                            .filter(|&i| labels[i] == leaf)
                            .min_by(|&a, &b| {
                                let (ida, idb) = (&clusters.ids[a], &clusters.ids[b]);
                                used.contains(ida)
                                    .cmp(&used.contains(idb))
                                    .then(
                                        squared_distance(features(a), exemplar)
                                            .total_cmp(&squared_distance(features(b), exemplar)),
                                    )
                                    .then(ida.cmp(idb))
                            })
                            .map(|i| (rank, i))
                    })
                    .expect("every leaf has at least one image");
                let image_id = clusters.ids[image].clone();
                used.insert(image_id.clone());
                options.push(ImageOption {
                    image_id,
                    leaf_index: leaf,
                    leaf_value: value,
                    cluster_rank: rank,
                });
            }

            let mut display_order: Vec<usize> = (0..options.len()).collect();
            let mut rng = crate::rng::stream(opts.seed, &format!("display/{trait_}/{round_no}"));
            display_order.shuffle(&mut rng);
            questions.push(Question {
                round: round_no,
                concept: concept.clone(),
                options,
                display_order,
            });
        }
        traits.insert(
            trait_,
            TraitSection {
                f0: model.f0,
                shrinkage: model.shrinkage,
                questions,
            },
        );
    }

    Ok(Questionnaire {
        version_id: opts.version_id.clone(),
        cluster_choice: opts.cluster_choice,
        traits,
        metadata: Metadata {
            seed: opts.seed,
            model_hashes,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub round: usize,
    pub leaf_index: usize,
}

/// One subject's answers. Serialized as one line of `responses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSheet {
    pub subject_id: String,
    pub version_id: String,
    pub choices: Vec<Choice>,
    #[serde(default)]
    pub self_rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

impl Questionnaire {
    pub fn question(&self, trait_: Trait, round: usize) -> Option<&Question> {
        self.traits
            .get(&trait_)
            .and_then(|s| s.questions.iter().find(|q| q.round == round))
    }

    pub fn num_questions(&self) -> usize {
        self.traits.values().map(|s| s.questions.len()).sum()
    }

    /// Checks structural invariants of a loaded or hand-edited questionnaire.
    pub fn validate(&self) -> Result<(), QuestionnaireError> {
        let bad = |msg: String| Err(QuestionnaireError::Invalid(msg));
        if self.cluster_choice == 0 {
            return bad("cluster_choice must be at least 1".into());
        }
        for (t, section) in &self.traits {
            if !section.f0.is_finite() || !(section.shrinkage > 0.0 && section.shrinkage <= 1.0) {
                return bad(format!("trait {t}: invalid F0 or shrinkage"));
            }
            for (m, q) in section.questions.iter().enumerate() {
                if q.round != m + 1 {
                    return bad(format!("trait {t}: question {} has round {}", m + 1, q.round));
                }
                let leaves: BTreeSet<usize> = q.options.iter().map(|o| o.leaf_index).collect();
                if leaves.len() != q.options.len() || leaves.iter().any(|&l| l == 0) {
                    return bad(format!("trait {t} round {}: leaf indices must be distinct and positive", q.round));
                }
                if q.options.iter().any(|o| !o.leaf_value.is_finite() || o.cluster_rank == 0) {
                    return bad(format!("trait {t} round {}: invalid option", q.round));
                }
                let mut order = q.display_order.clone();
                order.sort_unstable();
                if order != (0..q.options.len()).collect::<Vec<_>>() {
                    return bad(format!("trait {t} round {}: display_order is not a permutation", q.round));
                }
            }
        }
        Ok(())
    }
}

/// Scores a complete response sheet; one score per trait in the questionnaire.
pub fn score_response(q: &Questionnaire, r: &ResponseSheet) -> Result<BTreeMap<Trait, f64>, QuestionnaireError> {
    if !r.version_id.is_empty() && r.version_id != q.version_id {
        return Err(QuestionnaireError::VersionMismatch {
            expected: q.version_id.clone(),
            found: r.version_id.clone(),
        });
    }
    let mut chosen: BTreeMap<(Trait, usize), usize> = BTreeMap::new();
    for c in &r.choices {
        if q.question(c.trait_, c.round).is_none() {
            return Err(QuestionnaireError::UnknownQuestion {
                trait_: c.trait_,
                round: c.round,
            });
        }
        if chosen.insert((c.trait_, c.round), c.leaf_index).is_some() {
            return Err(QuestionnaireError::DuplicateChoice {
                trait_: c.trait_,
                round: c.round,
            });
        }
    }
    let mut scores = BTreeMap::new();
    for (&trait_, section) in &q.traits {
        let mut sum = 0.0;
        for question in &section.questions {
            let round = question.round;
            let leaf = *chosen
                .get(&(trait_, round))
                .ok_or(QuestionnaireError::MissingChoice { trait_, round })?;
            let option = question
                .options
                .iter()
                .find(|o| o.leaf_index == leaf)
                .ok_or(QuestionnaireError::UnknownLeaf { trait_, round, leaf })?;
            sum += option.leaf_value;
        }
        scores.insert(trait_, section.f0 + section.shrinkage * sum);
    }
    Ok(scores)
}

/// Serializes the questionnaire as `questionnaire.json`.
pub fn render_manifest(q: &Questionnaire) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(q).expect("questionnaire serializes");
    bytes.push(b'\n');
    bytes
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Questionnaire, QuestionnaireError> {
    let q: Questionnaire =
        serde_json::from_slice(bytes).map_err(|e| QuestionnaireError::Invalid(e.to_string()))?;
    q.validate()?;
    Ok(q)
}

pub fn load_manifest(path: &Path) -> Result<Questionnaire, QuestionnaireError> {
    let bytes = std::fs::read(path).map_err(|source| QuestionnaireError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&bytes)
}

/// Reads `responses.jsonl`; blank lines are skipped.
pub fn load_responses(path: &Path) -> Result<Vec<ResponseSheet>, QuestionnaireError> {
    let text = std::fs::read_to_string(path).map_err(|source| QuestionnaireError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| QuestionnaireError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
