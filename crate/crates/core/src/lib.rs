//! Image-preference personality estimation.
//!
//! Users are described by the images they favorite. Images carry concept
//! detections and a fixed-length feature vector; a user's representation
//! for one concept is built from the favorites carrying that concept.
//! Per-trait boosted ensembles restrict every tree to a single concept
//! ("view"), which lets a trained ensemble be compiled into a questionnaire
//! of choose-your-favorite-image questions, one per tree.

pub mod cart;
pub mod cluster;
pub mod concepts;
pub mod data;
pub mod eval;
pub mod io;
pub mod questionnaire;
pub mod rng;
pub mod synth;
pub mod vgbdt;

pub use cart::{fit_tree, RegressionTree};
pub use cluster::{affinity_propagation, similarity_matrix, ApConfig, ApResult, Preference};
pub use concepts::{ConceptHierarchy, ConceptIndex, ViewAgg, ViewMatrix};
pub use data::{Dataset, ImageRecord, Trait, UserRecord};
pub use questionnaire::{Questionnaire, ResponseSheet};
pub use vgbdt::{BoostingConfig, VgbdtModel};
