//! The client-facing questionnaire: options carry opaque tokens instead of
//! leaf indices and values.

use std::collections::HashMap;

use serde::Serialize;
use sha2::{Digest, Sha256};
use vbfi_core::questionnaire::render_manifest;
use vbfi_core::{Questionnaire, Trait};

#[derive(Debug, Clone, Serialize)]
pub struct QuestionnaireView {
    pub version_id: String,
    pub questions: Vec<QuestionView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuestionView {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub round: usize,
    pub concept: String,
    /// In display order.
    pub options: Vec<OptionView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptionView {
    pub token: String,
    pub image_id: String,
    pub image_url: String,
}

/// What a token stands for on the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenTarget {
    pub trait_: Trait,
    pub round: usize,
    pub leaf_index: usize,
}

/// A loaded questionnaire with its pre-rendered view and token table.
#[derive(Debug)]
pub struct Published {
    pub questionnaire: Questionnaire,
    pub view: QuestionnaireView,
    /// Serialized `view`; served verbatim so every response is byte-identical.
    pub body: Vec<u8>,
    pub tokens: HashMap<String, TokenTarget>,
}

/// Token for one option. Derived from the manifest digest, so it is stable
/// across restarts but cannot be linked to a leaf without the manifest.
pub fn option_token(manifest_digest: &[u8], target: TokenTarget) -> String {
    let mut h = Sha256::new();
    h.update(b"vbfi-option\0");
    h.update(manifest_digest);
    h.update(format!("{}/{}/{}", target.trait_.code(), target.round, target.leaf_index).as_bytes());
    hex::encode(&h.finalize()[..12])
}

impl Published {
    pub fn new(questionnaire: Questionnaire) -> Self {
        let digest = Sha256::digest(render_manifest(&questionnaire));
        let mut tokens = HashMap::new();
        let mut questions = Vec::new();
        for (&trait_, section) in &questionnaire.traits {
            for q in &section.questions {
                let options = q
                    .display_order
                    .iter()
                    .map(|&i| {
                        let o = &q.options[i];
                        let target = TokenTarget {
                            trait_,
                            round: q.round,
                            leaf_index: o.leaf_index,
                        };
                        let token = option_token(&digest, target);
                        tokens.insert(token.clone(), target);
                        OptionView {
                            token,
                            image_id: o.image_id.clone(),
                            image_url: format!("/images/{}", o.image_id),
                        }
                    })
                    .collect();
                questions.push(QuestionView {
                    trait_,
                    round: q.round,
                    concept: q.concept.clone(),
                    options,
                });
            }
        }
        let view = QuestionnaireView {
            version_id: questionnaire.version_id.clone(),
            questions,
        };
        let body = serde_json::to_vec(&view).expect("view serializes");
        Self {
            questionnaire,
            view,
            body,
            tokens,
        }
    }
}
