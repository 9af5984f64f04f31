//! Bundled system prompts. The texts are the method: editing one changes
//! what the dataset builder and judges measure, so each is pinned to a
//! SHA-256 digest that the test suite checks.

use sha2::{Digest, Sha256};

pub const CATEGORY_EXTRACTION: &str = include_str!("../prompts/category_extraction.txt");
pub const NEGATIVE_GENERATION: &str = include_str!("../prompts/negative_generation.txt");
pub const REFUSAL_CATEGORY_CLASSIFIER: &str =
    include_str!("../prompts/refusal_category_classifier.txt");
pub const CONSISTENCY_JUDGE: &str = include_str!("../prompts/consistency_judge.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptId {
    CategoryExtraction,
    NegativeGeneration,
    RefusalCategoryClassifier,
    ConsistencyJudge,
}

impl PromptId {
    pub const ALL: [PromptId; 4] = [
        PromptId::CategoryExtraction,
        PromptId::NegativeGeneration,
        PromptId::RefusalCategoryClassifier,
        PromptId::ConsistencyJudge,
    ];

    pub fn text(&self) -> &'static str {
        match self {
            PromptId::CategoryExtraction => CATEGORY_EXTRACTION,
            PromptId::NegativeGeneration => NEGATIVE_GENERATION,
            PromptId::RefusalCategoryClassifier => REFUSAL_CATEGORY_CLASSIFIER,
            PromptId::ConsistencyJudge => CONSISTENCY_JUDGE,
        }
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            PromptId::CategoryExtraction => "category_extraction.txt",
            PromptId::NegativeGeneration => "negative_generation.txt",
            PromptId::RefusalCategoryClassifier => "refusal_category_classifier.txt",
            PromptId::ConsistencyJudge => "consistency_judge.txt",
        }
    }

    /// Published digest of the prompt text.
    pub fn pinned_digest(&self) -> &'static str {
        match self {
            PromptId::CategoryExtraction => {
                "110e3bef89c0b79fe85527ab198626e1b3723023a865d50f523e57366541abcb"
            }
            PromptId::NegativeGeneration => {
                "c3902e0e1416d3398839f38fb204dce8416f39b0fcb35334a65888a896479e9a"
            }
            PromptId::RefusalCategoryClassifier => {
                "93cda445c642f434afe514e3ae1a3592c236c81f2d43e49926861eafe3362659"
            }
            PromptId::ConsistencyJudge => {
                "699e44c0937662e7b76065e145987f7d633511ab1946eabc83849317434b0332"
            }
        }
    }

    pub fn identify(system_prompt: &str) -> Option<PromptId> {
        Self::ALL.into_iter().find(|p| p.text() == system_prompt)
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Prompts whose text no longer hashes to the pinned digest.
pub fn verify_digests() -> Vec<PromptId> {
    PromptId::ALL
        .into_iter()
        .filter(|p| sha256_hex(p.text()) != p.pinned_digest())
        .collect()
}
