//! Refusal-aware reward engineering and evaluation for video temporal
//! grounding.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod prompts;
pub mod providers;
pub mod reward;
pub mod template;

pub use domain::{DifficultyTier, GroundTruth, GroundingSample, RelevanceCategory, Segment};
pub use reward::{total_reward, RewardBreakdown, RewardEngine, RewardOptions};
pub use template::{extract_segment, parse_output, StructuredOutput};
