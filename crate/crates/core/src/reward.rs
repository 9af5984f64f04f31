//! The four refusal-aware reward objectives and their unweighted sum.
//!
//! * format: 1 when the output follows the three-section template, else 0.
//! * refuse-IoU: temporal IoU for relevant queries that predict a segment,
//!   1 for irrelevant queries answered without a segment, 0 otherwise.
//! * explain: `sim(a_pos, answer) - sim(a_neg, answer)` with cosine
//!   similarity of provider embeddings.
//! * correction: 0 for relevant queries, `sim(original_query, correct)` for
//!   irrelevant ones.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruth, GroundingSample, Segment};
use crate::error::{ProviderError, RewardError};
use crate::providers::{text_similarity, EmbeddingProvider};
use crate::template::{extract_sections_lenient, extract_segment, parse_output, StructuredOutput};

/// Textual form of a time-aware answer used as an explain-reward reference.
pub const TIME_ANSWER_TEMPLATE: &str = "From {start} to {end} seconds.";

/// Negative reference for relevant samples that have no irrelevant sibling
/// in the dataset.
pub const SURROGATE_REFUSAL: &str =
    "The query is not relevant to the video, so no segment can be grounded.";

pub fn render_time_answer(segment: &Segment) -> String {
    TIME_ANSWER_TEMPLATE
        .replace("{start}", &segment.start().to_string())
        .replace("{end}", &segment.end().to_string())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub refuse_iou: f64,
    pub explain: f64,
    pub correction: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(format: f64, refuse_iou: f64, explain: f64, correction: f64) -> Self {
        Self {
            format,
            refuse_iou,
            explain,
            correction,
            total: format + refuse_iou + explain + correction,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOptions {
    /// Zero every component when the format check fails.
    pub strict_format_gating: bool,
}

/// Positive and negative reference answers for the explain reward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerReferences {
    pub positive: String,
    pub negative: String,
}

/// Pairs relevant and irrelevant samples that share a video and a source
/// query, so each side can borrow the other's answer as its negative
/// reference.
#[derive(Debug, Default, Clone)]
pub struct PairIndex {
    segments: HashMap<(String, String), Segment>,
    refusals: HashMap<(String, String), String>,
}

impl PairIndex {
    pub fn build(samples: &[GroundingSample]) -> Self {
        let mut index = PairIndex::default();
        // strongest tier first, then sample id, so the chosen sibling is
        // stable regardless of input order
        let mut irrelevant: Vec<&GroundingSample> =
            samples.iter().filter(|s| !s.is_relevant()).collect();
        irrelevant.sort_by(|a, b| (a.difficulty(), &a.sample_id).cmp(&(b.difficulty(), &b.sample_id)));
        for s in irrelevant {
            if let GroundTruth::Irrelevant { refusal, original_query, .. } = s.truth() {
                index
                    .refusals
                    .entry((s.video_id.clone(), original_query.clone()))
                    .or_insert_with(|| refusal.clone());
            }
        }
        for s in samples {
            if let Some(seg) = s.gt_segment() {
                index
                    .segments
                    .entry((s.video_id.clone(), s.query.clone()))
                    .or_insert(seg);
            }
        }
        index
    }

    pub fn references(&self, sample: &GroundingSample) -> Result<AnswerReferences, RewardError> {
        match sample.truth() {
            GroundTruth::Relevant { segment } => Ok(AnswerReferences {
                positive: render_time_answer(segment),
                negative: self
                    .refusals
                    .get(&(sample.video_id.clone(), sample.query.clone()))
                    .cloned()
                    .unwrap_or_else(|| SURROGATE_REFUSAL.to_string()),
            }),
            GroundTruth::Irrelevant { refusal, original_query, .. } => {
                let seg = self
                    .segments
                    .get(&(sample.video_id.clone(), original_query.clone()))
                    .ok_or_else(|| RewardError::MissingPair(sample.sample_id.clone()))?;
                Ok(AnswerReferences {
                    positive: refusal.clone(),
                    negative: render_time_answer(seg),
                })
            }
        }
    }
}

pub fn format_reward(raw: &str) -> f64 {
    if parse_output(raw).1.format_ok {
        1.0
    } else {
        0.0
    }
}

/// Temporal IoU. Identical zero-length segments score 1.
pub fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.length() + b.length() - inter;
    if union > 0.0 {
        inter / union
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

fn refuse_iou_for(sample: &GroundingSample, predicted: Option<Segment>) -> f64 {
    match (sample.gt_segment(), predicted) {
        (Some(gt), Some(pred)) => iou(&gt, &pred),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

pub fn refuse_iou_reward(sample: &GroundingSample, out: &StructuredOutput) -> f64 {
    refuse_iou_for(sample, out.segment)
}

fn embed_ctx(context: &str) -> impl FnOnce(ProviderError) -> RewardError + '_ {
    move |source| RewardError::Embedding {
        context: context.to_string(),
        source,
    }
}

fn explain_for(
    refs: &AnswerReferences,
    answer: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, RewardError> {
    if answer.trim().is_empty() {
        return Ok(0.0);
    }
    let pos = text_similarity(embedder, &refs.positive, answer).map_err(embed_ctx("explain/positive"))?;
    let neg = text_similarity(embedder, &refs.negative, answer).map_err(embed_ctx("explain/negative"))?;
    Ok(pos - neg)
}

/// An empty answer scores 0 without being embedded.
pub fn explain_reward(
    refs: &AnswerReferences,
    out: &StructuredOutput,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, RewardError> {
    explain_for(refs, &out.answer, embedder)
}

fn correction_for(
    sample: &GroundingSample,
    correct: Option<&str>,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, RewardError> {
    let Some(original) = sample.original_query() else {
        return Ok(0.0);
    };
    match correct {
        Some(c) if !c.trim().is_empty() => {
            text_similarity(embedder, original, c).map_err(embed_ctx("correction"))
        }
        _ => Ok(0.0),
    }
}

pub fn correction_reward(
    sample: &GroundingSample,
    out: &StructuredOutput,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, RewardError> {
    correction_for(sample, out.correct.as_deref(), embedder)
}

/// Parses `raw` once and computes every component. When the format check
/// fails, the remaining components are computed from whichever sections can
/// be recovered individually (absent sections score 0), unless
/// `strict_format_gating` is set.
pub fn total_reward(
    sample: &GroundingSample,
    refs: &AnswerReferences,
    raw: &str,
    embedder: &dyn EmbeddingProvider,
    options: RewardOptions,
) -> Result<RewardBreakdown, RewardError> {
    let (parsed, diag) = parse_output(raw);
    if let Some(out) = parsed {
        return Ok(RewardBreakdown::new(
            1.0,
            refuse_iou_reward(sample, &out),
            explain_reward(refs, &out, embedder)?,
            correction_reward(sample, &out, embedder)?,
        ));
    }
    debug_assert!(!diag.format_ok);
    if options.strict_format_gating {
        return Ok(RewardBreakdown::new(0.0, 0.0, 0.0, 0.0));
    }
    let sections = extract_sections_lenient(raw);
    let (refuse, explain) = match sections.answer.as_deref() {
        Some(answer) => (
            refuse_iou_for(sample, extract_segment(answer)),
            explain_for(refs, answer, embedder)?,
        ),
        None => (0.0, 0.0),
    };
    let correction = correction_for(sample, sections.correct.as_deref(), embedder)?;
    Ok(RewardBreakdown::new(0.0, refuse, explain, correction))
}

/// Scores model outputs against a dataset with a shared embedder.
pub struct RewardEngine<'a> {
    embedder: &'a dyn EmbeddingProvider,
    options: RewardOptions,
    pairs: PairIndex,
}

impl<'a> RewardEngine<'a> {
    pub fn new(
        embedder: &'a dyn EmbeddingProvider,
        options: RewardOptions,
        dataset: &[GroundingSample],
    ) -> Self {
        Self {
            embedder,
            options,
            pairs: PairIndex::build(dataset),
        }
    }

    pub fn score(&self, sample: &GroundingSample, raw: &str) -> Result<RewardBreakdown, RewardError> {
        let refs = self.pairs.references(sample)?;
        total_reward(sample, &refs, raw, self.embedder, self.options)
    }

    /// Scores `(sample, raw)` pairs concurrently; results keep input order.
    pub fn score_batch(
        &self,
        items: &[(&GroundingSample, &str)],
    ) -> Vec<Result<RewardBreakdown, RewardError>> {
        items.par_iter().map(|(s, raw)| self.score(s, raw)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DifficultyTier, RelevanceCategory};
    use crate::providers::HashEmbedder;
    use std::sync::Arc;

    /// Maps known texts to fixed vectors so similarities are exact.
    struct TableEmbedder(Vec<(&'static str, Vec<f64>)>);

    impl EmbeddingProvider for TableEmbedder {
        fn provider_id(&self) -> &str {
            "table"
        }
        fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
            if text.is_empty() {
                return Err(ProviderError::EmptyText);
            }
            self.0
                .iter()
                .find(|(t, _)| *t == text)
                .map(|(_, v)| Arc::new(v.clone()))
                .ok_or_else(|| ProviderError::Schema(format!("no vector for {text:?}")))
        }
    }

    const REFUSAL: &str = "No steak is cut; the chef cooks pasta.";
    const ORIGINAL: &str = "The chef is cooking pasta";

    fn relevant() -> GroundingSample {
        GroundingSample::relevant("r", "v", "ctx", ORIGINAL, Segment::new(4.0, 8.0).unwrap()).unwrap()
    }

    fn irrelevant() -> GroundingSample {
        GroundingSample::irrelevant(
            "i",
            "v",
            "ctx",
            "The chef is cutting steaks",
            DifficultyTier::Strong,
            REFUSAL,
            ORIGINAL,
            vec![RelevanceCategory::FineGrainedAction],
        )
        .unwrap()
    }

    fn table() -> TableEmbedder {
        TableEmbedder(vec![
            ("From 4 to 8 seconds.", vec![1.0, 0.0, 0.0]),
            (REFUSAL, vec![0.0, 1.0, 0.0]),
            (ORIGINAL, vec![0.0, 0.0, 1.0]),
            ("halfway", vec![1.0, 1.0, 0.0]),
        ])
    }

    fn seg(a: f64, b: f64) -> Segment {
        Segment::new(a, b).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert!((iou(&seg(2.0, 6.0), &seg(4.0, 8.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&seg(4.0, 8.0), &seg(4.0, 8.0)), 1.0);
        assert_eq!(iou(&seg(0.0, 1.0), &seg(5.0, 6.0)), 0.0);
        assert_eq!(iou(&seg(3.0, 3.0), &seg(3.0, 3.0)), 1.0);
        assert_eq!(iou(&seg(3.0, 3.0), &seg(2.0, 4.0)), 0.0);
        assert_eq!(iou(&seg(3.0, 3.0), &seg(4.0, 4.0)), 0.0);
        // touching intervals
        assert_eq!(iou(&seg(0.0, 2.0), &seg(2.0, 4.0)), 0.0);
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_reward("<think>t</think><answer>a</answer><correct>c</correct>"), 1.0);
        assert_eq!(format_reward("<think>t</think><answer>a</answer>"), 0.0);
        assert_eq!(
            format_reward("<think>t</think><answer>a</answer><answer>b</answer><correct>c</correct>"),
            0.0
        );
    }

    #[test]
    fn refuse_iou_examples() {
        let out = StructuredOutput::from_sections("t", "2 to 6", None);
        assert!((refuse_iou_reward(&relevant(), &out) - 1.0 / 3.0).abs() < 1e-12);
        let refusal = StructuredOutput::from_sections("t", "not relevant", None);
        assert_eq!(refuse_iou_reward(&irrelevant(), &refusal), 1.0);
        assert_eq!(refuse_iou_reward(&relevant(), &refusal), 0.0);
        let grounded = StructuredOutput::from_sections("t", "3.0 to 9.0", None);
        assert_eq!(refuse_iou_reward(&irrelevant(), &grounded), 0.0);
    }

    #[test]
    fn explain_examples() {
        let e = table();
        let refs = PairIndex::build(&[relevant(), irrelevant()]).references(&irrelevant()).unwrap();
        assert_eq!(refs.negative, "From 4 to 8 seconds.");
        let out = |a: &str| StructuredOutput::from_sections("t", a, None);
        assert_eq!(explain_reward(&refs, &out(REFUSAL), &e).unwrap(), 1.0);
        assert_eq!(explain_reward(&refs, &out("From 4 to 8 seconds."), &e).unwrap(), -1.0);
        assert!(explain_reward(&refs, &out("halfway"), &e).unwrap().abs() < 1e-15);
        // antisymmetry
        let swapped = AnswerReferences {
            positive: refs.negative.clone(),
            negative: refs.positive.clone(),
        };
        assert_eq!(explain_reward(&swapped, &out(REFUSAL), &e).unwrap(), -1.0);
    }

    #[test]
    fn correction_examples() {
        let e = table();
        let with = |c: Option<&str>| StructuredOutput::from_sections("t", "x", c);
        assert_eq!(correction_reward(&relevant(), &with(Some(ORIGINAL)), &e).unwrap(), 0.0);
        assert_eq!(correction_reward(&irrelevant(), &with(Some(ORIGINAL)), &e).unwrap(), 1.0);
        // the table embedder rejects "", so an empty section must not reach it
        assert_eq!(correction_reward(&irrelevant(), &with(None), &e).unwrap(), 0.0);
    }

    #[test]
    fn totals() {
        let e = table();
        let data = [relevant(), irrelevant()];
        let engine = RewardEngine::new(&e, RewardOptions::default(), &data);

        let perfect_rel = "<think>t</think><answer>From 4 to 8 seconds.</answer><correct></correct>";
        let b = engine.score(&data[0], perfect_rel).unwrap();
        assert_eq!(b, RewardBreakdown::new(1.0, 1.0, 1.0, 0.0));
        assert_eq!(b.total, 3.0);

        let perfect_irr = format!("<think>t</think><answer>{REFUSAL}</answer><correct>{ORIGINAL}</correct>");
        let b = engine.score(&data[1], &perfect_irr).unwrap();
        assert_eq!(b, RewardBreakdown::new(1.0, 1.0, 1.0, 1.0));
        assert_eq!(b.total, 4.0);

        let b = engine.score(&data[1], "complete garbage").unwrap();
        assert_eq!(b, RewardBreakdown::new(0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn broken_format_fallback_and_gating() {
        let e = table();
        let refs = PairIndex::build(&[relevant(), irrelevant()]).references(&irrelevant()).unwrap();
        let raw = format!("<answer>{REFUSAL}</answer><correct>{ORIGINAL}</correct>");
        let b = total_reward(&irrelevant(), &refs, &raw, &e, RewardOptions::default()).unwrap();
        assert_eq!(b, RewardBreakdown::new(0.0, 1.0, 1.0, 1.0));
        let strict = RewardOptions { strict_format_gating: true };
        let b = total_reward(&irrelevant(), &refs, &raw, &e, strict).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn pairing() {
        let idx = PairIndex::build(&[relevant(), irrelevant()]);
        let r = idx.references(&relevant()).unwrap();
        assert_eq!(r.positive, "From 4 to 8 seconds.");
        assert_eq!(r.negative, REFUSAL);

        let lonely = PairIndex::build(&[relevant()]);
        assert_eq!(lonely.references(&relevant()).unwrap().negative, SURROGATE_REFUSAL);
        let orphan = PairIndex::build(&[irrelevant()]);
        assert!(matches!(orphan.references(&irrelevant()), Err(RewardError::MissingPair(_))));
    }

    #[test]
    fn rendering() {
        assert_eq!(render_time_answer(&seg(12.5, 30.0)), "From 12.5 to 30 seconds.");
        assert_eq!(extract_segment(&render_time_answer(&seg(12.5, 30.0))), Some(seg(12.5, 30.0)));
    }

    #[test]
    fn embedder_errors_carry_context() {
        let e = TableEmbedder(vec![]);
        let refs = AnswerReferences {
            positive: "p".into(),
            negative: "n".into(),
        };
        let err = total_reward(&irrelevant(), &refs, "<answer>x</answer>", &e, RewardOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("explain"));
    }

    #[test]
    fn decomposition_is_exact_under_hash_embedder() {
        let e = HashEmbedder::new();
        let data = [relevant(), irrelevant()];
        let engine = RewardEngine::new(&e, RewardOptions::default(), &data);
        for raw in [
            "<think>a</think><answer>1 to 5</answer><correct>pasta</correct>",
            "<answer>nope, wrong action</answer>",
            "",
        ] {
            for s in &data {
                let b = engine.score(s, raw).unwrap();
                assert_eq!(b.total, b.format + b.refuse_iou + b.explain + b.correction);
                assert!((0.0..=1.0).contains(&b.refuse_iou));
                assert!((-1.0..=1.0).contains(&b.correction));
            }
        }
    }
}
