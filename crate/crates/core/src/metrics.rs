//! Relevance-aware evaluation metrics and report aggregation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{parse_category_path, DifficultyTier, GroundingSample, Relevance, RelevanceCategory};
use crate::error::MetricError;
use crate::prompts::PromptId;
use crate::providers::{cosine_sim, CompletionRequest, EmbeddingProvider, LlmClient, ResponseFormat};
use crate::reward::iou;
use crate::template::{extract_sections_lenient, parse_output, StructuredOutput};

pub const RECALL_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
pub const LLM_SCORE_MAX: f64 = 5.0;
pub const CLASSIFY_TEMPERATURE: f64 = 0.0;

/// One model output prepared for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub raw_output: String,
    pub parsed: Option<StructuredOutput>,
    pub predicted_relevant: bool,
}

impl PredictionRecord {
    /// Parses with the strict template first. Outputs that break the
    /// template fall back to their `<answer>` section, or to the whole text
    /// when no answer section exists; only empty output has no parse.
    pub fn from_raw(sample_id: impl Into<String>, raw_output: impl Into<String>) -> Self {
        let raw_output = raw_output.into();
        let parsed = match parse_output(&raw_output).0 {
            Some(out) => Some(out),
            None => {
                let sections = extract_sections_lenient(&raw_output);
                match sections.answer {
                    Some(answer) => Some(StructuredOutput::from_sections(
                        sections.think.as_deref().unwrap_or(""),
                        &answer,
                        sections.correct.as_deref(),
                    )),
                    None if raw_output.trim().is_empty() => None,
                    None => Some(StructuredOutput::from_sections("", raw_output.trim(), None)),
                }
            }
        };
        let predicted_relevant = parsed.as_ref().is_some_and(|p| p.segment.is_some());
        Self {
            sample_id: sample_id.into(),
            raw_output,
            parsed,
            predicted_relevant,
        }
    }

    pub fn answer(&self) -> &str {
        self.parsed.as_ref().map(|p| p.answer.as_str()).unwrap_or("")
    }
}

pub fn ra_iou(sample: &GroundingSample, pred: &PredictionRecord) -> f64 {
    let predicted = pred.parsed.as_ref().and_then(|p| p.segment);
    match (sample.gt_segment(), predicted) {
        (Some(gt), Some(seg)) => iou(&gt, &seg),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

/// Fraction of scores strictly greater than `m`.
pub fn recall_at(scores: &[f64], m: f64) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(m > 0.0 && m <= 1.0) {
        return Err(MetricError::InvalidThreshold(m));
    }
    Ok(scores.iter().filter(|s| **s > m).count() as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub relevant: f64,
    pub irrelevant: f64,
    pub average: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-vs-rest F1 for both classes and their macro mean. Each pair is
/// `(ground truth, predicted_relevant)`.
pub fn f1_scores(pairs: &[(Relevance, bool)]) -> Result<F1Scores, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    // confusion counts with Relevant as the positive class
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (gt, pred) in pairs {
        match (gt, pred) {
            (Relevance::Relevant, true) => tp += 1,
            (Relevance::Irrelevant, true) => fp += 1,
            (Relevance::Relevant, false) => fn_ += 1,
            (Relevance::Irrelevant, false) => tn += 1,
        }
    }
    let relevant = f1(tp, fp, fn_);
    let irrelevant = f1(tn, fn_, fp);
    Ok(F1Scores {
        relevant,
        irrelevant,
        average: (relevant + irrelevant) / 2.0,
    })
}

/// `|pred ∩ gt| / |pred ∪ gt|`, 0 when nothing was predicted.
pub fn rt_iou(pred: &BTreeSet<RelevanceCategory>, gt: &BTreeSet<RelevanceCategory>) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let inter = pred.intersection(gt).count();
    let union = pred.union(gt).count();
    inter as f64 / union as f64
}

/// Calls `llm` and parses the reply, asking once more when it does not
/// parse. Provider errors are not retried here.
fn ask_twice<T>(
    llm: &dyn LlmClient,
    request: &CompletionRequest,
    parse: impl Fn(&str) -> Result<T, MetricError>,
) -> Result<T, MetricError> {
    let reply = llm.complete(request)?;
    match parse(&reply) {
        Err(MetricError::LlmSchema(first)) => {
            warn!("judge reply did not parse ({first}); asking again");
            parse(&llm.complete(request)?)
        }
        other => other,
    }
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn parse_category_reply(reply: &str) -> Result<BTreeSet<RelevanceCategory>, MetricError> {
    let items: Vec<Value> = serde_json::from_str(strip_fences(reply))
        .map_err(|e| MetricError::LlmSchema(format!("expected a JSON array of strings: {e}")))?;
    let mut out = BTreeSet::new();
    for item in items {
        let path = item
            .as_str()
            .ok_or_else(|| MetricError::LlmSchema(format!("non-string category {item}")))?;
        match parse_category_path(path) {
            Ok(c) => {
                out.insert(c);
            }
            Err(_) => warn!("dropping unknown category path {path:?}"),
        }
    }
    Ok(out)
}

/// Asks the refusal-category classifier which categories a refusal cites.
pub fn extract_pred_categories(
    refusal_text: &str,
    llm: &dyn LlmClient,
) -> Result<BTreeSet<RelevanceCategory>, MetricError> {
    let request = CompletionRequest {
        system_prompt: PromptId::RefusalCategoryClassifier.text().to_string(),
        user_payload: json!({ "generated_response": refusal_text }).to_string(),
        response_format: ResponseFormat::Json,
        temperature: CLASSIFY_TEMPERATURE,
    };
    ask_twice(llm, &request, parse_category_reply)
}

/// Embedding cosine between generated and reference text, floored at 0.
pub fn sbert_score(
    generated: &str,
    reference: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    let g = embedder.embed(generated)?;
    let r = embedder.embed(reference)?;
    Ok(cosine_sim(&g, &r)?.max(0.0))
}

fn score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\{\s*['"]score['"]\s*:\s*(-?[0-9]+(?:\.[0-9]+)?)\s*,?\s*\}$"#).expect("valid regex")
    })
}

fn parse_score_reply(reply: &str) -> Result<f64, MetricError> {
    let text = strip_fences(reply);
    let caps = score_regex()
        .captures(text)
        .ok_or_else(|| MetricError::LlmSchema(format!("expected {{'score': x}}, got {text:?}")))?;
    let x: f64 = caps[1]
        .parse()
        .map_err(|_| MetricError::LlmSchema(format!("bad score {:?}", &caps[1])))?;
    if !(0.0..=LLM_SCORE_MAX).contains(&x) {
        return Err(MetricError::OutOfRange(x));
    }
    Ok(x)
}

/// Reasoning-consistency judge score in [0, 5].
pub fn llm_score(generated: &str, reference: &str, llm: &dyn LlmClient) -> Result<f64, MetricError> {
    let request = CompletionRequest {
        system_prompt: PromptId::ConsistencyJudge.text().to_string(),
        user_payload: json!({ "gt_response": reference, "generated_response": generated }).to_string(),
        response_format: ResponseFormat::Text,
        temperature: CLASSIFY_TEMPERATURE,
    };
    ask_twice(llm, &request, parse_score_reply)
}

/// Providers for the explanation-quality metrics.
#[derive(Clone, Copy)]
pub struct Judges<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub llm: &'a dyn LlmClient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads for per-sample scoring; 0 uses the global pool.
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    #[serde(rename = "0.3")]
    pub r03: f64,
    #[serde(rename = "0.5")]
    pub r05: f64,
    #[serde(rename = "0.7")]
    pub r07: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub tier: DifficultyTier,
    pub n_samples: usize,
    /// Fraction of the tier's samples answered without a segment.
    pub refusal_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rt_iou_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbert_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_score_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_relevant: usize,
    pub n_irrelevant: usize,
    pub judged: bool,
    pub ra_miou: f64,
    pub recall_at: RecallAt,
    pub f1: F1Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rt_iou_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbert_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_score_mean: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_tier: Vec<TierReport>,
}

pub const CSV_HEADER: &str = "R@0.3,R@0.5,R@0.7,mIoU,F1_relevant,F1_irrelevant,F1_average";

impl EvalReport {
    /// One CSV row in percent with one decimal, in the column order of
    /// [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let cols = [
            self.recall_at.r03,
            self.recall_at.r05,
            self.recall_at.r07,
            self.ra_miou,
            self.f1.relevant,
            self.f1.irrelevant,
            self.f1.average,
        ];
        let mut row = String::new();
        for (i, c) in cols.iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            write!(row, "{:.1}", c * 100.0).expect("write to string");
        }
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SampleScore {
    ra_iou: f64,
    predicted_relevant: bool,
    rt_iou: Option<f64>,
    sbert: Option<f64>,
    llm: Option<f64>,
}

fn score_sample(
    sample: &GroundingSample,
    pred: &PredictionRecord,
    judges: Option<Judges<'_>>,
) -> Result<SampleScore, MetricError> {
    let mut s = SampleScore {
        ra_iou: ra_iou(sample, pred),
        predicted_relevant: pred.predicted_relevant,
        rt_iou: None,
        sbert: None,
        llm: None,
    };
    if let (Some(j), Some(refusal)) = (judges, sample.gt_refusal()) {
        let answer = pred.answer().trim();
        if answer.is_empty() {
            s.rt_iou = Some(0.0);
            s.sbert = Some(0.0);
            s.llm = Some(0.0);
        } else {
            let gt: BTreeSet<RelevanceCategory> =
                sample.gt_categories().unwrap_or(&[]).iter().copied().collect();
            s.rt_iou = Some(rt_iou(&extract_pred_categories(answer, j.llm)?, &gt));
            s.sbert = Some(sbert_score(answer, refusal, j.embedder)?);
            s.llm = Some(llm_score(answer, refusal, j.llm)?);
        }
    }
    Ok(s)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Pairs every sample with exactly one prediction, sorted by sample id.
pub fn match_predictions<'a>(
    dataset: &'a [GroundingSample],
    predictions: &'a [PredictionRecord],
) -> Result<Vec<(&'a GroundingSample, &'a PredictionRecord)>, MetricError> {
    if dataset.is_empty() || predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(MetricError::DuplicatePrediction(p.sample_id.clone()));
        }
    }
    let known: HashSet<&str> = dataset.iter().map(|s| s.sample_id.as_str()).collect();
    let mut unknown: Vec<String> = by_id
        .keys()
        .filter(|id| !known.contains(*id))
        .map(|id| id.to_string())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(MetricError::UnknownPrediction(unknown));
    }
    let mut missing: Vec<String> = dataset
        .iter()
        .filter(|s| !by_id.contains_key(s.sample_id.as_str()))
        .map(|s| s.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(MetricError::MissingPrediction(missing));
    }
    let mut pairs: Vec<_> = dataset.iter().map(|s| (s, by_id[s.sample_id.as_str()])).collect();
    pairs.sort_by(|a, b| a.0.sample_id.cmp(&b.0.sample_id));
    Ok(pairs)
}

/// Computes every metric. Explanation metrics (RT-IoU, SBert, LLM score)
/// run only on irrelevant samples and only when `judges` is given.
pub fn aggregate_report(
    dataset: &[GroundingSample],
    predictions: &[PredictionRecord],
    judges: Option<Judges<'_>>,
    options: EvalOptions,
) -> Result<EvalReport, MetricError> {
    let pairs = match_predictions(dataset, predictions)?;

    let compute = || -> Result<Vec<SampleScore>, MetricError> {
        pairs
            .par_iter()
            .map(|(s, p)| score_sample(s, p, judges))
            .collect()
    };
    let scores = if options.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| MetricError::ThreadPool(e.to_string()))?
            .install(compute)?
    } else {
        compute()?
    };

    let ra: Vec<f64> = scores.iter().map(|s| s.ra_iou).collect();
    let f1_pairs: Vec<(Relevance, bool)> = pairs
        .iter()
        .zip(&scores)
        .map(|((s, _), sc)| (s.relevance(), sc.predicted_relevant))
        .collect();

    let mut per_tier = Vec::new();
    for tier in DifficultyTier::ALL {
        let members: Vec<&SampleScore> = pairs
            .iter()
            .zip(&scores)
            .filter(|((s, _), _)| s.difficulty() == Some(tier))
            .map(|(_, sc)| sc)
            .collect();
        if members.is_empty() {
            continue;
        }
        per_tier.push(TierReport {
            tier,
            n_samples: members.len(),
            refusal_rate: ratio(members.iter().filter(|m| !m.predicted_relevant).count(), members.len()),
            rt_iou_mean: mean_of(members.iter().filter_map(|m| m.rt_iou)),
            sbert_mean: mean_of(members.iter().filter_map(|m| m.sbert)),
            llm_score_mean: mean_of(members.iter().filter_map(|m| m.llm)),
        });
    }

    let n_relevant = pairs.iter().filter(|(s, _)| s.is_relevant()).count();
    Ok(EvalReport {
        n_samples: pairs.len(),
        n_relevant,
        n_irrelevant: pairs.len() - n_relevant,
        judged: judges.is_some(),
        ra_miou: mean_of(ra.iter().copied()).unwrap_or(0.0),
        recall_at: RecallAt {
            r03: recall_at(&ra, RECALL_THRESHOLDS[0])?,
            r05: recall_at(&ra, RECALL_THRESHOLDS[1])?,
            r07: recall_at(&ra, RECALL_THRESHOLDS[2])?,
        },
        f1: f1_scores(&f1_pairs)?,
        rt_iou_mean: mean_of(scores.iter().filter_map(|s| s.rt_iou)),
        sbert_mean: mean_of(scores.iter().filter_map(|s| s.sbert)),
        llm_score_mean: mean_of(scores.iter().filter_map(|s| s.llm)),
        per_tier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Segment;
    use crate::error::ProviderError;
    use crate::providers::{HashEmbedder, OfflineLlm, ScriptedLlm};
    use proptest::prelude::*;
    use std::sync::Arc;
    use RelevanceCategory::*;

    fn rel(id: &str, s: f64, e: f64) -> GroundingSample {
        GroundingSample::relevant(id, "v", "ctx", format!("query {id}"), Segment::new(s, e).unwrap()).unwrap()
    }

    fn irr(id: &str, tier: DifficultyTier) -> GroundingSample {
        let cats = [ObjectExistence, Counting, SceneExistence][..tier.modified_element_count()].to_vec();
        GroundingSample::irrelevant(
            id,
            "v",
            "ctx",
            format!("altered {id}"),
            tier,
            "There is no dog in the video; the object is absent.",
            "query r",
            cats,
        )
        .unwrap()
    }

    fn pred(id: &str, raw: &str) -> PredictionRecord {
        PredictionRecord::from_raw(id, raw)
    }

    #[test]
    fn ra_iou_examples() {
        let r = rel("r", 4.0, 8.0);
        let got = ra_iou(&r, &pred("r", "<think>t</think><answer>2 to 6</answer><correct></correct>"));
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
        let i = irr("i", DifficultyTier::Strong);
        assert_eq!(ra_iou(&i, &pred("i", "<think>t</think><answer>No such dog.</answer><correct>x</correct>")), 1.0);
        assert_eq!(ra_iou(&r, &pred("r", "<think>t</think><answer>No.</answer><correct>x</correct>")), 0.0);
        assert_eq!(ra_iou(&i, &pred("i", "<answer>3 to 5 s</answer>")), 0.0);
    }

    #[test]
    fn prediction_fallbacks() {
        let p = pred("a", "The event happens from 3 to 5 seconds.");
        assert!(p.predicted_relevant);
        assert_eq!(p.parsed.as_ref().unwrap().segment, Some(Segment::new(3.0, 5.0).unwrap()));
        let p = pred("a", "<answer>not here</answer> trailing");
        assert_eq!(p.answer(), "not here");
        assert!(!p.predicted_relevant);
        let p = pred("a", "   ");
        assert!(p.parsed.is_none());
        assert!(!p.predicted_relevant);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&[1.0, 1.0, 0.0, 0.4], 0.5).unwrap(), 0.5);
        assert_eq!(recall_at(&[1.0; 5], 0.7).unwrap(), 1.0);
        assert_eq!(recall_at(&[0.0; 5], 0.3).unwrap(), 0.0);
        // strict inequality
        assert_eq!(recall_at(&[0.5], 0.5).unwrap(), 0.0);
        assert!(matches!(recall_at(&[], 0.5), Err(MetricError::EmptyInput)));
        assert!(matches!(recall_at(&[1.0], 0.0), Err(MetricError::InvalidThreshold(_))));
        assert!(matches!(recall_at(&[1.0], 1.5), Err(MetricError::InvalidThreshold(_))));
    }

    #[test]
    fn f1_examples() {
        use Relevance::{Irrelevant as I, Relevant as R};
        let always = f1_scores(&[(R, true), (R, true), (I, true), (I, true)]).unwrap();
        assert!((always.relevant - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(always.irrelevant, 0.0);
        assert!((always.average - 1.0 / 3.0).abs() < 1e-12);

        let perfect = f1_scores(&[(R, true), (I, false)]).unwrap();
        assert_eq!((perfect.relevant, perfect.irrelevant, perfect.average), (1.0, 1.0, 1.0));

        let one_off = f1_scores(&[(R, true), (R, true), (I, false), (I, true)]).unwrap();
        assert!((one_off.relevant - 0.8).abs() < 1e-12);
        assert!((one_off.irrelevant - 2.0 / 3.0).abs() < 1e-12);
        assert!((one_off.average - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-12);

        assert!(matches!(f1_scores(&[]), Err(MetricError::EmptyInput)));
    }

    proptest! {
        #[test]
        fn f1_relabeling_swaps_classes(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
            let lab = |r: bool| if r { Relevance::Relevant } else { Relevance::Irrelevant };
            let a: Vec<_> = pairs.iter().map(|(g, p)| (lab(*g), *p)).collect();
            let b: Vec<_> = pairs.iter().map(|(g, p)| (lab(!*g), !*p)).collect();
            let (fa, fb) = (f1_scores(&a).unwrap(), f1_scores(&b).unwrap());
            prop_assert_eq!(fa.relevant, fb.irrelevant);
            prop_assert_eq!(fa.irrelevant, fb.relevant);
            prop_assert!((fa.average - fb.average).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&fa.relevant) && (0.0..=1.0).contains(&fa.irrelevant));
        }

        #[test]
        fn recall_is_non_increasing(scores in prop::collection::vec(0.0f64..=1.0, 1..30), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(recall_at(&scores, lo).unwrap() >= recall_at(&scores, hi).unwrap());
        }
    }

    #[test]
    fn rt_iou_examples() {
        let set = |cs: &[RelevanceCategory]| cs.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(rt_iou(&set(&[ObjectExistence]), &set(&[ObjectExistence])), 1.0);
        assert_eq!(rt_iou(&set(&[ObjectExistence, Counting]), &set(&[ObjectExistence])), 0.5);
        assert_eq!(rt_iou(&set(&[Comparison]), &set(&[ObjectExistence])), 0.0);
        assert_eq!(rt_iou(&set(&[]), &set(&[ObjectExistence])), 0.0);
    }

    #[test]
    fn category_extraction() {
        let llm = ScriptedLlm::new([r#"["Object/ObjectExistence","Attribute/Counting"]"#]);
        assert_eq!(extract_pred_categories("x", &llm).unwrap().len(), 2);
        let llm = ScriptedLlm::new(["[]"]);
        assert!(extract_pred_categories("x", &llm).unwrap().is_empty());
        let llm = ScriptedLlm::new([r#"["Object/Unicorn"]"#]);
        assert!(extract_pred_categories("x", &llm).unwrap().is_empty());
        // one re-ask, then give up
        let llm = ScriptedLlm::new(["nope", r#"["Attribute/Counting"]"#]);
        assert_eq!(extract_pred_categories("x", &llm).unwrap().len(), 1);
        assert_eq!(llm.call_count(), 2);
        let llm = ScriptedLlm::new(["nope", "still nope"]);
        assert!(matches!(extract_pred_categories("x", &llm), Err(MetricError::LlmSchema(_))));
        assert_eq!(llm.call_count(), 2);
    }

    #[test]
    fn llm_score_examples() {
        assert_eq!(llm_score("a", "b", &ScriptedLlm::new(["{'score': 4.0}"])).unwrap(), 4.0);
        assert_eq!(llm_score("a", "b", &ScriptedLlm::new(["{\"score\": 0}"])).unwrap(), 0.0);
        assert!(matches!(
            llm_score("a", "b", &ScriptedLlm::new(["{'score': 6}"])),
            Err(MetricError::OutOfRange(x)) if x == 6.0
        ));
        assert!(matches!(
            llm_score("a", "b", &ScriptedLlm::new(["The answer is quite good."])),
            Err(MetricError::LlmSchema(_))
        ));
        let flaky = ScriptedLlm::from_results([Err("down".to_string())]);
        assert!(matches!(llm_score("a", "b", &flaky), Err(MetricError::Provider(_))));
    }

    struct FixedEmbedder;

    impl EmbeddingProvider for FixedEmbedder {
        fn provider_id(&self) -> &str {
            "fixed"
        }
        fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
            // cos(a, b) = -0.1
            Ok(Arc::new(if text == "a" { vec![1.0, 0.0] } else { vec![-0.1, 0.99498743710662] }))
        }
    }

    #[test]
    fn sbert_examples() {
        let e = HashEmbedder::new();
        assert!((sbert_score("the dog runs", "the dog runs", &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sbert_score("a", "b", &FixedEmbedder).unwrap(), 0.0);
        let d = sbert_score("purple giraffes dance", "quantum tax ledger", &e).unwrap();
        assert!(d < 0.2);
    }

    fn suite() -> (Vec<GroundingSample>, Vec<PredictionRecord>) {
        let data = vec![
            rel("a", 4.0, 8.0),
            rel("b", 0.0, 10.0),
            irr("c", DifficultyTier::Strong),
            irr("d", DifficultyTier::Weak),
        ];
        let preds = vec![
            pred("d", "<think>t</think><answer>4 to 6</answer><correct></correct>"),
            pred("a", "<think>t</think><answer>2 to 6</answer><correct></correct>"),
            pred("b", "<think>t</think><answer>0 to 10</answer><correct></correct>"),
            pred("c", "<think>t</think><answer>There is no dog; the object is absent.</answer><correct>query r</correct>"),
        ];
        (data, preds)
    }

    #[test]
    fn report_composes_per_sample_metrics() {
        let (data, preds) = suite();
        let r = aggregate_report(&data, &preds, None, EvalOptions::default()).unwrap();
        assert_eq!(r.n_samples, 4);
        assert!((r.ra_miou - (1.0 / 3.0 + 1.0 + 1.0 + 0.0) / 4.0).abs() < 1e-12);
        assert_eq!(r.recall_at.r03, 0.75);
        assert_eq!(r.recall_at.r05, 0.5);
        assert!((r.f1.relevant - 0.8).abs() < 1e-12);
        assert!(r.rt_iou_mean.is_none() && r.sbert_mean.is_none());
        assert_eq!(r.per_tier.len(), 2);
        assert_eq!(r.per_tier[0].tier, DifficultyTier::Strong);
        assert_eq!(r.per_tier[0].refusal_rate, 1.0);
        assert_eq!(r.per_tier[1].refusal_rate, 0.0);

        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("sbert_mean"));
    }

    #[test]
    fn report_with_judges() {
        let (data, preds) = suite();
        let (e, llm) = (HashEmbedder::new(), OfflineLlm::new());
        let judges = Judges { embedder: &e, llm: &llm };
        let r = aggregate_report(&data, &preds, Some(judges), EvalOptions { threads: 2 }).unwrap();
        // "c" cites object + absent -> {ObjectExistence} vs gt {ObjectExistence}
        // "d" cites nothing -> 0
        assert_eq!(r.rt_iou_mean, Some(0.5));
        assert!(r.sbert_mean.unwrap() > 0.0);
        assert!(r.llm_score_mean.is_some());
        let again = aggregate_report(&data, &preds, Some(judges), EvalOptions { threads: 1 }).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn empty_answer_skips_providers() {
        let data = vec![irr("c", DifficultyTier::Strong)];
        let llm = ScriptedLlm::new(Vec::<String>::new()).strict();
        let judges = Judges { embedder: &FixedEmbedder, llm: &llm };
        let r = aggregate_report(&data, &[pred("c", "<think>t</think><answer></answer>")], Some(judges), EvalOptions::default())
            .unwrap();
        assert_eq!(r.llm_score_mean, Some(0.0));
        assert_eq!(llm.call_count(), 0);
    }

    #[test]
    fn coverage_errors() {
        let (data, preds) = suite();
        let err = aggregate_report(&data, &preds[1..], None, EvalOptions::default()).unwrap_err();
        assert!(matches!(err, MetricError::MissingPrediction(ids) if ids == vec!["d".to_string()]));
        let mut dup = preds.clone();
        dup.push(pred("a", "x"));
        assert!(matches!(
            aggregate_report(&data, &dup, None, EvalOptions::default()),
            Err(MetricError::DuplicatePrediction(_))
        ));
        let mut extra = preds.clone();
        extra.push(pred("zz", "x"));
        assert!(matches!(
            aggregate_report(&data, &extra, None, EvalOptions::default()),
            Err(MetricError::UnknownPrediction(_))
        ));
        assert!(matches!(aggregate_report(&data, &[], None, EvalOptions::default()), Err(MetricError::EmptyInput)));
    }

    #[test]
    fn tierless_report_omits_section() {
        let data = vec![rel("a", 0.0, 1.0)];
        let r = aggregate_report(&data, &[pred("a", "0 to 1")], None, EvalOptions::default()).unwrap();
        assert!(r.per_tier.is_empty());
        assert!(!serde_json::to_string(&r).unwrap().contains("per_tier"));
    }

    #[test]
    fn csv_row_format() {
        let (data, preds) = suite();
        let r = aggregate_report(&data, &preds, None, EvalOptions::default()).unwrap();
        assert_eq!(r.csv_row(), "75.0,50.0,50.0,58.3,80.0,66.7,73.3");
        assert!(r.to_csv().starts_with(CSV_HEADER));
    }
}
