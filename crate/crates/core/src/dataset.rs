//! Hard-irrelevant dataset construction.
//!
//! For every relevant sample the builder asks the LLM which semantic
//! categories could turn the query into a plausible mismatch, then asks for
//! one negative query per difficulty tier together with its refusal answer.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{parse_category_path, DifficultyTier, GroundingSample, RelevanceCategory};
use crate::error::{BuildError, ProviderError};
use crate::io::{sample_line, write_atomic};
use crate::prompts::PromptId;
use crate::providers::{CompletionRequest, LlmClient, ResponseFormat};

pub const TOP_CATEGORIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub generation_temperature: f64,
    pub classification_temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            generation_temperature: 0.7,
            classification_temperature: 0.0,
        }
    }
}

/// Categories the LLM judged usable for building negatives, in the order
/// it returned them.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPlan {
    pub query: String,
    pub eligible: Vec<(RelevanceCategory, String)>,
    /// Fewer than three distinct valid categories came back even after a
    /// re-ask.
    pub under_filled: bool,
}

impl CategoryPlan {
    pub fn selected_top3(&self) -> Vec<RelevanceCategory> {
        self.eligible.iter().take(TOP_CATEGORIES).map(|(c, _)| *c).collect()
    }

    /// Tier plans with prefix nesting: strong uses the first category,
    /// moderate the first two and weak all three. Tiers that need more
    /// categories than the plan has are dropped.
    pub fn tier_plans(&self) -> Vec<(DifficultyTier, Vec<RelevanceCategory>)> {
        let top = self.selected_top3();
        DifficultyTier::ALL
            .into_iter()
            .filter(|t| t.modified_element_count() <= top.len())
            .map(|t| (t, top[..t.modified_element_count()].to_vec()))
            .collect()
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

fn parse_json_object(reply: &str) -> Result<Value, BuildError> {
    let v: Value = serde_json::from_str(strip_fences(reply))
        .map_err(|e| BuildError::LlmSchema(format!("reply is not JSON: {e}")))?;
    if !v.is_object() {
        return Err(BuildError::LlmSchema("reply is not a JSON object".into()));
    }
    Ok(v)
}

struct ParsedCategories {
    valid: Vec<(RelevanceCategory, String)>,
    unknown: Vec<String>,
}

fn parse_category_reply(reply: &str) -> Result<ParsedCategories, BuildError> {
    let v = parse_json_object(reply)?;
    let items = v
        .get("eligible_categories")
        .and_then(Value::as_array)
        .ok_or_else(|| BuildError::LlmSchema("missing eligible_categories array".into()))?;
    let mut out = ParsedCategories {
        valid: Vec::new(),
        unknown: Vec::new(),
    };
    for item in items {
        let path = item
            .get("path")
            .and_then(Value::as_str)
            .ok_or_else(|| BuildError::LlmSchema(format!("category entry without path: {item}")))?;
        let reason = item.get("reason").and_then(Value::as_str).unwrap_or("").to_string();
        match parse_category_path(path) {
            Ok(c) if out.valid.iter().any(|(seen, _)| *seen == c) => {}
            Ok(c) => out.valid.push((c, reason)),
            Err(_) => {
                warn!("dropping unknown category path {path:?}");
                out.unknown.push(path.to_string());
            }
        }
    }
    Ok(out)
}

/// Asks for the categories that could make `query` irrelevant. A reply that
/// does not parse, or yields fewer than three valid categories, is asked
/// again once.
pub fn extract_categories(
    query: &str,
    llm: &dyn LlmClient,
    params: &GenerationParams,
) -> Result<CategoryPlan, BuildError> {
    if query.trim().is_empty() {
        return Err(BuildError::Ineligible("empty query".into()));
    }
    let request = CompletionRequest {
        system_prompt: PromptId::CategoryExtraction.text().to_string(),
        user_payload: json!({ "related_query": query }).to_string(),
        response_format: ResponseFormat::Json,
        temperature: params.classification_temperature,
    };
    let first = parse_category_reply(&llm.complete(&request)?);
    let parsed = match first {
        Ok(p) if p.valid.len() >= TOP_CATEGORIES => p,
        Ok(p) => {
            warn!("only {} valid categories for {query:?}; asking again", p.valid.len());
            match parse_category_reply(&llm.complete(&request)?) {
                Ok(q) if q.valid.len() > p.valid.len() => q,
                Ok(q) => ParsedCategories {
                    valid: p.valid,
                    unknown: [p.unknown, q.unknown].concat(),
                },
                Err(_) => p,
            }
        }
        Err(e) => {
            warn!("category reply rejected ({e}); asking again");
            parse_category_reply(&llm.complete(&request)?)?
        }
    };
    if parsed.valid.is_empty() {
        return Err(BuildError::UnknownCategory(parsed.unknown));
    }
    Ok(CategoryPlan {
        query: query.to_string(),
        under_filled: parsed.valid.len() < TOP_CATEGORIES,
        eligible: parsed.valid,
    })
}

/// One generated negative query.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQuery {
    pub tier: DifficultyTier,
    pub irrel_query: String,
    pub applied_categories: Vec<RelevanceCategory>,
    /// Content of the `<irrelevant_answer>` block.
    pub refusal: String,
    /// Content of each per-category block.
    pub notes: BTreeMap<RelevanceCategory, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBundle {
    pub negatives: Vec<NegativeQuery>,
}

/// Label a tier is sent under in the generation prompt.
fn prompt_label(tier: DifficultyTier) -> &'static str {
    match tier {
        DifficultyTier::Moderate => "moderated",
        t => t.as_str(),
    }
}

/// Content of the single `<tag>...</tag>` block in `text`.
fn single_block(text: &str, tag: &str) -> Result<String, BuildError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    if text.matches(&open).count() != 1 || text.matches(&close).count() != 1 {
        return Err(BuildError::LlmSchema(format!("reasoning needs exactly one <{tag}> block")));
    }
    let start = text.find(&open).expect("counted") + open.len();
    let end = text.find(&close).expect("counted");
    if end < start {
        return Err(BuildError::LlmSchema(format!("<{tag}> block closes before it opens")));
    }
    let body = text[start..end].trim();
    if body.is_empty() {
        return Err(BuildError::LlmSchema(format!("<{tag}> block is empty")));
    }
    Ok(body.to_string())
}

fn parse_applied(value: &Value) -> Result<Vec<RelevanceCategory>, BuildError> {
    let items = value
        .as_array()
        .ok_or_else(|| BuildError::LlmSchema("applied_categories is not an array".into()))?;
    items
        .iter()
        .map(|item| {
            let path = item
                .get("path")
                .and_then(Value::as_str)
                .or_else(|| item.as_str())
                .ok_or_else(|| BuildError::LlmSchema(format!("bad applied category {item}")))?;
            parse_category_path(path).map_err(|_| BuildError::PlanMismatch(format!("unknown category {path}")))
        })
        .collect()
}

fn parse_bundle(
    reply: &str,
    plans: &[(DifficultyTier, Vec<RelevanceCategory>)],
) -> Result<NegativeBundle, BuildError> {
    let v = parse_json_object(reply)?;
    let negs = v
        .get("negs")
        .and_then(Value::as_object)
        .ok_or_else(|| BuildError::LlmSchema("missing negs object".into()))?;
    let mut negatives = Vec::new();
    for (tier, planned) in plans {
        let entry = negs
            .iter()
            .find(|(k, _)| DifficultyTier::parse_label(k) == Some(*tier))
            .map(|(_, e)| e)
            .ok_or(BuildError::MissingTier(*tier))?;
        let field = |name: &str| {
            entry
                .get(name)
                .ok_or_else(|| BuildError::LlmSchema(format!("{tier} entry lacks {name}")))
        };
        let irrel_query = field("irrel_query")?
            .as_str()
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| BuildError::LlmSchema(format!("{tier} irrel_query is not a non-empty string")))?;
        let applied = parse_applied(field("applied_categories")?)?;
        if &applied != planned {
            return Err(BuildError::PlanMismatch(format!(
                "{tier}: expected {:?}, got {:?}",
                planned.iter().map(|c| c.path()).collect::<Vec<_>>(),
                applied.iter().map(|c| c.path()).collect::<Vec<_>>()
            )));
        }
        let tag = field("difficulty_tag")?.as_str().and_then(DifficultyTier::parse_label);
        if tag != Some(*tier) {
            return Err(BuildError::PlanMismatch(format!("{tier}: difficulty_tag does not match")));
        }
        let reasoning = field("reasoning")?
            .as_str()
            .ok_or_else(|| BuildError::LlmSchema(format!("{tier} reasoning is not a string")))?;
        let refusal = single_block(reasoning, "irrelevant_answer")?;
        let mut notes = BTreeMap::new();
        for c in &applied {
            notes.insert(*c, single_block(reasoning, &c.block_tag())?);
        }
        negatives.push(NegativeQuery {
            tier: *tier,
            irrel_query: irrel_query.to_string(),
            applied_categories: applied,
            refusal,
            notes,
        });
    }
    Ok(NegativeBundle { negatives })
}

fn format_timestamp(sample: &GroundingSample) -> String {
    let seg = sample.gt_segment().expect("relevant sample");
    format!("{}-{} second", seg.start(), seg.end())
}

/// Generates one negative query per tier the plan supports. Malformed
/// replies are asked again once; plan mismatches and missing tiers are not.
pub fn generate_negatives(
    sample: &GroundingSample,
    plan: &CategoryPlan,
    llm: &dyn LlmClient,
    params: &GenerationParams,
) -> Result<NegativeBundle, BuildError> {
    if !sample.is_relevant() {
        return Err(BuildError::Ineligible(format!("{} is not a relevant sample", sample.sample_id)));
    }
    let plans = plan.tier_plans();
    if plans.is_empty() {
        return Err(BuildError::Ineligible("plan has no categories".into()));
    }
    let payload = json!({
        "related_query": sample.query,
        "related_query_timestamp": format_timestamp(sample),
        "plans": plans.iter().map(|(tier, cats)| json!({
            "difficulty": prompt_label(*tier),
            "applied_categories": cats.iter().map(|c| json!({"path": c.path()})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "video_context": sample.video_context,
    });
    let request = CompletionRequest {
        system_prompt: PromptId::NegativeGeneration.text().to_string(),
        user_payload: payload.to_string(),
        response_format: ResponseFormat::Json,
        temperature: params.generation_temperature,
    };
    match parse_bundle(&llm.complete(&request)?, &plans) {
        Err(BuildError::LlmSchema(e)) => {
            warn!("negative bundle rejected for {} ({e}); asking again", sample.sample_id);
            parse_bundle(&llm.complete(&request)?, &plans)
        }
        other => other,
    }
}

pub fn irrelevant_sample_id(source_id: &str, tier: DifficultyTier) -> String {
    format!("{source_id}-{tier}")
}

/// Turns a bundle into validated irrelevant samples.
pub fn bundle_samples(source: &GroundingSample, bundle: &NegativeBundle) -> Result<Vec<GroundingSample>, BuildError> {
    bundle
        .negatives
        .iter()
        .map(|n| {
            let s = GroundingSample::irrelevant(
                irrelevant_sample_id(&source.sample_id, n.tier),
                source.video_id.clone(),
                source.video_context.clone(),
                n.irrel_query.clone(),
                n.tier,
                n.refusal.clone(),
                source.query.clone(),
                n.applied_categories.clone(),
            )?
            .with_category_notes(n.notes.clone())?;
            // round-trip through the on-disk schema so nothing unreadable is written
            crate::domain::validate_sample(&s.to_record())?;
            Ok(s)
        })
        .collect()
}

/// Records for one source sample: the sample itself followed by its
/// negatives.
fn process_sample(
    sample: &GroundingSample,
    llm: &dyn LlmClient,
    params: &GenerationParams,
) -> Result<(Vec<GroundingSample>, bool), BuildError> {
    if !sample.is_relevant() {
        return Err(BuildError::Ineligible(format!("{} is not a relevant sample", sample.sample_id)));
    }
    let plan = extract_categories(&sample.query, llm, params)?;
    let bundle = generate_negatives(sample, &plan, llm, params)?;
    let mut records = vec![sample.clone()];
    records.extend(bundle_samples(sample, &bundle)?);
    Ok((records, plan.under_filled))
}

/// Counts calls and latency of the wrapped client.
struct Metered<'a> {
    inner: &'a dyn LlmClient,
    calls: AtomicU64,
    failures: AtomicU64,
    micros: AtomicU64,
}

impl LlmClient for Metered<'_> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let t = Instant::now();
        let r = self.inner.complete(request);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.micros.fetch_add(t.elapsed().as_micros() as u64, Ordering::Relaxed);
        if r.is_err() {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
        r
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed: Vec<String>,
    pub output_bytes: u64,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Option<Self>, BuildError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| BuildError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn save(&self, path: &Path) -> Result<(), BuildError> {
        write_atomic(path, &serde_json::to_vec_pretty(self).expect("serializes"))?;
        Ok(())
    }
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    sibling(out, ".checkpoint.json")
}

pub fn report_path(out: &Path) -> PathBuf {
    sibling(out, ".report.json")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub strong: usize,
    pub moderate: usize,
    pub weak: usize,
}

impl TierCounts {
    fn bump(&mut self, tier: DifficultyTier) {
        match tier {
            DifficultyTier::Strong => self.strong += 1,
            DifficultyTier::Moderate => self.moderate += 1,
            DifficultyTier::Weak => self.weak += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmStats {
    pub calls: u64,
    pub failures: u64,
    pub total_latency_ms: f64,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub input_samples: usize,
    /// Samples finished in an earlier run and not re-sent.
    pub resumed: usize,
    pub completed: usize,
    pub relevant_written: usize,
    pub irrelevant_written: usize,
    pub per_tier: TierCounts,
    /// Plans with fewer than three categories; such samples get fewer tiers.
    pub under_filled_plans: usize,
    pub skipped: Vec<SkipRecord>,
    pub llm: LlmStats,
}

impl BuildReport {
    pub fn has_skips(&self) -> bool {
        !self.skipped.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub resume: bool,
    pub max_in_flight: usize,
    pub params: GenerationParams,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            resume: false,
            max_in_flight: 8,
            params: GenerationParams::default(),
        }
    }
}

type WorkerResult = Result<(Vec<GroundingSample>, bool), BuildError>;

/// Builds the dataset into `out`, writing records in input order. Per-sample
/// failures are reported and skipped; only I/O errors abort the run. The
/// checkpoint at `<out>.checkpoint.json` is updated after every sample, and
/// the report is written to `<out>.report.json`.
pub fn build_dataset(
    corpus: &[GroundingSample],
    llm: &dyn LlmClient,
    out: &Path,
    options: &BuildOptions,
) -> Result<BuildReport, BuildError> {
    let ckpt_path = checkpoint_path(out);
    let mut checkpoint = if options.resume {
        Checkpoint::load(&ckpt_path)?.unwrap_or_default()
    } else {
        Checkpoint::default()
    };

    let file = OpenOptions::new().create(true).write(true).truncate(false).open(out)?;
    // drop anything written after the last checkpointed sample
    file.set_len(checkpoint.output_bytes)?;
    let mut writer = BufWriter::new(file);
    std::io::Seek::seek(&mut writer, std::io::SeekFrom::Start(checkpoint.output_bytes))?;
    checkpoint.save(&ckpt_path)?;

    let done: HashSet<&str> = checkpoint.completed.iter().map(String::as_str).collect();
    let todo: Vec<&GroundingSample> = corpus.iter().filter(|s| !done.contains(s.sample_id.as_str())).collect();
    let mut report = BuildReport {
        input_samples: corpus.len(),
        resumed: corpus.len() - todo.len(),
        ..BuildReport::default()
    };
    info!("building {} samples ({} already done)", todo.len(), report.resumed);

    let metered = Metered {
        inner: llm,
        calls: AtomicU64::new(0),
        failures: AtomicU64::new(0),
        micros: AtomicU64::new(0),
    };
    let next = AtomicUsize::new(0);
    let workers = options.max_in_flight.max(1).min(todo.len().max(1));

    let io_result: Result<(), BuildError> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, WorkerResult)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (todo, next, metered) = (&todo, &next, &metered);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sample) = todo.get(i) else { break };
                let result = process_sample(sample, metered, &options.params);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Results arrive in any order; hold them until their turn so the
        // file is written in input order.
        let mut pending: BTreeMap<usize, WorkerResult> = BTreeMap::new();
        let mut cursor = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&cursor) {
                let sample = todo[cursor];
                cursor += 1;
                match result {
                    Ok((records, under_filled)) => {
                        for r in &records {
                            let line = sample_line(r);
                            writer.write_all(line.as_bytes())?;
                            checkpoint.output_bytes += line.len() as u64;
                            match r.difficulty() {
                                Some(t) => {
                                    report.per_tier.bump(t);
                                    report.irrelevant_written += 1;
                                }
                                None => report.relevant_written += 1,
                            }
                        }
                        writer.flush()?;
                        report.completed += 1;
                        if under_filled {
                            report.under_filled_plans += 1;
                        }
                        checkpoint.completed.push(sample.sample_id.clone());
                        checkpoint.save(&ckpt_path)?;
                    }
                    Err(e) => {
                        warn!("skipping {}: {e}", sample.sample_id);
                        report.skipped.push(SkipRecord {
                            sample_id: sample.sample_id.clone(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    });
    io_result?;

    let calls = metered.calls.load(Ordering::Relaxed);
    let total_ms = metered.micros.load(Ordering::Relaxed) as f64 / 1000.0;
    report.llm = LlmStats {
        calls,
        failures: metered.failures.load(Ordering::Relaxed),
        total_latency_ms: total_ms,
        mean_latency_ms: if calls == 0 { 0.0 } else { total_ms / calls as f64 },
    };
    let mut f = File::create(report_path(out))?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| BuildError::Io(e.into()))?;
    f.write_all(b"\n")?;
    Ok(report)
}
