//! Chat-completion clients used for dataset construction and judging.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::http::{HttpClient, HttpEndpoint};
use crate::domain::{DifficultyTier, RelevanceCategory};
use crate::error::ProviderError;
use crate::prompts::PromptId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_payload: String,
    pub response_format: ResponseFormat,
    pub temperature: f64,
}

pub trait LlmClient: Send + Sync {
    fn model_id(&self) -> &str;

    /// Returns the model's text reply. Well-formed replies are returned as
    /// they are, even when the model declines the task.
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatClient {
    endpoint: HttpEndpoint,
    model: String,
    http: HttpClient,
}

impl HttpChatClient {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>, http: HttpClient) -> Self {
        Self {
            endpoint,
            model: model.into(),
            http,
        }
    }
}

impl LlmClient for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_payload},
            ],
        });
        if request.response_format == ResponseFormat::Json {
            body["response_format"] = json!({"type": "json_object"});
        }
        let resp = self.http.post_json(&self.endpoint, &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Schema("missing choices[0].message.content".into()))
    }
}

/// Replies from a fixed queue and records every request. Once the queue is
/// empty the last reply repeats, unless the client was built with
/// [`ScriptedLlm::strict`].
pub struct ScriptedLlm {
    replies: Mutex<VecDeque<Result<String, String>>>,
    last: Mutex<Option<Result<String, String>>>,
    strict: bool,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedLlm {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    /// `Err(msg)` entries are returned as transport failures.
    pub fn from_results<I: IntoIterator<Item = Result<String, String>>>(replies: I) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            last: Mutex::new(None),
            strict: false,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl LlmClient for ScriptedLlm {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.requests.lock().unwrap().push(request.clone());
        let next = self.replies.lock().unwrap().pop_front();
        let reply = match next {
            Some(r) => {
                *self.last.lock().unwrap() = Some(r.clone());
                r
            }
            None if !self.strict => self
                .last
                .lock()
                .unwrap()
                .clone()
                .unwrap_or_else(|| Err("no scripted reply".into())),
            None => Err("script exhausted".into()),
        };
        reply.map_err(ProviderError::Transport)
    }
}

/// Deterministic rule-based stand-in for a real model. It recognizes the
/// four bundled system prompts and answers each with well-formed output
/// derived from the payload, so whole pipelines can run offline.
#[derive(Debug, Default, Clone)]
pub struct OfflineLlm;

fn stable_hash(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn word_set(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const CATEGORY_KEYWORDS: [(RelevanceCategory, &[&str]); 11] = [
    (RelevanceCategory::ActionSequence, &["order", "before", "after", "sequence"]),
    (RelevanceCategory::FineGrainedAction, &["action", "verb"]),
    (RelevanceCategory::ObjectExistence, &["object", "absent", "present"]),
    (RelevanceCategory::ObjectPartRelation, &["part", "accessory"]),
    (RelevanceCategory::ObjectSpatialRelation, &["position", "left", "right", "above", "below"]),
    (RelevanceCategory::ObjectMoving, &["direction", "trajectory", "moving"]),
    (RelevanceCategory::SceneExistence, &["scene", "location", "setting"]),
    (RelevanceCategory::SceneTransition, &["transition"]),
    (RelevanceCategory::AttributeValue, &["color", "size", "material", "shape", "state"]),
    (RelevanceCategory::Counting, &["number", "count", "many"]),
    (RelevanceCategory::Comparison, &["comparison", "faster", "slower", "larger", "smaller"]),
];

impl OfflineLlm {
    pub fn new() -> Self {
        Self
    }

    fn categories_for(query: &str, n: usize) -> Vec<RelevanceCategory> {
        let start = (stable_hash(query) % 11) as usize;
        (0..n)
            .map(|i| RelevanceCategory::ALL[(start + i * 4) % 11])
            .collect()
    }

    fn extract(&self, payload: &Value) -> Result<String, ProviderError> {
        let query = payload
            .get("related_query")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Schema("payload lacks related_query".into()))?;
        let eligible: Vec<Value> = Self::categories_for(query, 4)
            .into_iter()
            .map(|c| json!({"path": c.path(), "reason": format!("editing the {} of the query breaks its match", c.child_name())}))
            .collect();
        Ok(json!({ "eligible_categories": eligible }).to_string())
    }

    fn generate(&self, payload: &Value) -> Result<String, ProviderError> {
        let query = payload
            .get("related_query")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Schema("payload lacks related_query".into()))?;
        let plans = payload
            .get("plans")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Schema("payload lacks plans".into()))?;
        let mut negs = serde_json::Map::new();
        for plan in plans {
            let tier = plan
                .get("difficulty")
                .and_then(Value::as_str)
                .and_then(DifficultyTier::parse_label)
                .ok_or_else(|| ProviderError::Schema("plan lacks difficulty".into()))?;
            let cats = plan
                .get("applied_categories")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderError::Schema("plan lacks applied_categories".into()))?;
            let paths: Vec<String> = cats
                .iter()
                .filter_map(|c| c.get("path").and_then(Value::as_str).map(str::to_string))
                .collect();
            let names: Vec<&str> = paths.iter().map(|p| p.rsplit('/').next().unwrap_or(p)).collect();
            let mut reasoning = format!(
                "<irrelevant_answer>The query \"{query}\" does not match the video: its {} differ from what the video shows.</irrelevant_answer>",
                names.join(" and ")
            );
            for path in &paths {
                let tag = path.to_lowercase().replace('/', "_");
                reasoning.push_str(&format!("<{tag}>The {path} element was altered.</{tag}>"));
            }
            negs.insert(
                tier.as_str().to_string(),
                json!({
                    "irrel_query": format!("{query} (altered {})", names.join(", ")),
                    "applied_categories": paths.iter().map(|p| json!({"path": p})).collect::<Vec<_>>(),
                    "reasoning": reasoning,
                    "difficulty_tag": tier.as_str(),
                }),
            );
        }
        Ok(json!({ "negs": negs }).to_string())
    }

    fn classify(&self, payload: &Value) -> Result<String, ProviderError> {
        let text = payload
            .get("generated_response")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Schema("payload lacks generated_response".into()))?;
        let words = word_set(text);
        let found: Vec<String> = CATEGORY_KEYWORDS
            .iter()
            .filter(|(c, kws)| {
                words.contains(&c.child_name().to_lowercase()) || kws.iter().any(|k| words.contains(*k))
            })
            .map(|(c, _)| c.path())
            .collect();
        Ok(serde_json::to_string(&found).expect("serializes"))
    }

    fn judge(&self, payload: &Value) -> Result<String, ProviderError> {
        let get = |k: &str| {
            payload
                .get(k)
                .and_then(Value::as_str)
                .ok_or_else(|| ProviderError::Schema(format!("payload lacks {k}")))
        };
        let gt = word_set(get("gt_response")?);
        let generated = word_set(get("generated_response")?);
        let union = gt.union(&generated).count();
        let jaccard = if union == 0 {
            0.0
        } else {
            gt.intersection(&generated).count() as f64 / union as f64
        };
        let score = (jaccard * 50.0).round() / 10.0;
        Ok(format!("{{'score': {score:.1}}}"))
    }
}

impl LlmClient for OfflineLlm {
    fn model_id(&self) -> &str {
        "offline-rules"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let prompt = PromptId::identify(&request.system_prompt)
            .ok_or_else(|| ProviderError::Schema("offline model only answers the bundled prompts".into()))?;
        let payload: Value = serde_json::from_str(&request.user_payload)
            .map_err(|e| ProviderError::Schema(format!("payload is not JSON: {e}")))?;
        match prompt {
            PromptId::CategoryExtraction => self.extract(&payload),
            PromptId::NegativeGeneration => self.generate(&payload),
            PromptId::RefusalCategoryClassifier => self.classify(&payload),
            PromptId::ConsistencyJudge => self.judge(&payload),
        }
    }
}
