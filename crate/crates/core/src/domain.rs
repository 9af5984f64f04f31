//! Domain types shared by every stage of the toolkit: temporal segments, the
//! semantic relevance taxonomy, difficulty tiers and validated grounding
//! samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::SampleError;

/// A temporal interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 2]")]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    /// Builds a segment, rejecting non-finite, negative or inverted bounds.
    /// Zero-length segments are legal.
    pub fn new(start: f64, end: f64) -> Result<Self, SampleError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(SampleError::Invariant(format!(
                "segment bounds must be finite, got [{start}, {end}]"
            )));
        }
        if start < 0.0 || end < 0.0 {
            return Err(SampleError::Invariant(format!(
                "segment bounds must be non-negative, got [{start}, {end}]"
            )));
        }
        if start > end {
            return Err(SampleError::Invariant(format!(
                "segment start must not exceed end, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

impl<'de> Deserialize<'de> for Segment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[f64; 2]>::deserialize(d)?;
        Segment::new(start, end).map_err(serde::de::Error::custom)
    }
}

/// The four parent types of the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParentType {
    Action,
    Object,
    Scene,
    Attribute,
}

impl ParentType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParentType::Action => "Action",
            ParentType::Object => "Object",
            ParentType::Scene => "Scene",
            ParentType::Attribute => "Attribute",
        }
    }
}

/// One of the eleven semantic relevance categories. Each leaf belongs to
/// exactly one [`ParentType`], so the pair is always consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelevanceCategory {
    ActionSequence,
    FineGrainedAction,
    ObjectExistence,
    ObjectPartRelation,
    ObjectSpatialRelation,
    ObjectMoving,
    SceneExistence,
    SceneTransition,
    AttributeValue,
    Counting,
    Comparison,
}

impl RelevanceCategory {
    pub const ALL: [RelevanceCategory; 11] = [
        RelevanceCategory::ActionSequence,
        RelevanceCategory::FineGrainedAction,
        RelevanceCategory::ObjectExistence,
        RelevanceCategory::ObjectPartRelation,
        RelevanceCategory::ObjectSpatialRelation,
        RelevanceCategory::ObjectMoving,
        RelevanceCategory::SceneExistence,
        RelevanceCategory::SceneTransition,
        RelevanceCategory::AttributeValue,
        RelevanceCategory::Counting,
        RelevanceCategory::Comparison,
    ];

    pub fn parent(&self) -> ParentType {
        use RelevanceCategory::*;
        match self {
            ActionSequence | FineGrainedAction => ParentType::Action,
            ObjectExistence | ObjectPartRelation | ObjectSpatialRelation | ObjectMoving => {
                ParentType::Object
            }
            SceneExistence | SceneTransition => ParentType::Scene,
            AttributeValue | Counting | Comparison => ParentType::Attribute,
        }
    }

    pub fn child_name(&self) -> &'static str {
        use RelevanceCategory::*;
        match self {
            ActionSequence => "ActionSequence",
            FineGrainedAction => "FineGrainedAction",
            ObjectExistence => "ObjectExistence",
            ObjectPartRelation => "ObjectPartRelation",
            ObjectSpatialRelation => "ObjectSpatialRelation",
            ObjectMoving => "ObjectMoving",
            SceneExistence => "SceneExistence",
            SceneTransition => "SceneTransition",
            AttributeValue => "AttributeValue",
            Counting => "Counting",
            Comparison => "Comparison",
        }
    }

    /// Canonical `Parent/Child` form.
    pub fn path(&self) -> String {
        format!("{}/{}", self.parent().as_str(), self.child_name())
    }

    /// Tag name used for per-category reasoning blocks: the path lowercased
    /// with `/` replaced by `_`.
    pub fn block_tag(&self) -> String {
        self.path().to_lowercase().replace('/', "_")
    }
}

impl fmt::Display for RelevanceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.parent().as_str(), self.child_name())
    }
}

/// Parses a canonical `Parent/Child` path. Matching is case-sensitive and
/// exact.
pub fn parse_category_path(path: &str) -> Result<RelevanceCategory, SampleError> {
    RelevanceCategory::ALL
        .iter()
        .copied()
        .find(|c| c.path() == path)
        .ok_or_else(|| SampleError::UnknownCategory(path.to_string()))
}

impl FromStr for RelevanceCategory {
    type Err = SampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_category_path(s)
    }
}

impl Serialize for RelevanceCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.path())
    }
}

impl<'de> Deserialize<'de> for RelevanceCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_category_path(&s).map_err(serde::de::Error::custom)
    }
}

/// Hard-irrelevance difficulty; the tier is fixed by how many semantic
/// elements of the original query were modified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyTier {
    Strong,
    Moderate,
    Weak,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 3] =
        [DifficultyTier::Strong, DifficultyTier::Moderate, DifficultyTier::Weak];

    pub fn modified_element_count(&self) -> usize {
        match self {
            DifficultyTier::Strong => 1,
            DifficultyTier::Moderate => 2,
            DifficultyTier::Weak => 3,
        }
    }

    pub fn from_modified_element_count(n: usize) -> Option<Self> {
        match n {
            1 => Some(DifficultyTier::Strong),
            2 => Some(DifficultyTier::Moderate),
            3 => Some(DifficultyTier::Weak),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DifficultyTier::Strong => "strong",
            DifficultyTier::Moderate => "moderate",
            DifficultyTier::Weak => "weak",
        }
    }

    /// Accepts the canonical lowercase names plus the `moderated` spelling
    /// used by the generation prompt.
    pub fn parse_label(s: &str) -> Option<Self> {
        match s {
            "strong" => Some(DifficultyTier::Strong),
            "moderate" | "moderated" => Some(DifficultyTier::Moderate),
            "weak" => Some(DifficultyTier::Weak),
            _ => None,
        }
    }
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

impl Relevance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relevance::Relevant => "relevant",
            Relevance::Irrelevant => "irrelevant",
        }
    }
}

/// Ground truth carried by a sample; the variant is fixed by its relevance.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Relevant {
        segment: Segment,
    },
    Irrelevant {
        difficulty: DifficultyTier,
        refusal: String,
        original_query: String,
        categories: Vec<RelevanceCategory>,
        /// Per-category explanation blocks produced at build time, keyed by
        /// category. Optional.
        category_notes: BTreeMap<RelevanceCategory, String>,
    },
}

/// A validated evaluation/training unit. Construct through
/// [`validate_sample`] or [`GroundingSample::relevant`] /
/// [`GroundingSample::irrelevant`]; all invariants hold afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub sample_id: String,
    pub video_id: String,
    pub video_context: String,
    pub query: String,
    truth: GroundTruth,
}

impl GroundingSample {
    pub fn relevant(
        sample_id: impl Into<String>,
        video_id: impl Into<String>,
        video_context: impl Into<String>,
        query: impl Into<String>,
        segment: Segment,
    ) -> Result<Self, SampleError> {
        let sample = Self {
            sample_id: sample_id.into(),
            video_id: video_id.into(),
            video_context: video_context.into(),
            query: query.into(),
            truth: GroundTruth::Relevant { segment },
        };
        sample.check_common()?;
        Ok(sample)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn irrelevant(
        sample_id: impl Into<String>,
        video_id: impl Into<String>,
        video_context: impl Into<String>,
        query: impl Into<String>,
        difficulty: DifficultyTier,
        refusal: impl Into<String>,
        original_query: impl Into<String>,
        categories: Vec<RelevanceCategory>,
    ) -> Result<Self, SampleError> {
        let sample = Self {
            sample_id: sample_id.into(),
            video_id: video_id.into(),
            video_context: video_context.into(),
            query: query.into(),
            truth: GroundTruth::Irrelevant {
                difficulty,
                refusal: refusal.into(),
                original_query: original_query.into(),
                categories,
                category_notes: BTreeMap::new(),
            },
        };
        sample.check_common()?;
        sample.check_irrelevant()?;
        Ok(sample)
    }

    pub fn with_category_notes(
        mut self,
        notes: BTreeMap<RelevanceCategory, String>,
    ) -> Result<Self, SampleError> {
        match &mut self.truth {
            GroundTruth::Irrelevant { category_notes, .. } => *category_notes = notes,
            GroundTruth::Relevant { .. } => {
                if !notes.is_empty() {
                    return Err(SampleError::Invariant(
                        "category_notes are only allowed on irrelevant samples".into(),
                    ));
                }
            }
        }
        self.check_irrelevant()?;
        Ok(self)
    }

    fn check_common(&self) -> Result<(), SampleError> {
        for (name, value) in [
            ("sample_id", &self.sample_id),
            ("video_id", &self.video_id),
            ("query", &self.query),
        ] {
            if value.trim().is_empty() {
                return Err(SampleError::Invariant(format!("{name} must be non-empty")));
            }
        }
        Ok(())
    }

    fn check_irrelevant(&self) -> Result<(), SampleError> {
        let GroundTruth::Irrelevant {
            difficulty,
            refusal,
            original_query,
            categories,
            category_notes,
        } = &self.truth
        else {
            return Ok(());
        };
        if refusal.trim().is_empty() {
            return Err(SampleError::Invariant("gt_refusal must be non-empty".into()));
        }
        if original_query.trim().is_empty() {
            return Err(SampleError::Invariant("original_query must be non-empty".into()));
        }
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].contains(c) {
                return Err(SampleError::Invariant(format!(
                    "gt_categories contains duplicate {c}"
                )));
            }
        }
        if categories.len() != difficulty.modified_element_count() {
            return Err(SampleError::Invariant(format!(
                "|gt_categories| = {} but difficulty {} requires {}",
                categories.len(),
                difficulty,
                difficulty.modified_element_count()
            )));
        }
        if let Some(extra) = category_notes.keys().find(|k| !categories.contains(k)) {
            return Err(SampleError::Invariant(format!(
                "category_notes key {extra} is not among gt_categories"
            )));
        }
        Ok(())
    }

    pub fn relevance(&self) -> Relevance {
        match self.truth {
            GroundTruth::Relevant { .. } => Relevance::Relevant,
            GroundTruth::Irrelevant { .. } => Relevance::Irrelevant,
        }
    }

    pub fn is_relevant(&self) -> bool {
        matches!(self.truth, GroundTruth::Relevant { .. })
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn gt_segment(&self) -> Option<Segment> {
        match &self.truth {
            GroundTruth::Relevant { segment } => Some(*segment),
            GroundTruth::Irrelevant { .. } => None,
        }
    }

    pub fn difficulty(&self) -> Option<DifficultyTier> {
        match &self.truth {
            GroundTruth::Irrelevant { difficulty, .. } => Some(*difficulty),
            GroundTruth::Relevant { .. } => None,
        }
    }

    pub fn gt_refusal(&self) -> Option<&str> {
        match &self.truth {
            GroundTruth::Irrelevant { refusal, .. } => Some(refusal),
            GroundTruth::Relevant { .. } => None,
        }
    }

    pub fn original_query(&self) -> Option<&str> {
        match &self.truth {
            GroundTruth::Irrelevant { original_query, .. } => Some(original_query),
            GroundTruth::Relevant { .. } => None,
        }
    }

    pub fn gt_categories(&self) -> Option<&[RelevanceCategory]> {
        match &self.truth {
            GroundTruth::Irrelevant { categories, .. } => Some(categories),
            GroundTruth::Relevant { .. } => None,
        }
    }

    /// Serializes to the JSONL record layout accepted by [`validate_sample`].
    pub fn to_record(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("sample_id".into(), self.sample_id.clone().into());
        m.insert("video_id".into(), self.video_id.clone().into());
        m.insert("video_context".into(), self.video_context.clone().into());
        m.insert("query".into(), self.query.clone().into());
        m.insert("relevance".into(), self.relevance().as_str().into());
        match &self.truth {
            GroundTruth::Relevant { segment } => {
                m.insert(
                    "gt_segment".into(),
                    serde_json::json!([segment.start(), segment.end()]),
                );
            }
            GroundTruth::Irrelevant {
                difficulty,
                refusal,
                original_query,
                categories,
                category_notes,
            } => {
                m.insert("difficulty".into(), difficulty.as_str().into());
                m.insert("gt_refusal".into(), refusal.clone().into());
                m.insert("original_query".into(), original_query.clone().into());
                m.insert(
                    "gt_categories".into(),
                    categories.iter().map(|c| Value::String(c.path())).collect(),
                );
                if !category_notes.is_empty() {
                    let notes: Map<String, Value> = category_notes
                        .iter()
                        .map(|(k, v)| (k.path(), Value::String(v.clone())))
                        .collect();
                    m.insert("category_notes".into(), Value::Object(notes));
                }
            }
        }
        m
    }
}

const COMMON_FIELDS: [&str; 5] = ["sample_id", "video_id", "video_context", "query", "relevance"];
const RELEVANT_FIELDS: [&str; 1] = ["gt_segment"];
const IRRELEVANT_FIELDS: [&str; 4] = ["difficulty", "gt_refusal", "original_query", "gt_categories"];
const OPTIONAL_FIELDS: [&str; 1] = ["category_notes"];

fn require<'a>(record: &'a Map<String, Value>, field: &str) -> Result<&'a Value, SampleError> {
    match record.get(field) {
        None | Some(Value::Null) => Err(SampleError::Schema(field.to_string())),
        Some(v) => Ok(v),
    }
}

fn require_str<'a>(record: &'a Map<String, Value>, field: &str) -> Result<&'a str, SampleError> {
    require(record, field)?
        .as_str()
        .ok_or_else(|| SampleError::Schema(field.to_string()))
}

fn parse_segment_value(v: &Value) -> Result<Segment, SampleError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| SampleError::Schema("gt_segment".into()))?;
    let start = arr[0].as_f64().ok_or_else(|| SampleError::Schema("gt_segment".into()))?;
    let end = arr[1].as_f64().ok_or_else(|| SampleError::Schema("gt_segment".into()))?;
    Segment::new(start, end)
}

/// Validates one decoded JSONL record. Missing or mistyped fields are
/// [`SampleError::Schema`] naming the field; fields that are present but
/// break a sample invariant are [`SampleError::Invariant`]. Nothing is
/// defaulted.
pub fn validate_sample(record: &Map<String, Value>) -> Result<GroundingSample, SampleError> {
    for key in record.keys() {
        let known = COMMON_FIELDS.contains(&key.as_str())
            || RELEVANT_FIELDS.contains(&key.as_str())
            || IRRELEVANT_FIELDS.contains(&key.as_str())
            || OPTIONAL_FIELDS.contains(&key.as_str());
        if !known {
            return Err(SampleError::Schema(format!("unknown field {key}")));
        }
    }

    let sample_id = require_str(record, "sample_id")?;
    let video_id = require_str(record, "video_id")?;
    let video_context = require_str(record, "video_context")?;
    let query = require_str(record, "query")?;
    let relevance = match require_str(record, "relevance")? {
        "relevant" => Relevance::Relevant,
        "irrelevant" => Relevance::Irrelevant,
        _ => return Err(SampleError::Schema("relevance".into())),
    };

    let present = |f: &str| !matches!(record.get(f), None | Some(Value::Null));

    match relevance {
        Relevance::Relevant => {
            let segment = parse_segment_value(require(record, "gt_segment")?)?;
            if let Some(f) = IRRELEVANT_FIELDS
                .iter()
                .chain(OPTIONAL_FIELDS.iter())
                .find(|f| present(f))
            {
                return Err(SampleError::Invariant(format!(
                    "relevant sample must not carry {f}"
                )));
            }
            GroundingSample::relevant(sample_id, video_id, video_context, query, segment)
        }
        Relevance::Irrelevant => {
            let difficulty = require_str(record, "difficulty")?;
            let refusal = require_str(record, "gt_refusal")?;
            let original_query = require_str(record, "original_query")?;
            let cats = require(record, "gt_categories")?
                .as_array()
                .ok_or_else(|| SampleError::Schema("gt_categories".into()))?;
            if present("gt_segment") {
                return Err(SampleError::Invariant(
                    "irrelevant sample must not carry gt_segment".into(),
                ));
            }
            let difficulty = match difficulty {
                "strong" => DifficultyTier::Strong,
                "moderate" => DifficultyTier::Moderate,
                "weak" => DifficultyTier::Weak,
                _ => return Err(SampleError::Schema("difficulty".into())),
            };
            let categories = cats
                .iter()
                .map(|c| {
                    c.as_str()
                        .ok_or_else(|| SampleError::Schema("gt_categories".into()))
                        .and_then(parse_category_path)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut notes = BTreeMap::new();
            if let Some(v) = record.get("category_notes").filter(|v| !v.is_null()) {
                let obj = v
                    .as_object()
                    .ok_or_else(|| SampleError::Schema("category_notes".into()))?;
                for (k, v) in obj {
                    let text = v
                        .as_str()
                        .ok_or_else(|| SampleError::Schema("category_notes".into()))?;
                    notes.insert(parse_category_path(k)?, text.to_string());
                }
            }
            GroundingSample::irrelevant(
                sample_id,
                video_id,
                video_context,
                query,
                difficulty,
                refusal,
                original_query,
                categories,
            )?
            .with_category_notes(notes)
        }
    }
}
