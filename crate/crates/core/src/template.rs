//! Parsing of `<think>…</think> <answer>…</answer> <correct>…</correct>`
//! model outputs.
//!
//! The strict parser accepts exactly one occurrence of each section, in that
//! order, separated only by whitespace. Anything else is reported through
//! [`ParseDiagnostics`] rather than an error. Timestamp extraction follows
//! [`TIMESTAMP_PATTERN`], which is published so external tooling can
//! reproduce it exactly.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::Segment;

/// Section names in their required order.
pub const SECTIONS: [&str; 3] = ["think", "answer", "correct"];

/// The timestamp grammar: two non-negative decimals joined by `to`, `-` or
/// `,`, with optional whitespace and optional `seconds` / `s` unit tokens.
/// Extraction uses the first (leftmost) match only.
pub const TIMESTAMP_PATTERN: &str = r"([0-9]+(?:\.[0-9]+)?)[ \t\r\n]*(?:(?:seconds|s)[ \t\r\n]*)?(?:to|-|,)[ \t\r\n]*([0-9]+(?:\.[0-9]+)?)(?:[ \t\r\n]*(?:seconds|s)\b)?";

fn timestamp_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(TIMESTAMP_PATTERN).expect("timestamp pattern compiles"))
}

/// A parsed model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub think: String,
    pub answer: String,
    /// `None` when the correct section is absent or empty.
    pub correct: Option<String>,
    /// Extracted from `answer`; `None` is the refusal signal.
    pub segment: Option<Segment>,
    pub raw: String,
}

impl StructuredOutput {
    /// Builds an output from section texts, deriving `segment` from the
    /// answer. `raw` is the canonical rendering.
    pub fn from_sections(think: &str, answer: &str, correct: Option<&str>) -> Self {
        let correct = correct.filter(|c| !c.is_empty()).map(str::to_string);
        let mut out = Self {
            think: think.to_string(),
            answer: answer.to_string(),
            correct,
            segment: extract_segment(answer),
            raw: String::new(),
        };
        out.raw = render_output(&out);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub format_ok: bool,
    pub missing_tags: Vec<String>,
    pub duplicate_tags: Vec<String>,
    pub order_violation: bool,
}

/// Section contents recovered without the strict format rules: for each
/// section, the text between its first opening tag and the first closing tag
/// after it, trimmed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LenientSections {
    pub think: Option<String>,
    pub answer: Option<String>,
    pub correct: Option<String>,
}

fn open_tag(name: &str) -> String {
    format!("<{name}>")
}

fn close_tag(name: &str) -> String {
    format!("</{name}>")
}

fn lenient_section(raw: &str, name: &str) -> Option<String> {
    let open = open_tag(name);
    let close = close_tag(name);
    let start = raw.find(&open)? + open.len();
    let len = raw[start..].find(&close)?;
    Some(raw[start..start + len].trim().to_string())
}

pub fn extract_sections_lenient(raw: &str) -> LenientSections {
    LenientSections {
        think: lenient_section(raw, "think"),
        answer: lenient_section(raw, "answer"),
        correct: lenient_section(raw, "correct"),
    }
}

/// Parses raw model text. Total: never panics, returns `None` together with
/// diagnostics when the format is broken.
pub fn parse_output(raw: &str) -> (Option<StructuredOutput>, ParseDiagnostics) {
    let mut diag = ParseDiagnostics::default();
    // (open_pos, close_pos) for sections that occur exactly once and close
    // after they open.
    let mut spans: Vec<Option<(usize, usize)>> = Vec::with_capacity(3);

    for name in SECTIONS {
        let open = open_tag(name);
        let close = close_tag(name);
        let opens: Vec<usize> = raw.match_indices(&open).map(|(i, _)| i).collect();
        let closes: Vec<usize> = raw.match_indices(&close).map(|(i, _)| i).collect();
        if opens.len() > 1 || closes.len() > 1 {
            diag.duplicate_tags.push(name.to_string());
            spans.push(None);
        } else if opens.is_empty() || closes.is_empty() {
            diag.missing_tags.push(name.to_string());
            spans.push(None);
        } else if closes[0] < opens[0] {
            diag.order_violation = true;
            spans.push(None);
        } else {
            spans.push(Some((opens[0], closes[0])));
        }
    }

    // Present sections must appear in order, and only whitespace may sit
    // outside them.
    let present: Vec<(usize, (usize, usize))> = spans
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    let mut cursor = 0usize;
    for (i, (open, close)) in &present {
        if *open < cursor {
            diag.order_violation = true;
            break;
        }
        if !raw[cursor..*open].trim().is_empty() {
            diag.order_violation = true;
        }
        cursor = close + close_tag(SECTIONS[*i]).len();
    }
    if !diag.order_violation && !raw[cursor.min(raw.len())..].trim().is_empty() {
        diag.order_violation = true;
    }

    diag.format_ok =
        diag.missing_tags.is_empty() && diag.duplicate_tags.is_empty() && !diag.order_violation;
    if !diag.format_ok {
        return (None, diag);
    }

    let section = |i: usize| {
        let (open, close) = spans[i].expect("format_ok implies every section is present");
        raw[open + open_tag(SECTIONS[i]).len()..close].trim().to_string()
    };
    let think = section(0);
    let answer = section(1);
    let correct = Some(section(2)).filter(|c| !c.is_empty());
    let segment = extract_segment(&answer);
    (
        Some(StructuredOutput {
            think,
            answer,
            correct,
            segment,
            raw: raw.to_string(),
        }),
        diag,
    )
}

/// Extracts the first timestamp pair from an answer. Returns `None` if there
/// is no match or if the first match is inverted or not representable.
pub fn extract_segment(answer_text: &str) -> Option<Segment> {
    let caps = timestamp_regex().captures(answer_text)?;
    let start: f64 = caps[1].parse().ok()?;
    let end: f64 = caps[2].parse().ok()?;
    Segment::new(start, end).ok()
}

/// Canonical three-section rendering.
pub fn render_output(s: &StructuredOutput) -> String {
    format!(
        "<think>{}</think>\n<answer>{}</answer>\n<correct>{}</correct>",
        s.think,
        s.answer,
        s.correct.as_deref().unwrap_or("")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: f64, b: f64) -> Option<Segment> {
        Some(Segment::new(a, b).unwrap())
    }

    #[test]
    fn well_formed() {
        let (out, d) =
            parse_output("<think>t</think> <answer>4.0 to 8.0</answer> <correct>N/A</correct>");
        assert!(d.format_ok);
        let out = out.unwrap();
        assert_eq!(out.think, "t");
        assert_eq!(out.segment, seg(4.0, 8.0));
        assert_eq!(out.correct.as_deref(), Some("N/A"));
    }

    #[test]
    fn missing_sections() {
        let (out, d) = parse_output("<answer>x</answer>");
        assert!(out.is_none());
        assert!(!d.format_ok);
        assert_eq!(d.missing_tags, vec!["think", "correct"]);
        assert!(!d.order_violation);
    }

    #[test]
    fn wrong_order() {
        let (_, d) = parse_output("<answer>a</answer><think>t</think><correct>c</correct>");
        assert!(d.order_violation);
        assert!(!d.format_ok);
    }

    #[test]
    fn stray_text_is_order_violation() {
        let (_, d) = parse_output("hi <think>t</think><answer>a</answer><correct>c</correct>");
        assert!(d.order_violation);
        let (_, d) = parse_output("<think>t</think>x<answer>a</answer><correct>c</correct>");
        assert!(d.order_violation);
        let (_, d) = parse_output("<think>t</think><answer>a</answer><correct>c</correct> bye");
        assert!(d.order_violation);
        let (_, d) = parse_output("\n <think>t</think>\n\n<answer>a</answer><correct>c</correct>\n");
        assert!(d.format_ok);
    }

    #[test]
    fn duplicates_and_nesting() {
        let (_, d) = parse_output(
            "<think>t</think><answer>a</answer><answer>b</answer><correct>c</correct>",
        );
        assert_eq!(d.duplicate_tags, vec!["answer"]);
        let (_, d) = parse_output(
            "<think>see <answer>x</answer></think><answer>a</answer><correct>c</correct>",
        );
        assert_eq!(d.duplicate_tags, vec!["answer"]);
        // a single nested section is out of order
        let (_, d) = parse_output("<think><answer>a</answer></think><correct>c</correct>");
        assert!(!d.format_ok);
    }

    #[test]
    fn close_before_open() {
        let (_, d) = parse_output("</think>t<think><answer>a</answer><correct>c</correct>");
        assert!(d.order_violation);
        assert!(!d.format_ok);
    }

    #[test]
    fn empty_correct_is_none() {
        let (out, d) = parse_output("<think></think><answer></answer><correct>  </correct>");
        assert!(d.format_ok);
        let out = out.unwrap();
        assert_eq!(out.correct, None);
        assert_eq!(out.answer, "");
        assert_eq!(out.segment, None);
    }

    #[test]
    fn segment_examples() {
        assert_eq!(extract_segment("The segment is 12.5 to 30.0 seconds."), seg(12.5, 30.0));
        assert_eq!(
            extract_segment("This query is not relevant to the video because the action differs."),
            None
        );
        assert_eq!(extract_segment("9.0 to 3.0"), None);
        assert_eq!(extract_segment("From 4 to 8 seconds."), seg(4.0, 8.0));
        assert_eq!(extract_segment("12s - 15s"), seg(12.0, 15.0));
        assert_eq!(extract_segment("3 seconds to 7 seconds"), seg(3.0, 7.0));
        assert_eq!(extract_segment("[1.5,2.5]"), seg(1.5, 2.5));
        // inverted first match is not skipped over
        assert_eq!(extract_segment("9 to 3, then 4 to 5"), None);
        assert_eq!(extract_segment(&format!("{} to 1", "9".repeat(400))), None);
    }

    #[test]
    fn render_canonical() {
        let s = StructuredOutput::from_sections("a", "b", Some("c"));
        assert_eq!(
            render_output(&s),
            "<think>a</think>\n<answer>b</answer>\n<correct>c</correct>"
        );
        let (back, d) = parse_output(&render_output(&StructuredOutput::from_sections("", "", None)));
        assert!(d.format_ok);
        let back = back.unwrap();
        assert_eq!((back.think.as_str(), back.answer.as_str(), back.correct), ("", "", None));
    }

    #[test]
    fn lenient_sections() {
        let s = extract_sections_lenient("junk <answer> 1 to 2 </answer> <answer>x</answer>");
        assert_eq!(s.answer.as_deref(), Some("1 to 2"));
        assert_eq!(s.think, None);
        assert_eq!(extract_sections_lenient("<correct>unterminated").correct, None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn section_text() -> impl Strategy<Value = String> {
            "[a-zA-Z0-9 .,:;<>/_-]{0,40}"
                .prop_map(|s| s.trim().to_string())
                .prop_filter("no tag substrings", |s| {
                    SECTIONS
                        .iter()
                        .all(|n| !s.contains(&open_tag(n)) && !s.contains(&close_tag(n)))
                })
        }

        proptest! {
            #[test]
            fn round_trip(think in section_text(), answer in section_text(), correct in proptest::option::of(section_text())) {
                let s = StructuredOutput::from_sections(&think, &answer, correct.as_deref());
                let (back, d) = parse_output(&render_output(&s));
                prop_assert!(d.format_ok);
                let back = back.unwrap();
                prop_assert_eq!(back.think, s.think);
                prop_assert_eq!(back.answer, s.answer);
                prop_assert_eq!(back.correct, s.correct);
                prop_assert_eq!(back.segment, s.segment);
            }

            #[test]
            fn appending_text_never_creates_segment(answer in "[a-z .,!?-]{0,30}[0-9]?[a-z .,!?]{0,30}", tail in "[^0-9]{0,30}") {
                prop_assume!(extract_segment(&answer).is_none());
                let extended = format!("{answer}{tail}");
                prop_assert!(extract_segment(&extended).is_none());
            }

            #[test]
            fn parse_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
                let text = String::from_utf8_lossy(&bytes);
                let (out, d) = parse_output(&text);
                prop_assert_eq!(out.is_some(), d.format_ok);
            }

            #[test]
            fn diagnostics_consistent(text in "(<think>|</think>|<answer>|</answer>|<correct>|</correct>|[a-z ]{0,5}){0,10}") {
                let (_, d) = parse_output(&text);
                prop_assert_eq!(
                    d.format_ok,
                    d.missing_tags.is_empty() && d.duplicate_tags.is_empty() && !d.order_violation
                );
            }
        }
    }
}
