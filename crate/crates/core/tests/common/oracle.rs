//! Straight-line reference implementation of the reward, written without
//! touching the library's parser, pairing or similarity code. Only the
//! embedding vectors are shared.

#[derive(Debug, Clone)]
pub enum Truth {
    Relevant { start: f64, end: f64 },
    /// `rank` orders tiers: 0 strong, 1 moderate, 2 weak.
    Irrelevant { rank: u8, refusal: String, original: String },
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub video: String,
    pub query: String,
    pub truth: Truth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub format: f64,
    pub refuse: f64,
    pub explain: f64,
    pub correction: f64,
    pub total: f64,
}

pub type Embed<'a> = &'a dyn Fn(&str) -> Vec<f64>;

fn is_ws(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

fn positions(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle) {
        out.push(from + i);
        from += i + needle.len();
    }
    out
}

/// Section contents if the text is exactly think/answer/correct, once each,
/// in order, with only whitespace around them.
pub fn strict_sections(raw: &str) -> Option<[String; 3]> {
    let names = ["think", "answer", "correct"];
    let mut cursor = 0;
    let mut out: [String; 3] = Default::default();
    for (i, n) in names.iter().enumerate() {
        let open = format!("<{n}>");
        let close = format!("</{n}>");
        let o = positions(raw, &open);
        let c = positions(raw, &close);
        if o.len() != 1 || c.len() != 1 {
            return None;
        }
        let (o, c) = (o[0], c[0]);
        if o < cursor || c < o + open.len() || !is_ws(&raw[cursor..o]) {
            return None;
        }
        out[i] = raw[o + open.len()..c].trim().to_string();
        cursor = c + close.len();
    }
    is_ws(&raw[cursor..]).then_some(out)
}

fn loose_section(raw: &str, name: &str) -> Option<String> {
    let open = format!("<{name}>");
    let start = raw.find(&open)? + open.len();
    let len = raw[start..].find(&format!("</{name}>"))?;
    Some(raw[start..start + len].trim().to_string())
}

fn digits(b: &[u8], mut i: usize) -> usize {
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    i
}

fn spaces(b: &[u8], mut i: usize) -> usize {
    while i < b.len() && matches!(b[i], b' ' | b'\t' | b'\r' | b'\n') {
        i += 1;
    }
    i
}

/// End positions of a decimal starting at `i`, longest first.
fn numbers(b: &[u8], i: usize) -> Vec<usize> {
    let int_end = digits(b, i);
    if int_end == i {
        return vec![];
    }
    let mut ends = vec![];
    if int_end < b.len() && b[int_end] == b'.' {
        let frac_end = digits(b, int_end + 1);
        if frac_end > int_end + 1 {
            ends.push(frac_end);
        }
    }
    ends.push(int_end);
    ends
}

fn separator(b: &[u8], i: usize) -> Option<usize> {
    if b[i..].starts_with(b"to") {
        Some(i + 2)
    } else if i < b.len() && (b[i] == b'-' || b[i] == b',') {
        Some(i + 1)
    } else {
        None
    }
}

/// Leftmost pair `A [ws] [unit ws] sep [ws] B`, backtracking in the same
/// preference order a regex engine would.
pub fn first_pair(text: &str) -> Option<(String, String)> {
    let b = text.as_bytes();
    for start in 0..b.len() {
        if !b[start].is_ascii_digit() {
            continue;
        }
        for a_end in numbers(b, start) {
            let after_ws = spaces(b, a_end);
            let mut unit_choices = vec![];
            for unit in [&b"seconds"[..], &b"s"[..]] {
                if b[after_ws..].starts_with(unit) {
                    unit_choices.push(spaces(b, after_ws + unit.len()));
                }
            }
            unit_choices.push(after_ws);
            for pos in unit_choices {
                let Some(sep_end) = separator(b, pos) else { continue };
                let b_start = spaces(b, sep_end);
                if let Some(&b_end) = numbers(b, b_start).first() {
                    return Some((text[start..a_end].to_string(), text[b_start..b_end].to_string()));
                }
            }
        }
    }
    None
}

pub fn segment_of(answer: &str) -> Option<(f64, f64)> {
    let (a, b) = first_pair(answer)?;
    let (s, e): (f64, f64) = (a.parse().ok()?, b.parse().ok()?);
    (s.is_finite() && e.is_finite() && s <= e).then_some((s, e))
}

pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi > lo { hi - lo } else { 0.0 };
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

fn cos(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for i in 0..x.len() {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    dot / (nx.sqrt() * ny.sqrt())
}

fn time_text(s: f64, e: f64) -> String {
    format!("From {s} to {e} seconds.")
}

/// `(positive, negative)` references for `sample`, or `None` when an
/// irrelevant sample has no relevant partner.
pub fn references(sample: &Sample, all: &[Sample], surrogate: &str) -> Option<(String, String)> {
    match &sample.truth {
        Truth::Relevant { start, end } => {
            let mut best: Option<(u8, &str, &str)> = None;
            for s in all {
                if let Truth::Irrelevant { rank, refusal, original } = &s.truth {
                    if s.video == sample.video && *original == sample.query {
                        let cand = (*rank, s.id.as_str(), refusal.as_str());
                        if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                            best = Some(cand);
                        }
                    }
                }
            }
            let neg = best.map_or(surrogate.to_string(), |b| b.2.to_string());
            Some((time_text(*start, *end), neg))
        }
        Truth::Irrelevant { refusal, original, .. } => all.iter().find_map(|s| match s.truth {
            Truth::Relevant { start, end } if s.video == sample.video && s.query == *original => {
                Some((refusal.clone(), time_text(start, end)))
            }
            _ => None,
        }),
    }
}

pub fn reward(sample: &Sample, refs: &(String, String), raw: &str, strict: bool, embed: Embed) -> Reward {
    let (format, answer, correct) = match strict_sections(raw) {
        Some([_, a, c]) => (1.0, Some(a), Some(c)),
        None if strict => (0.0, None, None),
        None => (0.0, loose_section(raw, "answer"), loose_section(raw, "correct")),
    };

    let refuse = match &answer {
        None => 0.0,
        Some(a) => match (&sample.truth, segment_of(a)) {
            (Truth::Relevant { start, end }, Some(p)) => interval_iou((*start, *end), p),
            (Truth::Irrelevant { .. }, None) => 1.0,
            _ => 0.0,
        },
    };

    let explain = match &answer {
        Some(a) if !a.trim().is_empty() => {
            let v = embed(a);
            cos(&embed(&refs.0), &v) - cos(&embed(&refs.1), &v)
        }
        _ => 0.0,
    };

    let correction = match (&sample.truth, &correct) {
        (Truth::Irrelevant { original, .. }, Some(c)) if !c.trim().is_empty() => cos(&embed(original), &embed(c)),
        _ => 0.0,
    };

    Reward {
        format,
        refuse,
        explain,
        correction,
        total: format + refuse + explain + correction,
    }
}
