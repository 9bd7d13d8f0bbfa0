//! Tolerant decoding of QA-pair replies.
//!
//! Chat models wrap the requested JSON list in prose, markdown fences, curly
//! quotes and trailing commas often enough that strict decoding loses a real
//! share of replies. The repairs below run in a fixed order and each one only
//! touches text outside JSON string literals, so string contents reach the
//! decoder unchanged.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStage {
    StripFences,
    ExtractArray,
    NormalizeQuotes,
    DropTrailingCommas,
    Decode,
    Validate,
}

impl fmt::Display for RepairStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::StripFences => "strip_fences",
            Self::ExtractArray => "extract_array",
            Self::NormalizeQuotes => "normalize_quotes",
            Self::DropTrailingCommas => "drop_trailing_commas",
            Self::Decode => "decode",
            Self::Validate => "validate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse failed at {stage}: {message}")]
pub struct RepairError {
    pub stage: RepairStage,
    pub message: String,
}

impl RepairError {
    fn new(stage: RepairStage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub pairs: Vec<RawPair>,
    /// Array elements dropped for lacking a usable question or answer.
    pub skipped: usize,
    /// Stages that changed the text, in application order.
    pub repairs: Vec<RepairStage>,
    /// The reply was cut off mid-array and closed after its last complete
    /// element.
    pub truncated: bool,
}

pub fn parse_qa_response(raw: &str) -> Result<ParsedResponse, RepairError> {
    let mut repairs = Vec::new();
    let mut note = |stage, before: &str, after: &str| {
        if before != after {
            repairs.push(stage);
        }
    };

    let trimmed = raw.trim();
    let unfenced = strip_code_fences(trimmed);
    note(RepairStage::StripFences, trimmed, unfenced);

    let extracted = extract_array(unfenced).ok_or_else(|| {
        RepairError::new(RepairStage::ExtractArray, "no JSON array or object found")
    })?;
    let truncated = extracted.truncated;
    note(RepairStage::ExtractArray, unfenced, &extracted.text);

    let quoted = normalize_quotes(&extracted.text);
    note(RepairStage::NormalizeQuotes, &extracted.text, &quoted);

    let cleaned = drop_trailing_commas(&quoted);
    note(RepairStage::DropTrailingCommas, &quoted, &cleaned);

    let value: Value = serde_json::from_str(&cleaned)
        .map_err(|e| RepairError::new(RepairStage::Decode, e.to_string()))?;
    let Value::Array(elements) = value else {
        return Err(RepairError::new(RepairStage::Decode, "top level is not an array"));
    };

    let total = elements.len();
    let pairs: Vec<RawPair> = elements.iter().filter_map(pair_from_value).collect();
    if pairs.is_empty() {
        return Err(RepairError::new(
            RepairStage::Validate,
            format!("none of {total} elements carried a question and an answer"),
        ));
    }
    Ok(ParsedResponse {
        skipped: total - pairs.len(),
        pairs,
        repairs,
        truncated,
    })
}

/// Serializes pairs as a compact JSON array with `question` before `answer`.
pub fn canonical_serialize(pairs: &[RawPair]) -> String {
    serde_json::to_string(pairs).expect("string pairs always serialize")
}

fn pair_from_value(v: &Value) -> Option<RawPair> {
    let obj = v.as_object()?;
    let field = |name: &str| {
        obj.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
            .and_then(|(_, v)| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
    };
    Some(RawPair {
        question: field("question")?.to_string(),
        answer: field("answer")?.to_string(),
    })
}

/// Returns the body of the first markdown code fence, or the input unchanged.
///
/// Fences are only recognised at the start of the text or of a line.
pub fn strip_code_fences(text: &str) -> &str {
    let open = if text.starts_with("```") {
        Some(0)
    } else {
        text.find("\n```").map(|p| p + 1)
    };
    let Some(open) = open else {
        return text;
    };
    let after = &text[open + 3..];
    let lang_len = after
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        .unwrap_or(after.len());
    let body = &after[lang_len..];
    let end = body.find("```").unwrap_or(body.len());
    body[..end].trim()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quote {
    Plain,
    Curly,
    Single,
}

fn opening_quote(c: char) -> Option<Quote> {
    match c {
        '"' => Some(Quote::Plain),
        '\u{201C}' | '\u{201D}' | '\u{201E}' => Some(Quote::Curly),
        '\'' | '\u{2018}' | '\u{2019}' => Some(Quote::Single),
        _ => None,
    }
}

fn closes(q: Quote, c: char) -> bool {
    match q {
        Quote::Plain => c == '"',
        Quote::Curly => matches!(c, '\u{201C}' | '\u{201D}'),
        Quote::Single => matches!(c, '\'' | '\u{2018}' | '\u{2019}'),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Outside,
    Open(Quote),
    Inside(Quote),
    Close(Quote),
}

impl Role {
    fn in_string(self) -> bool {
        self != Role::Outside
    }
}

/// Labels every char of `text` as outside, delimiting, or inside a string
/// literal.
///
/// Plain `"` always delimits. Curly and single quotes only open a literal
/// after a structural char (`[{,:`) and only close one before a structural
/// char or the end, so apostrophes in prose and in words are left alone.
fn classify(text: &str) -> Vec<(usize, char, Role)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::with_capacity(chars.len());
    let mut open: Option<Quote> = None;
    let mut escaped = false;
    let mut prev_sig: Option<char> = None;
    for (k, &(i, c)) in chars.iter().enumerate() {
        let role = match open {
            Some(q) => {
                if escaped {
                    escaped = false;
                    Role::Inside(q)
                } else if c == '\\' {
                    escaped = true;
                    Role::Inside(q)
                } else if closes(q, c) && (q == Quote::Plain || closes_structurally(&chars[k + 1..])) {
                    open = None;
                    prev_sig = Some('"');
                    Role::Close(q)
                } else {
                    Role::Inside(q)
                }
            }
            None => match opening_quote(c) {
                Some(q) if q == Quote::Plain || matches!(prev_sig, Some('[' | '{' | ',' | ':')) => {
                    open = Some(q);
                    Role::Open(q)
                }
                _ => {
                    if !c.is_whitespace() {
                        prev_sig = Some(c);
                    }
                    Role::Outside
                }
            },
        };
        out.push((i, c, role));
    }
    out
}

fn closes_structurally(rest: &[(usize, char)]) -> bool {
    match rest.iter().map(|&(_, c)| c).find(|c| !c.is_whitespace()) {
        None => true,
        Some(c) => matches!(c, ',' | ':' | ']' | '}'),
    }
}

fn scan_strings(text: &str) -> impl Iterator<Item = (usize, char, bool)> {
    classify(text)
        .into_iter()
        .map(|(i, c, role)| (i, c, role.in_string()))
}

struct Extracted {
    text: String,
    truncated: bool,
}

/// Finds the first bracketed array that contains an object.
///
/// A reply cut off mid-array is closed after its last complete element.
/// Bare objects with no enclosing array are collected into one.
fn extract_array(text: &str) -> Option<Extracted> {
    let mut depth = 0usize;
    let mut start: Option<usize> = None;
    let mut has_object = false;
    let mut last_element_end: Option<usize> = None;
    let mut stack: Vec<char> = Vec::new();

    for (i, c, in_string) in scan_strings(text) {
        if in_string {
            continue;
        }
        match c {
            '[' | '{' => {
                if c == '[' && start.is_none() {
                    start = Some(i);
                    depth = 0;
                    has_object = false;
                    last_element_end = None;
                    stack.clear();
                }
                if start.is_some() {
                    if c == '{' && depth == 1 {
                        has_object = true;
                    }
                    stack.push(c);
                    depth += 1;
                }
            }
            ']' | '}' => {
                let Some(s) = start else { continue };
                let expected = if c == ']' { '[' } else { '{' };
                if stack.pop() != Some(expected) {
                    start = None;
                    continue;
                }
                depth -= 1;
                if depth == 1 && c == '}' {
                    last_element_end = Some(i + 1);
                }
                if depth == 0 {
                    if has_object {
                        return Some(Extracted {
                            text: text[s..=i].to_string(),
                            truncated: false,
                        });
                    }
                    start = None;
                }
            }
            _ => {}
        }
    }

    if let (Some(s), Some(end)) = (start, last_element_end) {
        return Some(Extracted {
            text: format!("{}]", &text[s..end]),
            truncated: true,
        });
    }
    bare_objects(text).map(|text| Extracted {
        text,
        truncated: false,
    })
}

fn bare_objects(text: &str) -> Option<String> {
    let mut objects = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c, in_string) in scan_strings(text) {
        if in_string {
            continue;
        }
        match c {
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    objects.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    if objects.is_empty() {
        None
    } else {
        Some(format!("[{}]", objects.join(",")))
    }
}

/// Rewrites curly and single-quoted string literals as plain JSON strings.
///
/// Quote characters inside an already-open literal are left alone, except a
/// bare `"` inside a non-plain literal, which is escaped.
pub fn normalize_quotes(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut after_backslash = false;
    for (_, c, role) in classify(text) {
        match role {
            Role::Outside | Role::Inside(Quote::Plain) => out.push(c),
            Role::Open(_) | Role::Close(_) => out.push('"'),
            Role::Inside(q) => {
                if after_backslash && q == Quote::Single && c == '\'' {
                    // `\'` is not a JSON escape
                    out.pop();
                    out.push(c);
                } else if c == '"' && !after_backslash {
                    out.push_str("\\\"");
                } else {
                    out.push(c);
                }
            }
        }
        after_backslash = c == '\\' && !after_backslash && role.in_string();
    }
    out
}

/// Removes commas that directly precede `]` or `}` outside string literals.
pub fn drop_trailing_commas(text: &str) -> String {
    let chars: Vec<(usize, char, bool)> = scan_strings(text).collect();
    let mut out = String::with_capacity(text.len());
    for (k, &(_, c, in_string)) in chars.iter().enumerate() {
        if c == ',' && !in_string {
            let next = chars[k + 1..]
                .iter()
                .find(|(_, c, _)| !c.is_whitespace())
                .map(|&(_, c, s)| (c, s));
            if matches!(next, Some((']' | '}', false))) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qa(q: &str, a: &str) -> RawPair {
        RawPair {
            question: q.into(),
            answer: a.into(),
        }
    }

    #[test]
    fn well_formed_array() {
        let r = parse_qa_response(r#"[{"question":"Q1","answer":"A1"}]"#).unwrap();
        assert_eq!(r.pairs, vec![qa("Q1", "A1")]);
        assert!(r.repairs.is_empty());
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn fenced_with_trailing_comma() {
        let raw = "```json [ {\"question\":\"Q\",\"answer\":\"A\"}, ] ```";
        let r = parse_qa_response(raw).unwrap();
        assert_eq!(r.pairs, vec![qa("Q", "A")]);
        assert!(r.repairs.contains(&RepairStage::StripFences));
        assert!(r.repairs.contains(&RepairStage::DropTrailingCommas));
    }

    #[test]
    fn prose_without_array_fails_at_extract() {
        let err = parse_qa_response("Sure! Here are questions: what is it? It is.").unwrap_err();
        assert_eq!(err.stage, RepairStage::ExtractArray);
    }

    #[test]
    fn strip_fences_stage() {
        assert_eq!(strip_code_fences("```json\n[1]\n```"), "[1]");
        assert_eq!(strip_code_fences("Here:\n```\n[2]\n```\nthanks"), "[2]");
        assert_eq!(strip_code_fences("[3]"), "[3]");
        assert_eq!(strip_code_fences("```json\n[4]"), "[4]");
        // inline backticks are not a fence
        assert_eq!(strip_code_fences("a ```b``` c"), "a ```b``` c");
    }

    #[test]
    fn extract_stage_skips_arrays_without_objects() {
        let raw = r#"Here are [3] questions: [{"question":"Q","answer":"A"}] done"#;
        let r = parse_qa_response(raw).unwrap();
        assert_eq!(r.pairs, vec![qa("Q", "A")]);
    }

    #[test]
    fn extract_stage_ignores_brackets_in_strings() {
        let raw = r#"[{"question":"What is [x]?","answer":"It is ]{ odd"}]"#;
        let r = parse_qa_response(raw).unwrap();
        assert_eq!(r.pairs, vec![qa("What is [x]?", "It is ]{ odd")]);
    }

    #[test]
    fn extract_stage_recovers_truncated_reply() {
        let raw = r#"[{"question":"Q1","answer":"A1"},{"question":"Q2","answer":"A2"},{"question":"Q3","ans"#;
        let r = parse_qa_response(raw).unwrap();
        assert!(r.truncated);
        assert_eq!(r.pairs, vec![qa("Q1", "A1"), qa("Q2", "A2")]);
    }

    #[test]
    fn extract_stage_wraps_bare_objects() {
        let raw = "{\"question\":\"Q1\",\"answer\":\"A1\"}\n{\"question\":\"Q2\",\"answer\":\"A2\"}";
        let r = parse_qa_response(raw).unwrap();
        assert_eq!(r.pairs.len(), 2);
    }

    #[test]
    fn normalize_quotes_stage() {
        assert_eq!(
            normalize_quotes("[{\u{201C}question\u{201D}: \u{201C}Q\u{201D}}]"),
            r#"[{"question": "Q"}]"#
        );
        // curly quotes inside a plain string survive
        assert_eq!(
            normalize_quotes("[\"say \u{201C}hi\u{201D}\"]"),
            "[\"say \u{201C}hi\u{201D}\"]"
        );
        assert_eq!(normalize_quotes("['a \"b\"']"), r#"["a \"b\""]"#);
        assert_eq!(normalize_quotes(r"['it\'s']"), r#"["it's"]"#);
    }

    #[test]
    fn drop_trailing_commas_stage() {
        assert_eq!(drop_trailing_commas("[1, 2, ]"), "[1, 2 ]");
        assert_eq!(drop_trailing_commas("{\"a\":1,\n}"), "{\"a\":1\n}");
        assert_eq!(drop_trailing_commas(r#"["x, ]"]"#), r#"["x, ]"]"#);
    }

    #[test]
    fn tolerates_extra_keys_and_skips_incomplete_objects() {
        let raw = r#"[
            {"question":"Q1","answer":"A1","difficulty":"easy"},
            {"question":"Q2"},
            {"Question":"Q3","Answer":"A3"},
            {"question":"","answer":"A4"},
            "stray"
        ]"#;
        let r = parse_qa_response(raw).unwrap();
        assert_eq!(r.pairs, vec![qa("Q1", "A1"), qa("Q3", "A3")]);
        assert_eq!(r.skipped, 3);
    }

    #[test]
    fn no_valid_element_fails_at_validate() {
        let err = parse_qa_response(r#"[{"q":"x","a":"y"}]"#).unwrap_err();
        assert_eq!(err.stage, RepairStage::Validate);
    }

    #[test]
    fn undecodable_fails_at_decode() {
        let err = parse_qa_response(r#"[{"question": Q, "answer": "A"}]"#).unwrap_err();
        assert_eq!(err.stage, RepairStage::Decode);
    }

    fn field() -> impl Strategy<Value = String> {
        "\\PC{1,40}".prop_filter("non-empty after trim", |s| {
            !s.trim().is_empty() && s.trim() == s
        })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(pairs in prop::collection::vec((field(), field()), 1..6)) {
            let pairs: Vec<RawPair> = pairs.into_iter().map(|(q, a)| RawPair { question: q, answer: a }).collect();
            let parsed = parse_qa_response(&canonical_serialize(&pairs)).unwrap();
            prop_assert_eq!(parsed.pairs, pairs);
        }

        #[test]
        fn never_panics(raw in "\\PC{0,200}") {
            let _ = parse_qa_response(&raw);
        }
    }
}
