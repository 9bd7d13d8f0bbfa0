//! Regex-pattern QA extraction, the reading-comprehension baseline.
//!
//! Text is first split into sentences on terminal punctuation. Each rule's
//! trigger is matched against a window of consecutive sentences (joined by a
//! single space) and must cover the whole window. Windows are scanned left to
//! right; at each sentence index the first matching rule wins and the scan
//! resumes after its window, so matches never overlap.

use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Origin, QaPair};

pub const BUILTIN_RULE_NAME: &str = "therefore";
const BUILTIN_TRIGGER: &str = r"(?P<SENT1>.+)[.!?]\s+Therefore,\s*(?P<SENT2>.+)";
const BUILTIN_QUESTION: &str = "What is the cause of {SENT1}?";
const BUILTIN_ANSWER: &str = "{SENT2}";

fn default_window() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub trigger: String,
    pub question: String,
    pub answer: String,
    /// Number of consecutive sentences the trigger spans.
    #[serde(default = "default_window")]
    pub sentences: usize,
}

impl RuleSpec {
    pub fn builtin() -> Self {
        Self {
            name: BUILTIN_RULE_NAME.into(),
            trigger: BUILTIN_TRIGGER.into(),
            question: BUILTIN_QUESTION.into(),
            answer: BUILTIN_ANSWER.into(),
            sentences: 2,
        }
    }
}

/// Rule spec file: `builtin = false` drops the built-in rule, `[[rule]]`
/// tables add user rules after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleFile {
    #[serde(default = "default_true")]
    pub builtin: bool,
    #[serde(default, rename = "rule")]
    pub rules: Vec<RuleSpec>,
}

impl RuleFile {
    pub fn specs(&self) -> Vec<RuleSpec> {
        let mut out = Vec::new();
        if self.builtin {
            out.push(RuleSpec::builtin());
        }
        out.extend(self.rules.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleFailure {
    pub rule: String,
    /// Byte offset into the offending field, when known.
    pub position: Option<usize>,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{} rule(s) failed to compile: {}", .0.len(), describe(.0))]
    Compile(Vec<RuleFailure>),
    #[error("rule file {path}: {message}")]
    File { path: String, message: String },
}

fn describe(failures: &[RuleFailure]) -> String {
    failures
        .iter()
        .map(|f| match f.position {
            Some(p) => format!("{} (at {p}): {}", f.rule, f.message),
            None => format!("{}: {}", f.rule, f.message),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone)]
pub struct PatternRule {
    pub name: String,
    trigger: Regex,
    question: Vec<Piece>,
    answer: Vec<Piece>,
    window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Capture(String),
}

fn instantiate(pieces: &[Piece], caps: &regex::Captures<'_>) -> String {
    pieces
        .iter()
        .map(|p| match p {
            Piece::Literal(s) => s.as_str(),
            Piece::Capture(name) => caps.name(name).map_or("", |m| m.as_str()),
        })
        .collect()
}

/// Splits a `{NAME}` template. Errors carry the byte offset of the problem.
fn parse_template(template: &str) -> Result<Vec<Piece>, (usize, String)> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or((offset + open, "unclosed '{'".to_string()))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err((offset + open, format!("invalid placeholder {{{name}}}")));
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(std::mem::take(&mut literal)));
        }
        pieces.push(Piece::Capture(name.to_string()));
        let consumed = open + 1 + close + 1;
        offset += consumed;
        rest = &rest[consumed..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

fn compile_one(spec: &RuleSpec) -> Result<PatternRule, RuleFailure> {
    let fail = |position, message: String| RuleFailure {
        rule: spec.name.clone(),
        position,
        message,
    };
    if spec.sentences == 0 {
        return Err(fail(None, "sentences must be at least 1".into()));
    }
    if let Err(e) = regex_syntax::ast::parse::Parser::new().parse(&spec.trigger) {
        return Err(fail(Some(e.span().start.offset), format!("trigger: {}", e.kind())));
    }
    let trigger = Regex::new(&format!("(?s)^(?:{})$", spec.trigger))
        .map_err(|e| fail(None, format!("trigger: {e}")))?;
    let groups: BTreeSet<&str> = trigger.capture_names().flatten().collect();

    let mut templates = Vec::with_capacity(2);
    for (field, template) in [("question", &spec.question), ("answer", &spec.answer)] {
        let pieces = parse_template(template)
            .map_err(|(pos, msg)| fail(Some(pos), format!("{field} template: {msg}")))?;
        for p in &pieces {
            if let Piece::Capture(name) = p {
                if !groups.contains(name.as_str()) {
                    let pos = template.find(&format!("{{{name}}}"));
                    return Err(fail(
                        pos,
                        format!("{field} template references undefined capture {{{name}}}"),
                    ));
                }
            }
        }
        templates.push(pieces);
    }
    let answer = templates.pop().expect("two templates");
    let question = templates.pop().expect("two templates");
    Ok(PatternRule {
        name: spec.name.clone(),
        trigger,
        question,
        answer,
        window: spec.sentences,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<PatternRule>,
}

impl RuleSet {
    /// The single built-in "Therefore" cause rule.
    pub fn builtin() -> Self {
        compile_rules(&[RuleSpec::builtin()]).expect("built-in rule compiles")
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RuleError> {
        Self::from_toml_named(text, "<inline>")
    }

    /// Parses rule file text; `origin` labels parse errors.
    pub fn from_toml_named(text: &str, origin: &str) -> Result<Self, RuleError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| RuleError::File {
            path: origin.into(),
            message: e.to_string(),
        })?;
        compile_rules(&file.specs())
    }

    pub fn from_file(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_named(&text, &path.display().to_string())
    }
}

/// Compiles every spec, collecting all failures rather than stopping at the
/// first.
pub fn compile_rules(specs: &[RuleSpec]) -> Result<RuleSet, RuleError> {
    let mut rules = Vec::with_capacity(specs.len());
    let mut failures = Vec::new();
    for spec in specs {
        match compile_one(spec) {
            Ok(rule) => rules.push(rule),
            Err(f) => failures.push(f),
        }
    }
    if failures.is_empty() {
        Ok(RuleSet { rules })
    } else {
        Err(RuleError::Compile(failures))
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace. Sentences keep their
/// punctuation and are trimmed; a trailing fragment without punctuation is
/// kept as a sentence.
pub fn segment_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    push_trimmed(&mut out, &text[start..end]);
                    start = end;
                }
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

pub fn apply_rules(doc: &Document, rules: &RuleSet) -> Vec<QaPair> {
    let sentences = segment_sentences(&doc.text);
    let mut pairs = Vec::new();
    let mut i = 0;
    'scan: while i < sentences.len() {
        for rule in &rules.rules {
            if i + rule.window > sentences.len() {
                continue;
            }
            let window = sentences[i..i + rule.window].join(" ");
            let Some(caps) = rule.trigger.captures(&window) else {
                continue;
            };
            let question = instantiate(&rule.question, &caps);
            let answer = instantiate(&rule.answer, &caps);
            if question.trim().is_empty() || answer.trim().is_empty() {
                continue;
            }
            pairs.push(QaPair::new(question, answer, &doc.id, Origin::Regex));
            i += rule.window;
            continue 'scan;
        }
        i += 1;
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> Document {
        Document {
            id: "d".into(),
            text: text.into(),
            domain: "engineering".into(),
            meta: None,
        }
    }

    #[test]
    fn builtin_rule_cause_question() {
        let pairs = apply_rules(&doc("The valve failed. Therefore, pressure dropped."), &RuleSet::builtin());
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].question, "What is the cause of The valve failed?");
        assert_eq!(pairs[0].answer, "pressure dropped.");
        assert_eq!(pairs[0].origin, Origin::Regex);
    }

    #[test]
    fn no_trigger_no_pairs() {
        assert!(apply_rules(&doc("Nothing causal here. Just facts."), &RuleSet::builtin()).is_empty());
    }

    #[test]
    fn two_occurrences_in_text_order() {
        let text = "Rain fell all night. Therefore, the river rose. Officials met. \
                    The levee held. Therefore, the town stayed dry.";
        let pairs = apply_rules(&doc(text), &RuleSet::builtin());
        let qs: Vec<_> = pairs.iter().map(|p| p.question.as_str()).collect();
        assert_eq!(
            qs,
            [
                "What is the cause of Rain fell all night?",
                "What is the cause of The levee held?"
            ]
        );
        assert_eq!(pairs[1].answer, "the town stayed dry.");
    }

    #[test]
    fn matches_do_not_overlap() {
        // the middle sentence is consumed by the first match
        let text = "A happened. Therefore, B happened. Therefore, C happened.";
        let pairs = apply_rules(&doc(text), &RuleSet::builtin());
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].answer, "B happened.");
    }

    #[test]
    fn compile_errors_name_every_failing_rule() {
        let specs = vec![
            RuleSpec::builtin(),
            RuleSpec {
                name: "broken".into(),
                trigger: "(?P<SENT1>a(b".into(),
                question: "{SENT1}?".into(),
                answer: "x".into(),
                sentences: 1,
            },
            RuleSpec {
                name: "undefined".into(),
                trigger: "(?P<SENT1>.+)".into(),
                question: "Why {SENT2}?".into(),
                answer: "{SENT1}".into(),
                sentences: 1,
            },
        ];
        match compile_rules(&specs) {
            Err(RuleError::Compile(f)) => {
                assert_eq!(f.len(), 2);
                assert_eq!(f[0].rule, "broken");
                assert!(f[0].position.is_some());
                assert_eq!(f[1].rule, "undefined");
                assert_eq!(f[1].position, Some(4));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(compile_rules(&[]).unwrap().is_empty());
    }

    #[test]
    fn rule_file_adds_user_rules() {
        let set = RuleSet::from_toml_str(
            r#"
[[rule]]
name = "because"
trigger = '(?P<SENT2>.+) because (?P<SENT1>.+)[.!?]'
question = "Why {SENT2}?"
answer = "Because {SENT1}."
sentences = 1
"#,
        )
        .unwrap();
        assert_eq!(set.names().collect::<Vec<_>>(), ["therefore", "because"]);
        let pairs = apply_rules(&doc("The dam broke because the rain was heavy."), &set);
        assert_eq!(pairs[0].question, "Why The dam broke?");
        assert_eq!(pairs[0].answer, "Because the rain was heavy.");

        let none = RuleSet::from_toml_str("builtin = false").unwrap();
        assert!(none.is_empty());
        assert!(RuleSet::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn template_parsing() {
        assert_eq!(parse_template("a {X}").unwrap().len(), 2);
        assert_eq!(parse_template("a {X").unwrap_err().0, 2);
        assert!(parse_template("{}").is_err());
    }

    #[test]
    fn sentence_segmentation() {
        assert_eq!(
            segment_sentences("One. Two!  Three?\nFour 3.5 units"),
            ["One.", "Two!", "Three?", "Four 3.5 units"]
        );
        assert!(segment_sentences("   ").is_empty());
    }

    proptest! {
        #[test]
        fn pairs_come_from_source_text(
            parts in prop::collection::vec(("[A-Za-z ]{1,20}", any::<bool>()), 1..8)
        ) {
            let mut text = String::new();
            for (s, therefore) in &parts {
                if *therefore { text.push_str("Therefore, "); }
                text.push_str(s.trim());
                text.push_str("x. ");
            }
            let d = doc(&text);
            let pairs = apply_rules(&d, &RuleSet::builtin());
            for p in &pairs {
                let sent1 = p.question
                    .strip_prefix("What is the cause of ")
                    .and_then(|q| q.strip_suffix('?'))
                    .unwrap();
                prop_assert!(text.contains(sent1));
                prop_assert!(text.contains(&p.answer));
            }
            prop_assert_eq!(apply_rules(&d, &RuleSet::builtin()), pairs);
            prop_assert!(apply_rules(&d, &RuleSet::empty()).is_empty());
        }
    }
}
