use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;

pub const DOCUMENT_SLOT: &str = "{DOCUMENT}";
pub const DOMAIN_SLOT: &str = "{DOMAIN}";

/// The QA-generation instruction sent for every document.
pub const DEFAULT_TEMPLATE: &str = "{DOCUMENT} Ask a few questions to help understand the above passage about {DOMAIN} and give the corresponding answers in JSON list (each JSON contain two keys: question and answer).";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template must contain {slot} exactly once, found {found}")]
    SlotCount { slot: &'static str, found: usize },
}

/// A prompt body with exactly one `{DOCUMENT}` and one `{DOMAIN}` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    body: String,
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        for slot in [DOCUMENT_SLOT, DOMAIN_SLOT] {
            let found = body.matches(slot).count();
            if found != 1 {
                return Err(TemplateError::SlotCount { slot, found });
            }
        }
        Ok(Self { body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Hex SHA-256 of the body; half of the generation cache key.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    /// Substitutes both slots in one pass, so slot-like text inside the
    /// document is never expanded.
    pub fn render(&self, doc: &Document) -> String {
        let mut out = String::with_capacity(self.body.len() + doc.text.len() + doc.domain.len());
        let mut rest = self.body.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix(DOCUMENT_SLOT) {
                out.push_str(&doc.text);
                rest = after;
            } else if let Some(after) = tail.strip_prefix(DOMAIN_SLOT) {
                out.push_str(&doc.domain);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = TemplateError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.body
    }
}

pub fn render_prompt(doc: &Document, template: &PromptTemplate) -> String {
    template.render(doc)
}
