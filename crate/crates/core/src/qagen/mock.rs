//! Offline stand-in for a chat-completion service.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::repair::{canonical_serialize, RawPair};
use super::service::{ChatService, ServiceError};

/// Endpoint value that selects [`MockChatService`] instead of HTTP.
pub const MOCK_ENDPOINT: &str = "mock://";

/// Answers every prompt with up to three QA pairs built from the leading
/// sentences of the passage. Deterministic; counts calls.
#[derive(Debug, Default)]
pub struct MockChatService {
    calls: AtomicUsize,
}

impl MockChatService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// The passage part of a prompt built from the default template.
fn passage(prompt: &str) -> &str {
    prompt
        .find(" Ask a few questions")
        .map_or(prompt, |end| &prompt[..end])
}

pub fn mock_reply(prompt: &str) -> String {
    let pairs: Vec<RawPair> = passage(prompt)
        .split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| s.split_whitespace().count() >= 3)
        .take(3)
        .map(|sentence| {
            let topic: Vec<&str> = sentence.split_whitespace().take(3).collect();
            RawPair {
                question: format!("What does the passage say about {}?", topic.join(" ")),
                answer: sentence.to_string(),
            }
        })
        .collect();
    if pairs.is_empty() {
        return "I could not find anything to ask about this passage.".to_string();
    }
    canonical_serialize(&pairs)
}

impl ChatService for MockChatService {
    fn complete(&self, _model: &str, prompt: &str) -> Result<String, ServiceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock_reply(prompt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qagen::repair::parse_qa_response;

    #[test]
    fn reply_is_parseable_and_grounded() {
        let prompt = "The valve failed under load. Pressure dropped quickly. Ask a few questions about it";
        let reply = mock_reply(prompt);
        let parsed = parse_qa_response(&reply).unwrap();
        assert_eq!(parsed.pairs.len(), 2);
        assert_eq!(parsed.pairs[0].answer, "The valve failed under load.");
    }

    #[test]
    fn short_passage_gets_prose() {
        assert!(parse_qa_response(&mock_reply("Hi.")).is_err());
    }
}
