//! Token counting.
//!
//! Every length decision in a run (cluster growth and sequence packing) goes
//! through one [`SharedTokenizer`] so the two stages can never disagree about
//! how long a text is.

use std::fmt;
use std::sync::Arc;

/// Counts tokens in a text. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// Short identifier recorded in manifests.
    fn name(&self) -> &str;
}

/// Handle shared by every stage of a run.
pub type SharedTokenizer = Arc<dyn Tokenizer>;

/// Fallback tokenizer: one token per whitespace-delimited segment.
///
/// Joining texts with any whitespace separator is exactly additive under this
/// tokenizer, which the packer relies on when it re-checks emitted sequences.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn name(&self) -> &str {
        "whitespace"
    }
}

impl fmt::Debug for dyn Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tokenizer({})", self.name())
    }
}

pub fn whitespace() -> SharedTokenizer {
    Arc::new(WhitespaceTokenizer)
}
