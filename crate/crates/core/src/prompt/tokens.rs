/// Token counting hook so a real tokenizer can replace the estimate.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Conservative proxy: one token per four characters, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerToken;

impl TokenCounter for CharsPerToken {
    fn count(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
