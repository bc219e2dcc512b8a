//! Attack harnesses: token-edit paraphrasing and frequency-analysis spoofing.

mod paraphrase;
mod spoof;

pub use paraphrase::{paraphrase_attack, ParaphraseParams};
pub use spoof::{
    common_tokens, spoof_attack, AdaptiveTarget, KgwTarget, SpoofConfig, SpoofReport, SpoofTarget,
};
