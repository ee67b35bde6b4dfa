use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;

use crate::registry::{Registry, UnknownStrategy};

/// Similarity of two strings in `[0, 1]`.
pub trait TextMetric: Send + Sync {
    fn name(&self) -> &'static str;
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// `1 - lev(a, b) / max(|a|, |b|)` over Unicode scalar values, after NFC
/// normalization and trimming. Two empty strings have similarity 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedLevenshtein;

impl TextMetric for NormalizedLevenshtein {
    fn name(&self) -> &'static str {
        "normalized_levenshtein"
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        let a: String = a.trim().nfc().collect();
        let b: String = b.trim().nfc().collect();
        let longest = a.chars().count().max(b.chars().count());
        if longest == 0 {
            return 1.0;
        }
        1.0 - strsim::levenshtein(&a, &b) as f64 / longest as f64
    }
}

pub type TextMetricRegistry = Registry<dyn TextMetric, (), UnknownStrategy>;

pub fn text_metrics() -> &'static TextMetricRegistry {
    static REG: OnceLock<TextMetricRegistry> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("text metric").register("normalized_levenshtein", |_| Ok(Box::new(NormalizedLevenshtein)))
    })
}

pub fn text_similarity(a: &str, b: &str) -> f64 {
    NormalizedLevenshtein.similarity(a, b)
}
