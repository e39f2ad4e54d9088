use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Selects how token counts are derived from raw text.
///
/// Counts are only used for budgeting, so an approximation is fine. Callers
/// with an exact subword tokenizer implement [`TokenCounter`] themselves and
/// attach explicit `token_count`s to their documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterConfig {
    /// One token per CJK character, one per contiguous non-CJK, non-whitespace run.
    #[default]
    CjkWord,
    /// One token per whitespace-delimited run.
    Whitespace,
    /// One token per unicode scalar value, whitespace excluded.
    Chars,
}

pub trait TokenCounter {
    fn count(&self, text: &str) -> u64;
}

impl TokenCounter for CounterConfig {
    fn count(&self, text: &str) -> u64 {
        match self {
            CounterConfig::CjkWord => Segments::new(text).count() as u64,
            CounterConfig::Whitespace => text.split_whitespace().count() as u64,
            CounterConfig::Chars => text.chars().filter(|c| !c.is_whitespace()).count() as u64,
        }
    }
}

pub fn count_tokens(text: &str, counter: &impl TokenCounter) -> u64 {
    counter.count(text)
}

/// CJK ideographs, kana, hangul, CJK punctuation and fullwidth forms.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3001..=0x303F
        | 0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F
        | 0x30000..=0x3134F)
}

/// Iterator over the segments the default counter counts.
///
/// The text metrics tokenize with the same rule so that metric tokens and
/// budget tokens agree.
pub struct Segments<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Segments<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }
}

impl<'a> Iterator for Segments<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let mut chars = rest.char_indices();
        let start = loop {
            let (i, c) = chars.next()?;
            if !c.is_whitespace() {
                if is_cjk(c) {
                    let end = i + c.len_utf8();
                    self.pos += end;
                    return Some(&rest[i..end]);
                }
                break i;
            }
        };
        let mut end = rest.len();
        for (i, c) in chars {
            if c.is_whitespace() || is_cjk(c) {
                end = i;
                break;
            }
        }
        self.pos += end;
        Some(&rest[start..end])
    }
}

pub fn segment(text: &str) -> Vec<&str> {
    Segments::new(text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_tokens() {
        assert_eq!(count_tokens("", &CounterConfig::CjkWord), 0);
        assert_eq!(count_tokens("   \n\t", &CounterConfig::CjkWord), 0);
    }

    #[test]
    fn words_are_runs() {
        assert_eq!(count_tokens("hello world", &CounterConfig::default()), 2);
        assert_eq!(count_tokens("a-b,c  d", &CounterConfig::default()), 2);
    }

    #[test]
    fn each_cjk_char_is_a_token() {
        assert_eq!(count_tokens("中华人民共和国", &CounterConfig::default()), 7);
        // mixed: 刑法 (2) + Article30 (1) + 条 (1)
        assert_eq!(count_tokens("刑法Article30条", &CounterConfig::default()), 4);
        assert_eq!(segment("刑法Article30条"), ["刑", "法", "Article30", "条"]);
    }

    #[test]
    fn ideographic_space_separates() {
        assert_eq!(segment("ab\u{3000}cd"), ["ab", "cd"]);
    }

    #[test]
    fn alternate_counters() {
        assert_eq!(CounterConfig::Whitespace.count("中华 人民"), 2);
        assert_eq!(CounterConfig::Chars.count("a b中"), 3);
    }
}
