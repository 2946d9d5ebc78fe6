use std::collections::HashMap;
use std::path::Path;

use super::HarnessError;
use crate::corpus::TEXT8_VOCAB;

pub const DEFAULT_PLACEHOLDER: &str = "\u{fffd}";

/// Token id to surface string.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VocabMap {
    entries: HashMap<u32, String>,
}

impl VocabMap {
    /// Space for id 0, `a`-`z` for ids 1-26.
    pub fn text8() -> Self {
        let mut entries = HashMap::with_capacity(TEXT8_VOCAB);
        entries.insert(0, " ".to_string());
        for (i, c) in ('a'..='z').enumerate() {
            entries.insert(i as u32 + 1, c.to_string());
        }
        Self { entries }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, String)>) -> Self {
        Self {
            entries: pairs.into_iter().collect(),
        }
    }

    /// Reads either a JSON object `{"id": "string", ...}` or lines of
    /// `id<TAB>string`. Escapes in TSV strings are not interpreted.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        if text.trim_start().starts_with('{') {
            let raw: HashMap<String, String> = serde_json::from_str(text)?;
            let entries = raw
                .into_iter()
                .map(|(k, v)| {
                    k.parse::<u32>()
                        .map(|id| (id, v))
                        .map_err(|_| HarnessError::Input(format!("vocabulary key {k:?} is not a token id")))
                })
                .collect::<Result<_, _>>()?;
            return Ok(Self { entries });
        }
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, s) = line
                .split_once('\t')
                .ok_or_else(|| HarnessError::Input(format!("vocabulary line {}: missing tab", n + 1)))?;
            let id = id
                .trim()
                .parse::<u32>()
                .map_err(|_| HarnessError::Input(format!("vocabulary line {}: bad id {id:?}", n + 1)))?;
            entries.insert(id, s.to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, id: u32) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rendered documents plus the number of ids missing from the map.
#[derive(Debug, Clone, PartialEq)]
pub struct TextExport {
    pub text: String,
    pub missing: usize,
}

/// One line per sequence; ids without an entry become `placeholder`.
/// Newlines inside surface strings are replaced by spaces so line count
/// equals sequence count.
pub fn export_text(sequences: &[Vec<u32>], map: &VocabMap, placeholder: &str) -> TextExport {
    let mut text = String::new();
    let mut missing = 0;
    for seq in sequences {
        for &id in seq {
            match map.get(id) {
                Some(s) if s.contains('\n') => text.push_str(&s.replace('\n', " ")),
                Some(s) => text.push_str(s),
                None => {
                    missing += 1;
                    text.push_str(placeholder);
                }
            }
        }
        text.push('\n');
    }
    TextExport { text, missing }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_map_renders_lowercase_text() {
        let e = export_text(&[vec![8, 9, 0, 20, 8, 5, 18, 5]], &VocabMap::text8(), DEFAULT_PLACEHOLDER);
        assert_eq!(e.text, "hi there\n");
        assert_eq!(e.missing, 0);
    }

    #[test]
    fn custom_map_and_placeholder() {
        let map = VocabMap::parse("{\"1\": \"a\", \"2\": \"b\", \"3\": \"c\"}").unwrap();
        let e = export_text(&[vec![1, 2, 3], vec![3, 9]], &map, "?");
        assert_eq!(e.text, "abc\nc?\n");
        assert_eq!(e.missing, 1);
        let tsv = VocabMap::parse("1\t a\n2\tb\n").unwrap();
        assert_eq!(tsv.get(1), Some(" a"));
        assert!(VocabMap::parse("x\ty").is_err());
        assert!(VocabMap::parse("{\"x\": \"y\"}").is_err());
    }
}
