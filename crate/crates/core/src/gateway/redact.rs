//! Pattern and list based removal of identifying information.

use std::fs;
use std::io;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    PhoneNumber,
    IdNumber,
    PersonName,
    Address,
}

impl SpanKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            SpanKind::PhoneNumber => "[PHONE]",
            SpanKind::IdNumber => "[ID]",
            SpanKind::PersonName => "[NAME]",
            SpanKind::Address => "[ADDR]",
        }
    }

    const ALL: [SpanKind; 4] = [
        SpanKind::PhoneNumber,
        SpanKind::IdNumber,
        SpanKind::PersonName,
        SpanKind::Address,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub span_kind: SpanKind,
    pub placeholder: String,
    /// Character offset of the replaced span in the input text.
    pub original_start: usize,
    /// Length of the replaced span in characters.
    pub original_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionReport {
    pub redacted_text: String,
    pub replacements: Vec<Replacement>,
    pub count: usize,
}

/// Replaces phone numbers, national-ID-like numbers and configured names and
/// addresses with fixed placeholders. Everything else is copied verbatim.
#[derive(Debug, Clone)]
pub struct Redactor {
    digits: Regex,
    names: Option<Regex>,
    addresses: Option<Regex>,
}

impl Default for Redactor {
    fn default() -> Self {
        Self::new(Vec::<String>::new(), Vec::<String>::new())
    }
}

fn list_pattern(entries: impl IntoIterator<Item = impl AsRef<str>>) -> Option<Regex> {
    let mut entries: Vec<String> = entries
        .into_iter()
        .map(|e| e.as_ref().trim().to_string())
        .filter(|e| !e.is_empty())
        // entries that could match placeholder text would break idempotence
        .filter(|e| !e.contains(['[', ']']))
        .filter(|e| !SpanKind::ALL.iter().any(|k| k.placeholder().contains(e.as_str())))
        .collect();
    if entries.is_empty() {
        return None;
    }
    // longest first so the alternation prefers the longest entry at a position
    entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    entries.dedup();
    let alternation = entries.iter().map(|e| regex::escape(e)).collect::<Vec<_>>().join("|");
    Some(Regex::new(&alternation).expect("escaped alternation is a valid regex"))
}

fn read_list(path: &Path) -> io::Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

impl Redactor {
    pub fn new(
        names: impl IntoIterator<Item = impl AsRef<str>>,
        addresses: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Self {
        Self {
            // digit runs with single '-' or ' ' separators, optional leading '+'
            digits: Regex::new(r"\+?[0-9](?:[- ]?[0-9])*").unwrap(),
            names: list_pattern(names),
            addresses: list_pattern(addresses),
        }
    }

    /// Loads name and address lists, one entry per line.
    pub fn from_files(names: Option<&Path>, addresses: Option<&Path>) -> io::Result<Self> {
        let names = names.map(read_list).transpose()?.unwrap_or_default();
        let addresses = addresses.map(read_list).transpose()?.unwrap_or_default();
        Ok(Self::new(names, addresses))
    }

    fn digit_spans(&self, text: &str, out: &mut Vec<(usize, usize, SpanKind)>) {
        for m in self.digits.find_iter(text) {
            let s = m.as_str();
            let digits = s.bytes().filter(u8::is_ascii_digit).count();
            let plain = digits == s.len();
            let next = text[m.end()..].chars().next();
            if plain && digits == 17 && matches!(next, Some('X' | 'x')) {
                out.push((m.start(), m.end() + 1, SpanKind::IdNumber));
            } else if plain && (digits == 15 || digits == 18) {
                out.push((m.start(), m.end(), SpanKind::IdNumber));
            } else if (7..=13).contains(&digits) {
                out.push((m.start(), m.end(), SpanKind::PhoneNumber));
            }
        }
    }

    pub fn redact(&self, text: &str) -> RedactionReport {
        let mut spans = Vec::new();
        self.digit_spans(text, &mut spans);
        for (re, kind) in [
            (&self.names, SpanKind::PersonName),
            (&self.addresses, SpanKind::Address),
        ] {
            if let Some(re) = re {
                spans.extend(re.find_iter(text).map(|m| (m.start(), m.end(), kind)));
            }
        }
        // leftmost wins, then longest
        spans.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));

        let mut redacted = String::with_capacity(text.len());
        let mut replacements = Vec::new();
        let mut cursor = 0;
        let mut char_pos = 0;
        for (start, end, kind) in spans {
            if start < cursor {
                continue;
            }
            let gap = &text[cursor..start];
            redacted.push_str(gap);
            char_pos += gap.chars().count();
            redacted.push_str(kind.placeholder());
            replacements.push(Replacement {
                span_kind: kind,
                placeholder: kind.placeholder().to_string(),
                original_start: char_pos,
                original_len: text[start..end].chars().count(),
            });
            char_pos += text[start..end].chars().count();
            cursor = end;
        }
        redacted.push_str(&text[cursor..]);

        RedactionReport {
            redacted_text: redacted,
            count: replacements.len(),
            replacements,
        }
    }
}
