use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static HEADING_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:#{1,6}\s*)?(?:[0-9ivx]+\.?\s+)?(references|bibliography|works cited|literature cited)\s*:?\s*$")
        .expect("valid regex")
});
static END_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:#{1,6}\s*)?(?:[a-z0-9]+\.?\s+)?(appendix|appendices|supplementary material)\b")
        .expect("valid regex")
});
static BRACKET_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\[(\d+)\]\s*").expect("valid regex"));
static NUMBERED_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+)[.)]\s+").expect("valid regex"));
static YEAR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b((?:19|20)\d{2})[a-z]?\b").expect("valid regex"));
static QUOTED_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"["“]([^"”]{3,})["”]"#).expect("valid regex"));
static AFTER_YEAR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(?(?:19|20)\d{2}[a-z]?\)?[.,]\s+([^.?!]{3,}[.?!]?)").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    /// 1-based position in the reference list.
    pub index: usize,
    pub raw_text: String,
    pub title: Option<String>,
    pub year: Option<u16>,
}

impl ReferenceEntry {
    /// Title when known, otherwise the raw text cut to `max_chars`.
    pub fn short_label(&self, max_chars: usize) -> String {
        let src = self.title.as_deref().unwrap_or(&self.raw_text);
        if src.chars().count() <= max_chars {
            src.to_string()
        } else {
            let cut: String = src.chars().take(max_chars.saturating_sub(3)).collect();
            format!("{}...", cut.trim_end())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceExtraction {
    pub entries: Vec<ReferenceEntry>,
    /// Set when nothing could be extracted.
    pub diagnostic: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layout {
    Bracketed,
    Numbered,
    Hanging,
}

/// Splits the reference section of `text` into entries.
///
/// The section starts after the last references/bibliography heading and
/// runs to an appendix heading or the end of the text. Entries are split on
/// `[n]` markers, `n.` markers, or hanging indentation, whichever the first
/// non-blank line of the section uses.
pub fn extract_references(text: &str) -> ReferenceExtraction {
    let lines: Vec<&str> = text.split(['\n', '\u{000C}']).map(|l| l.trim_end_matches('\r')).collect();
    let Some(start) = lines.iter().rposition(|l| HEADING_RE.is_match(l)) else {
        return ReferenceExtraction {
            entries: Vec::new(),
            diagnostic: Some("no references heading found".into()),
        };
    };
    let body: Vec<&str> = lines[start + 1..]
        .iter()
        .copied()
        .take_while(|l| !END_RE.is_match(l))
        .collect();
    let Some(first) = body.iter().find(|l| !l.trim().is_empty()) else {
        return ReferenceExtraction {
            entries: Vec::new(),
            diagnostic: Some("references section is empty".into()),
        };
    };
    let layout = if BRACKET_RE.is_match(first) {
        Layout::Bracketed
    } else if NUMBERED_RE.is_match(first) {
        Layout::Numbered
    } else {
        Layout::Hanging
    };

    let mut raw: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in body {
        if line.trim().is_empty() {
            if layout == Layout::Hanging {
                raw.extend(current.take());
            }
            continue;
        }
        let starts_entry = match layout {
            Layout::Bracketed => BRACKET_RE.is_match(line),
            Layout::Numbered => NUMBERED_RE.is_match(line),
            Layout::Hanging => !line.starts_with([' ', '\t']),
        };
        let content = match layout {
            Layout::Bracketed => BRACKET_RE.replace(line, "").into_owned(),
            Layout::Numbered if starts_entry => NUMBERED_RE.replace(line, "").into_owned(),
            _ => line.trim().to_string(),
        };
        match (&mut current, starts_entry) {
            (Some(cur), false) => {
                cur.push(' ');
                cur.push_str(content.trim());
            }
            _ => {
                raw.extend(current.take());
                current = Some(content.trim().to_string());
            }
        }
    }
    raw.extend(current);

    let entries: Vec<ReferenceEntry> = raw
        .into_iter()
        .map(|r| r.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|r| !r.is_empty())
        .enumerate()
        .map(|(i, raw_text)| ReferenceEntry {
            index: i + 1,
            year: YEAR_RE.captures(&raw_text).and_then(|c| c[1].parse().ok()),
            title: guess_title(&raw_text),
            raw_text,
        })
        .collect();
    let diagnostic = entries
        .is_empty()
        .then(|| "no reference entries found after heading".to_string());
    ReferenceExtraction { entries, diagnostic }
}

/// Splits on ". " except after single-letter initials.
fn sentences(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, _) in raw.match_indices(". ") {
        let word = raw[start..i].rsplit(char::is_whitespace).next().unwrap_or("");
        if word.chars().count() <= 1 {
            continue;
        }
        out.push(&raw[start..i]);
        start = i + 2;
    }
    out.push(&raw[start..]);
    out
}

fn guess_title(raw: &str) -> Option<String> {
    if let Some(c) = QUOTED_RE.captures(raw) {
        return Some(c[1].trim().trim_end_matches([',', '.']).to_string());
    }
    if let Some(c) = AFTER_YEAR_RE.captures(raw) {
        let t = c[1].trim().trim_end_matches(['.', ',']);
        if t.split_whitespace().count() >= 2 {
            return Some(t.to_string());
        }
    }
    // "Authors. Title. Venue": take the longest of the first few sentences.
    sentences(raw)
        .into_iter()
        .skip(1)
        .take(2)
        .map(|s| s.trim().trim_end_matches('.'))
        .filter(|s| s.split_whitespace().count() >= 3)
        .max_by_key(|s| s.len())
        .map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initials_do_not_end_sentences() {
        assert_eq!(
            guess_title("J. Doe and R. Roe. Dense passage indexes for open questions. 2020."),
            Some("Dense passage indexes for open questions".into())
        );
        assert_eq!(
            guess_title("K. Lee et al. Reading agents at scale. ACL 2021."),
            Some("Reading agents at scale".into())
        );
    }

    #[test]
    fn bracketed_entries() {
        let text = "Body text.\nReferences\n[1] A. Smith. Deep nets for reading. NeurIPS, 2019.\n[2] B. Jones. Graph methods\n    for citations. ACL, 2021.\n[3] C. Wu. \"Fusion of rankings\", 2020.\n";
        let r = extract_references(text);
        assert!(r.diagnostic.is_none());
        assert_eq!(r.entries.len(), 3);
        assert_eq!(r.entries[1].raw_text, "B. Jones. Graph methods for citations. ACL, 2021.");
        assert_eq!(r.entries[0].year, Some(2019));
        assert_eq!(r.entries[2].title.as_deref(), Some("Fusion of rankings"));
        assert_eq!(r.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn numbered_entries_and_appendix_stop() {
        let text = "## Bibliography\n1. Lee, K. (2018). Dense passage retrieval at scale. EMNLP.\n2. Park, J. (2022). Agents that read. Preprint.\n\nAppendix A\n1. not a reference\n";
        let r = extract_references(text);
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.entries[0].title.as_deref(), Some("Dense passage retrieval at scale"));
        assert_eq!(r.entries[1].year, Some(2022));
    }

    #[test]
    fn hanging_indent_entries() {
        let text = "REFERENCES\nSmith, A. 2017. Attention everywhere.\n   Journal of Things.\nJones, B. 2015. Older work.\n";
        let r = extract_references(text);
        assert_eq!(r.entries.len(), 2);
        assert!(r.entries[0].raw_text.ends_with("Journal of Things."));
    }

    #[test]
    fn last_heading_wins() {
        let text = "References\n[1] early mention\nMore body.\nReferences\n[1] Real one, 2020.\n";
        let r = extract_references(text);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].raw_text, "Real one, 2020.");
    }

    #[test]
    fn missing_section_has_diagnostic() {
        let r = extract_references("just some body text");
        assert!(r.entries.is_empty());
        assert!(r.diagnostic.is_some());
        let r = extract_references("References\n\n");
        assert!(r.entries.is_empty());
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn short_label_truncates() {
        let e = ReferenceEntry {
            index: 1,
            raw_text: "x".repeat(100),
            title: None,
            year: None,
        };
        assert_eq!(e.short_label(10).chars().count(), 10);
    }
}
