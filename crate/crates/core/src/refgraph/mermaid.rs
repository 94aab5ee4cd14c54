use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{RefGraphError, RelationGraph};

static NODE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^([A-Za-z_][A-Za-z0-9_]*)\["([^"]*)"\]$"#).expect("valid regex"));
static EDGE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^([A-Za-z_][A-Za-z0-9_]*)\s*-->\|"([^"]*)"\|\s*([A-Za-z_][A-Za-z0-9_]*)$"#).expect("valid regex")
});
static ENTITY_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(\d+);").expect("valid regex"));

/// Characters replaced by `#NN;` codes inside labels.
const ESCAPED: &[char] = &['"', '#', '|', '<', '>', '[', ']', '{', '}', '`', ';'];

/// Escapes a label for use inside a quoted Mermaid string.
pub fn escape_label(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        if c.is_control() {
            out.push(' ');
        } else if ESCAPED.contains(&c) {
            out.push_str(&format!("#{};", c as u32));
        } else {
            out.push(c);
        }
    }
    out
}

pub fn unescape_label(label: &str) -> String {
    ENTITY_RE
        .replace_all(label, |c: &regex::Captures<'_>| {
            c[1].parse::<u32>()
                .ok()
                .and_then(char::from_u32)
                .map(String::from)
                .unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

/// Renders the graph as a top-down Mermaid flowchart.
pub fn emit_mermaid(graph: &RelationGraph) -> Result<String, RefGraphError> {
    if graph.nodes.is_empty() {
        return Err(RefGraphError::EmptyGraph);
    }
    let mut out = String::from("flowchart TD\n");
    for n in &graph.nodes {
        out.push_str(&format!("    {}[\"{}\"]\n", n.id, escape_label(&n.label)));
    }
    for e in &graph.edges {
        out.push_str(&format!("    {} -->|\"{}\"| {}\n", e.from, escape_label(&e.label), e.to));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Flowchart {
    pub direction: String,
    /// (id, unescaped label)
    pub nodes: Vec<(String, String)>,
    /// (from, unescaped label, to)
    pub edges: Vec<(String, String, String)>,
}

/// Parses and checks the flowchart subset produced by [`emit_mermaid`]:
/// a `flowchart` header, quoted node declarations and labeled edges between
/// declared nodes.
pub fn parse_mermaid(src: &str) -> Result<Flowchart, RefGraphError> {
    let mut lines = src.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("%%"));
    let header = lines.next().ok_or_else(|| RefGraphError::Parse("empty diagram".into()))?;
    let direction = header
        .strip_prefix("flowchart ")
        .map(str::trim)
        .filter(|d| matches!(*d, "TD" | "TB" | "BT" | "LR" | "RL"))
        .ok_or_else(|| RefGraphError::Parse(format!("bad header {header:?}")))?;
    let mut chart = Flowchart {
        direction: direction.to_string(),
        ..Flowchart::default()
    };
    let mut ids = HashSet::new();
    for (n, line) in lines.enumerate() {
        if let Some(c) = NODE_RE.captures(line) {
            if !ids.insert(c[1].to_string()) {
                return Err(RefGraphError::Parse(format!("duplicate node {}", &c[1])));
            }
            chart.nodes.push((c[1].to_string(), unescape_label(&c[2])));
        } else if let Some(c) = EDGE_RE.captures(line) {
            for id in [&c[1], &c[3]] {
                if !ids.contains(id) {
                    return Err(RefGraphError::Parse(format!("edge uses undeclared node {id}")));
                }
            }
            chart
                .edges
                .push((c[1].to_string(), unescape_label(&c[2]), c[3].to_string()));
        } else {
            return Err(RefGraphError::Parse(format!("line {}: cannot parse {line:?}", n + 2)));
        }
    }
    Ok(chart)
}
