//! Line-oriented tree format.
//!
//! ```text
//! # metatree-tree 1
//! # depth 2
//! # provenance optimal-d2
//! # classes 2
//! 1 I 0 0.25
//! 2 L 0 pure
//! 3 L 1 depth
//! ```
//!
//! Header lines start with `#`; unknown header keys are kept by callers that
//! want them (e.g. the invoking command line) and ignored here. Node lines
//! are `index I feature threshold` or `index L class reason`. Thresholds are
//! written in shortest round-trip form, so parsing is bit-exact.

use std::fmt::Write;

use super::model::{DecisionTree, Leaf, Node, Provenance, Split, StopReason};
use crate::error::{Error, Result};

pub const TREE_FORMAT_VERSION: u32 = 1;

/// Serializes a tree; `extra` header lines are written as `# key value`.
pub fn tree_to_text(t: &DecisionTree, extra: &[(&str, &str)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# metatree-tree {TREE_FORMAT_VERSION}");
    let _ = writeln!(s, "# depth {}", t.depth);
    let _ = writeln!(s, "# provenance {}", t.provenance);
    let _ = writeln!(s, "# classes {}", t.n_classes);
    for (k, v) in extra {
        let _ = writeln!(s, "# {k} {}", v.replace('\n', " "));
    }
    for (i, n) in t.nodes() {
        match n {
            Node::Internal(sp) => {
                let _ = writeln!(s, "{i} I {} {}", sp.feature, sp.threshold);
            }
            Node::Leaf(l) => {
                let _ = writeln!(s, "{i} L {} {}", l.label, l.reason.as_str());
            }
            Node::Absent => {}
        }
    }
    s
}

pub fn parse_tree(text: &str) -> Result<DecisionTree> {
    let mut depth = None;
    let mut provenance = None;
    let mut classes = None;
    let mut version_seen = false;
    let mut nodes = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(format!("tree line {}: {what}: '{line}'", ln + 1));
        if let Some(h) = line.strip_prefix('#') {
            let mut parts = h.trim().splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let value = parts.next().unwrap_or("").trim();
            match key {
                "metatree-tree" => {
                    if value.parse::<u32>().ok() != Some(TREE_FORMAT_VERSION) {
                        return Err(bad("unsupported format version"));
                    }
                    version_seen = true;
                }
                "depth" => depth = Some(value.parse::<usize>().map_err(|_| bad("bad depth"))?),
                "provenance" => provenance = Some(value.parse::<Provenance>()?),
                "classes" => classes = Some(value.parse::<usize>().map_err(|_| bad("bad class count"))?),
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let index: usize = f.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad index"))?;
        let node = match (f.get(1).copied(), f.len()) {
            (Some("I"), 4) => Node::Internal(Split::new(
                f[2].parse().map_err(|_| bad("bad feature"))?,
                f[3].parse().map_err(|_| bad("bad threshold"))?,
            )),
            (Some("L"), 3 | 4) => Node::Leaf(Leaf {
                label: f[2].parse().map_err(|_| bad("bad label"))?,
                reason: match f.get(3) {
                    Some(r) => r.parse()?,
                    None => StopReason::Depth,
                },
            }),
            _ => return Err(bad("unrecognized node")),
        };
        nodes.push((index, node));
    }
    if !version_seen {
        return Err(Error::format("missing '# metatree-tree' header"));
    }
    let depth = depth.ok_or_else(|| Error::format("missing depth header"))?;
    if depth > super::MAX_TREE_DEPTH {
        return Err(Error::format(format!("depth {depth} too large")));
    }
    let mut t = DecisionTree::new(
        depth,
        classes.ok_or_else(|| Error::format("missing classes header"))?,
        provenance.ok_or_else(|| Error::format("missing provenance header"))?,
    );
    for (i, n) in nodes {
        if i == 0 || i >= t.capacity() {
            return Err(Error::format(format!("node index {i} outside depth {depth}")));
        }
        t.set(i, n);
    }
    t.validate()?;
    Ok(t)
}

/// Graphviz rendering. `feature_names` and `class_names` are optional labels.
pub fn tree_to_dot(t: &DecisionTree, feature_names: &[String], class_names: &[String]) -> String {
    let mut s = String::from("digraph tree {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for (i, n) in t.nodes() {
        match n {
            Node::Internal(sp) => {
                let name = feature_names
                    .get(sp.feature)
                    .cloned()
                    .unwrap_or_else(|| format!("x{}", sp.feature));
                let _ = writeln!(s, "  n{i} [label=\"{} <= {}\"];", escape(&name), sp.threshold);
            }
            Node::Leaf(l) => {
                let name = class_names.get(l.label).cloned().unwrap_or_else(|| l.label.to_string());
                let _ = writeln!(
                    s,
                    "  n{i} [label=\"class {}\\n({})\", style=rounded];",
                    escape(&name),
                    l.reason.as_str()
                );
            }
            Node::Absent => continue,
        }
        if i > 1 {
            let tag = if i % 2 == 0 { "yes" } else { "no" };
            let _ = writeln!(s, "  n{} -> n{i} [label=\"{tag}\"];", i / 2);
        }
    }
    s.push_str("}\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
