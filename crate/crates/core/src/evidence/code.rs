//! Reference graphs over a toy rule-code corpus and hierarchical
//! summarization of the symbols reachable from a rule's entry function.
//!
//! The corpus uses a small Rust-like surface: top-level `fn`, `struct`,
//! `enum`, `trait`, `const` and `static` declarations, each optionally
//! preceded by comment lines. Any identifier in a declaration body that
//! names another declaration is a reference; everything else is treated as
//! a built-in and not expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{prompts, Gateway, GatewayError, GatewayRequest, Schema};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("entry symbol `{0}` is not declared in the corpus")]
    UnknownEntry(String),
    #[error("io: {0}")]
    Io(String),
    #[error("summarizing `{symbol}` failed: {source}")]
    Gateway { symbol: String, source: GatewayError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub name: String,
    pub kind: String,
    pub file: String,
    pub line: usize,
    /// Leading comment lines, markers included.
    pub comments: Vec<String>,
    pub code: String,
}

impl Declaration {
    /// Two or more comment lines, or a `/** ... */` doc block.
    pub fn has_detailed_comments(&self) -> bool {
        self.comments.len() >= 2 || self.comments.iter().any(|c| c.trim_start().starts_with("/**"))
    }

    fn comment_text(&self) -> String {
        text::comment_text(&self.comments.join("\n"))
    }
}

const DECL_KINDS: [&str; 6] = ["fn", "struct", "enum", "trait", "const", "static"];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn identifiers(code: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = code.as_bytes();
    let mut i = 0;
    let mut in_str = false;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if in_str {
            if c == '\\' {
                i += 1;
            } else if c == '"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        if c == '"' {
            in_str = true;
            i += 1;
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(&code[start..i]);
            continue;
        }
        i += 1;
    }
    out
}

/// Net brace depth change of a line, ignoring strings and `//` comments.
fn brace_delta(line: &str) -> i64 {
    let mut d = 0;
    let mut in_str = false;
    let mut prev = ' ';
    for c in line.chars() {
        if in_str {
            if c == '"' && prev != '\\' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else if c == '/' && prev == '/' {
            break;
        } else if c == '{' {
            d += 1;
        } else if c == '}' {
            d -= 1;
        }
        prev = c;
    }
    d
}

fn declaration_head(line: &str) -> Option<(String, String)> {
    let mut words = line.split(|c: char| c.is_whitespace() || c == '(' || c == '<' || c == ':' || c == '{');
    let mut w = words.next()?;
    if w == "pub" {
        w = words.next()?;
    }
    if !DECL_KINDS.contains(&w) {
        return None;
    }
    let name = words.find(|s| !s.is_empty())?;
    if !name.chars().next().is_some_and(is_ident_start) {
        return None;
    }
    Some((w.to_string(), name.to_string()))
}

/// Top-level declarations of one source file.
pub fn parse_source(file: &str, source: &str) -> Result<Vec<Declaration>, CodeError> {
    let lines: Vec<&str> = source.lines().collect();
    let mut decls = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut in_block_comment = false;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let t = line.trim();
        if in_block_comment || t.starts_with("/*") {
            in_block_comment = !t.ends_with("*/");
            pending.push(line.to_string());
            i += 1;
            continue;
        }
        if t.starts_with("//") {
            pending.push(line.to_string());
            i += 1;
            continue;
        }
        if t.is_empty() || t.starts_with('#') || t.starts_with("use ") {
            pending.clear();
            i += 1;
            continue;
        }
        let Some((kind, name)) = declaration_head(t) else {
            return Err(CodeError::Parse {
                file: file.to_string(),
                line: i + 1,
                message: format!("expected a declaration, found `{t}`"),
            });
        };
        let start = i;
        let mut depth = 0i64;
        let mut opened = false;
        loop {
            if i >= lines.len() {
                return Err(CodeError::Parse {
                    file: file.to_string(),
                    line: start + 1,
                    message: format!("unterminated declaration `{name}`"),
                });
            }
            let d = brace_delta(lines[i]);
            opened |= lines[i].contains('{');
            depth += d;
            if depth < 0 {
                return Err(CodeError::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    message: "unbalanced `}`".to_string(),
                });
            }
            let done = if opened { depth == 0 } else { lines[i].trim_end().ends_with(';') };
            i += 1;
            if done {
                break;
            }
        }
        decls.push(Declaration {
            name,
            kind,
            file: file.to_string(),
            line: start + 1,
            comments: std::mem::take(&mut pending),
            code: lines[start..i].join("\n"),
        });
    }
    Ok(decls)
}

/// All declarations under `dir` (recursively, `.rs` files, sorted paths).
/// Later duplicates of a name are ignored.
pub fn load_corpus(dir: &Path) -> Result<BTreeMap<String, Declaration>, CodeError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut out = BTreeMap::new();
    for path in files {
        let src = std::fs::read_to_string(&path).map_err(|e| CodeError::Io(format!("{}: {e}", path.display())))?;
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        for d in parse_source(&rel, &src)? {
            out.entry(d.name.clone()).or_insert(d);
        }
    }
    Ok(out)
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<(), CodeError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CodeError::Io(format!("{}: {e}", dir.display())))?;
    for e in entries {
        let path = e.map_err(|e| CodeError::Io(e.to_string()))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.extension().and_then(|x| x.to_str()) == Some("rs") {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStructureTree {
    /// Reachable declarations; index 0 is the entry.
    pub nodes: Vec<Declaration>,
    /// Reference edges (from, to) between node indices.
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
}

/// Declarations reachable from `entry`, breadth first with references in
/// order of first use.
pub fn build_code_structure_tree(
    corpus: &BTreeMap<String, Declaration>,
    entry: &str,
) -> Result<CodeStructureTree, CodeError> {
    let root = corpus.get(entry).ok_or_else(|| CodeError::UnknownEntry(entry.to_string()))?;
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut nodes = vec![root.clone()];
    index.insert(root.name.clone(), 0);
    let mut edges = BTreeSet::new();
    let mut next = 0;
    while next < nodes.len() {
        let current = nodes[next].clone();
        let mut seen = BTreeSet::new();
        for id in identifiers(&current.code) {
            if id == current.name || !seen.insert(id) {
                continue;
            }
            let Some(decl) = corpus.get(id) else { continue };
            let to = *index.entry(id.to_string()).or_insert_with(|| {
                nodes.push(decl.clone());
                nodes.len() - 1
            });
            edges.insert((next, to));
        }
        next += 1;
    }
    Ok(CodeStructureTree {
        nodes,
        edges: edges.into_iter().collect(),
        root: 0,
    })
}

impl CodeStructureTree {
    fn graph(&self) -> DiGraph<usize, ()> {
        let mut g = DiGraph::new();
        let ix: Vec<NodeIndex> = (0..self.nodes.len()).map(|i| g.add_node(i)).collect();
        for &(a, b) in &self.edges {
            g.add_edge(ix[a], ix[b], ());
        }
        g
    }

    /// Strongly connected components, each sorted, in an order where every
    /// unit comes after all units it references.
    pub fn summarization_units(&self) -> Vec<Vec<usize>> {
        let g = self.graph();
        tarjan_scc(&g)
            .into_iter()
            .map(|scc| {
                let mut members: Vec<usize> = scc.into_iter().map(|n| g[n]).collect();
                members.sort();
                members
            })
            .collect()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|(a, _)| *a == node).map(|(_, b)| *b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub root_summary: String,
    /// Summary per symbol name, for every symbol that received one.
    pub summaries: BTreeMap<String, String>,
    /// Units in the order they were summarized through the gateway.
    pub summarized: Vec<Vec<String>>,
    pub skipped: Vec<String>,
}

/// Summarizes the tree bottom-up. A unit whose single declaration already
/// has detailed comments uses them as its summary; otherwise its code is
/// sent to the gateway with the summaries of referenced units injected as
/// comments. Only units needed for the root summary are visited.
pub fn summarize_tree(tree: &CodeStructureTree, gateway: &Gateway) -> Result<TreeSummary, CodeError> {
    let units = tree.summarization_units();
    let mut unit_of = vec![0; tree.nodes.len()];
    for (u, members) in units.iter().enumerate() {
        for &m in members {
            unit_of[m] = u;
        }
    }
    let skip = |u: usize| units[u].len() == 1 && tree.nodes[units[u][0]].has_detailed_comments();

    let mut needed = vec![false; units.len()];
    needed[unit_of[tree.root]] = true;
    for u in (0..units.len()).rev() {
        if !needed[u] || skip(u) {
            continue;
        }
        for &m in &units[u] {
            for c in tree.children(m) {
                needed[unit_of[c]] = true;
            }
        }
    }

    let mut out = TreeSummary {
        root_summary: String::new(),
        summaries: BTreeMap::new(),
        summarized: Vec::new(),
        skipped: Vec::new(),
    };
    let mut unit_summary: Vec<Option<String>> = vec![None; units.len()];
    for (u, members) in units.iter().enumerate() {
        if !needed[u] {
            continue;
        }
        if skip(u) {
            let decl = &tree.nodes[members[0]];
            unit_summary[u] = Some(format!("{}: {}", decl.name, decl.comment_text()));
            out.skipped.push(decl.name.clone());
        } else {
            let mut injected = Vec::new();
            let mut seen = BTreeSet::new();
            for &m in members {
                for c in tree.children(m) {
                    let cu = unit_of[c];
                    if cu != u && seen.insert(cu) {
                        if let Some(s) = &unit_summary[cu] {
                            injected.push(format!("// {s}"));
                        }
                    }
                }
            }
            let mut code = injected;
            for &m in members {
                let d = &tree.nodes[m];
                code.extend(d.comments.iter().cloned());
                code.push(d.code.clone());
            }
            let names: Vec<String> = members.iter().map(|&m| tree.nodes[m].name.clone()).collect();
            let symbol = names.join(" + ");
            let request = GatewayRequest::new(prompts::CODE_SUMMARY, Schema::Summary)
                .var("symbol", symbol.clone())
                .var("code", code.join("\n"));
            let (summary, _) = gateway
                .complete_with(&request, |v| Ok(v["summary"].as_str().unwrap_or_default().to_string()))
                .map_err(|source| CodeError::Gateway {
                    symbol: symbol.clone(),
                    source,
                })?;
            unit_summary[u] = Some(summary);
            out.summarized.push(names);
        }
        for &m in members {
            out.summaries
                .insert(tree.nodes[m].name.clone(), unit_summary[u].clone().expect("just set"));
        }
    }
    out.root_summary = unit_summary[unit_of[tree.root]].clone().expect("root is needed");
    Ok(out)
}
