//! Document blocks and rule extraction with a verbatim-support gate.

use serde::{Deserialize, Serialize};

use crate::gateway::{prompts, Gateway, GatewayRequest, Schema};
use crate::text::approx_tokens;

pub const DEFAULT_BLOCK_BUDGET: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub doc: String,
    pub index: usize,
    pub text: String,
}

impl Block {
    pub fn block_ref(&self) -> String {
        format!("{}#{}", self.doc, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedRule {
    pub text: String,
    pub support_span: String,
    pub block_ref: String,
}

pub fn normalize_document(doc: &str) -> String {
    doc.replace("\r\n", "\n")
}

fn is_heading(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('#') || t.to_ascii_lowercase().starts_with("<h")
}

/// Pieces of `text` that each start at a line for which `boundary` holds
/// (the first piece starts at 0). Concatenation reproduces `text`.
fn split_lines_at(text: &str, boundary: impl Fn(&str, &str) -> bool) -> Vec<&str> {
    let mut cuts = vec![0];
    let mut offset = 0;
    let mut prev = "";
    for line in text.split_inclusive('\n') {
        if offset > 0 && boundary(prev, line) {
            cuts.push(offset);
        }
        offset += line.len();
        prev = line;
    }
    cuts.push(text.len());
    cuts.windows(2).filter(|w| w[1] > w[0]).map(|w| &text[w[0]..w[1]]).collect()
}

fn split_words(text: &str, budget: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut words = 0usize;
    let max_words = ((budget as f64) / 1.3).floor().max(1.0) as usize;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
            continue;
        }
        if !in_word {
            if words == max_words {
                out.push(&text[start..i]);
                start = i;
                words = 0;
            }
            words += 1;
            in_word = true;
        }
    }
    out.push(&text[start..]);
    out
}

/// Greedily packs `pieces` into chunks within `budget`, splitting oversized
/// pieces with `finer`.
fn pack(pieces: Vec<&str>, budget: usize, finer: &dyn Fn(&str) -> Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut current = String::new();
    for p in pieces {
        if approx_tokens(p) > budget {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.extend(finer(p));
            continue;
        }
        let candidate = format!("{current}{p}");
        if approx_tokens(&candidate) > budget && !current.is_empty() {
            out.push(std::mem::replace(&mut current, p.to_string()));
        } else {
            current = candidate;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Splits at headings; sections over `budget` tokens are split at
/// paragraph boundaries, then lines, then words. Block texts concatenate
/// to the normalized document.
pub fn split_document(doc_name: &str, doc: &str, budget: usize) -> Vec<Block> {
    let doc = normalize_document(doc);
    let by_words = |s: &str| split_words(s, budget).into_iter().map(str::to_string).collect();
    let by_lines = |s: &str| pack(split_lines_at(s, |_, _| true), budget, &by_words);
    let mut texts = Vec::new();
    for section in split_lines_at(&doc, |_, line| is_heading(line)) {
        if approx_tokens(section) <= budget {
            texts.push(section.to_string());
        } else {
            let paragraphs = split_lines_at(section, |prev, _| prev.trim().is_empty());
            texts.extend(pack(paragraphs, budget, &by_lines));
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(index, text)| Block {
            doc: doc_name.to_string(),
            index,
            text,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub rules: Vec<ExtractedRule>,
    pub warning: Option<String>,
}

/// Extracts rules from one block. A reply citing any support span that is
/// not verbatim in the block is rejected and the request retried; if every
/// attempt is rejected the result is empty with a warning.
pub fn extract_rules_from_block(block: &Block, gateway: &Gateway) -> Extraction {
    let request = GatewayRequest::new(prompts::EXTRACT_RULES, Schema::ExtractedRules).var("block", block.text.clone());
    let result = gateway.complete_with(&request, |v| {
        let mut rules = Vec::new();
        for r in v["rules"].as_array().into_iter().flatten() {
            let span = r["support_span"].as_str().unwrap_or_default();
            if !block.text.contains(span) {
                return Err(format!("support span not found in block: {span:?}"));
            }
            rules.push(ExtractedRule {
                text: r["text"].as_str().unwrap_or_default().to_string(),
                support_span: span.to_string(),
                block_ref: block.block_ref(),
            });
        }
        Ok(rules)
    });
    match result {
        Ok((rules, _)) => Extraction { rules, warning: None },
        Err(e) => {
            tracing::warn!(block = %block.block_ref(), error = %e, "extraction rejected");
            Extraction {
                rules: Vec::new(),
                warning: Some(format!("{}: {e}", block.block_ref())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{StubChat, StubEmbedding, StubScript};
    use std::sync::Arc;

    #[test]
    fn three_sections_three_blocks() {
        let doc = "# A\ntext a\n## B\ntext b\n# C\ntext c\n";
        let blocks = split_document("d.md", doc, DEFAULT_BLOCK_BUDGET);
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[1].text, "## B\ntext b\n");
        assert_eq!(blocks[2].block_ref(), "d.md#2");
    }

    #[test]
    fn oversized_section_splits_at_paragraphs() {
        let para = |w: &str| format!("{}\n", vec![w; 10].join(" "));
        let doc = format!("# S\n{}\n{}\n{}", para("a"), para("b"), para("c"));
        let blocks = split_document("d", &doc, 20);
        assert!(blocks.len() >= 2);
        for b in &blocks {
            assert!(approx_tokens(&b.text) <= 20, "{:?}", b.text);
        }
        assert_eq!(blocks.iter().map(|b| b.text.as_str()).collect::<String>(), doc);
        assert!(blocks[1].text.starts_with('b') || blocks[1].text.starts_with('\n'));
    }

    #[test]
    fn huge_paragraph_still_covered() {
        let doc = format!("intro\n# T\n{}\n", vec!["w"; 100].join(" "));
        let blocks = split_document("d", &doc, 10);
        assert_eq!(blocks.iter().map(|b| b.text.as_str()).collect::<String>(), doc);
        assert!(blocks.iter().all(|b| approx_tokens(&b.text) <= 10));
    }

    fn gw(script: Vec<ScriptEntry>) -> (Arc<StubChat>, Gateway) {
        let chat = Arc::new(StubChat::with_script(StubScript { entries: script }));
        (chat.clone(), Gateway::new(chat, Arc::new(StubEmbedding::default())))
    }

    fn block() -> Block {
        Block {
            doc: "d".into(),
            index: 0,
            text: "A filter above a join can be pushed into the join.".into(),
        }
    }

    #[test]
    fn verbatim_span_accepted() {
        let (_, g) = gw(vec![]);
        let e = extract_rules_from_block(&block(), &g);
        assert_eq!(e.rules.len(), 1);
        assert!(block().text.contains(&e.rules[0].support_span));
    }

    #[test]
    fn fabricated_span_retried_then_dropped() {
        let bad = r#"{"rules":[{"text":"x","support_span":"never written"}]}"#;
        let (chat, g) = gw(vec![ScriptEntry::times(prompts::EXTRACT_RULES, bad, 1)]);
        let e = extract_rules_from_block(&block(), &g);
        assert_eq!(e.rules.len(), 1);
        assert_eq!(chat.transcript().len(), 2);

        let (chat, g) = gw(vec![ScriptEntry::always(prompts::EXTRACT_RULES, bad)]);
        let e = extract_rules_from_block(&block(), &g);
        assert!(e.rules.is_empty());
        assert!(e.warning.is_some());
        assert_eq!(chat.transcript().len(), 4);
    }
}
