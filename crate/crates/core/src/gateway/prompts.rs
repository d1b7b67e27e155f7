//! Prompt catalog: versioned templates with `{{name}}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub version: u32,
    pub body: String,
}

impl PromptTemplate {
    /// Parses a template file; an optional first line `# version: N`
    /// carries the version.
    pub fn parse(id: &str, text: &str) -> Self {
        let (version, body) = match text.split_once('\n') {
            Some((first, rest)) if first.trim_start().starts_with("# version:") => {
                let v = first.trim_start()["# version:".len()..].trim().parse().unwrap_or(0);
                (v, rest)
            }
            _ => (0, text),
        };
        PromptTemplate {
            id: id.to_string(),
            version,
            body: body.trim_end().to_string(),
        }
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    out.insert(after[..end].trim().to_string());
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        out
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let missing: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| !vars.contains_key(p))
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::UnboundVariables {
                template: self.id.clone(),
                missing,
            });
        }
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    out.push_str(&vars[after[..end].trim()]);
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub const REG: &str = "reg";
pub const SUMM: &str = "summ";
pub const CODE_SUMMARY: &str = "code_summary";
pub const EXTRACT_RULES: &str = "extract_rules";
pub const TOPIC_FILTER: &str = "topic_filter";
pub const CONDENSE_ANSWER: &str = "condense_answer";
pub const RULE_SPEC_RECIPE: &str = "rule_spec_recipe";
pub const QA_RECIPE: &str = "qa_recipe";
pub const MERGE_RECIPES: &str = "merge_recipes";
pub const RELEVANCE: &str = "relevance";
pub const SELECT_RULE: &str = "select_rule";
pub const ORDER_GROUP: &str = "order_group";
pub const ORDER_GLOBAL: &str = "order_global";
pub const REALIZATION: &str = "realization";

const BUILTIN: [(&str, &str); 14] = [
    (REG, include_str!("../../../../prompts/reg.txt")),
    (SUMM, include_str!("../../../../prompts/summ.txt")),
    (CODE_SUMMARY, include_str!("../../../../prompts/code_summary.txt")),
    (EXTRACT_RULES, include_str!("../../../../prompts/extract_rules.txt")),
    (TOPIC_FILTER, include_str!("../../../../prompts/topic_filter.txt")),
    (CONDENSE_ANSWER, include_str!("../../../../prompts/condense_answer.txt")),
    (RULE_SPEC_RECIPE, include_str!("../../../../prompts/rule_spec_recipe.txt")),
    (QA_RECIPE, include_str!("../../../../prompts/qa_recipe.txt")),
    (MERGE_RECIPES, include_str!("../../../../prompts/merge_recipes.txt")),
    (RELEVANCE, include_str!("../../../../prompts/relevance.txt")),
    (SELECT_RULE, include_str!("../../../../prompts/select_rule.txt")),
    (ORDER_GROUP, include_str!("../../../../prompts/order_group.txt")),
    (ORDER_GLOBAL, include_str!("../../../../prompts/order_global.txt")),
    (REALIZATION, include_str!("../../../../prompts/realization.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| (id.to_string(), PromptTemplate::parse(id, text)))
            .collect();
        PromptCatalog { templates }
    }

    /// Built-in templates overridden by `<id>.txt` files found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, GatewayError> {
        let mut cat = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| GatewayError::Io(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
            cat.templates.insert(id.to_string(), PromptTemplate::parse(id, &text));
        }
        Ok(cat)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates
            .get(id)
            .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(|s| s.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn renders_and_reports_missing() {
        let t = PromptTemplate::parse("t", "# version: 2\nq=`{{query}}' r={{ rule }}");
        assert_eq!(t.version, 2);
        assert_eq!(
            t.render(&vars(&[("query", "SELECT 1"), ("rule", "R")])).unwrap(),
            "q=`SELECT 1' r=R"
        );
        match t.render(&vars(&[("query", "x")])) {
            Err(GatewayError::UnboundVariables { missing, .. }) => assert_eq!(missing, vec!["rule"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let t = PromptTemplate::parse("t", "{{a}}|{{b}}");
        assert_eq!(t.render(&vars(&[("a", "{{b}}"), ("b", "x")])).unwrap(), "{{b}}|x");
    }

    #[test]
    fn builtin_catalog_is_complete_and_versioned() {
        let cat = PromptCatalog::builtin();
        assert_eq!(cat.ids().count(), BUILTIN.len());
        for id in cat.ids() {
            let t = cat.get(id).unwrap();
            assert!(t.version >= 1, "{id}");
            assert!(!t.placeholders().is_empty(), "{id}");
        }
    }

    #[test]
    fn builtin_prompts_carry_required_fragments() {
        let required = [
            (REG, "Given a rewrite rule code summary, your task is to extract the rewrite rule that explains completely and detailedly the condition and transformation."),
            (SUMM, "Given the rewrite rule components, your task is to summarize them into one paragraph, and your summary should include as many details as possible."),
            (RULE_SPEC_RECIPE, "your task is to explain concisely and detailedly how the rule applies to the query, by specifying (1) the SQL segments matched by the condition, and (2) the transformation of the rule."),
            (QA_RECIPE, "your task is to propose some strategies on rewriting the query, by (1) transferring the Q&A strategy to the query, and (2) explaining the strategy detailedly."),
            (SELECT_RULE, "Given the input query and the rewrite rules, you should evaluate whether the rules can be applied to rewrite the query in the context of the recipe."),
        ];
        let cat = PromptCatalog::builtin();
        for (id, fragment) in required {
            assert!(cat.get(id).unwrap().body.contains(fragment), "{id}");
        }
    }
}
