//! Output schemas for structured gateway replies.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Specification,
    Summary,
    ExtractedRules,
    OnTopic,
    Condensed,
    Recipe,
    Relevance,
    SelectedRules,
    Order,
    Realized,
}

#[derive(Clone, Copy)]
enum Field {
    Text,
    Flag,
    TextList,
    Objects(&'static [&'static str]),
}

impl Schema {
    pub fn id(self) -> &'static str {
        match self {
            Schema::Specification => "specification",
            Schema::Summary => "summary",
            Schema::ExtractedRules => "extracted_rules",
            Schema::OnTopic => "on_topic",
            Schema::Condensed => "condensed",
            Schema::Recipe => "recipe",
            Schema::Relevance => "relevance",
            Schema::SelectedRules => "selected_rules",
            Schema::Order => "order",
            Schema::Realized => "realized",
        }
    }

    fn fields(self) -> &'static [(&'static str, Field)] {
        match self {
            Schema::Specification => &[
                ("rule_id", Field::Text),
                ("condition", Field::Text),
                ("transformation", Field::Text),
            ],
            Schema::Summary => &[("summary", Field::Text)],
            Schema::ExtractedRules => &[("rules", Field::Objects(&["text", "support_span"]))],
            Schema::OnTopic => &[("on_topic", Field::Flag)],
            Schema::Condensed => &[("condensed", Field::Text)],
            Schema::Recipe => &[("recipe", Field::Text)],
            Schema::Relevance => &[("relevant", Field::Flag)],
            Schema::SelectedRules => &[("selected_rules", Field::TextList)],
            Schema::Order => &[("order", Field::TextList)],
            Schema::Realized => &[("realized", Field::Flag)],
        }
    }

    /// Parses the JSON object in `text` (code fences and surrounding prose
    /// tolerated) and checks required fields; text fields must be non-blank.
    pub fn validate(self, text: &str) -> Result<Value, String> {
        let value = extract_json_object(text).ok_or_else(|| "no JSON object in reply".to_string())?;
        for (name, kind) in self.fields() {
            let v = value.get(*name).ok_or_else(|| format!("missing field `{name}`"))?;
            let ok = match kind {
                Field::Text => v.as_str().is_some_and(|s| !s.trim().is_empty()),
                Field::Flag => v.is_boolean(),
                Field::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
                Field::Objects(keys) => v.as_array().is_some_and(|a| {
                    a.iter().all(|o| keys.iter().all(|k| o.get(*k).and_then(Value::as_str).is_some_and(|s| !s.is_empty())))
                }),
            };
            if !ok {
                return Err(format!("field `{name}` has the wrong shape"));
            }
        }
        Ok(value)
    }
}

fn extract_json_object(text: &str) -> Option<Value> {
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(text.trim()) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_fenced_json() {
        let v = Schema::SelectedRules
            .validate("Sure:\n```json\n{\"selected_rules\": [\"A\", \"B\"]}\n```")
            .unwrap();
        assert_eq!(v["selected_rules"][1], "B");
    }

    #[test]
    fn rejects_prose_and_wrong_shapes() {
        assert!(Schema::SelectedRules.validate("I would pick A and B").is_err());
        assert!(Schema::SelectedRules.validate("{\"selected_rules\": \"A\"}").is_err());
        assert!(Schema::Specification
            .validate("{\"rule_id\":\"A\",\"condition\":\" \",\"transformation\":\"t\"}")
            .is_err());
        assert!(Schema::ExtractedRules
            .validate("{\"rules\":[{\"text\":\"x\"}]}")
            .is_err());
        assert!(Schema::Relevance.validate("{\"relevant\": \"yes\"}").is_err());
    }

    #[test]
    fn empty_lists_are_valid() {
        assert!(Schema::SelectedRules.validate("{\"selected_rules\": []}").is_ok());
        assert!(Schema::ExtractedRules.validate("{\"rules\": []}").is_ok());
    }
}
