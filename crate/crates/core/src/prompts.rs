//! Prompt templates with `[UPPER_CASE]` placeholders.
//!
//! Defaults are compiled in from `prompts/*.txt`; a directory containing
//! files with the same names overrides them one by one.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Z][A-Z_]*)\]").expect("valid regex"))
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in placeholder_re().captures_iter(&self.text) {
            let n = c.get(1).expect("group").as_str();
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    /// Single-pass substitution, so inserted values are never rescanned.
    /// Every placeholder in the template must be supplied.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        for p in self.placeholders() {
            if !vars.iter().any(|(k, _)| *k == p) {
                return Err(Error::validation(format!("template '{}': no value for [{p}]", self.name)));
            }
        }
        Ok(placeholder_re()
            .replace_all(&self.text, |c: &regex::Captures<'_>| {
                let key = &c[1];
                vars.iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_default()
            })
            .into_owned())
    }

    /// Errors unless every name in `required` occurs in the template.
    pub fn require(&self, required: &[&str]) -> Result<()> {
        let present = self.placeholders();
        for r in required {
            if !present.contains(r) {
                return Err(Error::validation(format!("template '{}' lacks placeholder [{r}]", self.name)));
            }
        }
        Ok(())
    }
}

/// Tree-construction prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub criteria: Template,
    pub partition: Template,
    pub assign: Template,
    pub coherence: Template,
    pub singleshot: Template,
    pub place: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            criteria: Template::new("criteria", include_str!("../prompts/criteria.txt")),
            partition: Template::new("partition", include_str!("../prompts/partition.txt")),
            assign: Template::new("assign", include_str!("../prompts/assign.txt")),
            coherence: Template::new("coherence", include_str!("../prompts/coherence.txt")),
            singleshot: Template::new("singleshot", include_str!("../prompts/singleshot.txt")),
            place: Template::new("place", include_str!("../prompts/place.txt")),
        }
    }
}

impl PromptSet {
    /// Defaults, with `<name>.txt` files in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for t in [
            &mut set.criteria,
            &mut set.partition,
            &mut set.assign,
            &mut set.coherence,
            &mut set.singleshot,
            &mut set.place,
        ] {
            let path = dir.join(format!("{}.txt", t.name));
            if path.exists() {
                t.text = std::fs::read_to_string(&path)?;
            }
        }
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<()> {
        self.criteria.require(&["RELATION_WITH_DESC"])?;
        self.partition.require(&["CRITERION_NAME", "RELATION_WITH_DESC"])?;
        self.assign.require(&["REL_NAME", "CRITERION_INSTANCES"])?;
        self.coherence.require(&["CHILD_NODE", "PARENT_NODE"])?;
        self.singleshot.require(&["RELATION_WITH_DESC"])?;
        self.place.require(&["REL_NAME", "TREE_OUTLINE"])?;
        Ok(())
    }
}

/// Default selector prompt with `{context}`, `{head}`, `{tail}`, `{options}` slots.
pub const CLASSIFY_TEMPLATE: &str = include_str!("../prompts/classify.txt");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        PromptSet::default().check().unwrap();
    }

    #[test]
    fn render_substitutes_once() {
        let t = Template::new("t", "A [X] B [Y] [X] [json like] ");
        let s = t.render(&[("X", "[Y]"), ("Y", "y")]).unwrap();
        assert_eq!(s, "A [Y] B y [Y] [json like] ");
        assert!(t.render(&[("X", "1")]).is_err());
    }

    #[test]
    fn coherence_prompt_text() {
        let s = PromptSet::default()
            .coherence
            .render(&[("CHILD_NODE", "politics"), ("PARENT_NODE", "valid relations")])
            .unwrap();
        assert_eq!(
            s.trim(),
            "Is the relation node \"politics\" coherent with the node \"valid relations\"? Output Yes/No only."
        );
    }
}
