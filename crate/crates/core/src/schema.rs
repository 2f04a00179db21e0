//! Relation schema and instance dataset: the canonical input formats.
//!
//! The schema is a single JSON document:
//!
//! ```json
//! { "relations": [{"name": "spouse", "description": "..."}], "na_label": "NA" }
//! ```
//!
//! The dataset is JSON Lines, one [`Instance`] per line:
//!
//! ```json
//! {"id": "p1", "context": ["doc a", "doc b"], "head": "X", "tail": "Y", "gold": "spouse", "bag_id": "X|Y"}
//! ```

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub description: String,
}

impl Relation {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }
}

/// The predefined relation set, with NA carried as an ordinary relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    relations: Vec<Relation>,
    na_label: String,
}

impl RelationSchema {
    pub fn new(relations: Vec<Relation>, na_label: impl Into<String>) -> Result<Self> {
        let schema = Self {
            relations,
            na_label: na_label.into(),
        };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, rel) in self.relations.iter().enumerate() {
            if rel.name.trim().is_empty() {
                return Err(Error::validation(format!("relation #{i} has an empty name")));
            }
            if !seen.insert(rel.name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate relation name '{}' (entry #{i})",
                    rel.name
                )));
            }
            if rel.description.trim().is_empty() {
                return Err(Error::validation(format!(
                    "relation '{}' (entry #{i}) has an empty description",
                    rel.name
                )));
            }
        }
        if !seen.contains(self.na_label.as_str()) {
            return Err(Error::validation(format!(
                "na_label '{}' is not among the relations",
                self.na_label
            )));
        }
        Ok(())
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn na_label(&self) -> &str {
        &self.na_label
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.iter().any(|r| r.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn is_na(&self, name: &str) -> bool {
        name == self.na_label
    }

    /// Relations other than NA, in schema order.
    pub fn positive_relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.name != self.na_label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// Parse and validate a schema document.
pub fn load_schema(bytes: &[u8]) -> Result<RelationSchema> {
    let raw: RelationSchema = serde_json::from_slice(bytes)
        .map_err(|e| Error::validation(format!("schema document: {e}")))?;
    raw.check()?;
    Ok(raw)
}

pub fn save_schema(schema: &RelationSchema) -> String {
    schema.to_json()
}

/// One classification unit: a text path plus its entity pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub context: Vec<String>,
    pub head: String,
    pub tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_id: Option<String>,
}

impl Instance {
    fn check(&self, schema: &RelationSchema) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.context.is_empty() {
            return Err(format!("instance '{}' has an empty context", self.id));
        }
        if self.head.trim().is_empty() || self.tail.trim().is_empty() {
            return Err(format!("instance '{}' has an empty head or tail", self.id));
        }
        if let Some(gold) = &self.gold {
            if !schema.contains(gold) {
                return Err(format!(
                    "instance '{}' has unknown gold label '{gold}'",
                    self.id
                ));
            }
        }
        Ok(())
    }
}

/// Parse a JSON Lines dataset, validating every gold label against `schema`.
///
/// Blank lines are skipped. The first invalid line aborts the load and is
/// reported with its 1-based line number.
pub fn load_dataset(bytes: &[u8], schema: &RelationSchema) -> Result<Vec<Instance>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::validation(format!("dataset is not utf-8: {e}")))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(line).map_err(|e| Error::Line {
            line: line_no,
            message: format!("malformed record: {e}"),
        })?;
        inst.check(schema).map_err(|message| Error::Line {
            line: line_no,
            message,
        })?;
        if !ids.insert(inst.id.clone()) {
            return Err(Error::Line {
                line: line_no,
                message: format!("duplicate instance id '{}'", inst.id),
            });
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn save_dataset(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Group instance indices by bag id; instances without one are left out.
pub fn bags(instances: &[Instance]) -> BTreeMap<&str, Vec<usize>> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        if let Some(bag) = &inst.bag_id {
            out.entry(bag.as_str()).or_default().push(i);
        }
    }
    out
}
