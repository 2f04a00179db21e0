//! Whole-tree generation in one response, followed by repair.
//!
//! The model's nested JSON is read as category groups over relation names.
//! Unknown relation names are pruned, categories left empty are removed,
//! and each relation still missing is placed by a follow-up call that
//! answers with a category path.

use serde_json::Value;

use super::{ask_structured, relation_listing, BuildEvent, BuildLog, BuildOutput, LlmTreeBuilder};
use super::{NA_NODE_DESCRIPTION, VALID_NODE_DESCRIPTION};
use crate::error::{Error, Result};
use crate::gateway::{extract_structured, LlmGateway};
use crate::schema::{Relation, RelationSchema};
use crate::tree::{NodeId, TreeBuilder, NA_NODE_NAME, VALID_NODE_NAME};

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Group { name: String, children: Vec<Item> },
    Rel(String),
}

fn parse_items(v: &Value, schema: &RelationSchema, out: &mut Vec<Item>) -> std::result::Result<(), String> {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let k = k.trim();
                if k.is_empty() {
                    return Err("category with empty name".into());
                }
                match child {
                    Value::String(s) if schema.contains(k) => {
                        let _ = s;
                        out.push(Item::Rel(k.to_string()));
                    }
                    _ => {
                        let mut children = Vec::new();
                        parse_items(child, schema, &mut children)?;
                        out.push(Item::Group {
                            name: k.to_string(),
                            children,
                        });
                    }
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                parse_items(item, schema, out)?;
            }
        }
        Value::String(s) => out.push(Item::Rel(s.trim().to_string())),
        Value::Null => {}
        other => return Err(format!("unsupported JSON value {other}")),
    }
    Ok(())
}

fn parse_tree(text: &str, schema: &RelationSchema) -> std::result::Result<Vec<Item>, String> {
    let v: Value = serde_json::from_str(extract_structured(text)).map_err(|e| format!("invalid JSON: {e}"))?;
    if !v.is_object() {
        return Err("the tree must be a JSON object".into());
    }
    let mut items = Vec::new();
    parse_items(&v, schema, &mut items)?;
    if items.is_empty() {
        return Err("the tree is empty".into());
    }
    Ok(items)
}

/// Drops unknown and NA relations, merges same-named sibling groups, and
/// removes groups left without relations.
fn clean(items: Vec<Item>, path: &str, schema: &RelationSchema, log: &mut BuildLog) -> Vec<Item> {
    let mut out: Vec<Item> = Vec::new();
    for item in items {
        match item {
            Item::Rel(name) => {
                let known = schema.get(&name).map(|r| r.name.clone()).or_else(|| {
                    schema
                        .relations()
                        .iter()
                        .find(|r| r.name.eq_ignore_ascii_case(&name))
                        .map(|r| r.name.clone())
                });
                match known {
                    Some(n) if !schema.is_na(&n) => {
                        if !out.iter().any(|o| matches!(o, Item::Rel(x) if *x == n)) {
                            out.push(Item::Rel(n));
                        }
                    }
                    _ => log.push(BuildEvent::Pruned {
                        path: path.to_string(),
                        relation: name,
                    }),
                }
            }
            Item::Group { name, children } => {
                if let Some(Item::Group { children: existing, .. }) = out
                    .iter_mut()
                    .find(|o| matches!(o, Item::Group { name: n, .. } if n.eq_ignore_ascii_case(&name)))
                {
                    existing.extend(children);
                } else {
                    out.push(Item::Group { name, children });
                }
            }
        }
    }
    let mut kept = Vec::new();
    for item in out {
        match item {
            Item::Group { name, children } => {
                let sub = format!("{path}/{name}");
                let children = clean(children, &sub, schema, log);
                if children.is_empty() {
                    log.push(BuildEvent::RemovedEmpty { path: sub });
                } else {
                    kept.push(Item::Group { name, children });
                }
            }
            rel => kept.push(rel),
        }
    }
    // a group sharing a name with a sibling leaf gets a distinct label
    let leaf_names: Vec<String> = kept
        .iter()
        .filter_map(|i| match i {
            Item::Rel(n) => Some(n.clone()),
            _ => None,
        })
        .collect();
    for item in &mut kept {
        if let Item::Group { name, .. } = item {
            if leaf_names.iter().any(|l| l.eq_ignore_ascii_case(name)) {
                name.push_str(" (category)");
            }
        }
    }
    kept
}

fn collect_relations<'a>(items: &'a [Item], out: &mut Vec<&'a str>) {
    for i in items {
        match i {
            Item::Rel(n) => out.push(n),
            Item::Group { children, .. } => collect_relations(children, out),
        }
    }
}

fn outline(items: &[Item], indent: usize, out: &mut String) {
    for i in items {
        if let Item::Group { name, children } = i {
            out.push_str(&"  ".repeat(indent));
            out.push_str("- ");
            out.push_str(name);
            out.push('\n');
            outline(children, indent + 1, out);
        }
    }
}

/// Follows `path` through group names; returns the children list at its end.
fn resolve<'a>(items: &'a mut Vec<Item>, path: &[String]) -> Option<&'a mut Vec<Item>> {
    let Some((head, rest)) = path.split_first() else {
        return Some(items);
    };
    let next = items.iter_mut().find_map(|i| match i {
        Item::Group { name, children } if name.eq_ignore_ascii_case(head.trim()) => Some(children),
        _ => None,
    })?;
    resolve(next, rest)
}

fn parse_path(text: &str, items: &mut Vec<Item>) -> std::result::Result<Vec<String>, String> {
    let v: Value = serde_json::from_str(extract_structured(text)).map_err(|e| format!("invalid JSON: {e}"))?;
    let arr = v.as_array().ok_or("expected a JSON array of category names")?;
    let path: Vec<String> = arr
        .iter()
        .map(|x| x.as_str().map(|s| s.trim().to_string()).ok_or("path items must be strings"))
        .collect::<std::result::Result<_, _>>()?;
    if resolve(items, &path).is_none() {
        return Err(format!("{path:?} is not a path of category nodes in the tree"));
    }
    Ok(path)
}

fn emit(b: &mut TreeBuilder, parent: NodeId, items: &[Item], schema: &RelationSchema) {
    for i in items {
        match i {
            Item::Rel(n) => {
                let r = schema.get(n).expect("cleaned relation");
                b.leaf(parent, &r.name, r.description.clone());
            }
            Item::Group { name, children } => {
                let id = b.intermediate(parent, name.clone(), "");
                emit(b, id, children, schema);
            }
        }
    }
}

fn depth_of(items: &[Item]) -> usize {
    items
        .iter()
        .map(|i| match i {
            Item::Rel(_) => 1,
            Item::Group { children, .. } => 1 + depth_of(children),
        })
        .max()
        .unwrap_or(0)
}

impl LlmTreeBuilder<'_> {
    /// The tree's depth limit is whatever the repaired tree needs (at least 3).
    pub fn build_singleshot(&self, schema: &RelationSchema) -> Result<BuildOutput> {
        let mut log = BuildLog::default();
        let retries = self.config().max_repair_retries;
        let seed = Some(self.config().seed);
        let positives: Vec<&Relation> = schema.positive_relations().collect();
        let mut items = if positives.is_empty() {
            Vec::new()
        } else {
            let listing = relation_listing(&positives);
            let prompt = self.prompts().singleshot.render(&[("RELATION_WITH_DESC", &listing)])?;
            let ans = ask_structured(self.gateway(), prompt, "singleshot", retries, seed, |t, _| parse_tree(t, schema))?;
            for error in ans.repairs {
                log.push(BuildEvent::Repair {
                    path: VALID_NODE_NAME.into(),
                    step: "singleshot".into(),
                    error,
                });
            }
            clean(ans.value, VALID_NODE_NAME, schema, &mut log)
        };

        for r in &positives {
            let mut present = Vec::new();
            collect_relations(&items, &mut present);
            if present.contains(&r.name.as_str()) {
                continue;
            }
            let mut tree_outline = String::new();
            outline(&items, 0, &mut tree_outline);
            if tree_outline.is_empty() {
                tree_outline.push_str("(no categories yet)\n");
            }
            let prompt = self.prompts().place.render(&[
                ("REL_NAME", &r.name),
                ("REL_DESC", &r.description),
                ("TREE_OUTLINE", tree_outline.trim_end()),
            ])?;
            let ans = ask_structured(self.gateway(), prompt, "place", retries, seed, |t, _| parse_path(t, &mut items))
                .map_err(|e| Error::at_node(format!("{VALID_NODE_NAME} ({})", r.name), e))?;
            let path = ans.value;
            let target = resolve(&mut items, &path).expect("path checked while parsing");
            target.push(Item::Rel(r.name.clone()));
            log.push(BuildEvent::Placed {
                relation: r.name.clone(),
                path: std::iter::once(VALID_NODE_NAME.to_string()).chain(path).collect::<Vec<_>>().join("/"),
            });
        }

        let depth_limit = (depth_of(&items) + 2).max(3);
        let mut b = TreeBuilder::new(depth_limit);
        let root = b.root();
        if !positives.is_empty() {
            let valid = b.intermediate(root, VALID_NODE_NAME, VALID_NODE_DESCRIPTION);
            emit(&mut b, valid, &items, schema);
        }
        let na = b.intermediate(root, NA_NODE_NAME, NA_NODE_DESCRIPTION);
        let na_rel = schema.get(schema.na_label()).expect("schema holds its NA label");
        b.leaf(na, &na_rel.name, na_rel.description.clone());
        let tree = b.build()?;
        tree.validate(schema).into_result()?;
        Ok(BuildOutput {
            tree,
            schedule: Vec::new(),
            log,
        })
    }
}

/// Single-shot construction with default prompts and configuration.
pub fn build_tree_singleshot(schema: &RelationSchema, gateway: &dyn LlmGateway) -> Result<BuildOutput> {
    LlmTreeBuilder::new(gateway, super::BuildConfig::default())?.build_singleshot(schema)
}
