//! Relation-tree construction with an LLM.
//!
//! The level-wise pipeline fixes level 1 to the valid/NA pair and then
//! partitions every intermediate node under one criterion per level: a
//! partition call names the children, and one assignment call per relation
//! routes it to one or more of them. Nodes at level `L − 2` receive their
//! relations as leaves. A node holding a single relation gets its leaf
//! right away.
//!
//! [`singleshot`] asks for the whole tree in one response and repairs it;
//! [`coherence`] scores parent/child pairs.

pub mod coherence;
pub mod singleshot;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{extract_structured, ChatMessage, ChatRequest, LlmGateway};
use crate::prompts::PromptSet;
use crate::rng::derive_rng;
use crate::schema::{Relation, RelationSchema};
use crate::tree::{RelationTree, TreeBuilder, NA_NODE_NAME, VALID_NODE_NAME};

pub use coherence::{score_coherence, CoherenceReport, CoherenceRow};
pub use singleshot::build_tree_singleshot;

pub const VALID_NODE_DESCRIPTION: &str = "the head and tail entities hold one of the predefined relations";
pub const NA_NODE_DESCRIPTION: &str = "the head and tail entities hold none of the predefined relations";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub example_categories: Vec<String>,
}

/// Output of the criterion-generation step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaSet {
    pub criteria: Vec<Criterion>,
    /// Names of the two preferred criteria, as spelled in `criteria`.
    pub top2: Vec<String>,
}

impl CriteriaSet {
    pub fn get(&self, name: &str) -> Option<&Criterion> {
        let name = name.trim();
        self.criteria.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// `n` criteria: the top two, then the rest in listed order, repeating
    /// the last one if the set runs out.
    pub fn schedule(&self, n: usize) -> Vec<Criterion> {
        let mut order: Vec<&Criterion> = self.top2.iter().filter_map(|t| self.get(t)).collect();
        for c in &self.criteria {
            if !order.iter().any(|o| o.name == c.name) {
                order.push(c);
            }
        }
        let mut out: Vec<Criterion> = order.into_iter().take(n).cloned().collect();
        while out.len() < n {
            let last = out.last().cloned().expect("criteria set holds at least two criteria");
            out.push(last);
        }
        out
    }
}

/// Which criterion partitions each level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CriteriaPlan {
    /// Generate criteria and follow [`CriteriaSet::schedule`].
    Generated,
    /// Generate criteria and use these names in order.
    Named { names: Vec<String> },
    /// Use these definitions; no generation call.
    Explicit { criteria: Vec<Criterion> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub depth_limit: usize,
    pub criteria: CriteriaPlan,
    pub min_children: usize,
    pub max_children: usize,
    pub seed: u64,
    pub max_repair_retries: usize,
    /// Concurrent assignment calls within one node.
    pub in_flight: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            depth_limit: 5,
            criteria: CriteriaPlan::Named {
                names: vec!["Domain".into(), "Entity Type".into()],
            },
            min_children: 10,
            max_children: 12,
            seed: 42,
            max_repair_retries: 3,
            in_flight: 8,
        }
    }
}

impl BuildConfig {
    /// Number of criterion-driven levels: everything between level 1 and the leaf level.
    pub fn criteria_levels(&self) -> usize {
        self.depth_limit.saturating_sub(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_limit < 3 {
            return Err(Error::validation(format!("depth_limit must be at least 3, got {}", self.depth_limit)));
        }
        if self.min_children == 0 || self.min_children > self.max_children {
            return Err(Error::validation(format!(
                "child-count bounds must satisfy 1 <= min <= max, got {}..{}",
                self.min_children, self.max_children
            )));
        }
        if self.in_flight == 0 {
            return Err(Error::validation("in_flight must be at least 1"));
        }
        let n = match &self.criteria {
            CriteriaPlan::Generated => return Ok(()),
            CriteriaPlan::Named { names } => {
                let mut seen: Vec<String> = Vec::new();
                for name in names {
                    let k = name.trim().to_lowercase();
                    if k.is_empty() || seen.contains(&k) {
                        return Err(Error::validation(format!("criterion names must be distinct and non-empty: {names:?}")));
                    }
                    seen.push(k);
                }
                names.len()
            }
            CriteriaPlan::Explicit { criteria } => {
                if criteria.iter().any(|c| c.name.trim().is_empty()) {
                    return Err(Error::validation("criterion with empty name"));
                }
                criteria.len()
            }
        };
        if n != self.criteria_levels() {
            return Err(Error::validation(format!(
                "depth_limit {} needs {} criteria, got {n}",
                self.depth_limit,
                self.criteria_levels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BuildEvent {
    Criteria { schedule: Vec<String> },
    CriterionFallback { name: String },
    Partition { path: String, criterion: String, children: Vec<String> },
    Passthrough { path: String, relation: String },
    Repair { path: String, step: String, error: String },
    ChildCountAccepted { path: String, count: usize },
    RemovedEmpty { path: String },
    Pruned { path: String, relation: String },
    Placed { relation: String, path: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildLog {
    pub events: Vec<BuildEvent>,
}

impl BuildLog {
    pub fn push(&mut self, e: BuildEvent) {
        self.events.push(e);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{}", serde_json::to_string(e).expect("event serializes"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub tree: RelationTree,
    /// Criteria applied per level, top-down.
    pub schedule: Vec<Criterion>,
    pub log: BuildLog,
}

/// A parsed answer plus the parse errors of the attempts that preceded it.
pub(crate) struct Answer<T> {
    pub value: T,
    pub repairs: Vec<String>,
}

/// Ask, parse, and on failure re-ask with the error appended, up to `retries` times.
pub(crate) fn ask_structured<T>(
    gw: &dyn LlmGateway,
    prompt: String,
    purpose: &str,
    retries: usize,
    seed: Option<u64>,
    mut parse: impl FnMut(&str, bool) -> std::result::Result<T, String>,
) -> Result<Answer<T>> {
    let mut req = ChatRequest::prompt(prompt, purpose);
    req.seed = seed;
    let mut repairs = Vec::new();
    for attempt in 0..=retries {
        let c = gw.complete(&req)?;
        let last = attempt == retries;
        match parse(&c.text, last) {
            Ok(value) => return Ok(Answer { value, repairs }),
            Err(e) if last => {
                return Err(Error::RepairExhausted {
                    message: format!("{purpose}: {e}"),
                    attempts: retries + 1,
                    raw: c.text,
                })
            }
            Err(e) => {
                req.messages.push(ChatMessage::assistant(c.text));
                req.messages.push(ChatMessage::user(format!(
                    "Your previous answer could not be used: {e}. Reply again, following the requested output format exactly."
                )));
                repairs.push(e);
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}

/// JSON object entries in document order, duplicates kept.
struct Pairs(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Pairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Pairs;
            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<Pairs, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = m.next_entry::<String, Value>()? {
                    out.push(entry);
                }
                Ok(Pairs(out))
            }
        }
        d.deserialize_map(V)
    }
}

pub(crate) fn relation_listing(relations: &[&Relation]) -> String {
    let mut map = serde_json::Map::new();
    for r in relations {
        map.insert(r.name.clone(), Value::String(r.description.clone()));
    }
    serde_json::to_string_pretty(&Value::Object(map)).expect("map serializes")
}

/// A named child produced by a partition call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildSpec {
    pub name: String,
    pub description: String,
}

/// Tree construction against one gateway with one configuration.
pub struct LlmTreeBuilder<'a> {
    gateway: &'a dyn LlmGateway,
    prompts: PromptSet,
    cfg: BuildConfig,
}

impl<'a> LlmTreeBuilder<'a> {
    pub fn new(gateway: &'a dyn LlmGateway, cfg: BuildConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            gateway,
            prompts: PromptSet::default(),
            cfg,
        })
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Result<Self> {
        prompts.check()?;
        self.prompts = prompts;
        Ok(self)
    }

    pub fn config(&self) -> &BuildConfig {
        &self.cfg
    }

    pub(crate) fn gateway(&self) -> &dyn LlmGateway {
        self.gateway
    }

    pub(crate) fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Positive relations listed in a seed-dependent order.
    fn shuffled<'r>(&self, relations: &[&'r Relation], key: &str) -> Vec<&'r Relation> {
        let mut v = relations.to_vec();
        v.shuffle(&mut derive_rng(self.cfg.seed, &[key.as_bytes()]));
        v
    }

    pub fn generate_criteria(&self, schema: &RelationSchema) -> Result<CriteriaSet> {
        let positives: Vec<&Relation> = schema.positive_relations().collect();
        let listing = relation_listing(&self.shuffled(&positives, "criteria"));
        let prompt = self.prompts.criteria.render(&[("RELATION_WITH_DESC", &listing)])?;
        let ans = ask_structured(
            self.gateway,
            prompt,
            "criteria",
            self.cfg.max_repair_retries,
            Some(self.cfg.seed),
            |text, _| parse_criteria(text),
        )?;
        Ok(ans.value)
    }

    /// Children for a node under `criterion`. A single relation passes
    /// through as its own child without a call.
    pub fn partition_node(
        &self,
        path: &str,
        criterion: &Criterion,
        relations: &[&Relation],
    ) -> Result<(Vec<ChildSpec>, Vec<BuildEvent>)> {
        match relations {
            [] => return Err(Error::validation(format!("node '{path}' has no relations to partition"))),
            [only] => {
                return Ok((
                    vec![ChildSpec {
                        name: only.name.clone(),
                        description: only.description.clone(),
                    }],
                    Vec::new(),
                ))
            }
            _ => {}
        }
        let listing = relation_listing(&self.shuffled(relations, path));
        let examples = criterion
            .example_categories
            .iter()
            .map(|e| format!("\"{e}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let (min, max) = (self.cfg.min_children.to_string(), self.cfg.max_children.to_string());
        let prompt = self.prompts.partition.render(&[
            ("MIN_CHILDREN", &min),
            ("MAX_CHILDREN", &max),
            ("CRITERION_NAME", &criterion.name),
            ("CRITERION_EXPLANATION", &criterion.explanation),
            ("CRITERION_EXAMPLES", &examples),
            ("RELATION_WITH_DESC", &listing),
        ])?;
        let (lo, hi) = (2usize, 2 * self.cfg.max_children);
        let mut complained = false;
        let mut accepted_out_of_range = None;
        let ans = ask_structured(
            self.gateway,
            prompt,
            "partition",
            self.cfg.max_repair_retries,
            Some(self.cfg.seed),
            |text, last| {
                let children = parse_partition(text)?;
                let n = children.len();
                if (lo..=hi).contains(&n) {
                    return Ok(children);
                }
                if complained || last {
                    accepted_out_of_range = Some(n);
                    return Ok(children);
                }
                complained = true;
                Err(format!("expected between {lo} and {hi} clusters, got {n}"))
            },
        )?;
        let mut events: Vec<BuildEvent> = ans
            .repairs
            .into_iter()
            .map(|error| BuildEvent::Repair {
                path: path.to_string(),
                step: "partition".into(),
                error,
            })
            .collect();
        if let Some(count) = accepted_out_of_range {
            events.push(BuildEvent::ChildCountAccepted {
                path: path.to_string(),
                count,
            });
        }
        Ok((ans.value, events))
    }

    /// Names of the children `relation` belongs to, deduplicated, in answer order.
    pub fn assign_relation(
        &self,
        criterion: &Criterion,
        relation: &Relation,
        children: &[ChildSpec],
    ) -> Result<(Vec<String>, Vec<String>)> {
        if children.is_empty() {
            return Err(Error::validation("assign_relation needs at least one child"));
        }
        let mut map = serde_json::Map::new();
        for c in children {
            map.insert(c.name.clone(), Value::String(c.description.clone()));
        }
        let instances = serde_json::to_string_pretty(&Value::Object(map)).expect("map serializes");
        let prompt = self.prompts.assign.render(&[
            ("CRITERION_NAME", &criterion.name),
            ("REL_NAME", &relation.name),
            ("REL_DESC", &relation.description),
            ("CRITERION_INSTANCES", &instances),
        ])?;
        let ans = ask_structured(
            self.gateway,
            prompt,
            "assign",
            self.cfg.max_repair_retries,
            Some(self.cfg.seed),
            |text, _| parse_assignment(text, children),
        )?;
        Ok((ans.value, ans.repairs))
    }

    fn resolve_schedule(&self, schema: &RelationSchema, log: &mut BuildLog) -> Result<Vec<Criterion>> {
        let n = self.cfg.criteria_levels();
        let schedule = match &self.cfg.criteria {
            CriteriaPlan::Explicit { criteria } => criteria.clone(),
            _ if n == 0 || schema.positive_relations().nth(1).is_none() => Vec::new(),
            CriteriaPlan::Generated => self.generate_criteria(schema)?.schedule(n),
            CriteriaPlan::Named { names } => {
                let set = self.generate_criteria(schema)?;
                names
                    .iter()
                    .map(|name| match set.get(name) {
                        Some(c) => c.clone(),
                        None => {
                            log.push(BuildEvent::CriterionFallback { name: name.clone() });
                            Criterion {
                                name: name.clone(),
                                explanation: format!("the {} of each relation", name.to_lowercase()),
                                example_categories: Vec::new(),
                            }
                        }
                    })
                    .collect()
            }
        };
        log.push(BuildEvent::Criteria {
            schedule: schedule.iter().map(|c| c.name.clone()).collect(),
        });
        Ok(schedule)
    }

    pub fn build_levelwise(&self, schema: &RelationSchema) -> Result<BuildOutput> {
        let depth = self.cfg.depth_limit;
        let mut log = BuildLog::default();
        let schedule = self.resolve_schedule(schema, &mut log)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.in_flight)
            .build()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;

        let mut work = vec![Work::new("root".into(), "all predefined relations".into(), None, Vec::new())];
        let positives: Vec<&Relation> = schema.positive_relations().collect();
        let mut frontier = Vec::new();
        if !positives.is_empty() {
            frontier.push(push(
                &mut work,
                VALID_NODE_NAME.into(),
                VALID_NODE_DESCRIPTION.into(),
                0,
                positives.iter().map(|r| r.name.clone()).collect(),
            ));
        }
        let na = push(&mut work, NA_NODE_NAME.into(), NA_NODE_DESCRIPTION.into(), 0, Vec::new());
        let na_rel = schema.get(schema.na_label()).expect("schema holds its NA label");
        push_leaf(&mut work, na, na_rel);

        for level in 1..=depth - 2 {
            let mut next = Vec::new();
            for node in frontier {
                let path = path_of(&work, node);
                let rels: Vec<&Relation> = work[node]
                    .relations
                    .iter()
                    .map(|n| schema.get(n).expect("relation from schema"))
                    .collect();
                if level == depth - 2 || rels.len() == 1 {
                    if rels.len() == 1 && level < depth - 2 {
                        log.push(BuildEvent::Passthrough {
                            path: path.clone(),
                            relation: rels[0].name.clone(),
                        });
                    }
                    for r in rels {
                        push_leaf(&mut work, node, r);
                    }
                    continue;
                }
                let criterion = &schedule[level - 1];
                let (children, events) = self
                    .partition_node(&path, criterion, &rels)
                    .map_err(|e| Error::at_node(path.clone(), e))?;
                log.events.extend(events);
                log.push(BuildEvent::Partition {
                    path: path.clone(),
                    criterion: criterion.name.clone(),
                    children: children.iter().map(|c| c.name.clone()).collect(),
                });
                let answers: Vec<Result<(Vec<String>, Vec<String>)>> = pool.install(|| {
                    rels.par_iter()
                        .map(|r| self.assign_relation(criterion, r, &children))
                        .collect()
                });
                let mut buckets: Vec<Vec<String>> = vec![Vec::new(); children.len()];
                for (r, ans) in rels.iter().zip(answers) {
                    let (names, repairs) = ans.map_err(|e| Error::at_node(format!("{path} ({})", r.name), e))?;
                    for error in repairs {
                        log.push(BuildEvent::Repair {
                            path: format!("{path} ({})", r.name),
                            step: "assign".into(),
                            error,
                        });
                    }
                    for name in names {
                        let i = children.iter().position(|c| c.name == name).expect("parsed against children");
                        buckets[i].push(r.name.clone());
                    }
                }
                for (child, rels) in children.into_iter().zip(buckets) {
                    if rels.is_empty() {
                        log.push(BuildEvent::RemovedEmpty {
                            path: format!("{path}/{}", child.name),
                        });
                        continue;
                    }
                    next.push(push(&mut work, child.name, child.description, node, rels));
                }
            }
            frontier = next;
        }

        let mut b = TreeBuilder::new(depth);
        let mut ids = vec![b.root()];
        for w in &work[1..] {
            let parent = ids[w.parent.expect("non-root has parent")];
            ids.push(b.add(parent, w.name.clone(), w.description.clone(), w.leaf.clone()));
        }
        let tree = b.build()?;
        tree.validate(schema).into_result()?;
        Ok(BuildOutput { tree, schedule, log })
    }
}

struct Work {
    name: String,
    description: String,
    parent: Option<usize>,
    relations: Vec<String>,
    leaf: Option<String>,
}

impl Work {
    fn new(name: String, description: String, parent: Option<usize>, relations: Vec<String>) -> Self {
        Self {
            name,
            description,
            parent,
            relations,
            leaf: None,
        }
    }
}

fn push(work: &mut Vec<Work>, name: String, description: String, parent: usize, relations: Vec<String>) -> usize {
    work.push(Work::new(name, description, Some(parent), relations));
    work.len() - 1
}

fn push_leaf(work: &mut Vec<Work>, parent: usize, r: &Relation) {
    let mut w = Work::new(r.name.clone(), r.description.clone(), Some(parent), Vec::new());
    w.leaf = Some(r.name.clone());
    work.push(w);
}

fn path_of(work: &[Work], mut i: usize) -> String {
    let mut parts = vec![work[i].name.as_str()];
    while let Some(p) = work[i].parent {
        parts.push(&work[p].name);
        i = p;
    }
    parts.reverse();
    parts.join("/")
}

fn parse_json(text: &str) -> std::result::Result<Value, String> {
    serde_json::from_str(extract_structured(text)).map_err(|e| format!("invalid JSON: {e}"))
}

pub(crate) fn parse_criteria(text: &str) -> std::result::Result<CriteriaSet, String> {
    let v = parse_json(text)?;
    let listed = v
        .get("classification criteria")
        .and_then(Value::as_object)
        .ok_or("missing \"classification criteria\" object")?;
    let mut criteria: Vec<Criterion> = Vec::new();
    for (name, body) in listed {
        let name = name.trim();
        if name.is_empty() {
            return Err("criterion with empty name".into());
        }
        if criteria.iter().any(|c| c.name.eq_ignore_ascii_case(name)) {
            return Err(format!("criterion \"{name}\" listed twice"));
        }
        let explanation = body.get("explanation").and_then(Value::as_str).unwrap_or_default();
        let example_categories = body
            .get("possible category names")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        criteria.push(Criterion {
            name: name.to_string(),
            explanation: explanation.to_string(),
            example_categories,
        });
    }
    if criteria.len() < 2 {
        return Err(format!("need at least 2 criteria, got {}", criteria.len()));
    }
    let top = v
        .get("top2 criteria")
        .and_then(Value::as_array)
        .ok_or("missing \"top2 criteria\" array")?;
    let mut top2: Vec<String> = Vec::new();
    for t in top {
        let t = t.as_str().ok_or("\"top2 criteria\" must hold strings")?.trim();
        let c = criteria
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("top criterion \"{t}\" is not among the listed criteria"))?;
        if !top2.contains(&c.name) {
            top2.push(c.name.clone());
        }
    }
    if top2.len() < 2 {
        return Err("\"top2 criteria\" must name two distinct criteria".into());
    }
    top2.truncate(2);
    Ok(CriteriaSet { criteria, top2 })
}

pub(crate) fn parse_partition(text: &str) -> std::result::Result<Vec<ChildSpec>, String> {
    let Pairs(pairs) = serde_json::from_str(extract_structured(text)).map_err(|e| format!("invalid JSON object: {e}"))?;
    if pairs.is_empty() {
        return Err("empty partition".into());
    }
    let mut out: Vec<ChildSpec> = Vec::new();
    for (name, desc) in pairs {
        let name = name.trim();
        if name.is_empty() {
            return Err("child with empty name".into());
        }
        if out.iter().any(|c| c.name.eq_ignore_ascii_case(name)) {
            return Err(format!("duplicate child name \"{name}\""));
        }
        let description = match desc {
            Value::String(s) => s,
            Value::Object(o) => o
                .get("description")
                .and_then(Value::as_str)
                .ok_or_else(|| format!("child \"{name}\" has no description"))?
                .to_string(),
            _ => return Err(format!("child \"{name}\" has no description")),
        };
        out.push(ChildSpec {
            name: name.to_string(),
            description,
        });
    }
    Ok(out)
}

pub(crate) fn parse_assignment(text: &str, children: &[ChildSpec]) -> std::result::Result<Vec<String>, String> {
    let v = parse_json(text)?;
    let arr = match &v {
        Value::Array(a) => a.clone(),
        Value::String(_) => vec![v.clone()],
        _ => return Err("expected a JSON array of names".into()),
    };
    let mut out: Vec<String> = Vec::new();
    for item in arr {
        let s = item.as_str().ok_or("array items must be strings")?.trim();
        let child = children.iter().find(|c| c.name.eq_ignore_ascii_case(s)).ok_or_else(|| {
            let names: Vec<&str> = children.iter().map(|c| c.name.as_str()).collect();
            format!("\"{s}\" is not one of {names:?}")
        })?;
        if !out.contains(&child.name) {
            out.push(child.name.clone());
        }
    }
    if out.is_empty() {
        return Err("the array must not be empty".into());
    }
    Ok(out)
}

/// Level-wise construction with default prompts.
pub fn build_tree_levelwise(schema: &RelationSchema, cfg: &BuildConfig, gateway: &dyn LlmGateway) -> Result<BuildOutput> {
    LlmTreeBuilder::new(gateway, cfg.clone())?.build_levelwise(schema)
}
