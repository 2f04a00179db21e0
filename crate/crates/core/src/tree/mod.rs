//! The hierarchical relation tree.
//!
//! Leaves carry schema relations; intermediate nodes carry generated concept
//! names. Level 1 is fixed to a "valid relations" node (all positive
//! relations) and a "no valid relation" node (NA only). Trees are immutable
//! once built and can be shared freely between inference workers.

mod edit;

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::RelationSchema;

pub use edit::{tree_edit_distance, tree_edit_similarity};

pub const ROOT_NAME: &str = "root";
pub const VALID_NODE_NAME: &str = "valid relations";
pub const NA_NODE_NAME: &str = "no valid relation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub name: String,
    pub description: String,
    #[serde(skip)]
    pub level: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTree {
    depth_limit: usize,
    nodes: Vec<TreeNode>,
    root: NodeId,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    depth_limit: usize,
    nodes: Vec<TreeNode>,
}

impl RelationTree {
    /// Assemble a tree from raw nodes, checking only that they form a tree.
    ///
    /// Node ids must be exactly `0..n` (any order). Semantic constraints
    /// (coverage, level-1 shape, depth) are left to [`RelationTree::validate`].
    pub fn from_nodes(depth_limit: usize, mut nodes: Vec<TreeNode>) -> Result<Self> {
        if depth_limit == 0 {
            return Err(Error::validation("depth_limit must be positive"));
        }
        if nodes.is_empty() {
            return Err(Error::validation("tree has no nodes"));
        }
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0 != i {
                return Err(Error::validation(format!(
                    "node ids must be exactly 0..{} without gaps or repeats (saw {})",
                    nodes.len(),
                    n.id
                )));
            }
        }
        let roots: Vec<NodeId> = nodes.iter().filter(|n| n.parent.is_none()).map(|n| n.id).collect();
        if roots.len() != 1 {
            return Err(Error::validation(format!("expected exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        for n in &nodes {
            if let Some(p) = n.parent {
                let parent = nodes
                    .get(p.0)
                    .ok_or_else(|| Error::validation(format!("node {} has unknown parent {p}", n.id)))?;
                if parent.children.iter().filter(|c| **c == n.id).count() != 1 {
                    return Err(Error::validation(format!(
                        "node {} names parent {p}, which does not list it exactly once",
                        n.id
                    )));
                }
            }
            for c in &n.children {
                let child = nodes
                    .get(c.0)
                    .ok_or_else(|| Error::validation(format!("node {} has unknown child {c}", n.id)))?;
                if child.parent != Some(n.id) {
                    return Err(Error::validation(format!(
                        "node {} lists child {c}, whose parent differs",
                        n.id
                    )));
                }
            }
        }
        // assign levels breadth-first; anything unreached sits on a cycle
        let mut reached = 0;
        let mut stack = vec![(root, 0usize)];
        while let Some((id, level)) = stack.pop() {
            reached += 1;
            nodes[id.0].level = level;
            for c in nodes[id.0].children.clone().into_iter().rev() {
                stack.push((c, level + 1));
            }
        }
        if reached != nodes.len() {
            return Err(Error::validation("node graph contains a cycle or detached component"));
        }
        Ok(Self {
            depth_limit,
            nodes,
            root,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: TreeFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::validation(format!("tree document: {e}")))?;
        Self::from_nodes(file.depth_limit, file.nodes)
    }

    pub fn to_json(&self) -> String {
        let file = TreeFile {
            depth_limit: self.depth_limit,
            nodes: self.nodes.clone(),
        };
        serde_json::to_string_pretty(&file).expect("tree serializes")
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn get(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0)
    }

    /// Panicking lookup for ids already known to belong to this tree.
    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].is_leaf()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    /// Children in stored order; a leaf is its own single child.
    pub fn children_of(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let node = self
            .get(id)
            .ok_or_else(|| Error::validation(format!("unknown node id {id}")))?;
        if node.is_leaf() {
            Ok(vec![id])
        } else {
            Ok(node.children.clone())
        }
    }

    /// Real children only (empty for leaves).
    pub fn direct_children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    /// Root-to-node path, inclusive on both ends.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn is_ancestor_or_self(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c.0].parent;
        }
        false
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaves_for<'a>(&'a self, relation: &'a str) -> impl Iterator<Item = NodeId> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.is_leaf() && n.relation.as_deref() == Some(relation))
            .map(|n| n.id)
    }

    /// Every root-to-leaf path ending at a leaf that carries `relation`,
    /// ordered lexicographically by node names along the path.
    pub fn paths_to_relation(&self, relation: &str) -> Result<Vec<Vec<NodeId>>> {
        let mut paths: Vec<Vec<NodeId>> = self.leaves_for(relation).map(|l| self.path_to(l)).collect();
        if paths.is_empty() {
            return Err(Error::validation(format!("relation '{relation}' is carried by no leaf")));
        }
        paths.sort_by(|a, b| {
            let an: Vec<&str> = a.iter().map(|n| self.name(*n)).collect();
            let bn: Vec<&str> = b.iter().map(|n| self.name(*n)).collect();
            an.cmp(&bn).then_with(|| a.cmp(b))
        });
        Ok(paths)
    }

    pub fn child_named(&self, parent: NodeId, name: &str) -> Option<NodeId> {
        self.nodes[parent.0]
            .children
            .iter()
            .copied()
            .find(|c| self.nodes[c.0].name == name)
    }

    pub fn valid_node(&self) -> Option<NodeId> {
        self.child_named(self.root, VALID_NODE_NAME)
    }

    pub fn na_node(&self) -> Option<NodeId> {
        self.child_named(self.root, NA_NODE_NAME)
    }

    /// Deepest occupied level.
    pub fn max_level(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn validate(&self, schema: &RelationSchema) -> ValidationReport {
        let mut findings = Vec::new();

        let mut carried = HashSet::new();
        for node in &self.nodes {
            match (&node.relation, node.is_leaf()) {
                (Some(rel), true) => {
                    carried.insert(rel.as_str());
                    if !schema.contains(rel) {
                        findings.push(Finding::HallucinatedRelation {
                            node: node.id,
                            relation: rel.clone(),
                        });
                    }
                }
                (None, true) => findings.push(Finding::LeafWithoutRelation { node: node.id }),
                (Some(_), false) => findings.push(Finding::IntermediateWithRelation { node: node.id }),
                (None, false) => {}
            }
            if node.level + 1 > self.depth_limit {
                findings.push(Finding::DepthOverflow {
                    node: node.id,
                    level: node.level,
                    depth_limit: self.depth_limit,
                });
            }
            let mut names = HashSet::new();
            for c in &node.children {
                let name = &self.nodes[c.0].name;
                if !names.insert(name.as_str()) {
                    findings.push(Finding::SiblingNameClash {
                        parent: node.id,
                        name: name.clone(),
                    });
                }
            }
        }
        for rel in schema.relations() {
            if !carried.contains(rel.name.as_str()) {
                findings.push(Finding::MissingRelation {
                    relation: rel.name.clone(),
                });
            }
        }

        let has_positive = schema.positive_relations().next().is_some();
        let level1: Vec<&str> = self.nodes[self.root.0]
            .children
            .iter()
            .map(|c| self.nodes[c.0].name.as_str())
            .collect();
        let mut expected = vec![NA_NODE_NAME];
        if has_positive {
            expected.insert(0, VALID_NODE_NAME);
        }
        let mut got = level1.clone();
        got.sort_unstable();
        let mut want = expected.clone();
        want.sort_unstable();
        if got != want {
            findings.push(Finding::LevelOneShape {
                found: level1.iter().map(|s| s.to_string()).collect(),
            });
        }
        let na_node = self.na_node();
        for leaf in self.leaves() {
            let Some(rel) = &leaf.relation else { continue };
            let under_na = na_node.is_some_and(|na| self.is_ancestor_or_self(na, leaf.id));
            if schema.is_na(rel) != under_na {
                findings.push(Finding::NaPlacement {
                    node: leaf.id,
                    relation: rel.clone(),
                });
            }
        }
        ValidationReport { findings }
    }

    pub fn stats(&self) -> TreeStats {
        let max_level = self.max_level();
        let mut nodes_per_level = vec![0usize; max_level + 1];
        for n in &self.nodes {
            nodes_per_level[n.level] += 1;
        }
        let leaf_count = self.leaves().count();
        let parents = self.nodes.iter().filter(|n| !n.is_leaf()).count();
        let non_root = self.nodes.len() - 1;
        // a lone root is a leaf; it is not also counted as an intermediate
        let intermediate_count = self
            .nodes
            .iter()
            .filter(|n| !n.is_leaf() && n.id != self.root)
            .count();
        TreeStats {
            depth: max_level + 1,
            nodes_per_level,
            leaf_count,
            intermediate_count,
            root_count: 1,
            child_edges: non_root,
            parent_count: parents,
        }
    }

    /// Plain-text indented listing.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id.0];
            let _ = write!(out, "{}{}", "  ".repeat(n.level), n.name);
            if let Some(rel) = &n.relation {
                if rel != &n.name {
                    let _ = write!(out, " -> {rel}");
                }
            }
            out.push('\n');
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

/// One violated tree invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    MissingRelation { relation: String },
    HallucinatedRelation { node: NodeId, relation: String },
    LevelOneShape { found: Vec<String> },
    NaPlacement { node: NodeId, relation: String },
    DepthOverflow { node: NodeId, level: usize, depth_limit: usize },
    SiblingNameClash { parent: NodeId, name: String },
    LeafWithoutRelation { node: NodeId },
    IntermediateWithRelation { node: NodeId },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingRelation { relation } => write!(f, "relation '{relation}' is carried by no leaf"),
            Finding::HallucinatedRelation { node, relation } => {
                write!(f, "leaf {node} carries '{relation}', which is not in the schema")
            }
            Finding::LevelOneShape { found } => write!(f, "level 1 must be the valid/NA pair, found {found:?}"),
            Finding::NaPlacement { node, relation } => {
                write!(f, "leaf {node} ('{relation}') is on the wrong side of the valid/NA split")
            }
            Finding::DepthOverflow { node, level, depth_limit } => {
                write!(f, "node {node} at level {level} exceeds depth limit {depth_limit}")
            }
            Finding::SiblingNameClash { parent, name } => write!(f, "node {parent} has two children named '{name}'"),
            Finding::LeafWithoutRelation { node } => write!(f, "leaf {node} carries no relation"),
            Finding::IntermediateWithRelation { node } => write!(f, "intermediate node {node} carries a relation"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.findings.iter().map(|f| f.to_string()).collect();
            Err(Error::validation(format!("invalid tree: {}", msgs.join("; "))))
        }
    }
}

/// Structural counts. The root is reported on its own and is not included
/// in `intermediate_count`, so `1 + intermediate_count + leaf_count` equals
/// the sum of `nodes_per_level` for any tree with more than one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    /// Number of occupied levels.
    pub depth: usize,
    pub nodes_per_level: Vec<usize>,
    pub leaf_count: usize,
    pub intermediate_count: usize,
    pub root_count: usize,
    /// Non-root node count (numerator of the average branching factor).
    pub child_edges: usize,
    /// Nodes with at least one child (denominator of the average branching factor).
    pub parent_count: usize,
}

impl TreeStats {
    pub fn avg_children(&self) -> f64 {
        if self.parent_count == 0 {
            0.0
        } else {
            self.child_edges as f64 / self.parent_count as f64
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>8}", "Tree Depth", self.depth);
        for (l, n) in self.nodes_per_level.iter().enumerate() {
            let _ = writeln!(out, "{:<22}{:>8}", format!("#Node at Level {l}"), n);
        }
        let _ = writeln!(out, "{:<22}{:>8}", "#Leaf Node", self.leaf_count);
        let _ = writeln!(out, "{:<22}{:>8}", "#Intermediate Node", self.intermediate_count);
        let _ = writeln!(out, "{:<22}{:>8.2}", "#Child Node (Avg.)", self.avg_children());
        out
    }
}

/// Incremental construction of well-formed trees.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    depth_limit: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder {
    pub fn new(depth_limit: usize) -> Self {
        Self::with_root(depth_limit, ROOT_NAME, "all predefined relations")
    }

    pub fn with_root(depth_limit: usize, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            depth_limit,
            nodes: vec![TreeNode {
                id: NodeId(0),
                name: name.into(),
                description: description.into(),
                level: 0,
                parent: None,
                children: Vec::new(),
                relation: None,
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn add(
        &mut self,
        parent: NodeId,
        name: impl Into<String>,
        description: impl Into<String>,
        relation: Option<String>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        let level = self.nodes[parent.0].level + 1;
        self.nodes.push(TreeNode {
            id,
            name: name.into(),
            description: description.into(),
            level,
            parent: Some(parent),
            children: Vec::new(),
            relation,
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    pub fn intermediate(&mut self, parent: NodeId, name: impl Into<String>, description: impl Into<String>) -> NodeId {
        self.add(parent, name, description, None)
    }

    /// Leaf named after its relation.
    pub fn leaf(&mut self, parent: NodeId, relation: &str, description: impl Into<String>) -> NodeId {
        self.add(parent, relation, description, Some(relation.to_string()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn build(self) -> Result<RelationTree> {
        RelationTree::from_nodes(self.depth_limit, self.nodes)
    }
}

/// Relation name → leaf ids, in node order.
pub fn relation_index(tree: &RelationTree) -> BTreeMap<&str, Vec<NodeId>> {
    let mut out: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for leaf in tree.leaves() {
        if let Some(rel) = &leaf.relation {
            out.entry(rel.as_str()).or_default().push(leaf.id);
        }
    }
    out
}
