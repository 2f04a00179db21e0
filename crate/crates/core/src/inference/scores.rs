//! Relation score distribution from per-level option scores.
//!
//! Every internal node's children are scored once. A leaf's score is the
//! product along its root path; a relation takes the max over its leaves, and
//! the result is renormalized over all relations.

use std::collections::BTreeMap;

use super::Caller;
use crate::error::{Error, Result};
use crate::gateway::Usage;
use crate::schema::Instance;
use crate::selector::{OptionSet, Origin, Selector};
use crate::tree::{NodeId, RelationTree};

/// Call indices for scoring start here so they never collide with the
/// indices of a classification run on the same instance.
pub const SCORE_CALL_OFFSET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub scores: BTreeMap<String, f64>,
    pub calls: usize,
    pub usage: Usage,
}

pub fn score_distribution<S: Selector + ?Sized>(
    instance: &Instance,
    tree: &RelationTree,
    selector: &S,
) -> Result<ScoreDistribution> {
    let mut caller = Caller::new(selector, instance);
    let mut raw: BTreeMap<String, f64> = BTreeMap::new();
    let mut stack: Vec<(NodeId, f64)> = vec![(tree.root(), 1.0)];
    while let Some((node, score)) = stack.pop() {
        if tree.is_leaf(node) {
            let rel = tree.node(node).relation.clone().unwrap_or_default();
            let e = raw.entry(rel).or_insert(0.0);
            *e = e.max(score);
            continue;
        }
        let options = OptionSet::new(tree, tree.direct_children(node).to_vec(), Origin::Base)?;
        let scores = if options.len() == 1 {
            vec![1.0]
        } else {
            let level = tree.node(node).level + 1;
            let index = SCORE_CALL_OFFSET + caller.calls;
            let sel = caller.select(&options, 1, level, index)?;
            sel.per_option_scores.ok_or_else(|| {
                Error::Capability(format!("selector '{}' does not expose per-option scores", selector.id()))
            })?
        };
        for (id, s) in options.ids.iter().zip(scores).rev() {
            stack.push((*id, score * s));
        }
    }
    let total: f64 = raw.values().sum();
    if total <= 0.0 {
        return Err(Error::backend(format!("all relation scores are zero for '{}'", instance.id)));
    }
    raw.values_mut().for_each(|v| *v /= total);
    Ok(ScoreDistribution {
        scores: raw,
        calls: caller.calls,
        usage: caller.usage,
    })
}
