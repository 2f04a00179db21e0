//! Parent/child coherence: mean first-token P(Yes) per adjacent level pair.
//!
//! Pairs whose parent is the root are skipped, so rows start at
//! "Level 1 → 2".

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, LlmGateway};
use crate::prompts::Template;
use crate::tree::RelationTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRow {
    pub parent_level: usize,
    pub child_level: usize,
    pub pairs: usize,
    /// Mean P(Yes) × 100.
    pub coherence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub rows: Vec<CoherenceRow>,
}

impl CoherenceReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "Level {} → {}: {:.2}", r.parent_level, r.child_level, r.coherence);
        }
        out
    }
}

pub fn score_coherence(tree: &RelationTree, gateway: &dyn LlmGateway, template: &Template, in_flight: usize) -> Result<CoherenceReport> {
    template.require(&["CHILD_NODE", "PARENT_NODE"])?;
    let pairs: Vec<(usize, &str, &str)> = tree
        .nodes()
        .iter()
        .filter_map(|n| {
            let p = n.parent?;
            (p != tree.root()).then(|| (tree.node(p).level, tree.name(p), n.name.as_str()))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let probs: Vec<Result<f64>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(_, parent, child)| {
                let prompt = template.render(&[("CHILD_NODE", child), ("PARENT_NODE", parent)])?;
                let c = gateway.complete(&ChatRequest::prompt(prompt, "coherence").with_logprobs())?;
                c.first_token_probability("Yes").ok_or_else(|| {
                    Error::Capability(format!("backend '{}' returned no token probabilities", gateway.id()))
                })
            })
            .collect()
    });
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for ((level, _, _), p) in pairs.iter().zip(probs) {
        let g = groups.entry(*level).or_default();
        g.0 += 1;
        g.1 += p?;
    }
    Ok(CoherenceReport {
        rows: groups
            .into_iter()
            .map(|(l, (n, sum))| CoherenceRow {
                parent_level: l,
                child_level: l + 1,
                pairs: n,
                coherence: 100.0 * sum / n as f64,
            })
            .collect(),
    })
}
