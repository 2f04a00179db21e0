//! Gold-aware stochastic selector for offline experiments.
//!
//! An option is gold-consistent when it is an ancestor-or-self of one of the
//! gold relation's leaves. The selector returns a gold-consistent option with
//! the accuracy configured for the call's (level, origin), otherwise a
//! uniformly drawn wrong one. Every call draws from its own stream keyed on
//! (seed, instance id, call index).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render_prompt, Origin, SelectRequest, Selection, Selector, SelectorTemplate};
use crate::error::{Error, Result};
use crate::gateway::{approx_token_count, Usage};
use crate::rng::derive_rng;
use crate::tree::{NodeId, RelationTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub level: usize,
    pub base: f64,
    pub verification: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccuracyTable {
    /// Accuracy on base option sets.
    pub base: f64,
    /// Accuracy on verification views.
    pub verification: f64,
    /// Probability that a wrong best is followed by the gold option as suboptimal.
    pub confusion: f64,
    /// Per-level overrides.
    pub levels: Vec<LevelAccuracy>,
}

impl Default for AccuracyTable {
    fn default() -> Self {
        Self::uniform(0.7, 0.9)
    }
}

impl AccuracyTable {
    pub fn uniform(base: f64, verification: f64) -> Self {
        Self {
            base,
            verification,
            confusion: 0.5,
            levels: Vec::new(),
        }
    }

    pub fn with_level(mut self, level: usize, base: f64, verification: f64) -> Self {
        self.levels.retain(|l| l.level != level);
        self.levels.push(LevelAccuracy {
            level,
            base,
            verification,
        });
        self
    }

    pub fn accuracy(&self, level: usize, origin: Origin) -> f64 {
        let (b, v) = self
            .levels
            .iter()
            .find(|l| l.level == level)
            .map(|l| (l.base, l.verification))
            .unwrap_or((self.base, self.verification));
        match origin {
            Origin::Base => b,
            Origin::View(_) => v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = vec![self.base, self.verification, self.confusion];
        for l in &self.levels {
            all.push(l.base);
            all.push(l.verification);
        }
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("accuracy values must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub struct SyntheticSelector {
    tree: RelationTree,
    gold_leaves: BTreeMap<String, Vec<NodeId>>,
    table: AccuracyTable,
    seed: u64,
    template: Option<SelectorTemplate>,
}

impl SyntheticSelector {
    pub fn new(tree: &RelationTree, table: AccuracyTable, seed: u64) -> Result<Self> {
        table.validate()?;
        let gold_leaves = crate::tree::relation_index(tree)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Ok(Self {
            tree: tree.clone(),
            gold_leaves,
            table,
            seed,
            template: Some(SelectorTemplate::default()),
        })
    }

    /// Skip prompt rendering; usage is then reported as zero.
    pub fn without_usage_estimate(mut self) -> Self {
        self.template = None;
        self
    }

    pub fn table(&self) -> &AccuracyTable {
        &self.table
    }
}

impl Selector for SyntheticSelector {
    fn id(&self) -> &str {
        "synthetic"
    }

    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        let inst = req.instance;
        let gold = inst
            .gold
            .as_deref()
            .ok_or_else(|| Error::validation(format!("synthetic selector needs a gold label on '{}'", inst.id)))?;
        let leaves = self
            .gold_leaves
            .get(gold)
            .ok_or_else(|| Error::validation(format!("gold relation '{gold}' has no leaf in the tree")))?;
        let opts = req.options;
        let n = opts.len();
        let is_gold = |id: NodeId| leaves.iter().any(|l| self.tree.is_ancestor_or_self(id, *l));
        let gold_pos: Vec<usize> = (0..n).filter(|&i| is_gold(opts.ids[i])).collect();
        let wrong_pos: Vec<usize> = (0..n).filter(|&i| !is_gold(opts.ids[i])).collect();

        let mut rng = derive_rng(self.seed, &[inst.id.as_bytes(), &(req.call_index as u64).to_le_bytes()]);
        let p = self.table.accuracy(req.level, opts.origin);
        let hit = rng.gen_bool(p);
        let best = match (gold_pos.first(), hit || wrong_pos.is_empty()) {
            (Some(&g), true) => g,
            _ => wrong_pos[rng.gen_range(0..wrong_pos.len())],
        };
        let mut ranked = vec![best];
        let want = req.want.max(1).min(n);
        if want >= 2 {
            let mut rest: Vec<usize> = (0..n).filter(|&i| i != best).collect();
            let second = match gold_pos.iter().find(|&&g| g != best) {
                Some(&g) if !gold_pos.contains(&best) => {
                    let others: Vec<usize> = rest.iter().copied().filter(|&i| i != g).collect();
                    if others.is_empty() || rng.gen_bool(self.table.confusion) {
                        g
                    } else {
                        others[rng.gen_range(0..others.len())]
                    }
                }
                _ => rest[rng.gen_range(0..rest.len())],
            };
            ranked.push(second);
            rest.retain(|&i| i != second);
            rest.shuffle(&mut rng);
            ranked.extend(rest.into_iter().take(want - 2));
        }
        let ids: Vec<NodeId> = ranked.iter().map(|&i| opts.ids[i]).collect();
        let usage = match &self.template {
            Some(t) => {
                let answer: Vec<&str> = ranked.iter().map(|&i| opts.names[i].as_str()).collect();
                Usage {
                    input_tokens: approx_token_count(&render_prompt(inst, opts, t, None)) as u64,
                    output_tokens: approx_token_count(&answer.join("; ")) as u64 + 2 * answer.len() as u64,
                }
            }
            None => Usage::default(),
        };
        Ok(Selection::from_ranked(opts, &ids, usage))
    }
}
