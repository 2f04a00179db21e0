//! Per-level outcome taxonomy over inference traces.
//!
//! At level l a trace is CP when its chosen node lies on any gold path, WP
//! when its level l−1 choice was already off every gold path, and SC
//! otherwise. A trace whose walk ended above level l keeps its final outcome:
//! CP when the final relation is the gold one, WP otherwise. Every level thus
//! shares the same denominator.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceTrace;
use crate::tree::{NodeId, RelationTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Correct,
    WrongParent,
    SiblingConfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub instances: usize,
    pub accuracy: f64,
    pub cp: f64,
    pub wp: f64,
    pub sc: f64,
    /// WP among all misclassifications at this level, in percent.
    pub error_propagation_ratio: f64,
    /// False when the level has no misclassification; the ratio is then 0.
    pub ratio_defined: bool,
}

/// Outcome per level for one trace, for levels 1..=`depth`.
pub fn trace_outcomes(trace: &InferenceTrace, tree: &RelationTree, depth: usize) -> Result<Vec<Outcome>> {
    let gold = trace
        .gold
        .as_deref()
        .ok_or_else(|| Error::validation(format!("trace '{}' has no gold relation", trace.instance_id)))?;
    let on_gold: HashSet<NodeId> = tree.paths_to_relation(gold)?.into_iter().flatten().collect();
    let final_outcome = if trace.final_relation == gold {
        Outcome::Correct
    } else {
        Outcome::WrongParent
    };
    let mut out = Vec::with_capacity(depth);
    let mut parent_ok = true;
    for l in 0..depth {
        let o = match trace.levels.get(l) {
            Some(lv) if on_gold.contains(&lv.chosen) => Outcome::Correct,
            Some(_) if parent_ok => Outcome::SiblingConfusion,
            Some(_) => Outcome::WrongParent,
            None => final_outcome,
        };
        parent_ok = o == Outcome::Correct;
        out.push(o);
    }
    Ok(out)
}

pub fn level_diagnostics(traces: &[InferenceTrace], tree: &RelationTree) -> Result<Vec<LevelDiagnostics>> {
    let depth = traces.iter().map(|t| t.levels.len()).max().unwrap_or(0);
    let mut counts = vec![[0usize; 3]; depth];
    for t in traces {
        for (l, o) in trace_outcomes(t, tree, depth)?.into_iter().enumerate() {
            counts[l][o as usize] += 1;
        }
    }
    let n = traces.len();
    let pct = |x: usize| if n == 0 { 0.0 } else { 100.0 * x as f64 / n as f64 };
    Ok(counts
        .iter()
        .enumerate()
        .map(|(l, [cp, wp, sc])| {
            let errors = wp + sc;
            LevelDiagnostics {
                level: l + 1,
                instances: n,
                accuracy: pct(*cp),
                cp: pct(*cp),
                wp: pct(*wp),
                sc: pct(*sc),
                error_propagation_ratio: if errors == 0 { 0.0 } else { 100.0 * *wp as f64 / errors as f64 },
                ratio_defined: errors > 0,
            }
        })
        .collect())
}

pub fn render_diagnostics(rows: &[LevelDiagnostics]) -> String {
    let mut s = format!(
        "{:<6} | {:>8} | {:>8} | {:>7} | {:>7} | {:>7}\n",
        "Level", "Acc.", "Ratio", "%CP", "%WP", "%SC"
    );
    for r in rows {
        let ratio = if r.ratio_defined {
            format!("{:.2}", r.error_propagation_ratio)
        } else {
            "n/a".to_string()
        };
        s.push_str(&format!(
            "{:<6} | {:>8.2} | {:>8} | {:>7.2} | {:>7.2} | {:>7.2}\n",
            r.level, r.accuracy, ratio, r.cp, r.wp, r.sc
        ));
    }
    s
}
