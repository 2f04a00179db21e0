//! Top-down classification over a relation tree.
//!
//! Plain mode takes the selector's best option at every level. PtV mode
//! (prediction then verification) asks for a ranked top-k, rebuilds the option
//! set with ranked nodes replaced by their children, and accepts the best only
//! when enough verification views agree with it.

mod run;
mod scores;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::gateway::Usage;
use crate::schema::Instance;
use crate::selector::{OptionSet, Origin, SelectRequest, Selection, Selector};
use crate::tree::{NodeId, RelationTree};

pub use run::{run_dataset, Failure, LatencyStats, RunConfig, RunOutput, RunStats};
pub use scores::{score_distribution, ScoreDistribution, SCORE_CALL_OFFSET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtvConfig {
    pub enabled: bool,
    /// Rounds before the last best is accepted unverified.
    pub max_rounds: usize,
    /// Ranked nodes that get a verification view.
    pub k: usize,
    /// Votes needed out of three views when `k == 2`.
    pub alignment_threshold: usize,
}

impl Default for PtvConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rounds: 3,
            k: 2,
            alignment_threshold: 2,
        }
    }
}

impl PtvConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::validation("max_rounds must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if !(1..=3).contains(&self.alignment_threshold) {
            return Err(Error::validation("alignment_threshold must lie in 1..=3"));
        }
        Ok(())
    }

    /// (ranked nodes verified, view count, votes needed) for `n` options.
    pub fn plan(&self, n: usize) -> (usize, usize, usize) {
        let k = self.k.min(n).max(1);
        let views = if k >= 2 { k + 1 } else { 1 };
        let threshold = if k == 2 {
            self.alignment_threshold
        } else {
            views / 2 + 1
        };
        (k, views, threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Ptv,
}

/// Which ranked nodes a verification view replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    /// Only the best node.
    Best,
    /// Only one lower-ranked node.
    Other,
    /// Every ranked node.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundOutcome {
    Accept,
    Reject,
    /// Round limit reached; the best is taken unverified.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub role: ViewRole,
    pub replaced: Vec<NodeId>,
    pub options: OptionSet,
    pub selection: Selection,
    pub vote: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub options: OptionSet,
    pub prediction: Selection,
    pub views: Vec<ViewRecord>,
    pub votes: usize,
    pub threshold: usize,
    pub outcome: RoundOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// Tree level of the options.
    pub level: usize,
    pub parent: NodeId,
    pub options: OptionSet,
    /// The single selection of plain mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundRecord>,
    pub chosen: NodeId,
    pub chosen_name: String,
    pub confidence: f64,
    /// Chosen without a call because one option remained.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_id: Option<String>,
    pub mode: Mode,
    pub levels: Vec<LevelRecord>,
    pub final_leaf: NodeId,
    pub final_relation: String,
    /// Product of the per-level confidences.
    pub confidence: f64,
    pub calls: usize,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<std::collections::BTreeMap<String, f64>>,
}

impl InferenceTrace {
    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            instance_id: self.instance_id.clone(),
            predicted: self.final_relation.clone(),
            gold: self.gold.clone(),
            confidence: self.confidence.clamp(0.0, 1.0),
            distribution: self.distribution.clone(),
            bag_id: self.bag_id.clone(),
            trace: Some(self.instance_id.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    /// Checks the structural invariants of a trace against its tree.
    pub fn check(&self, tree: &RelationTree) -> Result<()> {
        let fail = |m: String| Err(Error::validation(format!("trace '{}': {m}", self.instance_id)));
        let mut expected_parent = tree.root();
        for (i, lv) in self.levels.iter().enumerate() {
            if tree.get(lv.parent).is_none() || tree.get(lv.chosen).is_none() {
                return fail(format!("level {} names an unknown node", lv.level));
            }
            if lv.parent != expected_parent {
                return fail(format!("level {} does not continue from the previous choice", lv.level));
            }
            if lv.options.ids != tree.direct_children(lv.parent) {
                return fail(format!("level {} options are not the parent's children", lv.level));
            }
            if tree.parent(lv.chosen) != Some(lv.parent) || tree.name(lv.chosen) != lv.chosen_name {
                return fail(format!("level {} chose a node outside its options", lv.level));
            }
            if !(0.0..=1.0).contains(&lv.confidence) {
                return fail(format!("level {} confidence outside [0, 1]", lv.level));
            }
            for (j, r) in lv.rounds.iter().enumerate() {
                let last = j + 1 == lv.rounds.len();
                let ok = match r.outcome {
                    RoundOutcome::Accept => r.votes >= r.threshold && last && r.prediction.best == lv.chosen,
                    RoundOutcome::Fallback => last && r.prediction.best == lv.chosen,
                    RoundOutcome::Reject => lv.rounds.get(j + 1).map_or(lv.forced, |n| {
                        !n.options.contains(r.prediction.best) && n.options.len() + 1 == r.options.len()
                    }),
                };
                if !ok || r.votes != r.views.iter().filter(|v| v.vote).count() {
                    return fail(format!("level {} round {} breaks the vote rules", lv.level, r.round));
                }
            }
            if i + 1 == self.levels.len() && lv.chosen != self.final_leaf {
                return fail("final leaf is not the last choice".into());
            }
            expected_parent = lv.chosen;
        }
        if !tree.is_leaf(self.final_leaf) || tree.node(self.final_leaf).relation.as_deref() != Some(&self.final_relation) {
            return fail("final relation is not the leaf's relation".into());
        }
        Ok(())
    }
}

fn path_label(tree: &RelationTree, node: NodeId) -> String {
    tree.path_to(node).iter().map(|n| tree.name(*n)).collect::<Vec<_>>().join("/")
}

/// Per-instance call state: counts calls and keys each one by its index.
pub struct Caller<'a, S: ?Sized> {
    selector: &'a S,
    instance: &'a Instance,
    pub calls: usize,
    pub usage: Usage,
}

impl<'a, S: Selector + ?Sized> Caller<'a, S> {
    pub fn new(selector: &'a S, instance: &'a Instance) -> Self {
        Self {
            selector,
            instance,
            calls: 0,
            usage: Usage::default(),
        }
    }

    pub fn select(&mut self, options: &OptionSet, want: usize, level: usize, call_index: usize) -> Result<Selection> {
        let s = self.selector.select(&SelectRequest {
            instance: self.instance,
            options,
            want,
            level,
            call_index,
        })?;
        s.check(options, want)?;
        self.calls += 1;
        self.usage += s.usage;
        Ok(s)
    }

    fn next(&mut self, options: &OptionSet, want: usize, level: usize) -> Result<Selection> {
        self.select(options, want, level, self.calls)
    }
}

/// `options` with every node in `replace` swapped for its children, in place.
fn splice(tree: &RelationTree, options: &OptionSet, replace: &[NodeId], origin: Origin) -> Result<OptionSet> {
    let mut ids = Vec::new();
    for id in &options.ids {
        if replace.contains(id) {
            ids.extend(tree.children_of(*id)?);
        } else {
            ids.push(*id);
        }
    }
    OptionSet::new(tree, ids, origin)
}

/// The three views of a top-2 prediction: best replaced, suboptimal
/// replaced, both replaced.
pub fn build_verification_sets(
    tree: &RelationTree,
    options: &OptionSet,
    r1st: NodeId,
    r2nd: NodeId,
) -> Result<(OptionSet, OptionSet, OptionSet)> {
    if r1st == r2nd || !options.contains(r1st) || !options.contains(r2nd) {
        return Err(Error::validation("r1st and r2nd must be two distinct options"));
    }
    Ok((
        splice(tree, options, &[r1st], Origin::View(1))?,
        splice(tree, options, &[r2nd], Origin::View(2))?,
        splice(tree, options, &[r1st, r2nd], Origin::View(3))?,
    ))
}

/// Views for a ranked top-k: one per ranked node, plus the all-replaced view
/// when more than one node is ranked.
pub fn build_views(tree: &RelationTree, options: &OptionSet, top: &[NodeId]) -> Result<Vec<(ViewRole, Vec<NodeId>, OptionSet)>> {
    let mut views = Vec::new();
    for (i, id) in top.iter().enumerate() {
        let role = if i == 0 { ViewRole::Best } else { ViewRole::Other };
        views.push((role, vec![*id], splice(tree, options, &[*id], Origin::View(i + 1))?));
    }
    if top.len() >= 2 {
        let all = splice(tree, options, top, Origin::View(top.len() + 1))?;
        views.push((ViewRole::All, top.to_vec(), all));
    }
    Ok(views)
}

/// Whether the auxiliary node picked from a view supports `r1st`.
pub fn aligned(tree: &RelationTree, aux: NodeId, r1st: NodeId, role: ViewRole) -> bool {
    match role {
        ViewRole::Best | ViewRole::All => tree.children_of(r1st).map(|c| c.contains(&aux)).unwrap_or(false),
        ViewRole::Other => aux == r1st,
    }
}

fn base_options(tree: &RelationTree, parent: NodeId) -> Result<OptionSet> {
    OptionSet::new(tree, tree.direct_children(parent).to_vec(), Origin::Base)
}

fn plain_level<S: Selector + ?Sized>(tree: &RelationTree, parent: NodeId, caller: &mut Caller<'_, S>) -> Result<LevelRecord> {
    let level = tree.node(parent).level + 1;
    let options = base_options(tree, parent)?;
    let (selection, chosen, confidence, forced) = if options.len() == 1 {
        (None, options.ids[0], 1.0, true)
    } else {
        let s = caller.next(&options, 1, level)?;
        let (b, c) = (s.best, s.confidence_best);
        (Some(s), b, c, false)
    };
    Ok(LevelRecord {
        level,
        parent,
        options,
        selection,
        rounds: Vec::new(),
        chosen,
        chosen_name: tree.name(chosen).to_string(),
        confidence,
        forced,
    })
}

/// One level of prediction then verification.
pub fn ptv_level<S: Selector + ?Sized>(
    tree: &RelationTree,
    parent: NodeId,
    caller: &mut Caller<'_, S>,
    cfg: &PtvConfig,
) -> Result<LevelRecord> {
    let level = tree.node(parent).level + 1;
    let base = base_options(tree, parent)?;
    let mut opts = base.clone();
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let (chosen, confidence, forced) = loop {
        if opts.len() == 1 {
            let only = opts.ids[0];
            let conf = rounds
                .last()
                .and_then(|r| {
                    let pos = r.options.position(only)?;
                    r.prediction.per_option_scores.as_ref().map(|s| s[pos])
                })
                .unwrap_or(1.0);
            break (only, conf, true);
        }
        let (k, _, threshold) = cfg.plan(opts.len());
        let prediction = caller.next(&opts, k, level)?;
        let top: Vec<NodeId> = prediction.ranked().into_iter().take(k).collect();
        let r1st = top[0];
        let mut views = Vec::new();
        for (role, replaced, view) in build_views(tree, &opts, &top)? {
            let selection = caller.next(&view, 1, level)?;
            let vote = aligned(tree, selection.best, r1st, role);
            views.push(ViewRecord {
                role,
                replaced,
                options: view,
                selection,
                vote,
            });
        }
        let votes = views.iter().filter(|v| v.vote).count();
        let round = rounds.len() + 1;
        let outcome = if votes >= threshold {
            RoundOutcome::Accept
        } else if round >= cfg.max_rounds {
            RoundOutcome::Fallback
        } else {
            RoundOutcome::Reject
        };
        let conf = prediction.confidence_best;
        rounds.push(RoundRecord {
            round,
            options: opts.clone(),
            prediction,
            views,
            votes,
            threshold,
            outcome,
        });
        if outcome != RoundOutcome::Reject {
            break (r1st, conf, false);
        }
        let rest: Vec<NodeId> = opts.ids.iter().copied().filter(|id| *id != r1st).collect();
        opts = OptionSet::new(tree, rest, Origin::Base)?;
    };
    Ok(LevelRecord {
        level,
        parent,
        options: base,
        selection: None,
        rounds,
        chosen,
        chosen_name: tree.name(chosen).to_string(),
        confidence,
        forced,
    })
}

fn walk<S: Selector + ?Sized>(
    instance: &Instance,
    tree: &RelationTree,
    selector: &S,
    ptv: Option<&PtvConfig>,
) -> Result<InferenceTrace> {
    let mut caller = Caller::new(selector, instance);
    let mut levels = Vec::new();
    let mut cur = tree.root();
    while !tree.is_leaf(cur) {
        let rec = match ptv {
            Some(cfg) => ptv_level(tree, cur, &mut caller, cfg),
            None => plain_level(tree, cur, &mut caller),
        }
        .map_err(|e| Error::at_node(path_label(tree, cur), e))?;
        cur = rec.chosen;
        levels.push(rec);
    }
    let confidence = levels.iter().map(|l| l.confidence).product();
    Ok(InferenceTrace {
        instance_id: instance.id.clone(),
        gold: instance.gold.clone(),
        bag_id: instance.bag_id.clone(),
        mode: if ptv.is_some() { Mode::Ptv } else { Mode::Plain },
        levels,
        final_leaf: cur,
        final_relation: tree.node(cur).relation.clone().unwrap_or_default(),
        confidence,
        calls: caller.calls,
        usage: caller.usage,
        distribution: None,
    })
}

/// Best option at every level from the root down to a leaf.
pub fn classify_plain<S: Selector + ?Sized>(instance: &Instance, tree: &RelationTree, selector: &S) -> Result<InferenceTrace> {
    walk(instance, tree, selector, None)
}

/// Prediction then verification at every level.
pub fn classify_ptv<S: Selector + ?Sized>(
    instance: &Instance,
    tree: &RelationTree,
    selector: &S,
    cfg: &PtvConfig,
) -> Result<InferenceTrace> {
    cfg.validate()?;
    walk(instance, tree, selector, Some(cfg))
}

/// Dispatches on `cfg.enabled`.
pub fn classify<S: Selector + ?Sized>(
    instance: &Instance,
    tree: &RelationTree,
    selector: &S,
    cfg: &PtvConfig,
) -> Result<InferenceTrace> {
    if cfg.enabled {
        classify_ptv(instance, tree, selector, cfg)
    } else {
        classify_plain(instance, tree, selector)
    }
}

#[cfg(test)]
mod tests;
