//! Training data from gold labels.
//!
//! D1 holds one sample per level of the gold path: the gold node among its
//! siblings. D2 simulates verification: with the gold node as the best and a
//! random sibling as the suboptimal, the three verification views are built
//! and labelled with the answer a correct model would give.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::build_verification_sets;
use crate::rng::derive_rng;
use crate::schema::Instance;
use crate::selector::{render_prompt, OptionSet, Origin, SelectorTemplate};
use crate::tree::{NodeId, RelationTree};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathPolicy {
    /// The lexicographically first path.
    #[default]
    First,
    /// Every path of a multi-leaf relation.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "D1")]
    D1,
    #[serde(rename = "D2-v1")]
    D2V1,
    #[serde(rename = "D2-v2")]
    D2V2,
    #[serde(rename = "D2-v3")]
    D2V3,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::D1 => "D1",
            Provenance::D2V1 => "D2-v1",
            Provenance::D2V2 => "D2-v2",
            Provenance::D2V3 => "D2-v3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub instance_id: String,
    pub level: usize,
    pub options: OptionSet,
    pub target: NodeId,
    pub target_name: String,
    pub provenance: Provenance,
}

/// One line of the training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub target: String,
    pub provenance: Provenance,
    pub level: usize,
    pub instance_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpandSummary {
    pub instances: usize,
    pub counts: BTreeMap<Provenance, usize>,
    /// D1 samples whose gold node has no sibling, hence no D2.
    pub no_sibling_levels: usize,
}

impl ExpandSummary {
    pub fn count(&self, p: Provenance) -> usize {
        self.counts.get(&p).copied().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<8} | {:>8}\n", "Source", "Samples");
        for p in [Provenance::D1, Provenance::D2V1, Provenance::D2V2, Provenance::D2V3] {
            s.push_str(&format!("{:<8} | {:>8}\n", p.as_str(), self.count(p)));
        }
        s.push_str(&format!(
            "{} instances; {} levels without a sibling\n",
            self.instances, self.no_sibling_levels
        ));
        s
    }
}

/// Root-to-leaf gold paths under `policy`.
pub fn gold_path(tree: &RelationTree, relation: &str, policy: PathPolicy) -> Result<Vec<Vec<NodeId>>> {
    let mut paths = tree.paths_to_relation(relation)?;
    if policy == PathPolicy::First {
        paths.truncate(1);
    }
    Ok(paths)
}

/// One sample per level of `path`: the gold node among its siblings.
pub fn expand_d1(instance_id: &str, tree: &RelationTree, path: &[NodeId]) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for l in 1..path.len() {
        let options = OptionSet::new(tree, tree.direct_children(path[l - 1]).to_vec(), Origin::Base)?;
        out.push(TrainingSample {
            instance_id: instance_id.to_string(),
            level: l,
            options,
            target: path[l],
            target_name: tree.name(path[l]).to_string(),
            provenance: Provenance::D1,
        });
    }
    Ok(out)
}

/// The three verification samples of a D1 sample; empty when the gold node
/// has no sibling.
pub fn expand_d2<R: rand::Rng>(
    d1: &TrainingSample,
    tree: &RelationTree,
    path: &[NodeId],
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    let gold = d1.target;
    let siblings: Vec<NodeId> = d1.options.ids.iter().copied().filter(|id| *id != gold).collect();
    let Some(&second) = siblings.choose(rng) else {
        return Ok(Vec::new());
    };
    let next = path.get(d1.level + 1).copied().unwrap_or(gold);
    let (v1, v2, v3) = build_verification_sets(tree, &d1.options, gold, second)?;
    let sample = |options: OptionSet, target: NodeId, provenance| TrainingSample {
        instance_id: d1.instance_id.clone(),
        level: d1.level,
        options,
        target,
        target_name: tree.name(target).to_string(),
        provenance,
    };
    Ok(vec![
        sample(v1, next, Provenance::D2V1),
        sample(v2, gold, Provenance::D2V2),
        sample(v3, next, Provenance::D2V3),
    ])
}

/// All D1 and D2 samples of one instance, in path then level order.
pub fn expand_instance(
    instance: &Instance,
    tree: &RelationTree,
    seed: u64,
    policy: PathPolicy,
) -> Result<(Vec<TrainingSample>, usize)> {
    let gold = instance
        .gold
        .as_deref()
        .ok_or_else(|| Error::validation("instance has no gold relation"))?;
    let mut out = Vec::new();
    let mut no_sibling = 0;
    for (p, path) in gold_path(tree, gold, policy)?.iter().enumerate() {
        let mut rng = derive_rng(seed, &[instance.id.as_bytes(), &(p as u64).to_le_bytes()]);
        for d1 in expand_d1(&instance.id, tree, path)? {
            let d2 = expand_d2(&d1, tree, path, &mut rng)?;
            if d2.is_empty() {
                no_sibling += 1;
            }
            out.push(d1);
            out.extend(d2);
        }
    }
    Ok((out, no_sibling))
}

/// Expands every instance and renders prompts with the inference template.
pub fn expand_dataset(
    instances: &[Instance],
    tree: &RelationTree,
    seed: u64,
    policy: PathPolicy,
    template: &SelectorTemplate,
) -> Result<(Vec<TrainingRecord>, ExpandSummary)> {
    let per: Vec<Result<(Vec<TrainingRecord>, usize)>> = instances
        .par_iter()
        .map(|inst| {
            let (samples, no_sibling) =
                expand_instance(inst, tree, seed, policy).map_err(|e| Error::at_instance(&inst.id, e))?;
            let records = samples
                .into_iter()
                .map(|s| TrainingRecord {
                    prompt: render_prompt(inst, &s.options, template, None),
                    target: s.target_name,
                    provenance: s.provenance,
                    level: s.level,
                    instance_id: s.instance_id,
                })
                .collect();
            Ok((records, no_sibling))
        })
        .collect();
    let mut records = Vec::new();
    let mut summary = ExpandSummary {
        instances: instances.len(),
        ..Default::default()
    };
    for r in per {
        let (recs, no_sibling) = r?;
        summary.no_sibling_levels += no_sibling;
        for rec in &recs {
            *summary.counts.entry(rec.provenance).or_insert(0) += 1;
        }
        records.extend(recs);
    }
    Ok((records, summary))
}
