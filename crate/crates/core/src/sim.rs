//! Offline workload for comparing plain and PtV inference with a synthetic
//! selector: a complete tree under the valid node, instances with uniform
//! gold labels, and paired runs over the same instances and seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{level_diagnostics, micro_f1, LevelDiagnostics};
use crate::inference::{run_dataset, InferenceTrace, PtvConfig, RunConfig, RunStats};
use crate::rng::derive_rng;
use crate::schema::{Instance, Relation, RelationSchema};
use crate::selector::{AccuracyTable, SyntheticSelector};
use crate::tree::{RelationTree, TreeBuilder, NA_NODE_NAME, VALID_NODE_NAME};

pub const NA_LABEL: &str = "NA";

/// Schema and tree: root → {valid → complete `branching`-ary subtree with
/// leaves at level `depth − 1`, no-valid → NA}.
pub fn synthetic_tree(branching: usize, depth: usize) -> Result<(RelationSchema, RelationTree)> {
    if branching < 2 || depth < 3 {
        return Err(Error::validation("synthetic tree needs branching ≥ 2 and depth ≥ 3"));
    }
    let mut b = TreeBuilder::new(depth);
    let root = b.root();
    let valid = b.intermediate(root, VALID_NODE_NAME, "all positive relations");
    let na = b.intermediate(root, NA_NODE_NAME, "no relation holds");
    b.leaf(na, NA_LABEL, "no relation");
    let mut relations = Vec::new();
    let mut frontier = vec![(valid, String::new(), 1usize)];
    while let Some((node, label, level)) = frontier.pop() {
        for i in 0..branching {
            let name = if label.is_empty() { format!("{i}") } else { format!("{label}.{i}") };
            if level + 1 == depth - 1 {
                let rel = format!("rel {name}");
                b.leaf(node, &rel, "");
                relations.push(Relation::new(rel, "synthetic relation"));
            } else {
                let c = b.intermediate(node, format!("group {name}"), "");
                frontier.push((c, name, level + 1));
            }
        }
    }
    relations.sort_by(|a, b| a.name.cmp(&b.name));
    relations.push(Relation::new(NA_LABEL, "no relation"));
    Ok((RelationSchema::new(relations, NA_LABEL)?, b.build()?))
}

/// `n` instances with gold drawn uniformly over positive relations, NA with
/// probability `na_fraction`.
pub fn synthetic_instances(schema: &RelationSchema, n: usize, na_fraction: f64, seed: u64) -> Vec<Instance> {
    let positives: Vec<&str> = schema.positive_relations().map(|r| r.name.as_str()).collect();
    let mut rng = derive_rng(seed, &[b"instances"]);
    (0..n)
        .map(|i| {
            let gold = if positives.is_empty() || rng.gen_bool(na_fraction) {
                schema.na_label().to_string()
            } else {
                positives[rng.gen_range(0..positives.len())].to_string()
            };
            Instance {
                id: format!("sim-{i:06}"),
                context: vec![format!("Synthetic passage {i} linking the head to the tail.")],
                head: format!("head {i}"),
                tail: format!("tail {i}"),
                gold: Some(gold),
                bag_id: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub branching: usize,
    pub depth: usize,
    pub instances: usize,
    pub na_fraction: f64,
    pub seed: u64,
    pub accuracy: AccuracyTable,
    pub ptv: PtvConfig,
    pub concurrency: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            branching: 4,
            depth: 5,
            instances: 5000,
            na_fraction: 0.0,
            seed: 42,
            accuracy: AccuracyTable::uniform(0.7, 0.9),
            ptv: PtvConfig::default(),
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimArm {
    /// Final-relation accuracy in percent.
    pub accuracy: f64,
    pub micro_f1: f64,
    pub levels: Vec<LevelDiagnostics>,
    pub stats: RunStats,
}

impl SimArm {
    fn from_traces(traces: &[InferenceTrace], tree: &RelationTree, stats: RunStats) -> Result<Self> {
        let records: Vec<_> = traces.iter().map(|t| t.to_record()).collect();
        let correct = traces.iter().filter(|t| t.gold.as_deref() == Some(&t.final_relation)).count();
        Ok(Self {
            accuracy: if traces.is_empty() { 0.0 } else { 100.0 * correct as f64 / traces.len() as f64 },
            micro_f1: micro_f1(&records, NA_LABEL),
            levels: level_diagnostics(traces, tree)?,
            stats,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub plain: SimArm,
    pub ptv: SimArm,
}

impl SimReport {
    /// PtV accuracy minus plain accuracy, in points.
    pub fn margin(&self) -> f64 {
        self.ptv.accuracy - self.plain.accuracy
    }

    /// PtV calls relative to plain calls.
    pub fn call_inflation(&self) -> f64 {
        if self.plain.stats.calls == 0 {
            0.0
        } else {
            self.ptv.stats.calls as f64 / self.plain.stats.calls as f64
        }
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "Synthetic workload: branching {}, depth {}, {} instances, base accuracy {:.2}, verification accuracy {:.2}, seed {}\n\n",
            c.branching, c.depth, c.instances, c.accuracy.base, c.accuracy.verification, c.seed
        );
        s.push_str(&format!(
            "{:<6} | {:>10} | {:>10} | {:>10} | {:>10} | {:>8} | {:>8}\n",
            "Level", "Acc plain", "Acc PtV", "EPR plain", "EPR PtV", "%WP pl.", "%WP PtV"
        ));
        for (p, v) in self.plain.levels.iter().zip(&self.ptv.levels) {
            s.push_str(&format!(
                "{:<6} | {:>10.2} | {:>10.2} | {:>10.2} | {:>10.2} | {:>8.2} | {:>8.2}\n",
                p.level, p.accuracy, v.accuracy, p.error_propagation_ratio, v.error_propagation_ratio, p.wp, v.wp
            ));
        }
        s.push_str(&format!(
            "\nFinal accuracy: plain {:.2}, PtV {:.2} (margin {:+.2})\n\n",
            self.plain.accuracy,
            self.ptv.accuracy,
            self.margin()
        ));
        s.push_str(&RunStats::header());
        s.push('\n');
        s.push_str(&self.plain.stats.row("plain"));
        s.push('\n');
        s.push_str(&self.ptv.stats.row("PtV"));
        s.push_str(&format!("\nPtV call inflation: {:.2}x\n", self.call_inflation()));
        s
    }
}

fn run_arm(tree: &RelationTree, data: &[Instance], sel: &SyntheticSelector, ptv: PtvConfig, cfg: &SimConfig) -> Result<SimArm> {
    let run = RunConfig {
        ptv,
        concurrency: cfg.concurrency,
        skip_errors: false,
        scores: false,
    };
    let out = run_dataset(data, tree, sel, &run)?;
    SimArm::from_traces(&out.traces, tree, out.stats)
}

/// Plain and PtV over the same instances and selector seed.
pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    cfg.accuracy.validate()?;
    let (schema, tree) = synthetic_tree(cfg.branching, cfg.depth)?;
    let data = synthetic_instances(&schema, cfg.instances, cfg.na_fraction, cfg.seed);
    let sel = SyntheticSelector::new(&tree, cfg.accuracy.clone(), cfg.seed)?;
    let plain = run_arm(&tree, &data, &sel, PtvConfig::off(), cfg)?;
    let ptv = run_arm(
        &tree,
        &data,
        &sel,
        PtvConfig {
            enabled: true,
            ..cfg.ptv.clone()
        },
        cfg,
    )?;
    Ok(SimReport {
        config: cfg.clone(),
        plain,
        ptv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub accuracy: f64,
    pub calls_per_instance: f64,
    pub input_tokens_per_call: f64,
}

/// PtV accuracy and cost for each verification breadth in `ks`.
pub fn k_sweep(cfg: &SimConfig, ks: &[usize]) -> Result<Vec<KRow>> {
    let (schema, tree) = synthetic_tree(cfg.branching, cfg.depth)?;
    let data = synthetic_instances(&schema, cfg.instances, cfg.na_fraction, cfg.seed);
    let sel = SyntheticSelector::new(&tree, cfg.accuracy.clone(), cfg.seed)?;
    ks.iter()
        .map(|&k| {
            let arm = run_arm(
                &tree,
                &data,
                &sel,
                PtvConfig {
                    enabled: true,
                    k,
                    ..cfg.ptv.clone()
                },
                cfg,
            )?;
            Ok(KRow {
                k,
                accuracy: arm.accuracy,
                calls_per_instance: arm.stats.calls as f64 / data.len().max(1) as f64,
                input_tokens_per_call: arm.stats.input_tokens_per_call(),
            })
        })
        .collect()
}

pub fn render_k_sweep(rows: &[KRow]) -> String {
    let mut s = format!("{:>3} | {:>9} | {:>14} | {:>14}\n", "k", "Accuracy", "Calls/instance", "Input Tok./call");
    for r in rows {
        s.push_str(&format!(
            "{:>3} | {:>9.2} | {:>14.2} | {:>14.2}\n",
            r.k, r.accuracy, r.calls_per_instance, r.input_tokens_per_call
        ));
    }
    s
}
