//! Dataset-level inference on a worker pool.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify, score_distribution, InferenceTrace, PtvConfig};
use crate::error::{Error, Result};
use crate::gateway::{group_thousands, Usage};
use crate::schema::Instance;
use crate::selector::Selector;
use crate::tree::RelationTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub ptv: PtvConfig,
    pub concurrency: usize,
    /// Record failures and continue instead of aborting.
    pub skip_errors: bool,
    /// Also compute a relation score distribution per instance.
    pub scores: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ptv: PtvConfig::default(),
            concurrency: 8,
            skip_errors: false,
            scores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut v = ms.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Self {
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub instances: usize,
    pub failed: usize,
    pub calls: usize,
    pub usage: Usage,
    pub latency: LatencyStats,
    pub wall_ms: f64,
}

impl RunStats {
    pub fn input_tokens_per_call(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.usage.input_tokens as f64 / self.calls as f64
        }
    }

    /// One row in the `Input Tok. | #LLM Calls | Latency` layout.
    pub fn row(&self, label: &str) -> String {
        format!(
            "{:<12} | {:>10.2} | {:>10} | {:>9.2} ms",
            label,
            self.input_tokens_per_call(),
            group_thousands(self.calls as u64),
            self.latency.mean_ms
        )
    }

    pub fn header() -> String {
        format!("{:<12} | {:>10} | {:>10} | {:>12}", "Run", "Input Tok.", "#LLM Calls", "Latency")
    }

    pub fn render(&self, label: &str) -> String {
        format!("{}\n{}\n", Self::header(), self.row(label))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Traces of the instances that succeeded, in input order.
    pub traces: Vec<InferenceTrace>,
    pub failures: Vec<Failure>,
    pub stats: RunStats,
}

fn one<S: Selector + ?Sized>(inst: &Instance, tree: &RelationTree, selector: &S, cfg: &RunConfig) -> Result<InferenceTrace> {
    let mut trace = classify(inst, tree, selector, &cfg.ptv)?;
    if cfg.scores {
        let d = score_distribution(inst, tree, selector)?;
        trace.calls += d.calls;
        trace.usage += d.usage;
        trace.distribution = Some(d.scores);
    }
    Ok(trace)
}

/// Classifies every instance. Results are in input order whatever the
/// concurrency; latency is measured per instance and kept out of traces.
pub fn run_dataset<S: Selector + ?Sized>(
    instances: &[Instance],
    tree: &RelationTree,
    selector: &S,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    cfg.ptv.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency.max(1))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let results: Vec<(Result<InferenceTrace>, f64)> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                let t = Instant::now();
                let r = one(inst, tree, selector, cfg).map_err(|e| Error::at_instance(&inst.id, e));
                (r, t.elapsed().as_secs_f64() * 1000.0)
            })
            .collect()
    });
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut latencies = Vec::new();
    for (inst, (r, ms)) in instances.iter().zip(results) {
        match r {
            Ok(t) => {
                latencies.push(ms);
                traces.push(t);
            }
            Err(e) if cfg.skip_errors => {
                log::warn!("{e}");
                failures.push(Failure {
                    instance_id: inst.id.clone(),
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let mut usage = Usage::default();
    for t in &traces {
        usage += t.usage;
    }
    let stats = RunStats {
        instances: instances.len(),
        failed: failures.len(),
        calls: traces.iter().map(|t| t.calls).sum(),
        usage,
        latency: LatencyStats::from_samples(&latencies),
        wall_ms,
    };
    Ok(RunOutput {
        traces,
        failures,
        stats,
    })
}
