//! Metrics, bag aggregation, and per-level diagnostics.

mod diagnostics;
mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceTrace;
use crate::tree::RelationTree;

pub use diagnostics::{level_diagnostics, render_diagnostics, trace_outcomes, LevelDiagnostics, Outcome};
pub use metrics::{
    auc, bag_aggregate, binary_counts, binary_f1, max_f1, micro_counts, micro_f1, paired_bootstrap, positive_score,
    pr_curve, precision_at_k, BootstrapResult, Counts, CurvePoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub predicted: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_id: Option<String>,
    /// Id of the trace this record was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(format!("record '{}': confidence outside [0, 1]", self.instance_id)));
        }
        if let Some(d) = &self.distribution {
            if d.values().any(|v| !(0.0..=1.0).contains(v)) || (d.values().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "record '{}': distribution must be unit scores summing to 1",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }
}

/// Reads JSON Lines of records or of traces (converted to records).
pub fn load_records(bytes: &[u8]) -> Result<Vec<PredictionRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::validation(format!("records are not UTF-8: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        let line_err = |e: serde_json::Error| Error::Line {
            line: i + 1,
            message: e.to_string(),
        };
        let rec = if v.get("levels").is_some() {
            serde_json::from_value::<InferenceTrace>(v).map_err(line_err)?.to_record()
        } else {
            serde_json::from_value::<PredictionRecord>(v).map_err(line_err)?
        };
        rec.validate().map_err(|e| Error::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_traces(bytes: &[u8]) -> Result<Vec<InferenceTrace>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::validation(format!("traces are not UTF-8: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializes"));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub records: usize,
    pub micro_f1: f64,
    pub binary_f1: f64,
    pub max_f1: f64,
    pub auc: f64,
    pub p_at_k: BTreeMap<usize, f64>,
}

impl MetricSet {
    pub fn compute(records: &[PredictionRecord], na: &str, ks: &[usize]) -> Self {
        Self {
            records: records.len(),
            micro_f1: micro_f1(records, na),
            binary_f1: binary_f1(records, na),
            max_f1: max_f1(records, na),
            auc: auc(records, na),
            p_at_k: ks.iter().map(|k| (*k, precision_at_k(records, na, *k))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub na_label: String,
    pub ks: Vec<usize>,
    pub bag: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            na_label: "NA".into(),
            ks: vec![500, 1000],
            bag: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub na_label: String,
    pub path: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<LevelDiagnostics>>,
    /// Notes about degenerate inputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn new(records: &[PredictionRecord], opts: &EvalOptions) -> Result<Self> {
        let na = opts.na_label.as_str();
        let mut flags = Vec::new();
        let missing = records.iter().filter(|r| r.gold.is_none()).count();
        if missing > 0 {
            flags.push(format!("{missing} records without gold were ignored"));
        }
        if !records.iter().any(|r| r.gold.as_deref().is_some_and(|g| g != na)) {
            flags.push("no positive gold labels; F1 is 0 by convention".into());
        }
        let bag = if opts.bag {
            Some(MetricSet::compute(&bag_aggregate(records, na)?, na, &opts.ks))
        } else {
            None
        };
        Ok(Self {
            na_label: opts.na_label.clone(),
            path: MetricSet::compute(records, na, &opts.ks),
            bag,
            levels: None,
            flags,
        })
    }

    /// Adds per-level diagnostics computed from traces.
    pub fn with_diagnostics(mut self, traces: &[InferenceTrace], tree: &RelationTree) -> Result<Self> {
        let rows = level_diagnostics(traces, tree)?;
        for r in rows.iter().filter(|r| !r.ratio_defined) {
            self.flags.push(format!("level {}: no misclassification, ratio reported as 0", r.level));
        }
        self.levels = Some(rows);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let table = |s: &mut String, title: &str, m: &MetricSet| {
            s.push_str(&format!("{title} ({} records)\n", m.records));
            s.push_str(&format!("{:<10} | {:>9} | {:>9}\n", "", "micro F1", "binary F1"));
            s.push_str(&format!("{:<10} | {:>9.2} | {:>9.2}\n", "score", m.micro_f1, m.binary_f1));
            let mut head = format!("{:>8} | {:>8}", "max F1", "AUC");
            let mut row = format!("{:>8.2} | {:>8.2}", m.max_f1, m.auc);
            for (k, v) in &m.p_at_k {
                head.push_str(&format!(" | {:>8}", format!("P@{k}")));
                row.push_str(&format!(" | {v:>8.2}"));
            }
            s.push_str(&format!("{head}\n{row}\n\n"));
        };
        table(&mut s, "Path level", &self.path);
        if let Some(b) = &self.bag {
            table(&mut s, "Bag level", b);
        }
        if let Some(rows) = &self.levels {
            s.push_str("Per-level diagnostics\n");
            s.push_str(&render_diagnostics(rows));
            s.push('\n');
        }
        for f in &self.flags {
            s.push_str(&format!("note: {f}\n"));
        }
        s
    }
}
