//! Relation-extraction metrics over prediction records. Percentages
//! throughout; any ratio with a zero denominator is 0.

use std::collections::BTreeMap;

use rand::Rng;

use super::PredictionRecord;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 as a fraction.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, pred: &str, gold: &str, na: &str) {
        let (pp, gp) = (pred != na, gold != na);
        if pp && pred == gold {
            self.tp += 1;
            return;
        }
        if pp {
            self.fp += 1;
        }
        if gp {
            self.fn_ += 1;
        }
    }
}

fn gold_pairs<'a>(records: &'a [PredictionRecord]) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
    records
        .iter()
        .filter_map(|r| Some((r.predicted.as_str(), r.gold.as_deref()?)))
}

/// Counts over positive classes; NA is never a true positive.
pub fn micro_counts(records: &[PredictionRecord], na: &str) -> Counts {
    let mut c = Counts::default();
    for (p, g) in gold_pairs(records) {
        c.add(p, g, na);
    }
    c
}

/// Records without gold are ignored.
pub fn micro_f1(records: &[PredictionRecord], na: &str) -> f64 {
    100.0 * micro_counts(records, na).f1()
}

pub fn binary_counts(records: &[PredictionRecord], na: &str) -> Counts {
    let mut c = Counts::default();
    for (p, g) in gold_pairs(records) {
        match (p != na, g != na) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

pub fn binary_f1(records: &[PredictionRecord], na: &str) -> f64 {
    100.0 * binary_counts(records, na).f1()
}

/// The positive relation a record would predict above threshold, with its
/// score: the top positive of the distribution, else the predicted relation
/// with its confidence. None when the record can only predict NA.
pub fn positive_score<'a>(r: &'a PredictionRecord, na: &str) -> Option<(&'a str, f64)> {
    match &r.distribution {
        Some(d) => d
            .iter()
            .filter(|(k, _)| k.as_str() != na)
            .fold(None, |best: Option<(&str, f64)>, (k, v)| match best {
                Some((_, bv)) if bv >= *v => best,
                _ => Some((k.as_str(), *v)),
            }),
        None if r.predicted != na => Some((r.predicted.as_str(), r.confidence)),
        None => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Records scoring at or above this predict their positive relation.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// Micro F1 as a fraction.
    pub f1: f64,
}

/// Precision-recall points for every distinct positive score, highest
/// threshold first.
pub fn pr_curve(records: &[PredictionRecord], na: &str) -> Vec<CurvePoint> {
    let mut scored: Vec<(f64, bool, bool)> = Vec::new();
    let mut gold_pos = 0usize;
    for r in records {
        let Some(gold) = r.gold.as_deref() else { continue };
        if gold != na {
            gold_pos += 1;
        }
        if let Some((rel, s)) = positive_score(r, na) {
            scored.push((s, rel == gold, gold != na));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            predicted += 1;
            tp += scored[i].1 as usize;
            i += 1;
        }
        let c = Counts {
            tp,
            fp: predicted - tp,
            fn_: gold_pos - tp,
        };
        points.push(CurvePoint {
            threshold: t,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        });
    }
    points
}

/// Peak micro F1 over all thresholds, including the all-NA one.
pub fn max_f1(records: &[PredictionRecord], na: &str) -> f64 {
    100.0 * pr_curve(records, na).iter().map(|p| p.f1).fold(0.0, f64::max)
}

/// Area under the precision-recall curve by the trapezoid rule over recall,
/// anchored at recall 0 with the first point's precision.
pub fn auc(records: &[PredictionRecord], na: &str) -> f64 {
    let pts = pr_curve(records, na);
    let Some(first) = pts.first() else { return 0.0 };
    let (mut area, mut prev) = (0.0, (0.0, first.precision));
    for p in &pts {
        area += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
        prev = (p.recall, p.precision);
    }
    100.0 * area
}

/// Precision among the `k` most confident positive predictions, ties by
/// instance id.
pub fn precision_at_k(records: &[PredictionRecord], na: &str, k: usize) -> f64 {
    let mut pos: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| r.gold.is_some() && r.predicted != na)
        .collect();
    pos.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.instance_id.cmp(&b.instance_id)));
    let top = &pos[..k.min(pos.len())];
    let hits = top.iter().filter(|r| r.gold.as_deref() == Some(r.predicted.as_str())).count();
    100.0 * ratio(hits, top.len())
}

/// One record per bag: the most frequent positive prediction, ties by
/// highest confidence then name; NA when every path predicts NA.
pub fn bag_aggregate(records: &[PredictionRecord], na: &str) -> Result<Vec<PredictionRecord>> {
    let mut bags: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        let bag = r
            .bag_id
            .as_deref()
            .ok_or_else(|| Error::validation(format!("record '{}' has no bag_id", r.instance_id)))?;
        bags.entry(bag).or_default().push(r);
    }
    let mut out = Vec::new();
    for (bag, paths) in bags {
        let gold = paths[0].gold.clone();
        if paths.iter().any(|p| p.gold != gold) {
            return Err(Error::validation(format!("bag '{bag}' has inconsistent gold labels")));
        }
        let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for p in paths.iter().filter(|p| p.predicted != na) {
            let e = votes.entry(p.predicted.as_str()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 = e.1.max(p.confidence);
        }
        let (predicted, confidence) = votes
            .iter()
            .fold(None, |best: Option<(&str, (usize, f64))>, (k, v)| match best {
                Some((_, b)) if (b.0, b.1) >= (v.0, v.1) => best,
                _ => Some((k, *v)),
            })
            .map(|(k, v)| (k.to_string(), v.1))
            .unwrap_or_else(|| (na.to_string(), paths.iter().map(|p| p.confidence).fold(0.0, f64::max)));
        out.push(PredictionRecord {
            instance_id: bag.to_string(),
            predicted,
            gold,
            confidence,
            distribution: None,
            bag_id: Some(bag.to_string()),
            trace: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BootstrapResult {
    /// Metric of `a` minus metric of `b` on the full paired set.
    pub delta: f64,
    /// Fraction of resamples where `a` did not beat `b`.
    pub p_value: f64,
    pub resamples: usize,
}

/// Paired bootstrap over records aligned by instance id.
pub fn paired_bootstrap(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    metric: impl Fn(&[PredictionRecord]) -> f64,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let index: BTreeMap<&str, &PredictionRecord> = b.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    if index.len() != a.len() || a.iter().any(|r| !index.contains_key(r.instance_id.as_str())) {
        return Err(Error::validation("bootstrap needs two record sets over the same instances"));
    }
    if a.is_empty() {
        return Err(Error::validation("bootstrap needs at least one record"));
    }
    let pairs: Vec<(&PredictionRecord, &PredictionRecord)> = a.iter().map(|r| (r, index[r.instance_id.as_str()])).collect();
    let delta = metric(a) - metric(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    let mut rng = derive_rng(seed, &[b"bootstrap"]);
    let n = pairs.len();
    let mut not_better = 0;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (x, y) = pairs[rng.gen_range(0..n)];
            sa.push(x.clone());
            sb.push(y.clone());
        }
        if metric(&sa) <= metric(&sb) {
            not_better += 1;
        }
    }
    Ok(BootstrapResult {
        delta,
        p_value: ratio(not_better, resamples),
        resamples,
    })
}
