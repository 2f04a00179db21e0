//! The prediction interface used by every inference step.
//!
//! A [`Selector`] receives an instance and an ordered [`OptionSet`] and
//! returns a ranked [`Selection`]. Backends:
//! - [`LlmSelector`] prompts a gateway and parses `1st: <name>; 2nd: <name>`,
//! - [`ScriptedSelector`] replays answers keyed on (instance id, option hash),
//! - [`SyntheticSelector`] draws gold-aware answers at configured accuracies,
//! - [`FnSelector`] wraps a closure.

mod llm;
mod scripted;
mod synthetic;

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{approx_token_count, Usage, UsageLedger};
use crate::schema::Instance;
use crate::tree::{NodeId, RelationTree};

pub use llm::{parse_ranked, LlmSelector, LlmSelectorConfig};
pub use scripted::{ScriptEntry, ScriptedSelector};
pub use synthetic::{AccuracyTable, LevelAccuracy, SyntheticSelector};

/// Where an option set comes from: the base set of a level, or verification view `n` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Base,
    View(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Base => f.write_str("base"),
            Origin::View(n) => write!(f, "v{n}"),
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "base" {
            return Ok(Origin::Base);
        }
        s.strip_prefix('v')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n >= 1)
            .map(Origin::View)
            .ok_or_else(|| Error::validation(format!("unknown option-set origin '{s}'")))
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSet {
    pub origin: Origin,
    pub ids: Vec<NodeId>,
    pub names: Vec<String>,
}

impl OptionSet {
    pub fn new(tree: &RelationTree, ids: Vec<NodeId>, origin: Origin) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::validation("option set is empty"));
        }
        for (i, id) in ids.iter().enumerate() {
            if tree.get(*id).is_none() {
                return Err(Error::validation(format!("option {id} is not a tree node")));
            }
            if ids[..i].contains(id) {
                return Err(Error::validation(format!("option {id} listed twice")));
            }
        }
        let names = ids.iter().map(|id| tree.name(*id).to_string()).collect();
        Ok(Self { origin, ids, names })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.ids.contains(&id)
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    /// First option whose display name equals `name`, ignoring ASCII case.
    pub fn find_name(&self, name: &str) -> Option<NodeId> {
        let name = name.trim();
        self.names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| self.ids[i])
    }

    /// 16 hex chars of SHA-256 over the display names in order.
    pub fn hash(&self) -> String {
        option_hash(&self.names)
    }
}

pub fn option_hash<S: AsRef<str>>(names: &[S]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_ref().as_bytes());
        h.update([0x1f]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suboptimal: Option<NodeId>,
    /// Ranks 3 and below, when more than two were requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub further: Vec<NodeId>,
    pub confidence_best: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_suboptimal: Option<f64>,
    /// Scores aligned with the option order, summing to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_option_scores: Option<Vec<f64>>,
    /// Confidences are rank-derived defaults rather than backend probabilities.
    #[serde(default)]
    pub synthetic_confidence: bool,
    #[serde(default)]
    pub usage: Usage,
}

impl Selection {
    /// A selection whose confidences come from [`rank_default_scores`].
    pub fn from_ranked(options: &OptionSet, ranked: &[NodeId], usage: Usage) -> Self {
        let scores = rank_default_scores(options, ranked);
        let mut s = Self::with_scores(options, ranked, scores, usage);
        s.synthetic_confidence = true;
        s
    }

    /// A selection whose confidences are read off per-option scores.
    pub fn with_scores(options: &OptionSet, ranked: &[NodeId], scores: Vec<f64>, usage: Usage) -> Self {
        let score = |id: NodeId| options.position(id).map(|i| scores[i]).unwrap_or(0.0);
        Self {
            best: ranked[0],
            suboptimal: ranked.get(1).copied(),
            further: ranked.iter().skip(2).copied().collect(),
            confidence_best: score(ranked[0]),
            confidence_suboptimal: ranked.get(1).map(|id| score(*id)),
            per_option_scores: Some(scores),
            synthetic_confidence: false,
            usage,
        }
    }

    /// Forced choice from a one-option set.
    pub fn forced(options: &OptionSet) -> Self {
        Self {
            best: options.ids[0],
            suboptimal: None,
            further: Vec::new(),
            confidence_best: 1.0,
            confidence_suboptimal: None,
            per_option_scores: Some(vec![1.0]),
            synthetic_confidence: false,
            usage: Usage::default(),
        }
    }

    pub fn ranked(&self) -> Vec<NodeId> {
        let mut v = vec![self.best];
        v.extend(self.suboptimal);
        v.extend_from_slice(&self.further);
        v
    }

    /// Checks the contract against the options it answered.
    pub fn check(&self, options: &OptionSet, want: usize) -> Result<()> {
        let ranked = self.ranked();
        for (i, id) in ranked.iter().enumerate() {
            if !options.contains(*id) {
                return Err(Error::backend(format!("selected {id} is not among the options")));
            }
            if ranked[..i].contains(id) {
                return Err(Error::backend(format!("{id} ranked twice")));
            }
        }
        if !self.further.is_empty() && self.suboptimal.is_none() {
            return Err(Error::backend("ranks beyond 2 without a suboptimal"));
        }
        if ranked.len() < want.min(options.len()) {
            return Err(Error::backend(format!(
                "asked for {} ranked options, got {}",
                want.min(options.len()),
                ranked.len()
            )));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.confidence_best) || !self.confidence_suboptimal.is_none_or(unit) {
            return Err(Error::backend("confidence outside [0, 1]"));
        }
        if let Some(s) = &self.per_option_scores {
            if s.len() != options.len() || s.iter().any(|x| !unit(*x)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::backend("per-option scores must be one unit score per option summing to 1"));
            }
        }
        Ok(())
    }
}

/// 0.6 for the best, 0.3 for the suboptimal, the remaining mass shared by
/// the other options; renormalized when no other option exists.
pub fn rank_default_scores(options: &OptionSet, ranked: &[NodeId]) -> Vec<f64> {
    let top: Vec<NodeId> = ranked.iter().take(2).copied().collect();
    let others = options.ids.iter().filter(|id| !top.contains(id)).count();
    let leftover = 1.0 - if top.len() > 1 { 0.9 } else { 0.6 };
    let mut scores: Vec<f64> = options
        .ids
        .iter()
        .map(|id| match top.iter().position(|t| t == id) {
            Some(0) => 0.6,
            Some(_) => 0.3,
            None => leftover / others as f64,
        })
        .collect();
    let total: f64 = scores.iter().sum();
    scores.iter_mut().for_each(|s| *s /= total);
    scores
}

pub struct SelectRequest<'a> {
    pub instance: &'a Instance,
    pub options: &'a OptionSet,
    /// How many ranked options to return (1 = best only).
    pub want: usize,
    /// Tree level of the base options this call belongs to.
    pub level: usize,
    /// Per-instance call counter; keys per-call rng streams.
    pub call_index: usize,
}

pub trait Selector: Send + Sync {
    fn id(&self) -> &str;
    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection>;
}

impl<S: Selector + ?Sized> Selector for &S {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        (**self).select(req)
    }
}

impl<S: Selector + ?Sized> Selector for Box<S> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        (**self).select(req)
    }
}

/// Closure returning a ranked list; confidences are rank defaults.
pub struct FnSelector<F> {
    f: F,
}

impl<F> FnSelector<F>
where
    F: Fn(&SelectRequest<'_>) -> Result<Vec<NodeId>> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> Selector for FnSelector<F>
where
    F: Fn(&SelectRequest<'_>) -> Result<Vec<NodeId>> + Send + Sync,
{
    fn id(&self) -> &str {
        "fn"
    }

    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        let mut ranked = (self.f)(req)?;
        ranked.truncate(req.want.max(1));
        if ranked.is_empty() {
            return Err(Error::backend("selector returned no option"));
        }
        let s = Selection::from_ranked(req.options, &ranked, Usage::default());
        s.check(req.options, req.want)?;
        Ok(s)
    }
}

/// Records every selection's usage in a ledger, tagged by option-set origin.
pub struct MeteredSelector<'a, S: ?Sized> {
    inner: &'a S,
    ledger: &'a UsageLedger,
}

impl<'a, S: Selector + ?Sized> MeteredSelector<'a, S> {
    pub fn new(inner: &'a S, ledger: &'a UsageLedger) -> Self {
        Self { inner, ledger }
    }
}

impl<S: Selector + ?Sized> Selector for MeteredSelector<'_, S> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        let s = self.inner.select(req)?;
        self.ledger.record(self.inner.id(), &req.options.origin.to_string(), s.usage);
        Ok(s)
    }
}

/// A selector prompt with `{context}`, `{head}`, `{tail}` and `{options}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorTemplate {
    text: String,
}

fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(context|head|tail|options)\}").expect("valid regex"))
}

impl Default for SelectorTemplate {
    fn default() -> Self {
        Self {
            text: crate::prompts::CLASSIFY_TEMPLATE.to_string(),
        }
    }
}

impl SelectorTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for slot in ["context", "head", "tail", "options"] {
            if !text.contains(&format!("{{{slot}}}")) {
                return Err(Error::validation(format!("selector template lacks the {{{slot}}} placeholder")));
            }
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn fill(&self, context: &str, head: &str, tail: &str, options: &str) -> String {
        slot_re()
            .replace_all(&self.text, |c: &regex::Captures<'_>| match &c[1] {
                "context" => context.to_string(),
                "head" => head.to_string(),
                "tail" => tail.to_string(),
                _ => options.to_string(),
            })
            .into_owned()
    }
}

pub fn render_options(options: &OptionSet) -> String {
    let mut out = String::new();
    for (i, name) in options.names.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{}. {name}", i + 1));
    }
    out
}

fn render_context(docs: &[String]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Document {}: {}", i + 1, d.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid regex"))
}

/// Fill the template. With a token budget, the context is cut from its
/// end until the prompt fits; entities and options are never cut.
pub fn render_prompt(
    instance: &Instance,
    options: &OptionSet,
    template: &SelectorTemplate,
    max_tokens: Option<usize>,
) -> String {
    let opts = render_options(options);
    let context = render_context(&instance.context);
    let full = template.fill(&context, &instance.head, &instance.tail, &opts);
    let Some(budget) = max_tokens else { return full };
    if approx_token_count(&full) <= budget {
        return full;
    }
    let overhead = approx_token_count(&template.fill("", &instance.head, &instance.tail, &opts));
    let keep = budget.saturating_sub(overhead);
    let cut = token_re()
        .find_iter(&context)
        .nth(keep.saturating_sub(1))
        .filter(|_| keep > 0)
        .map(|m| m.end())
        .unwrap_or(0);
    template.fill(&context[..cut], &instance.head, &instance.tail, &opts)
}

#[cfg(test)]
mod tests;
