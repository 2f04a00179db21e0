//! Replays canned selections keyed on (instance id, option-set hash).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{option_hash, Origin, SelectRequest, Selection, Selector, SelectorTemplate};
use crate::error::{Error, Result};
use crate::gateway::{approx_token_count, Usage};

/// One scripted answer. The option set is identified by `option_hash` or,
/// for hand-written scripts, by the literal `options` names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    /// Restricts the entry to one origin; otherwise it answers any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    pub best: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suboptimal: Option<String>,
    /// Ranks beyond the second, for top-k prediction steps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub further: Vec<String>,
    /// Option name → score; normalized over the option set when used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<HashMap<String, f64>>,
}

pub struct ScriptedSelector {
    entries: HashMap<(String, String, Option<Origin>), ScriptEntry>,
    template: SelectorTemplate,
}

impl ScriptedSelector {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self> {
        let mut map = HashMap::new();
        for e in entries {
            let hash = match (&e.option_hash, &e.options) {
                (Some(h), _) => h.clone(),
                (None, Some(names)) => option_hash(names),
                (None, None) => {
                    return Err(Error::validation(format!(
                        "script entry for '{}' needs option_hash or options",
                        e.instance_id
                    )))
                }
            };
            let key = (e.instance_id.clone(), hash, e.origin);
            if map.insert(key.clone(), e).is_some() {
                return Err(Error::validation(format!(
                    "duplicate script entry for instance '{}', option hash {}",
                    key.0, key.1
                )));
            }
        }
        Ok(Self {
            entries: map,
            template: SelectorTemplate::default(),
        })
    }

    /// Reads a JSON array or JSON Lines of [`ScriptEntry`].
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::validation(format!("script is not UTF-8: {e}")))?;
        let entries: Vec<ScriptEntry> = if text.trim_start().starts_with('[') {
            serde_json::from_str(text)?
        } else {
            let mut v = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                v.push(serde_json::from_str(line).map_err(|e| Error::Line {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
            v
        };
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Selector for ScriptedSelector {
    fn id(&self) -> &str {
        "scripted"
    }

    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        let hash = req.options.hash();
        let id = req.instance.id.clone();
        let entry = self
            .entries
            .get(&(id.clone(), hash.clone(), Some(req.options.origin)))
            .or_else(|| self.entries.get(&(id, hash.clone(), None)))
            .ok_or_else(|| {
                Error::backend(format!(
                    "no script entry for instance '{}', {} options {:?} (hash {hash})",
                    req.instance.id, req.options.origin, req.options.names
                ))
            })?;
        let resolve = |name: &str| {
            req.options.find_name(name).ok_or_else(|| {
                Error::backend(format!("scripted answer '{name}' is not among {:?}", req.options.names))
            })
        };
        let mut ranked = vec![resolve(&entry.best)?];
        if let Some(s) = &entry.suboptimal {
            ranked.push(resolve(s)?);
            for f in &entry.further {
                ranked.push(resolve(f)?);
            }
        }
        ranked.truncate(req.want.max(1));
        let prompt = super::render_prompt(req.instance, req.options, &self.template, None);
        let answer: Vec<&str> = ranked
            .iter()
            .map(|id| req.options.names[req.options.position(*id).expect("resolved")].as_str())
            .collect();
        let usage = Usage {
            input_tokens: approx_token_count(&prompt) as u64,
            output_tokens: approx_token_count(&answer.join("; ")) as u64 + 2 * answer.len() as u64,
        };
        let sel = match &entry.scores {
            Some(scores) => {
                let raw: Vec<f64> = req
                    .options
                    .names
                    .iter()
                    .map(|n| {
                        scores
                            .iter()
                            .find(|(k, _)| k.eq_ignore_ascii_case(n))
                            .map(|(_, v)| v.max(0.0))
                            .unwrap_or(0.0)
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    return Err(Error::backend(format!("scripted scores for '{}' sum to zero", req.instance.id)));
                }
                Selection::with_scores(req.options, &ranked, raw.iter().map(|x| x / total).collect(), usage)
            }
            None => {
                let mut s = Selection::from_ranked(req.options, &ranked, usage);
                s.per_option_scores = None;
                s
            }
        };
        sel.check(req.options, req.want)?;
        Ok(sel)
    }
}
