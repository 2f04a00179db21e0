//! Prompt-driven selector over an [`LlmGateway`].

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{render_options, render_prompt, OptionSet, SelectRequest, Selection, Selector, SelectorTemplate};
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Completion, LlmGateway, Usage};
use crate::tree::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSelectorConfig {
    /// Prompt budget in estimated tokens; the context is cut to fit.
    pub max_prompt_tokens: Option<usize>,
    /// Request token log-probabilities and derive per-option scores.
    pub logprobs: bool,
    pub temperature: f32,
}

impl Default for LlmSelectorConfig {
    fn default() -> Self {
        Self {
            max_prompt_tokens: None,
            logprobs: true,
            temperature: 0.0,
        }
    }
}

pub struct LlmSelector<G> {
    gateway: G,
    template: SelectorTemplate,
    cfg: LlmSelectorConfig,
    id: String,
}

impl<G: LlmGateway> LlmSelector<G> {
    pub fn new(gateway: G, template: SelectorTemplate, cfg: LlmSelectorConfig) -> Self {
        let id = format!("llm:{}", gateway.id());
        Self {
            gateway,
            template,
            cfg,
            id,
        }
    }
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn rank_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(\d+)\s*(?:st|nd|rd|th)\s*:\s*([^;\n]+)").expect("valid regex"))
}

fn numbering_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+\s*[.)]\s*").expect("valid regex"))
}

fn resolve(answer: &str, options: &OptionSet) -> Option<NodeId> {
    let cleaned = answer
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '<' | '>'))
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | '"' | '\'' | '`' | '*' | '>'));
    options
        .find_name(cleaned)
        .or_else(|| options.find_name(&numbering_re().replace(cleaned, "")))
}

/// Ranked option ids from a `1st: <name>; 2nd: <name>` answer, plus the byte
/// offset where the first answer starts.
fn parse_with_offset(text: &str, options: &OptionSet, want: usize) -> std::result::Result<(Vec<NodeId>, usize), String> {
    let mut answers: Vec<(usize, &str, usize)> = rank_re()
        .captures_iter(text)
        .filter_map(|c| {
            let rank = c[1].parse::<usize>().ok()?;
            let m = c.get(2).expect("group");
            let lead = m.as_str().len() - m.as_str().trim_start().len();
            Some((rank, m.as_str(), m.start() + lead))
        })
        .collect();
    if answers.is_empty() {
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let start = line.as_ptr() as usize - text.as_ptr() as usize;
        answers.push((1, line, start + line.len() - line.trim_start().len()));
    }
    answers.sort_by_key(|a| a.0);
    let need = want.max(1).min(options.len());
    let mut ranked = Vec::new();
    for (rank, answer, _) in &answers {
        if ranked.len() >= need {
            break;
        }
        let id = resolve(answer, options).ok_or_else(|| format!("{} answer \"{}\" is not one of the options", ordinal(*rank), answer.trim()))?;
        if ranked.contains(&id) {
            return Err(format!("\"{}\" is ranked twice", answer.trim()));
        }
        ranked.push(id);
    }
    if ranked.len() < need {
        return Err(format!("expected {need} ranked options, found {}", ranked.len()));
    }
    Ok((ranked, answers[0].2))
}

/// Ranked option ids from a `1st: <name>; 2nd: <name>` answer.
pub fn parse_ranked(text: &str, options: &OptionSet, want: usize) -> std::result::Result<Vec<NodeId>, String> {
    parse_with_offset(text, options, want).map(|(r, _)| r)
}

/// Per-option scores from the token alternatives where the first answer
/// begins: each alternative's probability goes to the options whose name
/// starts with it, split evenly.
fn option_scores(c: &Completion, offset: usize, options: &OptionSet) -> Option<Vec<f64>> {
    let tokens = c.logprobs.as_ref()?;
    let mut pos = 0usize;
    let tok = tokens.iter().find(|t| {
        pos += t.token.len();
        pos > offset
    })?;
    let mut alts = tok.top.clone();
    if !alts.iter().any(|(t, _)| *t == tok.token) {
        alts.push((tok.token.clone(), tok.logprob));
    }
    let lower: Vec<String> = options.names.iter().map(|n| n.to_lowercase()).collect();
    let mut scores = vec![0.0; options.len()];
    for (t, lp) in alts {
        let t = t.trim().to_lowercase();
        if t.is_empty() {
            continue;
        }
        let hits: Vec<usize> = (0..lower.len()).filter(|&i| lower[i].starts_with(&t)).collect();
        for &i in &hits {
            scores[i] += lp.exp() / hits.len() as f64;
        }
    }
    let total: f64 = scores.iter().sum();
    (total > 0.0).then(|| scores.into_iter().map(|s| s / total).collect())
}

impl<G: LlmGateway> Selector for LlmSelector<G> {
    fn id(&self) -> &str {
        &self.id
    }

    fn select(&self, req: &SelectRequest<'_>) -> Result<Selection> {
        let opts = req.options;
        let want = req.want.max(1).min(opts.len());
        let mut prompt = render_prompt(req.instance, opts, &self.template, self.cfg.max_prompt_tokens);
        if want > 2 {
            let form: Vec<String> = (1..=want).map(|i| format!("{}: <option name>", ordinal(i))).collect();
            prompt.push_str(&format!("\nRank the top {want} options in the form:\n{}\n", form.join("; ")));
        }
        let mut chat = ChatRequest::prompt(prompt, format!("select:{}", opts.origin));
        chat.temperature = self.cfg.temperature;
        chat.logprobs = self.cfg.logprobs;
        let mut usage = Usage::default();
        for attempt in 0..2 {
            let c = self.gateway.complete(&chat)?;
            usage += c.usage;
            match parse_with_offset(&c.text, opts, want) {
                Ok((ranked, offset)) => {
                    let sel = match option_scores(&c, offset, opts) {
                        Some(scores) => Selection::with_scores(opts, &ranked, scores, usage),
                        None => {
                            let mut s = Selection::from_ranked(opts, &ranked, usage);
                            s.per_option_scores = None;
                            s
                        }
                    };
                    sel.check(opts, want)?;
                    return Ok(sel);
                }
                Err(e) if attempt == 0 => {
                    chat.messages.push(ChatMessage::assistant(c.text));
                    chat.messages.push(ChatMessage::user(format!(
                        "{e}. The answer must be one of:\n{}\nReply in the form: 1st: <option name>; 2nd: <option name>",
                        render_options(opts)
                    )));
                }
                Err(e) => {
                    return Err(Error::RepairExhausted {
                        message: format!("selector answer for '{}': {e}", req.instance.id),
                        attempts: 2,
                        raw: c.text,
                    })
                }
            }
        }
        unreachable!("the second attempt always returns")
    }
}
