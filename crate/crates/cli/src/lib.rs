//! `hierel` command surface: tree construction, inference, training-data
//! expansion, evaluation and offline simulation. Every command writes a run
//! manifest beside its primary output.

pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hierel_core::builder::{score_coherence, LlmTreeBuilder};
use hierel_core::eval::{
    binary_f1, load_records, load_traces, max_f1, micro_f1, paired_bootstrap, to_jsonl, EvalOptions, EvalReport,
    PredictionRecord,
};
use hierel_core::expand::{expand_dataset, PathPolicy};
use hierel_core::gateway::{LlmGateway, MeteredGateway, RemoteGateway, ScriptedGateway, UsageLedger};
use hierel_core::inference::{run_dataset, PtvConfig, RunConfig, RunOutput};
use hierel_core::prompts::PromptSet;
use hierel_core::schema::{load_dataset, load_schema, Instance, RelationSchema};
use hierel_core::selector::{
    LlmSelector, MeteredSelector, ScriptedSelector, Selector, SelectorTemplate, SyntheticSelector,
};
use hierel_core::sim::{k_sweep, render_k_sweep, simulate, SimConfig};
use hierel_core::tree::RelationTree;
use hierel_core::{Error, Result};

pub use config::Config;
pub use manifest::{default_manifest_path, write_atomic, FileDigest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "hierel", version, about = "Hierarchical relation classification toolkit")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Manifest path; defaults to `<output>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build a relation tree from a schema.
    BuildTree(BuildTreeArgs),
    /// Classify a dataset against a tree.
    Infer(InferArgs),
    /// Expand a labelled dataset into level-wise training prompts.
    ExpandTrain(ExpandArgs),
    /// Score prediction records or traces.
    Evaluate(EvaluateArgs),
    /// Paired plain/PtV run on a synthetic workload.
    Simulate(SimulateArgs),
    /// Paired bootstrap between two record files.
    Bootstrap(BootstrapArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildTree(_) => "build-tree",
            Command::Infer(_) => "infer",
            Command::ExpandTrain(_) => "expand-train",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
            Command::Bootstrap(_) => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMode {
    Levelwise,
    Singleshot,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildTreeArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "levelwise")]
    pub mode: BuildMode,
    /// Scripted gateway rules (JSON); otherwise the configured remote backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Per-call usage records (JSON Lines).
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Build events (JSON Lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also score parent/child coherence.
    #[arg(long)]
    pub coherence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Synthetic,
    Scripted,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args, Serialize)]
pub struct PtvArgs {
    /// Prediction then verification.
    #[arg(long, value_enum)]
    pub ptv: Option<Switch>,
    /// Verification breadth.
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum verification rounds per level.
    #[arg(long = "max-rounds")]
    pub max_rounds: Option<usize>,
    /// Aligned votes needed to accept when k = 2.
    #[arg(long)]
    pub threshold: Option<usize>,
}

impl PtvArgs {
    fn apply(&self, mut cfg: PtvConfig) -> PtvConfig {
        if let Some(s) = self.ptv {
            cfg.enabled = s == Switch::On;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.max_rounds {
            cfg.max_rounds = m;
        }
        if let Some(t) = self.threshold {
            cfg.alignment_threshold = t;
        }
        cfg
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    /// Inference traces (JSON Lines).
    #[arg(long)]
    pub traces: PathBuf,
    /// Prediction records (JSON Lines).
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub selector: SelectorKind,
    /// Selector script (scripted) or gateway script (llm).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Synthetic accuracy on base option sets.
    #[arg(long)]
    pub base: Option<f64>,
    /// Synthetic accuracy on verification views.
    #[arg(long)]
    pub verification: Option<f64>,
    #[command(flatten)]
    pub ptv: PtvArgs,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Record failing instances and continue.
    #[arg(long = "skip-errors")]
    pub skip_errors: bool,
    /// Attach a relation score distribution to each trace.
    #[arg(long)]
    pub scores: bool,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    First,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpandArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which gold paths to expand when a relation has several leaves.
    #[arg(long, value_enum, default_value = "first")]
    pub policy: PolicyArg,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Prediction records or traces (JSON Lines).
    #[arg(long)]
    pub input: PathBuf,
    /// Required with --diagnostics.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Per-level accuracy and error-propagation table (traces only).
    #[arg(long)]
    pub diagnostics: bool,
    /// Bag-level metrics.
    #[arg(long)]
    pub bag: bool,
    #[arg(long, default_value = "NA")]
    pub na: String,
    /// Cut-offs for P@K.
    #[arg(long = "k", value_delimiter = ',', default_values_t = vec![500usize, 1000])]
    pub ks: Vec<usize>,
    /// JSON report; defaults to `<input>.report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 4)]
    pub branching: usize,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[arg(long, default_value_t = 5000)]
    pub instances: usize,
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long)]
    pub verification: Option<f64>,
    #[arg(long = "na-fraction", default_value_t = 0.0)]
    pub na_fraction: f64,
    #[command(flatten)]
    pub ptv: PtvArgs,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Verification breadths to sweep, e.g. `1-10` or `1,2,4`.
    #[arg(long = "k-sweep", value_parser = parse_ks)]
    pub k_sweep: Option<Vec<usize>>,
    #[arg(long, default_value = "simulation.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Micro,
    Binary,
    Max,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "micro")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value = "NA")]
    pub na: String,
    /// JSON result; defaults to `<a>.bootstrap.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_ks(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = |_| format!("invalid k list '{s}'");
    let ks: Vec<usize> = match s.split_once('-') {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
            (a..=b).collect()
        }
        None => s.split(',').map(|x| x.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>()?,
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(format!("k list '{s}' must hold positive values"));
    }
    Ok(ks)
}

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.build.seed = cfg.seed;
    let start = Instant::now();
    let mut m = RunManifest::new(
        cli.command.name(),
        serde_json::json!({ "config": cfg.to_json(), "args": &cli.command }),
    );
    m.seeds.insert("seed".into(), cfg.seed);
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    let (text, primary) = match &cli.command {
        Command::BuildTree(a) => build_tree(a, &cfg, &mut m)?,
        Command::Infer(a) => infer(a, &cfg, &mut m)?,
        Command::ExpandTrain(a) => expand_train(a, &cfg, &mut m)?,
        Command::Evaluate(a) => evaluate(a, &mut m)?,
        Command::Simulate(a) => simulate_cmd(a, &cfg, &mut m)?,
        Command::Bootstrap(a) => bootstrap(a, &cfg, &mut m)?,
    };
    m.wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let path = cli.manifest.clone().unwrap_or_else(|| default_manifest_path(&primary));
    m.write(&path)?;
    log::info!("manifest written to {}", path.display());
    Ok(text)
}

fn read(path: &Path, m: &mut RunManifest) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    m.input(path)?;
    Ok(bytes)
}

fn read_schema(path: &Path, m: &mut RunManifest) -> Result<RelationSchema> {
    load_schema(&read(path, m)?)
}

fn read_tree(path: &Path, schema: Option<&RelationSchema>, m: &mut RunManifest) -> Result<RelationTree> {
    let tree = RelationTree::from_json(&read(path, m)?)?;
    if let Some(s) = schema {
        tree.validate(s).into_result()?;
    }
    Ok(tree)
}

fn read_dataset(path: &Path, schema: &RelationSchema, m: &mut RunManifest) -> Result<Vec<Instance>> {
    load_dataset(&read(path, m)?, schema)
}

/// Scripted gateway when a script is given, else the configured remote backend.
fn gateway(cfg: &Config, script: Option<&Path>, m: &mut RunManifest) -> Result<Box<dyn LlmGateway>> {
    if let Some(p) = script {
        return Ok(Box::new(ScriptedGateway::from_json(&read(p, m)?)?));
    }
    match &cfg.remote {
        Some(r) => Ok(Box::new(RemoteGateway::new(r.clone())?)),
        None => Err(Error::validation("no backend: pass --script or configure [remote]")),
    }
}

fn build_tree(a: &BuildTreeArgs, cfg: &Config, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let schema = read_schema(&a.schema, m)?;
    let gw = gateway(cfg, a.script.as_deref(), m)?;
    let ledger = UsageLedger::new();
    let metered = MeteredGateway::new(&*gw, &ledger);
    let prompts = match &cfg.prompts_dir {
        Some(d) => PromptSet::load_dir(d)?,
        None => PromptSet::default(),
    };
    let coherence_prompt = prompts.coherence.clone();
    let builder = LlmTreeBuilder::new(&metered, cfg.build.clone())?.with_prompts(prompts)?;
    let out = match a.mode {
        BuildMode::Levelwise => builder.build_levelwise(&schema)?,
        BuildMode::Singleshot => builder.build_singleshot(&schema)?,
    };
    out.tree.validate(&schema).into_result()?;
    m.output(&a.out, out.tree.to_json().as_bytes())?;
    if let Some(p) = &a.log {
        m.output(p, out.log.to_jsonl().as_bytes())?;
    }
    let mut text = out.tree.stats().render();
    if a.coherence {
        let report = score_coherence(&out.tree, &metered, &coherence_prompt, cfg.build.in_flight)?;
        text.push('\n');
        text.push_str(&report.render());
    }
    if let Some(p) = &a.ledger {
        m.output(p, ledger.to_jsonl().as_bytes())?;
    }
    let (pi, po) = pricing(cfg);
    text.push('\n');
    text.push_str(&ledger.render_table(pi, po));
    m.usage = Some(ledger.totals());
    m.calls = Some(ledger.calls());
    Ok((text, a.out.clone()))
}

fn pricing(cfg: &Config) -> (Option<f64>, Option<f64>) {
    match &cfg.pricing {
        Some(p) => (Some(p.input_per_m), Some(p.output_per_m)),
        None => (None, None),
    }
}

fn selector_template(cfg: &Config) -> Result<SelectorTemplate> {
    match &cfg.selector_template {
        Some(p) => SelectorTemplate::new(std::fs::read_to_string(p)?),
        None => Ok(SelectorTemplate::default()),
    }
}

fn infer(a: &InferArgs, cfg: &Config, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let schema = read_schema(&a.schema, m)?;
    let tree = read_tree(&a.tree, Some(&schema), m)?;
    let data = read_dataset(&a.dataset, &schema, m)?;
    let run_cfg = RunConfig {
        ptv: a.ptv.apply(cfg.ptv.clone()),
        concurrency: a.concurrency.unwrap_or(cfg.concurrency),
        skip_errors: a.skip_errors,
        scores: a.scores,
    };
    let ledger = UsageLedger::new();
    let inner: Box<dyn Selector> = match a.selector {
        SelectorKind::Synthetic => {
            let mut table = cfg.synthetic.clone();
            table.base = a.base.unwrap_or(table.base);
            table.verification = a.verification.unwrap_or(table.verification);
            Box::new(SyntheticSelector::new(&tree, table, cfg.seed)?)
        }
        SelectorKind::Scripted => {
            let p = a
                .script
                .as_deref()
                .ok_or_else(|| Error::validation("--selector scripted needs --script"))?;
            Box::new(ScriptedSelector::from_json(&read(p, m)?)?)
        }
        SelectorKind::Llm => {
            let gw = gateway(cfg, a.script.as_deref(), m)?;
            let mut sel_cfg = cfg.selector.clone();
            if sel_cfg.max_prompt_tokens.is_none() {
                sel_cfg.max_prompt_tokens = cfg.remote.as_ref().and_then(|r| r.max_prompt_tokens);
            }
            Box::new(LlmSelector::new(gw, selector_template(cfg)?, sel_cfg))
        }
    };
    let selector = MeteredSelector::new(&*inner, &ledger);
    let out = run_dataset(&data, &tree, &selector, &run_cfg)?;
    write_run(a, &out, &ledger, m)?;
    let mut text = out.stats.render(if run_cfg.ptv.enabled { "PtV" } else { "plain" });
    if !out.failures.is_empty() {
        text.push_str(&format!("\n{} instances failed and were skipped\n", out.failures.len()));
        for f in &out.failures {
            log::warn!("{}: {}", f.instance_id, f.message);
        }
    }
    let correct = out
        .traces
        .iter()
        .filter(|t| t.gold.as_deref() == Some(t.final_relation.as_str()))
        .count();
    let labelled = out.traces.iter().filter(|t| t.gold.is_some()).count();
    if labelled > 0 {
        text.push_str(&format!(
            "\nAccuracy: {:.2} ({correct}/{labelled})\n",
            100.0 * correct as f64 / labelled as f64
        ));
    }
    Ok((text, a.traces.clone()))
}

fn write_run(a: &InferArgs, out: &RunOutput, ledger: &UsageLedger, m: &mut RunManifest) -> Result<()> {
    m.output(&a.traces, to_jsonl(&out.traces).as_bytes())?;
    if let Some(p) = &a.records {
        let records: Vec<PredictionRecord> = out.traces.iter().map(|t| t.to_record()).collect();
        m.output(p, to_jsonl(&records).as_bytes())?;
    }
    if let Some(p) = &a.ledger {
        m.output(p, ledger.to_jsonl().as_bytes())?;
    }
    m.usage = Some(out.stats.usage);
    m.calls = Some(out.stats.calls);
    m.latency = Some(out.stats.latency.clone());
    Ok(())
}

fn expand_train(a: &ExpandArgs, cfg: &Config, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let schema = read_schema(&a.schema, m)?;
    let tree = read_tree(&a.tree, Some(&schema), m)?;
    let data = read_dataset(&a.dataset, &schema, m)?;
    let policy = match a.policy {
        PolicyArg::First => PathPolicy::First,
        PolicyArg::All => PathPolicy::All,
    };
    let (records, summary) = expand_dataset(&data, &tree, cfg.seed, policy, &selector_template(cfg)?)?;
    m.output(&a.out, to_jsonl(&records).as_bytes())?;
    Ok((summary.render(), a.out.clone()))
}

fn evaluate(a: &EvaluateArgs, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let bytes = read(&a.input, m)?;
    let records = load_records(&bytes)?;
    let opts = EvalOptions {
        na_label: a.na.clone(),
        ks: a.ks.clone(),
        bag: a.bag,
    };
    let mut report = EvalReport::new(&records, &opts)?;
    if a.diagnostics {
        let tp = a
            .tree
            .as_deref()
            .ok_or_else(|| Error::validation("--diagnostics needs --tree"))?;
        let tree = read_tree(tp, None, m)?;
        report = report.with_diagnostics(&load_traces(&bytes)?, &tree)?;
    }
    let out = a.out.clone().unwrap_or_else(|| suffixed(&a.input, ".report.json"));
    m.output(&out, report.to_json().as_bytes())?;
    Ok((report.render(), out))
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate_cmd(a: &SimulateArgs, cfg: &Config, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let mut accuracy = cfg.synthetic.clone();
    accuracy.base = a.base.unwrap_or(accuracy.base);
    accuracy.verification = a.verification.unwrap_or(accuracy.verification);
    let sim = SimConfig {
        branching: a.branching,
        depth: a.depth,
        instances: a.instances,
        na_fraction: a.na_fraction,
        seed: cfg.seed,
        accuracy,
        ptv: PtvConfig {
            enabled: true,
            ..a.ptv.apply(cfg.ptv.clone())
        },
        concurrency: a.concurrency.unwrap_or(cfg.concurrency),
    };
    let report = simulate(&sim)?;
    let mut text = report.render();
    let sweep = match &a.k_sweep {
        Some(ks) => {
            let rows = k_sweep(&sim, ks)?;
            text.push('\n');
            text.push_str(&render_k_sweep(&rows));
            Some(rows)
        }
        None => None,
    };
    let json = serde_json::json!({ "report": report, "k_sweep": sweep });
    m.output(&a.out, serde_json::to_string_pretty(&json)?.as_bytes())?;
    let mut usage = report.plain.stats.usage;
    usage.input_tokens += report.ptv.stats.usage.input_tokens;
    usage.output_tokens += report.ptv.stats.usage.output_tokens;
    m.usage = Some(usage);
    m.calls = Some(report.plain.stats.calls + report.ptv.stats.calls);
    m.latency = Some(report.ptv.stats.latency.clone());
    Ok((text, a.out.clone()))
}

fn bootstrap(a: &BootstrapArgs, cfg: &Config, m: &mut RunManifest) -> Result<(String, PathBuf)> {
    let ra = load_records(&read(&a.a, m)?)?;
    let rb = load_records(&read(&a.b, m)?)?;
    let na = a.na.as_str();
    let metric = |r: &[PredictionRecord]| match a.metric {
        MetricArg::Micro => micro_f1(r, na),
        MetricArg::Binary => binary_f1(r, na),
        MetricArg::Max => max_f1(r, na),
    };
    let res = paired_bootstrap(&ra, &rb, metric, a.resamples, cfg.seed)?;
    let out = a.out.clone().unwrap_or_else(|| suffixed(&a.a, ".bootstrap.json"));
    m.output(&out, serde_json::to_string_pretty(&res)?.as_bytes())?;
    let text = format!(
        "Paired bootstrap ({} resamples): delta {:+.2}, p = {:.4}\n",
        res.resamples, res.delta, res.p_value
    );
    Ok((text, out))
}
