//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 hard failure, 2 partial completion (some samples
//! skipped, report still written).

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ToolConfig;
use crate::dataset::{build_dataset, report_path, BuildOptions};
use crate::domain::GroundingSample;
use crate::grpo::{run_simulation, ScenarioSpec, SimConfig, REFUSAL_SCENARIO, ZERO_VARIANCE_SCENARIO};
use crate::io::{read_dataset, read_outputs, write_jsonl, OutputRecord};
use crate::metrics::{aggregate_report, EvalOptions, Judges, PredictionRecord};
use crate::reward::{RewardBreakdown, RewardEngine};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "rarft", version, about = "Refusal-aware rewards and evaluation for video temporal grounding")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate hard-irrelevant records from a corpus of relevant samples.
    BuildDataset(BuildArgs),
    /// Compute per-sample reward breakdowns for model outputs.
    Score(ScoreArgs),
    /// Compute evaluation metrics for model outputs.
    Evaluate(EvaluateArgs),
    /// Run the GRPO toy-policy simulation on a scenario.
    SimulateGrpo(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from `<out>.checkpoint.json`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-sample breakdowns (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeMode {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `off` skips RT-IoU, SBert and LLM score so no provider is contacted.
    #[arg(long, value_enum, default_value = "on")]
    pub judge: JudgeMode,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file, or `refusal` / `zero_variance` for the bundled ones.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::SimulateGrpo(a) => cmd_simulate_grpo(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ToolConfig> {
    Ok(ToolConfig::load(path)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn cmd_build_dataset(args: &BuildArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let corpus = read_dataset(&args.input)?;
    let llm = cfg.build_llm()?;
    let options = BuildOptions {
        resume: args.resume,
        max_in_flight: cfg.concurrency.max_in_flight,
        params: cfg.generation_params(),
    };
    let report = build_dataset(&corpus, llm.as_ref(), &args.out, &options)
        .with_context(|| format!("building {}", args.out.display()))?;
    println!(
        "input {} | resumed {} | completed {} | relevant {} | irrelevant {} (strong {}, moderate {}, weak {}) | skipped {} | llm calls {}",
        report.input_samples,
        report.resumed,
        report.completed,
        report.relevant_written,
        report.irrelevant_written,
        report.per_tier.strong,
        report.per_tier.moderate,
        report.per_tier.weak,
        report.skipped.len(),
        report.llm.calls,
    );
    for s in &report.skipped {
        println!("skipped {}: {}", s.sample_id, s.reason);
    }
    println!("report: {}", report_path(&args.out).display());
    Ok(if report.has_skips() { EXIT_PARTIAL } else { EXIT_OK })
}

/// Pairs outputs with dataset samples in dataset order. Every sample needs
/// exactly one output and every output a sample.
fn pair_outputs<'a>(
    dataset: &'a [GroundingSample],
    outputs: &'a [OutputRecord],
) -> Result<Vec<(&'a GroundingSample, &'a str)>> {
    if outputs.is_empty() {
        bail!("outputs file is empty");
    }
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for o in outputs {
        if by_id.insert(&o.sample_id, &o.output).is_some() {
            bail!("duplicate output for sample id {}", o.sample_id);
        }
    }
    let known: HashSet<&str> = dataset.iter().map(|s| s.sample_id.as_str()).collect();
    let mut unknown: Vec<&str> = by_id.keys().copied().filter(|id| !known.contains(id)).collect();
    unknown.sort();
    if !unknown.is_empty() {
        bail!("outputs reference unknown sample ids: {}", unknown.join(", "));
    }
    let missing: Vec<&str> = dataset
        .iter()
        .map(|s| s.sample_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        bail!("missing outputs for sample ids: {}", missing.join(", "));
    }
    Ok(dataset.iter().map(|s| (s, by_id[s.sample_id.as_str()])).collect())
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

#[derive(Debug, Serialize)]
struct ScoreLine<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
}

#[derive(Debug, Default, Serialize)]
pub struct ComponentMeans {
    pub n: usize,
    pub format: f64,
    pub refuse_iou: f64,
    pub explain: f64,
    pub correction: f64,
    pub total: f64,
}

impl ComponentMeans {
    fn of<'a>(items: impl Iterator<Item = &'a RewardBreakdown>) -> Self {
        let mut m = ComponentMeans::default();
        for b in items {
            m.n += 1;
            m.format += b.format;
            m.refuse_iou += b.refuse_iou;
            m.explain += b.explain;
            m.correction += b.correction;
            m.total += b.total;
        }
        if m.n > 0 {
            let n = m.n as f64;
            for v in [&mut m.format, &mut m.refuse_iou, &mut m.explain, &mut m.correction, &mut m.total] {
                *v /= n;
            }
        }
        m
    }
}

#[derive(Debug, Serialize)]
pub struct ScoreSummary {
    pub all: ComponentMeans,
    pub relevant: ComponentMeans,
    pub irrelevant: ComponentMeans,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let dataset = read_dataset(&args.dataset)?;
    let outputs = read_outputs(&args.outputs)?;
    let pairs = pair_outputs(&dataset, &outputs)?;
    let embedder = cfg.build_embedder()?;
    let engine = RewardEngine::new(embedder.as_ref(), cfg.reward_options(), &dataset);

    let results = thread_pool(cfg.concurrency.threads)?.install(|| engine.score_batch(&pairs));
    let mut breakdowns = Vec::with_capacity(results.len());
    for ((sample, _), r) in pairs.iter().zip(results) {
        breakdowns.push(r.with_context(|| format!("scoring {}", sample.sample_id))?);
    }

    let lines = pairs.iter().zip(&breakdowns).map(|((s, _), b)| ScoreLine {
        sample_id: &s.sample_id,
        breakdown: *b,
    });
    write_jsonl(create(&args.out)?, lines)?;

    let pick = |relevant: Option<bool>| {
        ComponentMeans::of(
            pairs
                .iter()
                .zip(&breakdowns)
                .filter(move |((s, _), _)| relevant.is_none_or(|r| s.is_relevant() == r))
                .map(|(_, b)| b),
        )
    };
    let summary = ScoreSummary {
        all: pick(None),
        relevant: pick(Some(true)),
        irrelevant: pick(Some(false)),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(EXIT_OK)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let dataset = read_dataset(&args.dataset)?;
    let outputs = read_outputs(&args.outputs)?;
    if outputs.is_empty() {
        bail!("outputs file is empty");
    }
    let predictions: Vec<PredictionRecord> = outputs
        .iter()
        .map(|o| PredictionRecord::from_raw(&o.sample_id, &o.output))
        .collect();
    let options = EvalOptions {
        threads: cfg.concurrency.threads,
    };
    let report = match args.judge {
        JudgeMode::Off => aggregate_report(&dataset, &predictions, None, options)?,
        JudgeMode::On => {
            let embedder = cfg.build_embedder()?;
            let llm = cfg.build_llm()?;
            let judges = Judges {
                embedder: embedder.as_ref(),
                llm: llm.as_ref(),
            };
            aggregate_report(&dataset, &predictions, Some(judges), options)?
        }
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &args.out {
        Some(path) => fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{json}"),
    }
    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(EXIT_OK)
}

fn load_scenario(name: &str) -> Result<ScenarioSpec> {
    let path = Path::new(name);
    let spec = if path.exists() {
        ScenarioSpec::load(path)?
    } else {
        match name {
            "refusal" => ScenarioSpec::from_toml(REFUSAL_SCENARIO)?,
            "zero_variance" => ScenarioSpec::from_toml(ZERO_VARIANCE_SCENARIO)?,
            _ => bail!("scenario file {} does not exist", path.display()),
        }
    };
    Ok(spec)
}

pub fn cmd_simulate_grpo(args: &SimulateArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let scenario = load_scenario(&args.scenario)?;
    let mut sim = scenario.sim.apply(SimConfig::default());
    if let Some(seed) = cfg.seed {
        sim.seed = seed;
    }
    let embedder = cfg.build_embedder()?;
    let trace = run_simulation(&sim, &scenario, embedder.as_ref(), cfg.reward_options())?;

    if let Some(path) = &args.trace_out {
        let mut w = create(path)?;
        trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "scenario {} | G={} beta={} lr={} steps={} seed={}",
        scenario.name, sim.group_size, sim.beta, sim.learning_rate, sim.steps, sim.seed
    )?;
    for (i, (p, r)) in trace.final_probs.iter().zip(&trace.candidate_rewards).enumerate() {
        writeln!(out, "candidate {i}: p={p:.4} reward={r:.4}")?;
    }
    writeln!(out, "converged={}", trace.converged)?;
    if trace.no_learning_signal() {
        writeln!(out, "note: no learning signal (every candidate earns the same reward)")?;
    }
    Ok(EXIT_OK)
}
