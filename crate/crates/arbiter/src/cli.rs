//! Command-line interface. Subcommands cover the full pipeline: `sample`
//! builds a task set, `inject` materializes biased presentations, `run`
//! executes episodes, and `score`/`stats`/`report` post-process manifests.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::agents::prompts::MetaMode;
use crate::agents::{now_ms, AgentRuntime, CallLog};
use crate::bias;
use crate::config::RunConfig;
use crate::core::{BiasKind, ComparisonTask};
use crate::dataset::{self, DatasetSpec, SourceKind};
use crate::manifest::{
    self, file_fingerprint, read_manifests, EpisodeRecord, Footer, Header, ManifestWriter,
    RecordBody,
};
use crate::metrics;
use crate::report::{self, AggregationUnit, Table};
use crate::runner::{execute_run, FrameworkSpec, RunRequest};
use crate::seeding;

#[derive(Debug, Parser)]
#[command(
    name = "arbiter",
    version,
    about = "Measures judge biases across single, debate, and meta-judge evaluation pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a task set: load pairs or answers, then sample per category.
    Sample(SampleArgs),
    /// Materialize biased presentations for inspection.
    Inject(InjectArgs),
    /// Execute episodes under one framework.
    #[command(subcommand)]
    Run(RunCommand),
    /// Consistency metrics from manifests.
    Score(ScoreArgs),
    /// The t-test battery over manifest consistency rates.
    Stats(StatsArgs),
    /// Paper-shaped round and pool tables as CSV and Markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Run config supplying the [dataset] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source file; overrides the config's dataset path.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Source kind: pairs | answers.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    per_category: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output tasks JSONL.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct InjectArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    /// Bias variants to materialize (default: config matrix plus baseline).
    #[arg(long = "bias")]
    biases: Vec<String>,
    /// Output presentations JSONL.
    #[arg(long)]
    output: PathBuf,
    /// Rewrite the task file with cached verbose variants.
    #[arg(long)]
    save_tasks: Option<PathBuf>,
    /// Manifest recording any rewriter calls (default: <output>.manifest.jsonl).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum RunCommand {
    /// One judge, one judgment per task.
    Single {
        #[command(flatten)]
        shared: RunShared,
        #[arg(long)]
        judge: String,
    },
    /// Judge-vs-critic debate.
    Debate {
        #[command(flatten)]
        shared: RunShared,
        #[arg(long)]
        judge: String,
        #[arg(long)]
        critic: String,
        #[arg(long, default_value_t = 3)]
        rounds: u32,
    },
    /// Meta judgment over an independent pool.
    Meta {
        #[command(flatten)]
        shared: RunShared,
        #[arg(long)]
        meta: String,
        /// Pool members, comma separated.
        #[arg(long, value_delimiter = ',')]
        pool: Vec<String>,
        /// select | conclude.
        #[arg(long, default_value = "select")]
        mode: String,
    },
}

#[derive(Debug, Args)]
struct RunShared {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    /// Bias variants to run (default: config matrix). The unmodified
    /// baseline always runs as well.
    #[arg(long = "bias")]
    biases: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Render prompts only; no backend calls.
    #[arg(long)]
    dry_run: bool,
    /// Output manifest JSONL.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Manifest(s) to score; repeatable.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Task file for gold-agreement metrics.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// config-means | sample-indicators.
    #[arg(long, default_value = "config-means")]
    unit: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Config for the significance default; optional.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Entry point used by `main` and by tests. Returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Sample(args) => cmd_sample(args),
        Command::Inject(args) => cmd_inject(args),
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(path) => Ok(RunConfig::load(path)?),
        None => Ok(RunConfig::default()),
    }
}

fn parse_biases(raw: &[String]) -> Result<Vec<BiasKind>> {
    raw.iter()
        .map(|s| s.parse::<BiasKind>().map_err(|e| anyhow!(e)))
        .collect()
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let mut spec = config
        .dataset
        .clone()
        .or_else(|| {
            args.input.as_ref().map(|path| DatasetSpec {
                source_kind: SourceKind::PairsJsonl,
                path: path.clone(),
                per_category: 60,
                seed: 0,
            })
        })
        .ok_or_else(|| anyhow!("no dataset: pass --input or a config with a [dataset] section"))?;
    if let Some(input) = args.input {
        spec.path = input;
    }
    if let Some(kind) = args.kind.as_deref() {
        spec.source_kind = match kind {
            "pairs" => SourceKind::PairsJsonl,
            "answers" => SourceKind::AnswersJsonl,
            other => bail!("unknown source kind `{other}` (expected pairs or answers)"),
        };
    }
    if let Some(per_category) = args.per_category {
        spec.per_category = per_category;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;

    let tasks = dataset::load_dataset(&spec)?;
    let sampled = dataset::sample_per_category(&tasks, spec.per_category, spec.seed)?;
    write_tasks(&args.output, &sampled)?;

    let categories: std::collections::BTreeSet<&str> =
        sampled.iter().map(|t| t.category.as_str()).collect();
    println!(
        "sampled {} tasks across {} categories ({}, seed {}) -> {}",
        sampled.len(),
        categories.len(),
        seeding::SAMPLER_ALGORITHM,
        spec.seed,
        args.output.display()
    );
    Ok(())
}

fn write_tasks(path: &Path, tasks: &[ComparisonTask]) -> Result<()> {
    let mut out = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    for task in tasks {
        writeln!(out, "{}", serde_json::to_string(task)?)?;
    }
    Ok(())
}

fn cmd_inject(args: InjectArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let overrides = parse_biases(&args.biases)?;
    let biases = config.run_biases(&overrides);
    let mut tasks = dataset::load_pairs(&args.tasks)?;

    let runtime = AgentRuntime::new(
        &config.agents,
        config.retry.clone(),
        config.templates.rules.clone(),
        config.rate_limit.requests_per_minute,
    )?;
    let mut log = CallLog::new();
    if biases.contains(&BiasKind::Verbosity) {
        if let Some(rewriter) = &config.rewriter {
            bias::ensure_verbose(&mut tasks, rewriter, &runtime, &config.templates, &mut log)?;
        }
    }

    let mut out = std::fs::File::create(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;
    let mut n = 0usize;
    for kind in &biases {
        let variant = bias::variant_for(*kind, &config.templates);
        for task in &tasks {
            let presentation = bias::present(task, &variant)?;
            writeln!(out, "{}", serde_json::to_string(&presentation)?)?;
            n += 1;
        }
    }

    let manifest_path = args
        .manifest
        .unwrap_or_else(|| args.output.with_extension("manifest.jsonl"));
    let config_snapshot = serde_json::to_value(&config)?;
    let request_snapshot = serde_json::json!({
        "command": "inject",
        "tasks": args.tasks,
        "biases": biases.iter().map(|b| b.label()).collect::<Vec<_>>(),
    });
    let mut writer = ManifestWriter::create(&manifest_path)?;
    writer.append(RecordBody::Header(Header {
        run_id: manifest::run_id("inject", &config_snapshot, &request_snapshot),
        created_ms: now_ms(),
        command: "inject".into(),
        seed: config.seed,
        sampler: seeding::SAMPLER_ALGORITHM.into(),
        dataset_fingerprint: Some(file_fingerprint(&args.tasks)?),
        config: config_snapshot,
        request: request_snapshot,
    }))?;
    let n_calls = log.calls.len();
    for call in log.calls {
        writer.append(RecordBody::Call(call))?;
    }
    writer.append(RecordBody::Footer(Footer {
        completed: true,
        n_episodes: 0,
        ts_ms: now_ms(),
    }))?;

    if let Some(save_tasks) = args.save_tasks {
        write_tasks(&save_tasks, &tasks)?;
    }
    println!(
        "wrote {n} presentations for {} bias variant(s) -> {} ({} rewriter calls)",
        biases.len(),
        args.output.display(),
        n_calls
    );
    Ok(())
}

fn cmd_run(command: RunCommand) -> Result<()> {
    let (shared, framework) = match command {
        RunCommand::Single { shared, judge } => (shared, FrameworkSpec::Single { judge }),
        RunCommand::Debate { shared, judge, critic, rounds } => {
            (shared, FrameworkSpec::Debate { judge, critic, rounds })
        }
        RunCommand::Meta { shared, meta, pool, mode } => {
            let mode: MetaMode = mode.parse().map_err(|e: String| anyhow!(e))?;
            (shared, FrameworkSpec::Meta { meta, pool, mode })
        }
    };
    let config = RunConfig::load(&shared.config)?;
    let overrides = parse_biases(&shared.biases)?;
    let request = RunRequest {
        framework,
        tasks_path: shared.tasks.clone(),
        biases: config.run_biases(&overrides),
        workers: shared.workers.unwrap_or(config.workers),
        seed: shared.seed.unwrap_or(config.seed),
        dry_run: shared.dry_run,
    };
    let summary = execute_run(&config, &request, &shared.manifest)?;
    println!(
        "{}: {} episodes, {} calls, {} invalid turns -> {}",
        request.framework.command_label(),
        summary.episodes,
        summary.calls,
        summary.invalid_turns,
        summary.manifest.display()
    );
    Ok(())
}

fn merged_episodes(paths: &[PathBuf]) -> Result<Vec<EpisodeRecord>> {
    let manifests = read_manifests(paths)?;
    let mut episodes = Vec::new();
    for manifest in manifests {
        episodes.extend(manifest.episodes);
    }
    Ok(episodes)
}

fn write_table(out_dir: &Path, stem: &str, table: &Table) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    std::fs::write(out_dir.join(format!("{stem}.csv")), table.to_csv())?;
    std::fs::write(out_dir.join(format!("{stem}.md")), table.to_markdown())?;
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let episodes = merged_episodes(&args.manifests)?;
    if episodes.is_empty() {
        bail!("no episodes in the given manifest(s)");
    }

    let consistency = report::consistency_table(&episodes)?;
    write_table(&args.out_dir, "consistency", &consistency)?;
    print!("{}", consistency.to_markdown());

    if let Some(table) = report::selection_table(&episodes) {
        write_table(&args.out_dir, "selection_rates", &table)?;
        print!("{}", table.to_markdown());
    }

    if let Some(tasks_path) = &args.tasks {
        let tasks = dataset::load_pairs(tasks_path)?;
        let table = gold_table(&episodes, &tasks)?;
        write_table(&args.out_dir, "gold_agreement", &table)?;
        print!("{}", table.to_markdown());
    }
    Ok(())
}

/// Gold agreement of final verdicts per (framework, bias) group.
fn gold_table(episodes: &[EpisodeRecord], tasks: &[ComparisonTask]) -> Result<Table> {
    let by_id: HashMap<&str, &ComparisonTask> =
        tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut groups: Vec<(String, BiasKind)> = Vec::new();
    for episode in episodes {
        let key = (episode.key.framework.descriptor(), episode.key.bias);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups.sort_by(|a, b| (&a.0, a.1.label()).cmp(&(&b.0, b.1.label())));

    let mut table = Table::new(
        "Gold agreement by configuration",
        &["framework", "bias", "agreement", "n"],
    );
    for (framework, kind) in groups {
        let mut verdicts = Vec::new();
        let mut group_tasks = Vec::new();
        for episode in episodes {
            if episode.key.framework.descriptor() == framework && episode.key.bias == kind {
                let task = by_id.get(episode.key.task_id.as_str()).ok_or_else(|| {
                    anyhow!("task {} not present in --tasks file", episode.key.task_id)
                })?;
                verdicts.push(episode.final_verdict);
                group_tasks.push((*task).clone());
            }
        }
        let agreement = metrics::gold_agreement(&verdicts, &group_tasks)?;
        table.rows.push(vec![
            framework,
            kind.label().to_string(),
            format!("{agreement:.4}"),
            verdicts.len().to_string(),
        ]);
    }
    Ok(table)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let episodes = merged_episodes(&args.manifests)?;
    if episodes.is_empty() {
        bail!("no episodes in the given manifest(s)");
    }
    let unit: AggregationUnit = args.unit.parse().map_err(|e: String| anyhow!(e))?;
    let alpha = args.alpha.unwrap_or(config.significance_level);
    let table = report::stats_battery(&episodes, unit, alpha)?;
    write_table(&args.out_dir, "stats", &table)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let episodes = merged_episodes(&args.manifests)?;
    if episodes.is_empty() {
        bail!("no episodes in the given manifest(s)");
    }

    let has_debate = episodes
        .iter()
        .any(|e| matches!(e.key.framework, manifest::FrameworkKey::Debate { .. }));
    let has_meta = episodes
        .iter()
        .any(|e| matches!(e.key.framework, manifest::FrameworkKey::Meta { .. }));
    if !has_debate && !has_meta {
        bail!("no debate or meta episodes to report on");
    }

    if has_debate {
        let table = report::emit_round_table(&episodes, config.delta_thresholds)?;
        write_table(&args.out_dir, "round_table", &table)?;
        print!("{}", table.to_markdown());
    }
    if has_meta {
        let table = report::emit_pool_table(&episodes)?;
        write_table(&args.out_dir, "pool_table", &table)?;
        print!("{}", table.to_markdown());
    }
    Ok(())
}
