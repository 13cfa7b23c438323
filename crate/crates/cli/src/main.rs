//! `patchjury`: every pipeline behind one binary. Each subcommand runs
//! offline against a scripted mock (`--mock script.json`); a real endpoint
//! is used only when one is configured explicitly.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use patchjury::agent::{run_rollout, RolloutLimits, Trajectory};
use patchjury::codegraph::{render_hits, CodeGraph, DEFAULT_RENDER_CAP};
use patchjury::data::{
    build_balanced_groups, filter_pr_record, load_instances, parse_pr_record, Corpus, Issue,
};
use patchjury::llm::{HttpClient, LlmClient, ScriptedClient};
use patchjury::metrics::{
    compute_metrics, render_report_text, render_strata_text, strata_to_csv, stratify, Stratifier,
};
use patchjury::parallel::parallel_map;
use patchjury::python::EntityKind;
use patchjury::selection::{consistency_profile, select_best};
use patchjury::verifier::{verify_patches, Judgment};
use patchjury::workspace::{SnapshotSource, Workspace};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "patchjury", version, about = "Patch generation scaffold and group-wise patch verification pipelines")]
struct Cli {
    /// TOML config file with run defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Patches per verification group.
    #[arg(long, global = true, value_name = "N")]
    group_size: Option<usize>,
    /// Scripted replies file; forces offline, sequential operation.
    #[arg(long, global = true, value_name = "SCRIPT.JSON")]
    mock: Option<PathBuf>,
    /// Chat-completion endpoint URL.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent model calls.
    #[arg(long, global = true, value_name = "N")]
    concurrency: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the code graph of a repository and cache it as JSON.
    Index {
        #[arg(long, value_name = "DIR")]
        repo: PathBuf,
        #[arg(long, default_value = "snapshot")]
        commit: String,
        /// Cache destination; defaults to codegraph.json under --out.
        #[arg(long, value_name = "PATH")]
        cache: Option<PathBuf>,
    },
    /// One-shot entity lookup against a repository snapshot.
    Search {
        #[arg(long, value_name = "DIR")]
        repo: PathBuf,
        /// function, class, or class_method.
        #[arg(long)]
        construct: String,
        #[arg(long)]
        entity: String,
    },
    /// One-shot string-replacement edit in a scratch copy of a repository.
    Edit {
        #[arg(long, value_name = "DIR")]
        repo: PathBuf,
        /// Relative file path inside the repository.
        #[arg(long)]
        path: String,
        #[arg(long)]
        old: String,
        #[arg(long)]
        new: String,
        /// Print the resulting unified diff after an applied edit.
        #[arg(long)]
        print_patch: bool,
    },
    /// Run the agent loop over corpus issues and persist trajectories.
    Rollout(CorpusArgs),
    /// Judge corpus patches in groups and write a judgments JSONL.
    Verify {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Two-round selection: filter by verification, then pick one patch.
    Select(CorpusArgs),
    /// Score a judgments file; optionally stratified.
    Metrics {
        /// Judgments JSONL produced by `verify`.
        #[arg(long, value_name = "JSONL")]
        judgments: PathBuf,
        /// Corpus file, required for stratified tables.
        #[arg(long, value_name = "JSONL")]
        corpus: Option<PathBuf>,
        /// Break accuracy down by a patch property.
        #[arg(long, value_enum, value_name = "BY")]
        stratify: Option<StratifyBy>,
        /// Also write the stratified table as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Dataset construction pipelines.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Verdict stability across repeated verification runs.
    Consistency {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Verification runs per issue.
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Instances JSONL; falls back to the config `corpus` path.
    #[arg(long, value_name = "JSONL")]
    corpus: Option<PathBuf>,
    /// Snapshot store directory (one subdirectory per base commit).
    #[arg(long, value_name = "DIR")]
    snapshots: Option<PathBuf>,
    /// Restrict to one issue id.
    #[arg(long, value_name = "ID")]
    issue: Option<String>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Enumerate and class-balance labeled verification groups.
    Build {
        #[arg(long, value_name = "JSONL")]
        corpus: Option<PathBuf>,
        /// Allowed class-count spread above the smallest class.
        #[arg(long, default_value_t = 0.10)]
        tolerance: f64,
    },
    /// Apply the pull-request quality filters to raw records.
    Filter {
        #[arg(long, value_name = "JSONL")]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StratifyBy {
    EditedLines,
    Similarity,
    Repo,
}

impl From<StratifyBy> for Stratifier {
    fn from(by: StratifyBy) -> Self {
        match by {
            StratifyBy::EditedLines => Stratifier::EditedLinesBin,
            StratifyBy::Similarity => Stratifier::SimilarityBin,
            StratifyBy::Repo => Stratifier::Repo,
        }
    }
}

/// Post-parse errors that are the user's to fix; reported with exit 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Config file values overridden by whatever flags were given.
fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.group_size {
        cfg.group_size = n;
    }
    if let Some(url) = &cli.endpoint {
        cfg.endpoint = Some(url.clone());
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = cli.concurrency {
        cfg.concurrency = n;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// A model client plus the concurrency it tolerates. Scripted replay is
/// strictly ordered, so a mock pins concurrency to 1.
fn build_client(
    mock: &Option<PathBuf>,
    cfg: &RunConfig,
) -> anyhow::Result<(Box<dyn LlmClient>, usize)> {
    if let Some(script) = mock {
        if cfg.concurrency > 1 {
            eprintln!("note: scripted replay is sequential; concurrency pinned to 1");
        }
        let client = ScriptedClient::from_file(script)
            .with_context(|| format!("cannot load mock script {}", script.display()))?;
        return Ok((Box::new(client), 1));
    }
    match &cfg.endpoint {
        Some(url) => {
            let key = std::env::var(&cfg.credential_env).ok();
            let client = HttpClient::new(url.clone(), cfg.model.clone()).with_api_key(key);
            Ok((Box::new(client), cfg.concurrency))
        }
        None => bail!(
            "no model available: pass --mock <script.json> or configure an endpoint \
             (--endpoint or the config file)"
        ),
    }
}

fn load_corpus(flag: &Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<Corpus> {
    let path = flag
        .clone()
        .or_else(|| cfg.corpus.clone())
        .ok_or_else(|| usage("--corpus is required (or set `corpus` in the config)"))?;
    let corpus = load_instances(&path)
        .with_context(|| format!("cannot load corpus {}", path.display()))?;
    for warning in &corpus.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(corpus)
}

fn chosen_issues<'a>(corpus: &'a Corpus, only: &Option<String>) -> anyhow::Result<Vec<&'a Issue>> {
    match only {
        Some(id) => {
            let issue = corpus
                .issue(id)
                .ok_or_else(|| anyhow::anyhow!("issue {id} not found in the corpus"))?;
            Ok(vec![issue])
        }
        None => Ok(corpus.issues.iter().collect()),
    }
}

fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli)?;
    match &cli.command {
        Command::Index { repo, commit, cache } => cmd_index(&cfg, repo, commit, cache.as_deref()),
        Command::Search { repo, construct, entity } => cmd_search(repo, construct, entity),
        Command::Edit { repo, path, old, new, print_patch } => {
            cmd_edit(repo, path, old, new, *print_patch)
        }
        Command::Rollout(args) => cmd_rollout(&cli, &cfg, args),
        Command::Verify { corpus } => cmd_verify(&cli, &cfg, corpus),
        Command::Select(args) => cmd_select(&cli, &cfg, args),
        Command::Metrics { judgments, corpus, stratify, csv } => {
            cmd_metrics(&cfg, judgments, corpus, *stratify, csv.as_deref())
        }
        Command::Dataset { action } => match action {
            DatasetCommand::Build { corpus, tolerance } => {
                cmd_dataset_build(&cfg, corpus, *tolerance)
            }
            DatasetCommand::Filter { input } => cmd_dataset_filter(&cfg, input),
        },
        Command::Consistency { corpus, samples } => cmd_consistency(&cli, &cfg, corpus, *samples),
    }
}

fn cmd_index(
    cfg: &RunConfig,
    repo: &Path,
    commit: &str,
    cache: Option<&Path>,
) -> anyhow::Result<()> {
    let graph = CodeGraph::build(repo, commit)?;
    for (path, reason) in graph.build_warnings() {
        eprintln!("warning: {path}: {reason}");
    }
    let destination = match cache {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&cfg.out_dir)?;
            cfg.out_dir.join("codegraph.json")
        }
    };
    graph.save_cache(&destination)?;
    println!(
        "indexed {} entities from {} into {}",
        graph.entities().len(),
        repo.display(),
        destination.display()
    );
    Ok(())
}

fn cmd_search(repo: &Path, construct: &str, entity: &str) -> anyhow::Result<()> {
    let kind: EntityKind = construct
        .parse()
        .map_err(|e: String| usage(format!("--construct: {e}")))?;
    let graph = CodeGraph::build(repo, "snapshot")?;
    let hits = graph.search(kind, entity);
    println!("{}", render_hits(&hits, DEFAULT_RENDER_CAP));
    Ok(())
}

fn cmd_edit(
    repo: &Path,
    path: &str,
    old: &str,
    new: &str,
    print_patch: bool,
) -> anyhow::Result<()> {
    let source = SnapshotSource::Tree(repo.to_path_buf());
    let mut ws = Workspace::create(&source, "scratch")?;
    let record = ws.apply_edit(path, old, new).clone();
    println!("{}", serde_json::to_string_pretty(&record)?);
    if print_patch && record.outcome.is_applied() {
        print!("{}", ws.generate_patch()?.text());
    }
    Ok(())
}

fn cmd_rollout(cli: &Cli, cfg: &RunConfig, args: &CorpusArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&args.corpus, cfg)?;
    let issues = chosen_issues(&corpus, &args.issue)?;
    let snapshots = args
        .snapshots
        .clone()
        .or_else(|| cfg.snapshots.clone())
        .ok_or_else(|| usage("--snapshots is required (or set `snapshots` in the config)"))?;
    let source = SnapshotSource::Store(snapshots);
    let (client, concurrency) = build_client(&cli.mock, cfg)?;
    let limits = RolloutLimits {
        round_limit: cfg.round_limit,
        token_limit: cfg.token_limit,
    };

    let dir = cfg.out_dir.join("trajectories");
    ensure_dir(&dir)?;
    let results: Vec<anyhow::Result<Trajectory>> =
        parallel_map(issues, concurrency, |issue| {
            run_rollout(issue, &source, &client, &limits)
                .with_context(|| format!("rollout of issue {}", issue.issue_id))
        });

    let mut failures = 0usize;
    for result in results {
        match result {
            Ok(trajectory) => {
                let dest = dir.join(format!("{}.json", trajectory.issue_id));
                trajectory.save(&dest)?;
                println!(
                    "{}: {:?} after {} rounds, patch {} bytes -> {}",
                    trajectory.issue_id,
                    trajectory.termination,
                    trajectory.rounds_used,
                    trajectory.final_patch.text().len(),
                    dest.display()
                );
            }
            Err(err) => {
                failures += 1;
                eprintln!("error: {err:#}");
            }
        }
    }
    if failures > 0 {
        bail!("{failures} rollout(s) failed");
    }
    Ok(())
}

fn cmd_verify(cli: &Cli, cfg: &RunConfig, args: &CorpusArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&args.corpus, cfg)?;
    let issues = chosen_issues(&corpus, &args.issue)?;
    let (client, concurrency) = build_client(&cli.mock, cfg)?;

    let mut lines = Vec::new();
    let mut judged = 0usize;
    for issue in issues {
        let patches: Vec<_> = corpus
            .patches_for(&issue.issue_id)
            .into_iter()
            .cloned()
            .collect();
        if patches.is_empty() {
            eprintln!("warning: issue {} has no patches; skipped", issue.issue_id);
            continue;
        }
        let judgments =
            verify_patches(issue, &patches, &client, cfg.group_size, concurrency)
                .with_context(|| format!("verification of issue {}", issue.issue_id))?;
        judged += judgments.len();
        for judgment in &judgments {
            lines.push(serde_json::to_string(judgment)?);
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let dest = cfg.out_dir.join("judgments.jsonl");
    write_file(&dest, &(lines.join("\n") + "\n"))?;
    println!("wrote {judged} judgments to {}", dest.display());
    Ok(())
}

fn cmd_select(cli: &Cli, cfg: &RunConfig, args: &CorpusArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&args.corpus, cfg)?;
    let issues = chosen_issues(&corpus, &args.issue)?;
    let (client, concurrency) = build_client(&cli.mock, cfg)?;

    let dir = cfg.out_dir.join("selection");
    ensure_dir(&dir)?;
    for issue in issues {
        let patches: Vec<_> = corpus
            .patches_for(&issue.issue_id)
            .into_iter()
            .cloned()
            .collect();
        if patches.is_empty() {
            eprintln!("warning: issue {} has no patches; skipped", issue.issue_id);
            continue;
        }
        let result = select_best(issue, &patches, &client, cfg.group_size, concurrency)
            .with_context(|| format!("selection for issue {}", issue.issue_id))?;
        let dest = dir.join(format!("{}.json", issue.issue_id));
        write_file(&dest, &(serde_json::to_string_pretty(&result)? + "\n"))?;
        eprintln!(
            "{}: chose patch {} of {} ({} survivor(s){}) -> {}",
            issue.issue_id,
            result.chosen,
            patches.len(),
            result.survivors.len(),
            if result.fallback_used { ", fallback" } else { "" },
            dest.display()
        );
        print!("{}", patches[result.chosen].diff.text());
    }
    Ok(())
}

fn read_judgments(path: &Path) -> anyhow::Result<Vec<Judgment>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read judgments {}", path.display()))?;
    let mut judgments = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let judgment: Judgment = serde_json::from_str(line)
            .with_context(|| format!("malformed judgment at {}:{}", path.display(), idx + 1))?;
        judgments.push(judgment);
    }
    Ok(judgments)
}

fn cmd_metrics(
    cfg: &RunConfig,
    judgments_path: &Path,
    corpus_path: &Option<PathBuf>,
    by: Option<StratifyBy>,
    csv: Option<&Path>,
) -> anyhow::Result<()> {
    let judgments = read_judgments(judgments_path)?;
    let report = compute_metrics(&judgments)?;

    ensure_dir(&cfg.out_dir)?;
    let dest = cfg.out_dir.join("metrics.json");
    write_file(&dest, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    print!("{}", render_report_text(&report));
    eprintln!("wrote {}", dest.display());

    if let Some(by) = by {
        let corpus_path = corpus_path
            .clone()
            .or_else(|| cfg.corpus.clone())
            .ok_or_else(|| usage("--stratify needs --corpus to resolve patches"))?;
        let corpus = load_instances(&corpus_path)
            .with_context(|| format!("cannot load corpus {}", corpus_path.display()))?;
        let rows = stratify(&judgments, &corpus.issues, &corpus.patches, by.into())?;
        println!();
        print!("{}", render_strata_text(&rows));
        if let Some(csv_path) = csv {
            write_file(csv_path, &strata_to_csv(&rows))?;
            eprintln!("wrote {}", csv_path.display());
        }
    } else if csv.is_some() {
        return Err(usage("--csv requires --stratify"));
    }
    Ok(())
}

fn cmd_dataset_build(
    cfg: &RunConfig,
    corpus_path: &Option<PathBuf>,
    tolerance: f64,
) -> anyhow::Result<()> {
    let corpus = load_corpus(corpus_path, cfg)?;
    let outcome = build_balanced_groups(&corpus, cfg.group_size, tolerance, cfg.seed)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }

    ensure_dir(&cfg.out_dir)?;
    let dest = cfg.out_dir.join("groups.jsonl");
    let lines: Vec<String> = outcome
        .groups
        .iter()
        .map(serde_json::to_string)
        .collect::<Result<_, _>>()?;
    write_file(&dest, &(lines.join("\n") + "\n"))?;

    println!("raw class histogram:      {:?}", outcome.raw_histogram);
    println!("balanced class histogram: {:?}", outcome.class_histogram);
    println!("wrote {} groups to {}", outcome.groups.len(), dest.display());
    Ok(())
}

fn cmd_dataset_filter(cfg: &RunConfig, input: &Path) -> anyhow::Result<()> {
    let raw = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;

    let mut kept_lines = Vec::new();
    let mut report_lines = Vec::new();
    let mut reason_counts = std::collections::BTreeMap::new();
    let mut kept = 0usize;
    let mut total = 0usize;
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let record = parse_pr_record(line, idx + 1)?;
        let decision = filter_pr_record(&record);
        if decision.keep {
            kept += 1;
            kept_lines.push(line.to_string());
        }
        for reason in &decision.reasons {
            *reason_counts.entry(reason.to_string()).or_insert(0usize) += 1;
        }
        report_lines.push(serde_json::to_string(&serde_json::json!({
            "line": idx + 1,
            "repo": record.repo,
            "keep": decision.keep,
            "reasons": decision.reasons,
        }))?);
    }

    ensure_dir(&cfg.out_dir)?;
    let kept_dest = cfg.out_dir.join("filtered.jsonl");
    let report_dest = cfg.out_dir.join("filter_report.jsonl");
    write_file(&kept_dest, &(kept_lines.join("\n") + "\n"))?;
    write_file(&report_dest, &(report_lines.join("\n") + "\n"))?;

    println!("kept {kept} of {total} records -> {}", kept_dest.display());
    for (reason, count) in reason_counts {
        println!("  {reason}: {count}");
    }
    println!("decision log -> {}", report_dest.display());
    Ok(())
}

fn cmd_consistency(
    cli: &Cli,
    cfg: &RunConfig,
    args: &CorpusArgs,
    samples: usize,
) -> anyhow::Result<()> {
    if samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let corpus = load_corpus(&args.corpus, cfg)?;
    let issues = chosen_issues(&corpus, &args.issue)?;
    let (client, concurrency) = build_client(&cli.mock, cfg)?;

    let dir = cfg.out_dir.join("consistency");
    ensure_dir(&dir)?;
    for issue in issues {
        let patches: Vec<_> = corpus
            .patches_for(&issue.issue_id)
            .into_iter()
            .cloned()
            .collect();
        if patches.is_empty() {
            eprintln!("warning: issue {} has no patches; skipped", issue.issue_id);
            continue;
        }
        let profile = consistency_profile(
            issue,
            &patches,
            &client,
            samples,
            cfg.group_size,
            concurrency,
        )
        .with_context(|| format!("consistency profile for issue {}", issue.issue_id))?;
        let dest = dir.join(format!("{}.json", issue.issue_id));
        write_file(&dest, &(serde_json::to_string_pretty(&profile)? + "\n"))?;
        println!(
            "{}: deviation histogram {:?} over {} samples -> {}",
            issue.issue_id, profile.histogram, samples, dest.display()
        );
    }
    Ok(())
}
