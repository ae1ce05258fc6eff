//! `toolgraph`: train, replay and inspect tool-memory agents on the
//! synthetic environment.

mod config;
mod plot;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use toolgraph_rl::credit::compute_advantages;
use toolgraph_rl::memory::ToolGraph;
use toolgraph_rl::par::Execution;
use toolgraph_rl::retrieval::{hybrid_rank, EmbeddingProvider, TrigramEmbedder};
use toolgraph_rl::reward::{apply_rewards, score_trajectory, trajectory_return, NormalizedMatchJudge};
use toolgraph_rl::sim::{self, new_policy, SyntheticTask};
use toolgraph_rl::trajectory::{read_corpus, write_corpus, Trajectory};
use toolgraph_rl::RunConfig;

use crate::plot::PlotKind;

#[derive(Parser)]
#[command(name = "toolgraph", version, about = "Tool-memory agent training harness")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop and write metrics, graph store and policy.
    Train {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        iterations: Option<u64>,
        /// Run rollouts sequentially.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Ingest a trajectory corpus, re-score it and check its invariants.
    Replay {
        #[arg(long)]
        corpus: PathBuf,
        /// Task file to judge answers against; recorded outcomes otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write the re-scored corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step advantage records for a trajectory corpus.
    Advantages {
        #[arg(long)]
        corpus: PathBuf,
        /// Graph store used to canonicalize tool identities.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Recompute rewards from recorded outcomes before grouping.
        #[arg(long)]
        rescore: bool,
    },
    /// Inspect a graph store.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
    /// Rank stored tools for a query.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Plot a metric family from a metrics log.
    Metrics {
        #[arg(long, value_enum)]
        plot: PlotKind,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the annotated default config or the effective config.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Write a generated task file.
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_tasks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum GraphAction {
    Export {
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Stats {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(Subcommand)]
enum ConfigAction {
    Template,
    Show,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Config { action: ConfigAction::Template } = cli.command {
        print!("{}", config::template()?);
        return Ok(());
    }
    let cfg = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train { seed, workers, iterations, sequential, quiet } => {
            train(cfg, seed, workers, iterations, sequential, quiet)
        }
        Command::Replay { corpus, dataset, out } => replay(&cfg, &corpus, dataset.as_deref(), out.as_deref()),
        Command::Advantages { corpus, store, rescore } => advantages(&cfg, &corpus, store.as_deref(), rescore),
        Command::Graph { action: GraphAction::Export { format, store, out } } => {
            let g = load_store(store.as_deref().unwrap_or(&cfg.paths.graph_store))?;
            let text = match format {
                GraphFormat::Dot => g.export_dot(),
                GraphFormat::Json => g.to_json() + "\n",
            };
            emit(out.as_deref(), &text)
        }
        Command::Graph { action: GraphAction::Stats { store } } => {
            let s = load_store(store.as_deref().unwrap_or(&cfg.paths.graph_store))?.stats();
            println!("{:<24}{:>8}", "metric", "value");
            for (k, v) in [
                ("node_count", s.node_count),
                ("edge_count", s.edge_count),
                ("component_count", s.component_count),
                ("largest_component_size", s.largest_component_size),
            ] {
                println!("{k:<24}{v:>8}");
            }
            Ok(())
        }
        Command::Retrieve { query, k, alpha, store } => {
            let g = load_store(store.as_deref().unwrap_or(&cfg.paths.graph_store))?;
            let mut rc = cfg.retrieval;
            rc.top_k = k.unwrap_or(rc.top_k);
            rc.alpha = alpha.unwrap_or(rc.alpha);
            let provider = provider(&cfg)?;
            let ranked = hybrid_rank(&[query], &g, provider.as_ref(), &rc, Execution::Sequential)?;
            println!("{:<5}{:>6}  {:<28}{:>8}{:>8}{:>8}", "rank", "id", "name", "text", "sem", "hyb");
            for (i, s) in ranked[0].iter().enumerate() {
                println!("{:<5}{:>6}  {:<28}{:>8.4}{:>8.4}{:>8.4}", i + 1, s.id, s.name, s.text, s.sem, s.hyb);
            }
            Ok(())
        }
        Command::Metrics { plot, input, out_dir } => metrics(&cfg, plot, input.as_deref(), &out_dir),
        Command::Config { action: ConfigAction::Show } => {
            print!("{}", config::to_toml(&cfg)?);
            Ok(())
        }
        Command::Config { action: ConfigAction::Template } => unreachable!("handled before loading"),
        Command::Dataset { out, num_tasks, seed } => {
            let mut dc = cfg.dataset.clone();
            dc.num_tasks = num_tasks.unwrap_or(dc.num_tasks);
            dc.seed = seed.unwrap_or(dc.seed);
            let tasks = sim::generate_dataset(&dc)?;
            let mut w = BufWriter::new(create(&out)?);
            sim::write_dataset(&mut w, &tasks)?;
            w.flush()?;
            eprintln!("wrote {} tasks to {}", tasks.len(), out.display());
            Ok(())
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    ensure_parent(path)?;
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).with_context(|| format!("opening {what} {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => create(p)?.write_all(text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn load_store(path: &Path) -> Result<ToolGraph> {
    if !path.exists() {
        bail!("graph store {} does not exist; run `toolgraph train` first or pass --store", path.display());
    }
    Ok(ToolGraph::load(path)?)
}

fn provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match &cfg.paths.embedding_url {
        None => Ok(Box::new(TrigramEmbedder::default())),
        #[cfg(feature = "http-embedding")]
        Some(url) => Ok(Box::new(toolgraph_rl::retrieval::HttpEmbeddingProvider::connect(url.clone())?)),
        #[cfg(not(feature = "http-embedding"))]
        Some(_) => bail!("paths.embedding_url is set but this binary was built without the http-embedding feature"),
    }
}

fn dataset(cfg: &RunConfig) -> Result<Vec<SyntheticTask>> {
    match &cfg.paths.dataset {
        Some(p) => {
            if !p.exists() {
                bail!(
                    "dataset {} does not exist; create one with `toolgraph dataset --out {}` or unset paths.dataset",
                    p.display(),
                    p.display()
                );
            }
            Ok(sim::read_dataset(open(p, "dataset")?).with_context(|| format!("reading dataset {}", p.display()))?)
        }
        None => Ok(sim::generate_dataset(&cfg.dataset)?),
    }
}

fn train(
    mut cfg: RunConfig,
    seed: Option<u64>,
    workers: Option<usize>,
    iterations: Option<u64>,
    sequential: bool,
    quiet: bool,
) -> Result<()> {
    if let Some(s) = seed {
        cfg.sim.seed = s;
        cfg.dataset.seed = s;
    }
    cfg.sim.workers = workers.unwrap_or(cfg.sim.workers);
    cfg.sim.iterations = iterations.unwrap_or(cfg.sim.iterations);
    if sequential {
        cfg.sim.execution = Execution::Sequential;
    }
    let data = dataset(&cfg)?;
    let provider = provider(&cfg)?;
    let mut policy = new_policy(cfg.sim.temperature);
    let mut graph = ToolGraph::new(cfg.graph.similarity_threshold);
    let mut out = BufWriter::new(create(&cfg.paths.metrics_out)?);
    let mut io_err: Option<io::Error> = None;
    let metrics =
        sim::run_training(&data, &mut policy, &mut graph, &cfg, provider.as_ref(), 0..cfg.sim.iterations, &mut |m| {
            let line = serde_json::to_string(m).expect("metrics serialize");
            if let Err(e) = writeln!(out, "{line}") {
                io_err.get_or_insert(e);
            }
            if !quiet {
                eprintln!(
                    "iter {:>4}  return {:>7.4}  success {:>5.2}  entropy {:>6.4}  nodes {:>3}  components {:>3}",
                    m.iteration, m.mean_return, m.success_rate, m.entropy, m.node_count, m.component_count
                );
            }
        })?;
    if let Some(e) = io_err {
        return Err(e).with_context(|| format!("writing {}", cfg.paths.metrics_out.display()));
    }
    out.flush()?;
    ensure_parent(&cfg.paths.graph_store)?;
    graph.store(&cfg.paths.graph_store)?;
    let mut pw = BufWriter::new(create(&cfg.paths.policy_out)?);
    serde_json::to_writer_pretty(&mut pw, &policy)?;
    writeln!(pw)?;
    pw.flush()?;
    let tail = &metrics[metrics.len().saturating_sub(20)..];
    let mean = |f: fn(&sim::IterationMetrics) -> f64| tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64;
    let s = graph.stats();
    println!("iterations        {}", metrics.len());
    println!("final mean return {:.4}", mean(|m| m.mean_return));
    println!("final success     {:.4}", mean(|m| m.success_rate));
    println!("graph             {} nodes, {} edges, {} components", s.node_count, s.edge_count, s.component_count);
    println!("metrics           {}", cfg.paths.metrics_out.display());
    println!("graph store       {}", cfg.paths.graph_store.display());
    println!("policy            {}", cfg.paths.policy_out.display());
    Ok(())
}

fn read_corpus_file(path: &Path) -> Result<Vec<Trajectory>> {
    read_corpus(open(path, "corpus")?).with_context(|| format!("reading corpus {}", path.display()))
}

#[derive(Serialize)]
struct ReplayRecord<'a> {
    task_id: &'a str,
    rollout: usize,
    steps: usize,
    turns: usize,
    outcome: bool,
    #[serde(rename = "return")]
    ret: f64,
    violations: Option<String>,
}

fn replay(cfg: &RunConfig, corpus: &Path, dataset: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut trajectories = read_corpus_file(corpus)?;
    let tasks = match dataset {
        Some(p) => sim::read_dataset(open(p, "dataset")?)?,
        None => Vec::new(),
    };
    for t in &mut trajectories {
        if dataset.is_some() {
            let task = tasks
                .iter()
                .find(|x| x.id == t.task_id)
                .with_context(|| format!("task {} (rollout {}) is not in the dataset", t.task_id, t.rollout_index))?;
            score_trajectory(t, &task.task(), &cfg.reward, &NormalizedMatchJudge)?;
        } else {
            let outcome = if t.outcome { cfg.reward.r_success } else { 0.0 };
            apply_rewards(t, outcome, &cfg.reward);
        }
    }
    let mut stdout = io::stdout().lock();
    for t in &trajectories {
        let rec = ReplayRecord {
            task_id: &t.task_id,
            rollout: t.rollout_index,
            steps: t.steps.len(),
            turns: t.turns(),
            outcome: t.outcome,
            ret: trajectory_return(t),
            violations: t.check_invariants(cfg.sim.max_turns).err(),
        };
        writeln!(stdout, "{}", serde_json::to_string(&rec)?)?;
    }
    if let Some(p) = out {
        let mut w = BufWriter::new(create(p)?);
        write_corpus(&mut w, &trajectories)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AdvantageRecord<'a> {
    task_id: &'a str,
    rollout: usize,
    step: usize,
    anchor: Option<String>,
    a_e: f64,
    a_s: Option<f64>,
    a: f64,
}

fn advantages(cfg: &RunConfig, corpus: &Path, store: Option<&Path>, rescore: bool) -> Result<()> {
    let mut batch = read_corpus_file(corpus)?;
    if rescore {
        for t in &mut batch {
            let outcome = if t.outcome { cfg.reward.r_success } else { 0.0 };
            apply_rewards(t, outcome, &cfg.reward);
        }
    }
    let registry = match store {
        Some(p) => load_store(p)?,
        None => ToolGraph::new(cfg.graph.similarity_threshold),
    };
    let provider = provider(cfg)?;
    let adv = compute_advantages(&batch, &registry, provider.as_ref(), &cfg.advantage, Execution::Sequential)?;
    let mut stdout = io::stdout().lock();
    for rows in &adv {
        for r in rows {
            let rec = AdvantageRecord {
                task_id: &r.task_id,
                rollout: r.rollout_index,
                step: r.step,
                anchor: r.anchor.as_ref().map(ToString::to_string),
                a_e: r.episode,
                a_s: r.step_level,
                a: r.combined,
            };
            writeln!(stdout, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    Ok(())
}

fn metrics(cfg: &RunConfig, kind: PlotKind, input: Option<&Path>, out_dir: &Path) -> Result<()> {
    let input = input.unwrap_or(&cfg.paths.metrics_out);
    let m = plot::read_metrics(open(input, "metrics")?)?;
    if m.is_empty() {
        bail!("metrics file {} has no records", input.display());
    }
    let iterations: Vec<u64> = m.iter().map(|x| x.iteration).collect();
    let series = kind.series(&m);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv = out_dir.join(format!("{}.csv", kind.file_stem()));
    let svg = out_dir.join(format!("{}.svg", kind.file_stem()));
    fs::write(&csv, plot::to_csv(&iterations, &series)).with_context(|| format!("writing {}", csv.display()))?;
    plot::render_svg(&svg, kind.file_stem(), &iterations, &series)?;
    println!("{} slope {:.6}", series[0].0, plot::slope(&series[0].1));
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
