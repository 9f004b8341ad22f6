//! `gnmsim`: validate, run and trace grid-scheduling scenarios.
//!
//! Exit codes: 0 success, 1 scenario validation failure, 2 runtime error,
//! 64 usage error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use gnm_core::engine::mix_seed;
use gnm_core::metrics::{self, ResultRow};
use gnm_core::scenario::Scenario;
use gnm_core::sim::{self, Policy, RunLog, RunOptions};

const BUNDLED_NAME: &str = "paper-tables.cfg";

#[derive(Parser, Debug)]
#[command(name = "gnmsim", version, about = "Grid scheduling simulator with per-node knowledge extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario file and print every violation.
    Validate {
        /// Scenario path (`paper-tables.cfg` falls back to the bundled copy).
        scenario: String,
    },
    /// Run replications and write metrics under --out.
    Run(RunArgs),
    /// Print a scenario in canonical form, optionally with its node population.
    DumpScenario {
        /// Defaults to the bundled scenario.
        scenario: Option<String>,
        #[arg(long)]
        scale: Option<f64>,
        /// Also write the expanded node population (JSON) to this file.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run one replication with the event log on.
    Trace {
        scenario: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Trace the random baseline instead of the GNM policy.
        #[arg(long)]
        baseline: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    scenario: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Replications (defaults to the scenario's own count).
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    /// Shrink node and task counts by this factor.
    #[arg(long)]
    scale: Option<f64>,
    /// Also run the random-admitting baseline.
    #[arg(long)]
    baseline: bool,
    /// Also write results-long.csv.
    #[arg(long)]
    long: bool,
    /// Write event traces and announcement logs per replication.
    #[arg(long)]
    trace: bool,
    /// Write every node's record table per replication.
    #[arg(long)]
    dump_records: bool,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(name: &str, scale: Option<f64>) -> Result<Scenario, Failure> {
    let path = Path::new(name);
    let scenario = if !path.exists() && path.file_name().is_some_and(|f| f == BUNDLED_NAME) {
        Scenario::bundled()
    } else {
        Scenario::load(path).with_context(|| format!("loading {name}"))?
    };
    let violations = scenario.validate();
    if !violations.is_empty() {
        return Err(Failure::Invalid(violations.iter().map(|v| v.to_string()).collect()));
    }
    Ok(match scale {
        Some(f) if f > 0.0 => scenario.scaled(f),
        Some(f) => return Err(Failure::Runtime(anyhow::anyhow!("--scale must be positive, got {f}"))),
        None => scenario,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_records(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for n in &log.records {
        for r in &n.records {
            w.serialize(RecordRow::new(n.node_id.0, &n.ls, r))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct RecordRow<'a> {
    node_id: u32,
    ls: &'a str,
    task_id: u64,
    cpu_load: f64,
    free_ram_mb: f64,
    task_size_mi: f64,
    memory_mb: f64,
    deadline_s: f64,
    priority: gnm_core::model::Priority,
    waiting_tasks: u32,
    dtr: f64,
    submitted_at_s: f64,
    start_time_s: Option<f64>,
    spent_time_s: Option<f64>,
    completion_time_s: Option<f64>,
    finished_at_s: Option<f64>,
    final_state: gnm_core::model::TaskState,
    cost_price: Option<f64>,
}

impl<'a> RecordRow<'a> {
    fn new(node_id: u32, ls: &'a str, r: &gnm_core::model::TaskRecord) -> Self {
        Self {
            node_id,
            ls,
            task_id: r.task_id.0,
            cpu_load: r.cpu_load_at_submit,
            free_ram_mb: r.free_ram_at_submit_mb,
            task_size_mi: r.task_size_mi,
            memory_mb: r.memory_mb,
            deadline_s: r.deadline_s,
            priority: r.priority,
            waiting_tasks: r.waiting_grid_tasks,
            dtr: r.dtr_at_submit,
            submitted_at_s: r.submitted_at_s,
            start_time_s: r.start_time_s,
            spent_time_s: r.spent_time_s,
            completion_time_s: r.completion_time_s,
            finished_at_s: r.finished_at_s,
            final_state: r.final_state,
            cost_price: r.cost_price,
        }
    }
}

fn suffix(policy: Policy, rep: u32) -> String {
    match policy {
        Policy::Gnm => format!("rep{rep}"),
        p => format!("{}-rep{rep}", p.name()),
    }
}

fn write_trace_files(out: &Path, tag: &str, log: &RunLog) -> Result<()> {
    write_lines(&out.join(format!("trace-{tag}.ndjson")), log.trace.iter().cloned())?;
    let ann = log.announcements.iter().map(|a| serde_json::to_string(a).expect("announcements serialize"));
    write_lines(&out.join(format!("announcements-{tag}.ndjson")), ann)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario, args.scale)?;
    let reps = args.reps.unwrap_or(scenario.params.replications);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut policies = vec![Policy::Gnm];
    if args.baseline {
        policies.push(Policy::RandomBaseline);
    }
    let jobs: Vec<(u32, Policy)> = (0..reps).flat_map(|r| policies.iter().map(move |&p| (r, p))).collect();
    let opts = RunOptions { trace: args.trace, keep_records: args.dump_records };
    let logs: Vec<Result<(u32, RunLog), sim::SimError>> = jobs
        .par_iter()
        .map(|&(rep, policy)| {
            sim::run_replication(&scenario, policy, mix_seed(args.seed, u64::from(rep)), &opts).map(|l| (rep, l))
        })
        .collect();

    let mut rows: Vec<ResultRow> = Vec::new();
    for entry in logs {
        let (rep, log) = entry.context("simulation failed")?;
        let tag = suffix(log.policy, rep);
        metrics::write_allocations_csv(&log, create(&args.out.join(format!("allocations-{tag}.csv")))?)
            .context("writing allocations")?;
        if args.trace {
            write_trace_files(&args.out, &tag, &log)?;
        }
        if args.dump_records {
            write_records(&args.out.join(format!("records-{tag}.csv")), &log)?;
        }
        let violations = metrics::deadline_violations(&log);
        if violations > 0 {
            log::warn!("{tag}: {violations} successes after their deadline");
        }
        rows.extend(metrics::result_rows(&log, rep));
    }
    metrics::write_results_csv(&rows, create(&args.out.join("results.csv"))?).context("writing results")?;
    if args.long {
        metrics::write_long_csv(&rows, create(&args.out.join("results-long.csv"))?).context("writing long results")?;
    }
    let summary = metrics::summarize(&rows);
    let mut w = create(&args.out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).context("writing summary")?;
    writeln!(w).context("writing summary")?;
    w.flush().context("writing summary")?;
    for s in &summary {
        println!(
            "{:<12} {:<4} {:<8} completion {:.3} ± {:.3}",
            s.group, s.ls, s.policy, s.completion_ratio.mean, s.completion_ratio.sd
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => {
            load(&scenario, None)?;
            println!("{scenario}: ok");
            Ok(())
        }
        Command::Run(args) => run(args),
        Command::DumpScenario { scenario, scale, population, seed } => {
            let s = load(scenario.as_deref().unwrap_or(BUNDLED_NAME), scale)?;
            print!("{}", s.to_toml_string().context("serializing scenario")?);
            if let Some(path) = population {
                let nodes: Vec<_> = sim::node_population(&s, seed).into_iter().flatten().collect();
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &nodes).context("writing population")?;
                w.flush().context("writing population")?;
            }
            Ok(())
        }
        Command::Trace { scenario, seed, scale, out, baseline } => {
            let s = load(&scenario, scale)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let policy = if baseline { Policy::RandomBaseline } else { Policy::Gnm };
            let log = sim::run_replication(&s, policy, seed, &RunOptions { trace: true, keep_records: false })
                .context("simulation failed")?;
            write_trace_files(&out, policy.name(), &log)?;
            println!("{} events", log.events_processed);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDSIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(violations)) => {
            for v in violations {
                eprintln!("{v}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
