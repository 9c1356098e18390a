use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use livectr_core::config::RunConfig;
use livectr_core::model::ObjectiveMode;
use livectr_core::pipeline::{
    self, read_samples, render_comparison, run_assemble, run_compare, run_eval, run_simulate,
    run_train, Catalog,
};
use livectr_core::seq::HistoryIndex;
use livectr_core::streaming::{PolicyKind, ReportPolicy};

#[derive(Parser)]
#[command(
    name = "livectr",
    about = "Live-streaming CTR pipeline: simulate sessions, assemble streaming labels, train online, evaluate detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (.json or .toml); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Base output directory; the run lands in <out>/<config digest>.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.sim.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// Report policy: exit-report, fast-slow, or realtime.
    #[arg(long, default_value = "realtime")]
    policy: String,
    #[arg(long, default_value_t = 300.0)]
    fast_window: f64,
    #[arg(long, default_value_t = 3600.0)]
    slow_window: f64,
    #[arg(long, default_value_t = 30.0)]
    tick: f64,
}

impl PolicyArgs {
    fn build(&self) -> Result<ReportPolicy> {
        let kind = match self.policy.as_str() {
            "exit-report" | "exit_report" | "exit" => PolicyKind::ExitReport,
            "fast-slow" | "fast_slow" => PolicyKind::FastSlow,
            "realtime" | "rt" => PolicyKind::Realtime,
            other => bail!("unknown policy {other}"),
        };
        let policy = ReportPolicy {
            kind,
            fast_window: self.fast_window,
            slow_window: self.slow_window,
            tick: self.tick,
            realtime_cap: None,
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the event log, ground-truth series, catalog, and history store.
    Simulate(ConfigArgs),
    /// Convert an event log into training samples under one report policy.
    Assemble {
        /// Event log (line-delimited JSON).
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Output sample file.
        #[arg(long)]
        samples: PathBuf,
    },
    /// Train the multi-task model over an assembled sample stream.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        samples: PathBuf,
        /// Objective: fast_slow or realtime.
        #[arg(long)]
        mode: String,
        /// Catalog written by simulate (room/author/category metadata).
        #[arg(long)]
        catalog: PathBuf,
        /// Event log for history retrieval; needed when sequences are on.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Label for the checkpoint/trace file names.
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// Score a checkpoint against a fully labeled event log.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 50)]
        seq_length: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the full realtime-vs-fast-slow experiment on one event log.
    ComparePolicies(ConfigArgs),
    /// Print the summary of a finished compare-policies run.
    Report {
        /// Run directory containing comparison.json.
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => {
            let config = args.load()?;
            let dir = pipeline::run_dir(&args.out, &config);
            let output = run_simulate(&config, &dir)?;
            println!(
                "wrote {} events for {} rooms under {}",
                output.events.len(),
                output.rooms.len(),
                dir.display()
            );
        }
        Command::Assemble {
            events,
            policy,
            samples,
        } => {
            let policy = policy.build()?;
            let count = run_assemble(&events, &policy, &samples)?;
            println!("wrote {count} samples to {}", samples.display());
        }
        Command::Train {
            config,
            samples,
            mode,
            catalog,
            events,
            label,
        } => {
            let run_config = config.load()?;
            let mode = ObjectiveMode::from_name(&mode)
                .with_context(|| format!("unknown mode {mode} (fast_slow or realtime)"))?;
            let catalog: Catalog = pipeline::load_catalog(&catalog)?;
            let samples = read_samples(&samples)?;
            let history = match (&events, run_config.seq.enabled) {
                (Some(path), true) => {
                    let events = pipeline::read_events(path)?;
                    Some(HistoryIndex::from_events(&events, &catalog.authors())?)
                }
                (None, true) => bail!("--events is required when sequences are enabled"),
                _ => None,
            };
            let dir = pipeline::run_dir(&config.out, &run_config);
            let artifacts = run_train(
                &run_config,
                &samples,
                &catalog,
                history,
                mode,
                &dir,
                &label,
            )?;
            println!(
                "trained {} steps; checkpoint digest {}",
                artifacts.result.steps,
                pipeline::checkpoint_digest(&artifacts.params)
            );
        }
        Command::Eval {
            checkpoint,
            events,
            catalog,
            seq_length,
            report,
        } => {
            let eval = run_eval(&checkpoint, &events, &catalog, seq_length, &report)?;
            for (task, row) in &eval.per_task {
                let fmt =
                    |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "null".into());
                println!("{task}: auc {} gauc {}", fmt(row.auc), fmt(row.gauc));
            }
        }
        Command::ComparePolicies(args) => {
            let config = args.load()?;
            let dir = pipeline::run_dir(&args.out, &config);
            let report = run_compare(&config, &dir)?;
            render_comparison(&report, &mut std::io::stdout())?;
            println!("full report: {}", dir.join(pipeline::COMPARISON_FILE).display());
        }
        Command::Report { run_dir } => {
            let path = run_dir.join(pipeline::COMPARISON_FILE);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let report: pipeline::ComparisonReport = serde_json::from_str(&text)?;
            render_comparison(&report, &mut std::io::stdout())?;
        }
    }
    Ok(())
}
