use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use kcast_core::adversary::{AdversaryRegistry, EnumerationOptions};
use kcast_core::harness::{self, RunConfig, SweepConfig};
use kcast_core::netmodel::Payload;

/// Broadcast over k-cast channels: run the protocol, sweep the threshold,
/// replay traces.
#[derive(Parser)]
#[command(name = "kcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol against every strategy of one adversary class.
    Run(RunArgs),
    /// Tabulate predicted against observed outcomes over a parameter range.
    Sweep(SweepArgs),
    /// Classify (k, h, f) against the 2f < kh threshold.
    CheckThreshold(ThresholdArgs),
    /// Recompute a trace's verdict and re-execute it.
    Replay { trace: PathBuf },
    /// List the registered adversary classes.
    Adversaries,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with run settings; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    /// Sender input as a bit string, e.g. 1 or 0110.
    #[arg(long, value_parser = parse_payload)]
    input: Option<Payload>,
    /// none, silent, random, chain or exhaustive.
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds for the random class.
    #[arg(long)]
    trials: Option<u64>,
    /// Compliant cluster pair for the chain class.
    #[arg(long)]
    pair: Option<usize>,
    /// Deepest recursion level enumerated by the exhaustive class.
    #[arg(long)]
    depth_bound: Option<usize>,
    /// Largest party count the exhaustive class accepts.
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    override_guard: bool,
    /// Write the reported execution as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 2)]
    max_k: usize,
    #[arg(long, default_value_t = 4)]
    max_h: usize,
    #[arg(long, default_value_t = 3)]
    max_f: usize,
    /// Skip configurations with more than this many parties.
    #[arg(long, default_value_t = 5)]
    max_parties: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,silent,random,chain,exhaustive"
    )]
    adversaries: Vec<String>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, value_parser = parse_payload, default_value = "1")]
    input: Payload,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    #[arg(long)]
    override_guard: bool,
    /// Print the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    f: usize,
}

fn parse_payload(s: &str) -> Result<Payload, String> {
    Payload::parse(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn into_config(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        take!(k, h, f, input, adversary, seed, trials, max_n);
        if self.pair.is_some() {
            cfg.pair = self.pair;
        }
        if self.depth_bound.is_some() {
            cfg.depth_bound = self.depth_bound;
        }
        if self.trace.is_some() {
            cfg.trace = self.trace;
        }
        cfg.override_guard |= self.override_guard;
        Ok(cfg)
    }
}

/// `Ok(true)` when every expectation held.
fn dispatch(command: Command) -> anyhow::Result<bool> {
    let registry = AdversaryRegistry::with_builtins();
    match command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let report = harness::run(&cfg, &registry)?;
            println!("{report}");
            if let Some(path) = &cfg.trace {
                println!("trace      {}", path.display());
            }
            Ok(report.expectations_met())
        }
        Command::Sweep(args) => {
            let cfg = SweepConfig {
                max_k: args.max_k,
                max_h: args.max_h,
                max_f: args.max_f,
                max_parties: args.max_parties,
                classes: args.adversaries,
                input: args.input,
                trials: args.trials,
                enumeration: EnumerationOptions {
                    depth_bound: None,
                    max_n: args.max_n,
                    override_guard: args.override_guard,
                },
            };
            let table = harness::sweep(&cfg, &registry)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                println!("{table}");
            }
            Ok(table.all_pass())
        }
        Command::CheckThreshold(ThresholdArgs { k, h, f }) => {
            anyhow::ensure!(k >= 1 && h >= 2, "need k >= 1 and h >= 2");
            println!("{}", harness::check_threshold(k, h, f));
            Ok(true)
        }
        Command::Replay { trace } => {
            let report = harness::replay(&trace)?;
            println!("{report}");
            Ok(report.ok())
        }
        Command::Adversaries => {
            for class in registry.classes() {
                println!("{:<12}{}", class.name(), class.summary());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
