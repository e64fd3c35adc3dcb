mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use culturesteer::dataset::Axis;
use culturesteer::persona::PersonaKind;
use culturesteer::{ErrorKind, RunConfig};

/// Cultural value probing and activation steering.
#[derive(Parser, Debug)]
#[command(name = "culturesteer", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides CULTURESTEER_OUT and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    axis: Option<Axis>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    persona: Option<PersonaKind>,
    #[arg(long, global = true)]
    country: Option<String>,
    #[arg(long, global = true)]
    anchors: Option<PathBuf>,
    /// Allow |alpha| above the configured cap.
    #[arg(long, global = true)]
    force: bool,
    /// Warn instead of failing when the dataset misses the canonical layout.
    #[arg(long, global = true)]
    lenient: bool,
    /// Log verbosity: -v for debug, -vv for trace.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset against the schema and the canonical layout.
    Validate,
    /// Print the scenario-generation prompt.
    EmitGenPrompt {
        #[arg(long = "wvs-id", value_delimiter = ',')]
        wvs_ids: Vec<String>,
        #[arg(long = "domain", value_delimiter = ',')]
        domains: Vec<culturesteer::Domain>,
        #[arg(long)]
        per_combination: Option<usize>,
    },
    /// Print a persona preamble.
    Persona {
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Write the built-in 600-scenario dataset.
    Fixture {
        #[arg(long, default_value = "data/scenarios.json")]
        output: PathBuf,
    },
    /// Write freshly initialized tiny-model weights.
    InitModel {
        #[arg(long, default_value = "model.bin")]
        output: PathBuf,
    },
    /// Serve the configured model over stdin/stdout (JSON lines).
    ServeBackend,
    /// Baseline (or persona) probing over the whole dataset.
    Probe,
    /// Extract vectors on the optimization split and rank layers.
    LayerSearch,
    /// Steered probing on the evaluation split with the selected layers.
    Steer,
    /// Reports derived from earlier runs.
    Analyze {
        #[command(subcommand)]
        which: Analyze,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Analyze {
    Entangle,
    Distance,
    Heatmap,
    Correlation,
    PplCurve,
    Plot,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(match e.kind() {
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Runtime => EXIT_RUNTIME,
            })
        }
    }
}

fn resolve_config(g: &Global) -> culturesteer::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var("CULTURESTEER_OUT") {
        if !dir.is_empty() {
            cfg.out_dir = dir.into();
        }
    }
    if let Some(v) = &g.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &g.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &g.weights {
        cfg.weights = Some(v.clone());
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.axis {
        cfg.axis = v;
    }
    if let Some(v) = g.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = g.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = g.persona {
        cfg.persona.kind = v;
    }
    if let Some(v) = &g.country {
        cfg.persona.country = Some(v.clone());
    }
    if let Some(v) = &g.anchors {
        cfg.anchors = Some(v.clone());
    }
    cfg.check()?;
    Ok(cfg)
}

fn run(cli: Cli) -> culturesteer::Result<ExitCode> {
    let cfg = resolve_config(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build()
        .map_err(|e| culturesteer::Error::InvalidConfig(format!("thread pool: {e}")))?;
    let g = cli.global;
    pool.install(|| match cli.command {
        Command::Validate => pipeline::validate(&cfg),
        Command::EmitGenPrompt {
            wvs_ids,
            domains,
            per_combination,
        } => pipeline::emit_gen_prompt(wvs_ids, domains, per_combination),
        Command::Persona { stats, codebook } => pipeline::persona(&cfg, stats, codebook),
        Command::Fixture { output } => pipeline::fixture(&output),
        Command::InitModel { output } => pipeline::init_model(&cfg, &output),
        Command::ServeBackend => pipeline::serve_backend(&cfg),
        Command::Probe => pipeline::Context::new(cfg, &g)?.probe(),
        Command::LayerSearch => pipeline::Context::new(cfg, &g)?.layer_search().map(|_| ExitCode::SUCCESS),
        Command::Steer => pipeline::Context::new(cfg, &g)?.steer(),
        Command::Analyze { which } => pipeline::Context::new(cfg, &g)?.analyze(which),
    })
}
