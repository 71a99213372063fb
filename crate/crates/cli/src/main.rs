use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use loosecut::bench::{self, BenchOptions, Method};
use loosecut::imagecore::{load_image, load_mask, save_mask};
use loosecut::solver::{loosecut, Init};
use loosecut::{BoundingBox, SolverConfig};
use loosecut_service::store::SessionStore;
use loosecut_service::AppState;

#[derive(Parser)]
#[command(
    name = "loosecut",
    version,
    about = "Foreground segmentation from loose bounding boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image from a box or an initial mask.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// Box as x0,y0,w,h in pixels.
        #[arg(long = "box", required_unless_present = "mask")]
        bbox: Option<BoundingBox>,
        /// Initial foreground mask; used instead of the box when given.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// JSON file with solver settings; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "loosecut")]
        method: Method,
        /// Write the per-iteration energy trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a looseness sweep over a dataset directory.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1.2,2.4,6.0")]
        looseness: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "loosecut,grabcut")]
        methods: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Record wall-clock runtime per run (otherwise runtime_ms is 0).
        #[arg(long)]
        timing: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "LOOSECUT_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the synthetic disk-and-trap dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

fn read_config(path: Option<&Path>) -> Result<SolverConfig> {
    let Some(path) = path else {
        return Ok(SolverConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: SolverConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn write_trace(path: &Path, trace: &[loosecut::solver::TraceEntry]) -> Result<()> {
    let mut out = String::from("iter,e_gc,e_lc,e_total\n");
    for t in trace {
        out += &format!("{},{},{},{}\n", t.iteration, t.e_gc, t.e_lc, t.e_total);
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment {
            image,
            bbox,
            mask,
            config,
            out,
            method,
            trace,
        } => {
            let img = load_image(&image)?;
            let init = match (mask, bbox) {
                (Some(m), _) => Init::Mask(load_mask(&m)?),
                (None, Some(b)) => Init::Box(b),
                (None, None) => bail!("either --box or --mask is required"),
            };
            let config = method.config(&read_config(config.as_deref())?);
            let result = loosecut(&img, &init, &config)?;
            save_mask(&result.mask, &out)?;
            if let Some(path) = trace {
                write_trace(&path, &result.trace)?;
            }
            eprintln!(
                "{} foreground pixels after {} iterations{}",
                result.mask.count_foreground(),
                result.iterations_run,
                if result.converged { "" } else { " (not converged)" }
            );
        }
        Command::Bench {
            dataset,
            looseness,
            methods,
            out,
            summary,
            seed,
            config,
            timing,
        } => {
            let mut config = read_config(config.as_deref())?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let options = BenchOptions {
                looseness,
                methods,
                config,
                timing,
            };
            let report = bench::run_benchmark(&dataset, &options)?;
            bench::write_records(&report.records, &out)?;
            if let Some(path) = summary {
                bench::write_summary(&bench::summarize(&report.records)?, &path)?;
            }
            eprintln!("{} records, {} skipped", report.records.len(), report.skipped.len());
        }
        Command::Serve { listen, config } => {
            let state = AppState::new(SessionStore::default(), read_config(config.as_deref())?);
            tokio::runtime::Runtime::new()?.block_on(loosecut_service::serve(listen, state))?;
        }
        Command::Synth { out, count } => {
            let ids = bench::write_synthetic_dataset(&out, count)?;
            eprintln!("wrote {} cases to {}", ids.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
