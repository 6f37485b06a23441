use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hyperrestore::datasets::{load_corpus, load_image, save_png};
use hyperrestore::eval::{benchmark, sweep, Grid};
use hyperrestore::metrics::psnr;
use hyperrestore::{degrade, ArchConfig, Checkpoint, Error, ParamBreakdown, Task, TrainConfig};
use hyperrestore_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "hyperrestore", version, about = "Adaptive image restoration with a weight-generating hypernetwork")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config on a directory of images.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write progress records here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Restore one image at a given level, or at the estimated level with --blind.
    Restore {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "blind", required_unless_present = "blind")]
        level: Option<f64>,
        #[arg(long)]
        blind: bool,
        /// Clean image; prints PSNR of input and output against it.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Score a model over a corpus at several levels.
    Benchmark {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Must match the checkpoint's task when given.
        #[arg(long)]
        task: Option<Task>,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        /// Score the degraded inputs without restoring them.
        #[arg(long)]
        bypass: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Line-delimited JSON report.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// PSNR of the restoration over a grid of conditioning values.
    Sweep {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// min:max:step in conditioning units.
        #[arg(long, allow_hyphen_values = true, default_value = "-0.25:1.25:0.125")]
        grid: Grid,
        #[arg(long)]
        json: bool,
    },
    /// Print the estimated degradation level of an image.
    Estimate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        input: PathBuf,
    },
    /// Apply a synthetic degradation to an image.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter breakdown of a checkpoint or a training config.
    Params {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the tuning API and UI.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ModelArg {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Idle session lifetime in seconds.
    #[arg(long, default_value_t = 900)]
    session_ttl: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Paths named on the command line that do not exist are usage errors.
fn existing(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    existing(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

fn image(path: &Path) -> Result<hyperrestore::Tensor<f32>, Failure> {
    existing(path, "image")?;
    Ok(load_image(path)?)
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Train { config, corpus, output, log } => train(&config, &corpus, &output, log.as_deref()),
        Command::Restore { model, input, output, level, blind, reference } => {
            let ckpt = checkpoint(&model.checkpoint)?;
            let m = &ckpt.model;
            let degraded = image(&input)?;
            debug_assert!(level.is_some() != blind, "clap enforces exactly one");
            let level = match level {
                Some(l) => l,
                None if m.estimator.is_none() => {
                    return Err(Failure::Usage("--blind needs a checkpoint with an estimator".into()))
                }
                None => {
                    let l = m.estimate_level(&degraded)?;
                    println!("estimated level {l:.4}");
                    l
                }
            };
            let cond = m.range.normalize(level)?;
            if cond.extrapolated {
                log::warn!("level {level} is outside the trained range [{}, {}]", m.range.min, m.range.max);
            }
            let out = m.restore(&degraded, cond.c)?;
            save_png(&output, &out)?;
            if let Some(r) = reference {
                let r = image(&r)?;
                println!("input PSNR {:.4} dB", psnr(&r, &degraded)?);
                println!("output PSNR {:.4} dB", psnr(&r, &out)?);
            }
            Ok(())
        }
        Command::Benchmark { model, corpus, task, levels, bypass, seed, output } => {
            let ckpt = checkpoint(&model.checkpoint)?;
            if let Some(t) = task {
                if t != ckpt.model.task {
                    return Err(Failure::Usage(format!(
                        "checkpoint was trained for {}, not {}",
                        ckpt.model.task.as_str(),
                        t.as_str()
                    )));
                }
            }
            existing(&corpus, "corpus")?;
            let records = load_corpus(&corpus)?;
            for w in &records.warnings {
                log::warn!("skipped {w}");
            }
            let report = benchmark(&ckpt.model, &records.records, &levels, bypass, seed)?;
            print!("{}", report.table());
            if let Some(path) = output {
                std::fs::write(&path, report.to_jsonl()).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Sweep { model, input, reference, grid, json } => {
            let ckpt = checkpoint(&model.checkpoint)?;
            let (deg, r) = (image(&input)?, image(&reference)?);
            let result = sweep(&ckpt.model, &deg, &r, &grid)?;
            if json {
                println!("{}", serde_json::to_string(&result).expect("sweep serializes"));
            } else {
                println!("{:>10} {:>10} {:>10}", "c", "level", "PSNR");
                for p in &result.points {
                    println!("{:>10.4} {:>10.4} {:>10.4}", p.c, ckpt.model.range.denormalize(p.c), p.psnr);
                }
                let b = result.best;
                println!("best c {:.4} (level {:.4}) PSNR {:.4} dB", b.c, ckpt.model.range.denormalize(b.c), b.psnr);
            }
            Ok(())
        }
        Command::Estimate { model, input } => {
            let ckpt = checkpoint(&model.checkpoint)?;
            if ckpt.model.estimator.is_none() {
                return Err(Failure::Usage("checkpoint has no estimator".into()));
            }
            let l = ckpt.model.estimate_level(&image(&input)?)?;
            println!("{l:.4}");
            Ok(())
        }
        Command::Degrade { input, output, task, level, seed } => {
            let out = degrade(&image(&input)?, task, level, seed)?;
            save_png(&output, &out)?;
            Ok(())
        }
        Command::Params { checkpoint: ck, config, json } => {
            let (arch, k) = match (ck, config) {
                (Some(p), _) => {
                    existing(&p, "checkpoint")?;
                    let h = hyperrestore::read_header(&p)?;
                    let k = h.training.map_or_else(|| h.task.default_levels().len(), |t| t.levels.len());
                    (h.arch, k)
                }
                (None, Some(p)) => {
                    existing(&p, "config")?;
                    let cfg = TrainConfig::load(&p)?;
                    (cfg.arch, cfg.levels.len())
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            let p = ParamBreakdown::for_arch(&arch)?;
            if json {
                println!("{}", serde_json::to_string(&p).expect("breakdown serializes"));
            } else {
                print!("{}", params_text(&arch, &p, k));
            }
            Ok(())
        }
        Command::Serve(args) => serve(args),
    }
}

fn params_text(arch: &ArchConfig, p: &ParamBreakdown, k: usize) -> String {
    format!(
        "channels {}, residual blocks {}\n\
         head          {:>10}\n\
         meta blocks   {:>10}\n\
         tail expand   {:>10}\n\
         tail out      {:>10}\n\
         shared        {:>10}\n\
         hypernetwork  {:>10}\n\
         total         {:>10}\n\
         The total does not depend on the number of training levels; \
         {} dedicated networks would need {} residual-block kernel parameters.\n",
        arch.channels,
        arch.num_resblocks,
        p.head,
        p.resblock_meta,
        p.tail_expand,
        p.tail_out,
        p.shared,
        p.hypernet,
        p.total,
        k,
        p.dedicated_kernel_count(k),
    )
}

fn train(config: &Path, corpus: &Path, output: &Path, log: Option<&Path>) -> Outcome {
    existing(config, "config")?;
    existing(corpus, "corpus")?;
    let cfg = TrainConfig::load(config)?;
    let records = load_corpus(corpus)?;
    for w in &records.warnings {
        log::warn!("skipped {w}");
    }
    let mut sink: Box<dyn Write> = match log {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut write_err = None;
    let outcome = hyperrestore::train(&cfg, &records.records, |p| {
        if write_err.is_none() {
            let line = serde_json::to_string(p).expect("progress serializes");
            if let Err(e) = writeln!(sink, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    sink.flush()?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Checkpoint::new(outcome.model, Some(outcome.metadata)).save(output)?;
    log::info!("wrote {}", output.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Outcome {
    let ckpt = checkpoint(&args.checkpoint)?;
    if let Some(d) = &args.static_dir {
        existing(d, "static directory")?;
    }
    let config = ServiceConfig {
        session_ttl: std::time::Duration::from_secs(args.session_ttl),
        static_dir: args.static_dir,
        ..ServiceConfig::default()
    };
    let state = Arc::new(AppState::with_checkpoint(config, ckpt));
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(hyperrestore_service::serve(addr, state))?;
    Ok(())
}
