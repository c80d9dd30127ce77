use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndf_cli::{CliError, MapSource, RunConfig};
use ndf_core::supervise::SupervisionMode;

#[derive(Parser)]
#[command(name = "ndf", version, about = "Neural distance fields from range scans")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides the configured count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Supervision mode: ray, dcn or curvature.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<SupervisionMode>,
    /// Output path (directory for `synth`, file otherwise; tables go to
    /// stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<SupervisionMode, String> {
    SupervisionMode::parse(s).ok_or_else(|| format!("unknown mode `{s}` (expected ray, dcn or curvature)"))
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scans of an analytic scene along the configured trajectory.
    Synth {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Train a field on a scan directory; also writes `<out>.loss.csv`.
    Train {
        #[arg(long)]
        scans: PathBuf,
    },
    /// Extract the zero level set of a trained field as PLY.
    Mesh {
        #[arg(long)]
        model: PathBuf,
        /// Grid points per axis (defaults to `mesh.res`).
        #[arg(long)]
        res: Option<usize>,
    },
    /// Near-surface error of a trained field against the analytic scene.
    EvalSdf {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Band half-width in world units (defaults to `eval.band`).
        #[arg(long)]
        band: Option<f64>,
    },
    /// Global localization on a planar dataset against a field.
    Localize {
        #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
        model: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one field per supervision mode on the same scans and tabulate errors.
    Compare {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn required_out(out: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    out.clone().ok_or_else(|| CliError::Usage(format!("--out is required for {what}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(mode) = g.mode {
        cfg.mode = mode;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let out = g.out.as_deref();
    match cli.command {
        Command::Synth { scene } => {
            let dir = required_out(&g.out, "synth")?;
            let n = ndf_cli::cmd_synth(&scene, &cfg, &dir)?;
            log::info!("wrote {n} scans to {}", dir.display());
        }
        Command::Train { scans } => {
            let model = required_out(&g.out, "train")?;
            ndf_cli::cmd_train(&cfg, &scans, &model)?;
        }
        Command::Mesh { model, res } => {
            let ply = required_out(&g.out, "mesh")?;
            ndf_cli::cmd_mesh(&model, res.unwrap_or(cfg.mesh_res), &ply)?;
        }
        Command::EvalSdf { model, scene, band } => {
            if band.is_some() {
                cfg.eval_band = band;
                cfg.validate()?;
            }
            let table = ndf_cli::cmd_eval_sdf(&model, &scene, &cfg, out)?;
            if out.is_none() {
                ndf_cli::print(&table);
            }
        }
        Command::Localize { model, scene, data } => {
            let map = match (&model, &scene) {
                (Some(m), _) => MapSource::Model(m),
                (None, Some(s)) => MapSource::Scene(s),
                (None, None) => unreachable!("clap requires one of --model and --scene"),
            };
            let table = ndf_cli::cmd_localize(map, &data, &cfg, out)?;
            if out.is_none() {
                ndf_cli::print(&table);
            }
        }
        Command::Compare { scene } => {
            let table = ndf_cli::cmd_compare(&scene, &cfg, out)?;
            if out.is_none() {
                ndf_cli::print(&table);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
