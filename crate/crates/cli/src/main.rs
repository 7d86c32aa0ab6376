use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gazenmf_cli::pipeline::SynthOptions;
use gazenmf_cli::{cmd_factorize, cmd_preprocess, cmd_report, cmd_run, cmd_synth};
use gazenmf_cli::{CliError, PipelineConfig};

/// NMF-based decomposition of mobile eye-tracking recordings.
#[derive(Parser)]
#[command(name = "gazenmf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load recordings, detect fixations, and write the patch-matrix cache.
    Preprocess {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Factorize a cached patch matrix and write the factorization cache.
    Factorize {
        /// Matrix cache path (default: `<out>/matrix.cache`).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render the report from cached matrix and factorization.
    Report {
        /// Matrix cache path (default: `<out>/matrix.cache`).
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Factorization cache path (default: `<out>/factorization.cache`).
        #[arg(long)]
        factorization: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Preprocess, factorize, and report in one go.
    Run {
        /// Write the effective configuration to this path before running.
        #[arg(long)]
        dump_config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a synthetic test scene with known ground truth.
    Synth {
        /// Output directory for the scene.
        #[arg(long, default_value = "scene")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        aois: usize,
        #[arg(long, default_value_t = 3)]
        recordings: usize,
        /// Frames spent on each AOI visit.
        #[arg(long, default_value_t = 10)]
        dwell: usize,
        /// Uniform pixel-noise amplitude in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frame size as WIDTH HEIGHT.
        #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [160, 120])]
        frame_size: Vec<usize>,
        /// Stencil the scene is sized for, as WIDTH HEIGHT (both odd).
        #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [31, 31])]
        stencil: Vec<usize>,
    },
}

/// Flags shared by the pipeline subcommands. Every flag has a config-file
/// equivalent; flags override file values.
#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recording directory; repeat for multiple recordings.
    #[arg(long = "recording")]
    recordings: Vec<PathBuf>,
    /// Stencil size as WIDTH HEIGHT (both odd).
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    stencil: Option<Vec<usize>>,
    #[arg(long)]
    min_fixation_ms: Option<i64>,
    #[arg(long)]
    dispersion_px: Option<f64>,
    /// Number of components.
    #[arg(long)]
    k: Option<usize>,
    /// Solver: mu or hals.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Integer patch downscale factor (1 = off).
    #[arg(long)]
    downscale: Option<usize>,
    #[arg(long)]
    boundary_margin: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread cap (0 = rayon default); never affects results.
    #[arg(long)]
    threads: Option<usize>,
    /// Also export per-recording fixations.csv files.
    #[arg(long)]
    export_fixations: bool,
}

impl CommonArgs {
    fn into_config(self) -> Result<PipelineConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if !self.recordings.is_empty() {
            config.recordings = self.recordings;
        }
        if let Some(stencil) = self.stencil {
            config.stencil = [stencil[0], stencil[1]];
        }
        if let Some(v) = self.min_fixation_ms {
            config.min_fixation_ms = v;
        }
        if let Some(v) = self.dispersion_px {
            config.dispersion_px = v;
        }
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.algorithm {
            config.algorithm = v;
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.replicates {
            config.replicates = v;
        }
        if let Some(v) = self.rel_tol {
            config.rel_tol = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = self.downscale {
            config.downscale = v;
        }
        if let Some(v) = self.boundary_margin {
            config.boundary_margin = v;
        }
        if let Some(v) = self.out {
            config.out_dir = v;
        }
        if let Some(v) = self.threads {
            config.threads = v;
        }
        if self.export_fixations {
            config.export_fixations = true;
        }
        Ok(config)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess { common } => {
            let config = common.into_config()?;
            cmd_preprocess(&config)?;
            Ok(())
        }
        Command::Factorize { matrix, common } => {
            let config = common.into_config()?;
            let matrix_path = matrix.unwrap_or_else(|| config.matrix_cache_path());
            cmd_factorize(&matrix_path, &config)?;
            Ok(())
        }
        Command::Report {
            matrix,
            factorization,
            common,
        } => {
            let config = common.into_config()?;
            let matrix_path = matrix.unwrap_or_else(|| config.matrix_cache_path());
            let factorization_path =
                factorization.unwrap_or_else(|| config.factorization_cache_path());
            cmd_report(&matrix_path, &factorization_path, &config)?;
            Ok(())
        }
        Command::Run {
            dump_config,
            common,
        } => {
            let config = common.into_config()?;
            if let Some(path) = dump_config {
                std::fs::write(&path, config.to_toml_string())
                    .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
                eprintln!("effective config written to {}", path.display());
            }
            cmd_run(&config)?;
            Ok(())
        }
        Command::Synth {
            out,
            aois,
            recordings,
            dwell,
            noise,
            seed,
            frame_size,
            stencil,
        } => {
            let options = SynthOptions {
                out_dir: out,
                aois,
                recordings,
                dwell_frames: dwell,
                noise,
                seed,
                frame_size: (frame_size[0], frame_size[1]),
                stencil: [stencil[0], stencil[1]],
            };
            cmd_synth(&options)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
