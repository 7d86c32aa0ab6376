//! The pipeline stages behind the CLI subcommands. Everything here is a
//! library function so the stages can be driven from tests; the binary is
//! a thin argument-parsing shell around them.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use gazenmf::components::{analyze, ComponentAnalysis};
use gazenmf::fixation::{detect_fixations, write_fixations_csv, Fixation};
use gazenmf::ingest::{load_recording, Recording};
use gazenmf::nmf::{
    factorize, read_factorization_cache, write_factorization_cache, Algorithm, Factorization,
};
use gazenmf::patchgrid::{build_patch_matrix, read_matrix_cache, write_matrix_cache, PatchMatrix};
use gazenmf::report::{write_report, ReportBundle, SummaryFactorization, SummaryParameters};
use gazenmf::synth::{
    generate_scene, rotation_schedules, write_recording_dir, SceneSpec, DEFAULT_AOI_COLORS,
};

use crate::{CliError, PipelineConfig};

/// Everything a full `run` produces, kept in memory for callers that want
/// to inspect the analysis (tests, recovery evaluation).
#[derive(Debug)]
pub struct PipelineOutcome {
    pub matrix_path: PathBuf,
    pub factorization_path: PathBuf,
    pub bundle: ReportBundle,
    pub analysis: ComponentAnalysis,
}

/// Output of the preprocess stage.
pub struct PreprocessOutput {
    pub matrix: PatchMatrix,
    pub recordings: Vec<Recording>,
    pub fixations: Vec<Vec<Fixation>>,
    pub matrix_path: PathBuf,
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return job();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(job)
}

/// Create the output directory itself (but not missing parents, which are
/// reported as data errors carrying the path).
fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        return Ok(());
    }
    fs::create_dir(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Load recordings, detect fixations, assemble the patch matrix, and write
/// the matrix cache. Per-recording fixation counts go to standard error.
pub fn cmd_preprocess(config: &PipelineConfig) -> Result<PreprocessOutput, CliError> {
    config.validate()?;
    let stencil = config.stencil_spec()?;
    ensure_out_dir(&config.out_dir)?;

    with_pool(config.threads, || {
        let loaded: Vec<(Recording, Vec<gazenmf::ingest::IngestWarning>)> = config
            .recordings
            .par_iter()
            .map(|dir| {
                load_recording(dir)
                    .map_err(|e| CliError::Data(format!("recording {}: {e}", dir.display())))
            })
            .collect::<Result<_, CliError>>()?;
        let mut recordings = Vec::with_capacity(loaded.len());
        for (recording, warnings) in loaded {
            for warning in &warnings {
                eprintln!("warning: recording {}: {warning}", recording.id);
            }
            recordings.push(recording);
        }

        let params = config.fixation_params();
        let fixations: Vec<Vec<Fixation>> = recordings
            .par_iter()
            .map(|r| detect_fixations(&r.samples, &params))
            .collect();
        for (recording, fixation_list) in recordings.iter().zip(&fixations) {
            eprintln!(
                "recording {}: {} fixations from {} samples",
                recording.id,
                fixation_list.len(),
                recording.samples.len()
            );
        }

        if config.export_fixations {
            let export_dir = config.out_dir.join("fixations");
            fs::create_dir_all(&export_dir)?;
            for (recording, fixation_list) in recordings.iter().zip(&fixations) {
                let file = fs::File::create(export_dir.join(format!("{}.csv", recording.id)))?;
                write_fixations_csv(file, fixation_list)?;
            }
        }

        let matrix = build_patch_matrix(&recordings, &fixations, stencil, config.downscale)
            .map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!(
            "patch matrix: {} rows x {} cols",
            matrix.rows(),
            matrix.cols()
        );
        let matrix_path = config.matrix_cache_path();
        write_matrix_cache(&matrix_path, &matrix)?;
        Ok(PreprocessOutput {
            matrix,
            recordings,
            fixations,
            matrix_path,
        })
    })
}

fn factorize_matrix(
    matrix: &PatchMatrix,
    config: &PipelineConfig,
) -> Result<(Factorization, PathBuf), CliError> {
    let opts = config.factorization_options()?;
    let factorization = factorize(matrix.values(), &opts)?;
    let tail: Vec<String> = factorization
        .objective_trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|v| format!("{v:.6e}"))
        .collect();
    eprintln!(
        "factorization: k={} seed={} iterations={} objective tail [{}]",
        opts.k,
        factorization.seed_used,
        factorization.iterations_run,
        tail.join(", ")
    );
    let path = config.factorization_cache_path();
    write_factorization_cache(&path, &factorization, opts.algorithm)?;
    Ok((factorization, path))
}

/// Factorize a cached matrix and write the factorization cache.
pub fn cmd_factorize(
    matrix_path: &Path,
    config: &PipelineConfig,
) -> Result<(Factorization, PathBuf), CliError> {
    ensure_out_dir(&config.out_dir)?;
    let matrix = read_matrix_cache(matrix_path)?;
    with_pool(config.threads, || factorize_matrix(&matrix, config))
}

fn summary_parameters(
    config: &PipelineConfig,
    matrix: &PatchMatrix,
    k: usize,
    algorithm: Algorithm,
    seed: u64,
) -> SummaryParameters {
    SummaryParameters {
        stencil: [matrix.stencil().width(), matrix.stencil().height()],
        downscale: matrix.downscale(),
        min_fixation_ms: config.min_fixation_ms,
        dispersion_px: config.dispersion_px,
        k,
        algorithm: algorithm.to_string(),
        max_iters: config.max_iters,
        replicates: config.replicates,
        rel_tol: config.rel_tol,
        seed,
        epsilon: config.epsilon,
        boundary_margin: config.boundary_margin,
    }
}

fn report_stage(
    matrix: &PatchMatrix,
    factorization: &Factorization,
    algorithm: Algorithm,
    recordings: &[Recording],
    config: &PipelineConfig,
) -> Result<(ReportBundle, ComponentAnalysis), CliError> {
    let (analysis, warnings) = analyze(matrix, factorization, config.boundary_margin)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    let fixation_counts: Vec<usize> = analysis
        .recording_order
        .iter()
        .map(|id| {
            matrix
                .meta()
                .iter()
                .filter(|m| &m.recording_id == id)
                .count()
        })
        .collect();
    let parameters = summary_parameters(
        config,
        matrix,
        factorization.w.ncols(),
        algorithm,
        config.seed,
    );
    let summary_factorization = SummaryFactorization {
        iterations_run: factorization.iterations_run,
        final_objective: factorization.final_objective,
        seed_used: factorization.seed_used,
    };
    let bundle = write_report(
        &analysis,
        recordings,
        parameters,
        summary_factorization,
        fixation_counts,
        matrix.rows(),
        matrix.cols(),
        &config.out_dir,
    )?;
    eprintln!(
        "report: {} components under {}",
        bundle.summary.components.len(),
        bundle.out_dir.display()
    );
    Ok((bundle, analysis))
}

/// Render the report from existing matrix and factorization caches.
/// The recordings named in the config are loaded (lazily) for the
/// representative-frame montages.
pub fn cmd_report(
    matrix_path: &Path,
    factorization_path: &Path,
    config: &PipelineConfig,
) -> Result<ReportBundle, CliError> {
    config.validate()?;
    let matrix = read_matrix_cache(matrix_path)?;
    let (factorization, algorithm) = read_factorization_cache(factorization_path)?;
    if factorization.w.nrows() != matrix.rows() || factorization.h.ncols() != matrix.cols() {
        return Err(CliError::Data(format!(
            "cache mismatch: factorization is {}x{} over {} columns, matrix is {}x{}",
            factorization.w.nrows(),
            factorization.w.ncols(),
            factorization.h.ncols(),
            matrix.rows(),
            matrix.cols()
        )));
    }
    ensure_out_dir(&config.out_dir)?;
    with_pool(config.threads, || {
        let mut recordings = Vec::with_capacity(config.recordings.len());
        for dir in &config.recordings {
            let (recording, _) = load_recording(dir)
                .map_err(|e| CliError::Data(format!("recording {}: {e}", dir.display())))?;
            recordings.push(recording);
        }
        let (bundle, _) = report_stage(&matrix, &factorization, algorithm, &recordings, config)?;
        Ok(bundle)
    })
}

/// Preprocess, factorize, and report in sequence, writing both caches
/// along the way.
pub fn cmd_run(config: &PipelineConfig) -> Result<PipelineOutcome, CliError> {
    config.validate()?;
    ensure_out_dir(&config.out_dir)?;
    let algorithm = config.algorithm()?;
    with_pool(config.threads, || {
        let pre = cmd_preprocess_inner(config)?;
        let (factorization, factorization_path) = factorize_matrix(&pre.matrix, config)?;
        let (bundle, analysis) = report_stage(
            &pre.matrix,
            &factorization,
            algorithm,
            &pre.recordings,
            config,
        )?;
        Ok(PipelineOutcome {
            matrix_path: pre.matrix_path,
            factorization_path,
            bundle,
            analysis,
        })
    })
}

// cmd_preprocess already installs a pool; run() wraps all stages in one
// pool instead, so this variant skips the nested install.
fn cmd_preprocess_inner(config: &PipelineConfig) -> Result<PreprocessOutput, CliError> {
    let threads_zero = PipelineConfig {
        threads: 0,
        ..config.clone()
    };
    cmd_preprocess(&threads_zero)
}

/// Options for generating a synthetic scene on disk.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub out_dir: PathBuf,
    pub aois: usize,
    pub recordings: usize,
    pub dwell_frames: usize,
    pub noise: f64,
    pub seed: u64,
    pub frame_size: (usize, usize),
    pub stencil: [usize; 2],
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            out_dir: PathBuf::from("scene"),
            aois: 4,
            recordings: 3,
            dwell_frames: 10,
            noise: 0.0,
            seed: 0,
            frame_size: (160, 120),
            stencil: [31, 31],
        }
    }
}

/// Generate a synthetic scene in the loader's on-disk layout, plus the
/// ground truth (per-frame AOI labels and template images).
pub fn cmd_synth(options: &SynthOptions) -> Result<Vec<PathBuf>, CliError> {
    let stencil = gazenmf::patchgrid::StencilSpec::new(options.stencil[0], options.stencil[1])
        .ok_or_else(|| CliError::Config("stencil dimensions must be odd".into()))?;
    if options.aois > DEFAULT_AOI_COLORS.len() {
        return Err(CliError::Config(format!(
            "at most {} AOIs are supported by the default palette",
            DEFAULT_AOI_COLORS.len()
        )));
    }
    let spec = SceneSpec {
        aoi_count: options.aois,
        aoi_colors: DEFAULT_AOI_COLORS[..options.aois].to_vec(),
        frame_size: options.frame_size,
        visit_schedules: rotation_schedules(options.recordings, options.aois, options.dwell_frames),
        noise_amplitude: options.noise,
        seed: options.seed,
        stencil,
    };
    let (recordings, truth) = generate_scene(&spec)?;
    fs::create_dir_all(&options.out_dir)?;
    let mut recording_dirs = Vec::new();
    for recording in &recordings {
        write_recording_dir(&options.out_dir, recording)?;
        recording_dirs.push(options.out_dir.join(&recording.id));
    }

    let truth_dir = options.out_dir.join("ground_truth");
    fs::create_dir_all(truth_dir.join("templates"))?;
    for (aoi, template) in truth.templates.iter().enumerate() {
        fs::write(
            truth_dir.join(format!("templates/aoi_{aoi}.ppm")),
            gazenmf::ingest::encode_ppm(template),
        )?;
    }
    let labels: Vec<(String, Vec<usize>)> = truth.frame_aois.clone();
    let truth_json = serde_json::to_string_pretty(&serde_json::json!({
        "aoi_centers": truth.aoi_centers,
        "frame_aois": labels,
    }))
    .expect("truth serializes");
    fs::write(truth_dir.join("truth.json"), truth_json + "\n")?;

    eprintln!(
        "synthetic scene: {} recordings, {} AOIs under {}",
        recordings.len(),
        options.aois,
        options.out_dir.display()
    );
    Ok(recording_dirs)
}
