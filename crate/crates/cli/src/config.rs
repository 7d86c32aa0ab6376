//! Pipeline configuration: a flat TOML file plus per-flag overrides.
//! Defaults mirror the nine-recording showcase parameterization
//! (251x251 stencil, 200 ms minimal fixation length, k = 8).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gazenmf::fixation::FixationParams;
use gazenmf::nmf::{Algorithm, FactorizationOptions};
use gazenmf::patchgrid::StencilSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Recording directories (each holding gaze.csv and frames/).
    pub recordings: Vec<PathBuf>,
    /// Patch stencil (width, height), both odd.
    pub stencil: [usize; 2],
    pub min_fixation_ms: i64,
    pub dispersion_px: f64,
    pub k: usize,
    /// "mu" or "hals".
    pub algorithm: String,
    pub max_iters: usize,
    pub replicates: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub epsilon: f64,
    /// Integer box-average downscale applied to patches; 1 = off.
    pub downscale: usize,
    pub boundary_margin: usize,
    pub out_dir: PathBuf,
    /// Worker-thread cap; 0 picks the rayon default. Results do not
    /// depend on this value.
    pub threads: usize,
    /// Also write per-recording fixations.csv exports.
    pub export_fixations: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            recordings: Vec::new(),
            stencil: [251, 251],
            min_fixation_ms: 200,
            dispersion_px: 25.0,
            k: 8,
            algorithm: "mu".to_string(),
            max_iters: 100,
            replicates: 3,
            rel_tol: 1e-4,
            seed: 0,
            epsilon: 1e-9,
            downscale: 1,
            boundary_margin: 1,
            out_dir: PathBuf::from("report"),
            threads: 0,
            export_fixations: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.recordings.is_empty() {
            return fail("no recordings configured".into());
        }
        if StencilSpec::new(self.stencil[0], self.stencil[1]).is_none() {
            return fail(format!(
                "stencil {}x{} must have odd positive dimensions",
                self.stencil[0], self.stencil[1]
            ));
        }
        if self.min_fixation_ms <= 0 {
            return fail("min_fixation_ms must be positive".into());
        }
        if self.dispersion_px.is_nan() || self.dispersion_px <= 0.0 {
            return fail("dispersion_px must be positive".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        self.algorithm()?;
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return fail("rel_tol must be positive".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive".into());
        }
        if self.downscale == 0 {
            return fail("downscale must be at least 1".into());
        }
        Ok(())
    }

    pub fn stencil_spec(&self) -> Result<StencilSpec, CliError> {
        StencilSpec::new(self.stencil[0], self.stencil[1])
            .ok_or_else(|| CliError::Config("stencil dimensions must be odd".into()))
    }

    pub fn algorithm(&self) -> Result<Algorithm, CliError> {
        self.algorithm.parse().map_err(CliError::Config)
    }

    pub fn fixation_params(&self) -> FixationParams {
        FixationParams {
            dispersion_px: self.dispersion_px,
            min_duration_ms: self.min_fixation_ms,
        }
    }

    pub fn factorization_options(&self) -> Result<FactorizationOptions, CliError> {
        Ok(FactorizationOptions {
            k: self.k,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            replicates: self.replicates,
            seed: self.seed,
            algorithm: self.algorithm()?,
            epsilon: self.epsilon,
        })
    }

    pub fn matrix_cache_path(&self) -> PathBuf {
        self.out_dir.join("matrix.cache")
    }

    pub fn factorization_cache_path(&self) -> PathBuf {
        self.out_dir.join("factorization.cache")
    }
}
