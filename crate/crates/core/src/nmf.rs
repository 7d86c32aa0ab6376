//! Nonnegative matrix factorization of the patch matrix: X ≈ W·H with
//! W ≥ 0, H ≥ 0, minimizing ½‖X − WH‖²_F.
//!
//! Two solvers are provided. The default multiplicative-update rules keep
//! the objective non-increasing step by step, which makes the core solver
//! invariant testable; HALS (column-wise coordinate descent with projection
//! to zero) is offered as a faster alternative whose objective is monotone
//! per full sweep. Replicated seeded runs keep the best final objective.
//!
//! All solver arithmetic runs in a fixed sequential order, so results are
//! bit-identical regardless of how many worker threads the surrounding
//! pipeline uses.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const FACTORIZATION_CACHE_MAGIC: &[u8; 8] = b"GNMFFACT";
pub const FACTORIZATION_CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NmfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank {k} out of range for a {rows}x{cols} matrix (need 0 < k < min)")]
    RankOutOfRange { k: usize, rows: usize, cols: usize },
    #[error("input matrix has zero Frobenius norm")]
    DegenerateInput,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("factorization cache is corrupt: {0}")]
    Cache(String),
    #[error("factorization cache version {found} unsupported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    MultiplicativeUpdate,
    Hals,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::MultiplicativeUpdate => write!(f, "mu"),
            Algorithm::Hals => write!(f, "hals"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mu" => Ok(Algorithm::MultiplicativeUpdate),
            "hals" => Ok(Algorithm::Hals),
            other => Err(format!("unknown algorithm {other:?} (expected mu or hals)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationOptions {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when |obj_t − obj_{t−1}| / (1 + obj_{t−1}) falls below this.
    pub rel_tol: f64,
    pub replicates: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Denominator stabilizer for the update rules.
    pub epsilon: f64,
}

impl Default for FactorizationOptions {
    fn default() -> Self {
        FactorizationOptions {
            k: 8,
            max_iters: 100,
            rel_tol: 1e-4,
            replicates: 3,
            seed: 0,
            algorithm: Algorithm::MultiplicativeUpdate,
            epsilon: 1e-9,
        }
    }
}

/// Result of one (best-of-replicates) factorization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// rows × k; columns are the spatial components.
    pub w: Array2<f64>,
    /// k × cols; rows are the temporal components.
    pub h: Array2<f64>,
    /// Objective per iteration; entry 0 is the objective of the
    /// initialization, entry t the objective after update step t.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub iterations_run: usize,
    pub seed_used: u64,
}

/// ½‖X − WH‖²_F, accumulated column by column in a fixed order.
pub fn objective(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Result<f64, NmfError> {
    if w.nrows() != x.nrows() || h.ncols() != x.ncols() || w.ncols() != h.nrows() {
        return Err(NmfError::DimensionMismatch(format!(
            "X is {}x{}, W is {}x{}, H is {}x{}",
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let mut buf = Array1::<f64>::zeros(x.nrows());
    let mut total = 0.0;
    for (j, x_col) in x.columns().into_iter().enumerate() {
        general_mat_vec_mul(1.0, w, &h.column(j), 0.0, &mut buf);
        total += x_col
            .iter()
            .zip(buf.iter())
            .map(|(&xv, &wv)| {
                let d = xv - wv;
                d * d
            })
            .sum::<f64>();
    }
    Ok(0.5 * total)
}

/// Seeded random starting factors with entries i.i.d. uniform on (0, 1].
///
/// The generator is ChaCha8 keyed through `seed_from_u64`; W is filled
/// first, then H, both row-major. Identical (rows, cols, k, seed) yield
/// bit-identical factors on every platform. The open interval keeps the
/// multiplicative updates off exact zeros at the start.
pub fn init_factors(rows: usize, cols: usize, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || 1.0 - rng.random::<f64>();
    let w = Array2::from_shape_simple_fn((rows, k), &mut draw);
    let h = Array2::from_shape_simple_fn((k, cols), &mut draw);
    (w, h)
}

/// One multiplicative-update step:
/// H′ = H ⊙ (WᵀX) ⊘ (WᵀWH + ε), then W′ = W ⊙ (XH′ᵀ) ⊘ (WH′H′ᵀ + ε).
pub fn mu_step(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    epsilon: f64,
) -> (Array2<f64>, Array2<f64>) {
    let numer_h = w.t().dot(x);
    let gram_w = w.t().dot(w);
    let denom_h = gram_w.dot(h);
    let mut h_new = h.clone();
    Zip::from(&mut h_new)
        .and(&numer_h)
        .and(&denom_h)
        .for_each(|v, &n, &d| *v *= n / (d + epsilon));

    let numer_w = x.dot(&h_new.t());
    let gram_h = h_new.dot(&h_new.t());
    let denom_w = w.dot(&gram_h);
    let mut w_new = w.clone();
    Zip::from(&mut w_new)
        .and(&numer_w)
        .and(&denom_w)
        .for_each(|v, &n, &d| *v *= n / (d + epsilon));

    (w_new, h_new)
}

/// One HALS sweep: exact single-column minimizations with projection to
/// max(·, 0), Gauss–Seidel over the k columns of W, then the k rows of H.
/// Columns whose Gram diagonal falls at or below `epsilon` are left
/// untouched; their contribution to the product is negligible anyway.
pub fn hals_step(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    epsilon: f64,
) -> (Array2<f64>, Array2<f64>) {
    let k = w.ncols();
    let mut w_new = w.clone();
    let a = x.dot(&h.t());
    let b = h.dot(&h.t());
    for j in 0..k {
        let bjj = b[[j, j]];
        if bjj <= epsilon {
            continue;
        }
        let wb = w_new.dot(&b.column(j));
        for i in 0..w_new.nrows() {
            let unclamped = (a[[i, j]] - wb[i]) / bjj + w_new[[i, j]];
            w_new[[i, j]] = if unclamped > 0.0 { unclamped } else { 0.0 };
        }
    }

    let mut h_new = h.clone();
    let c = w_new.t().dot(x);
    let d = w_new.t().dot(&w_new);
    for j in 0..k {
        let djj = d[[j, j]];
        if djj <= epsilon {
            continue;
        }
        let dh = d.row(j).dot(&h_new);
        for l in 0..h_new.ncols() {
            let unclamped = (c[[j, l]] - dh[l]) / djj + h_new[[j, l]];
            h_new[[j, l]] = if unclamped > 0.0 { unclamped } else { 0.0 };
        }
    }

    (w_new, h_new)
}

fn frobenius_sq(x: &Array2<f64>) -> f64 {
    x.iter().map(|&v| v * v).sum()
}

/// Factorize with `opts.replicates` independent seeded runs (seed,
/// seed+1, …) and keep the run with the smallest final objective; ties go
/// to the smaller seed. Each run iterates until the relative objective
/// change drops below `rel_tol` or `max_iters` is reached.
pub fn factorize(x: &Array2<f64>, opts: &FactorizationOptions) -> Result<Factorization, NmfError> {
    let (rows, cols) = (x.nrows(), x.ncols());
    if opts.k == 0 || opts.k >= rows.min(cols) {
        return Err(NmfError::RankOutOfRange {
            k: opts.k,
            rows,
            cols,
        });
    }
    if opts.max_iters == 0 {
        return Err(NmfError::InvalidOptions("max_iters must be >= 1".into()));
    }
    if opts.rel_tol.is_nan() || opts.rel_tol <= 0.0 {
        return Err(NmfError::InvalidOptions("rel_tol must be > 0".into()));
    }
    if opts.epsilon.is_nan() || opts.epsilon <= 0.0 {
        return Err(NmfError::InvalidOptions("epsilon must be > 0".into()));
    }
    if opts.replicates == 0 {
        return Err(NmfError::InvalidOptions("replicates must be >= 1".into()));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(NmfError::InvalidOptions(
            "input matrix has negative entries".into(),
        ));
    }
    if frobenius_sq(x) == 0.0 {
        return Err(NmfError::DegenerateInput);
    }

    let mut best: Option<Factorization> = None;
    for replicate in 0..opts.replicates {
        let seed = opts.seed.wrapping_add(replicate as u64);
        let run = run_once(x, opts, seed)?;
        let better = match &best {
            None => true,
            Some(current) => run.final_objective < current.final_objective,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one replicate"))
}

fn run_once(
    x: &Array2<f64>,
    opts: &FactorizationOptions,
    seed: u64,
) -> Result<Factorization, NmfError> {
    let (mut w, mut h) = init_factors(x.nrows(), x.ncols(), opts.k, seed);
    let mut trace = vec![objective(x, &w, &h)?];
    for _ in 0..opts.max_iters {
        let (w_next, h_next) = match opts.algorithm {
            Algorithm::MultiplicativeUpdate => mu_step(x, &w, &h, opts.epsilon),
            Algorithm::Hals => hals_step(x, &w, &h, opts.epsilon),
        };
        w = w_next;
        h = h_next;
        debug_assert!(
            w.iter().all(|&v| v >= 0.0) && h.iter().all(|&v| v >= 0.0),
            "factors must stay nonnegative"
        );
        let previous = *trace.last().expect("trace is non-empty");
        let current = objective(x, &w, &h)?;
        trace.push(current);
        if (current - previous).abs() / (1.0 + previous) < opts.rel_tol {
            break;
        }
    }
    let final_objective = *trace.last().expect("trace is non-empty");
    Ok(Factorization {
        w,
        h,
        iterations_run: trace.len() - 1,
        final_objective,
        objective_trace: trace,
        seed_used: seed,
    })
}

// ---------------------------------------------------------------------------
// Factorization cache file
// ---------------------------------------------------------------------------

fn algorithm_tag(a: Algorithm) -> u8 {
    match a {
        Algorithm::MultiplicativeUpdate => 0,
        Algorithm::Hals => 1,
    }
}

fn algorithm_from_tag(tag: u8) -> Result<Algorithm, NmfError> {
    match tag {
        0 => Ok(Algorithm::MultiplicativeUpdate),
        1 => Ok(Algorithm::Hals),
        other => Err(NmfError::Cache(format!("unknown algorithm tag {other}"))),
    }
}

/// Serialize a factorization: header, objective trace, then W and H as
/// little-endian 64-bit floats in column-major order.
pub fn factorization_cache_bytes(f: &Factorization, algorithm: Algorithm) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FACTORIZATION_CACHE_MAGIC);
    out.extend_from_slice(&FACTORIZATION_CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.w.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(f.h.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&(f.w.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&f.seed_used.to_le_bytes());
    out.push(algorithm_tag(algorithm));
    out.extend_from_slice(&(f.iterations_run as u32).to_le_bytes());
    out.extend_from_slice(&f.final_objective.to_bits().to_le_bytes());
    out.extend_from_slice(&(f.objective_trace.len() as u32).to_le_bytes());
    for &v in &f.objective_trace {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    for column in f.w.columns() {
        for &v in column.iter() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    for column in f.h.columns() {
        for &v in column.iter() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn write_factorization_cache(
    path: &Path,
    f: &Factorization,
    algorithm: Algorithm,
) -> Result<(), NmfError> {
    let bytes = factorization_cache_bytes(f, algorithm);
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| NmfError::Io(e.error))?;
    Ok(())
}

pub fn read_factorization_cache(path: &Path) -> Result<(Factorization, Algorithm), NmfError> {
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != FACTORIZATION_CACHE_MAGIC {
        return Err(NmfError::Cache("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32, NmfError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let mut read_u64 = |r: &mut dyn Read| -> Result<u64, NmfError> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };

    let version = read_u32(&mut reader)?;
    if version != FACTORIZATION_CACHE_VERSION {
        return Err(NmfError::UnsupportedVersion {
            found: version,
            expected: FACTORIZATION_CACHE_VERSION,
        });
    }
    let rows = read_u64(&mut reader)? as usize;
    let cols = read_u64(&mut reader)? as usize;
    let k = read_u32(&mut reader)? as usize;
    let seed_used = read_u64(&mut reader)?;
    let mut tag = [0u8; 1];
    reader.read_exact(&mut tag)?;
    let algorithm = algorithm_from_tag(tag[0])?;
    let iterations_run = read_u32(&mut reader)? as usize;
    let final_objective = f64::from_bits(read_u64(&mut reader)?);
    let trace_len = read_u32(&mut reader)? as usize;
    let mut objective_trace = Vec::with_capacity(trace_len);
    for _ in 0..trace_len {
        objective_trace.push(f64::from_bits(read_u64(&mut reader)?));
    }
    let read_matrix =
        |r: &mut dyn Read, nrows: usize, ncols: usize| -> Result<Array2<f64>, NmfError> {
            let mut flat = Vec::with_capacity(nrows * ncols);
            let mut buf = [0u8; 8];
            for _ in 0..nrows * ncols {
                r.read_exact(&mut buf)?;
                flat.push(f64::from_bits(u64::from_le_bytes(buf)));
            }
            use ndarray::ShapeBuilder;
            Array2::from_shape_vec((nrows, ncols).f(), flat)
                .map_err(|e| NmfError::Cache(e.to_string()))
        };
    let w = read_matrix(&mut reader, rows, k)?;
    let h = read_matrix(&mut reader, k, cols)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(NmfError::Cache("trailing bytes".into()));
    }
    Ok((
        Factorization {
            w,
            h,
            objective_trace,
            final_objective,
            iterations_run,
            seed_used,
        },
        algorithm,
    ))
}
