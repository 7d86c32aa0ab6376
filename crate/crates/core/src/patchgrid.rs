//! Gaze-centered patch extraction and the universal patch matrix.
//!
//! Each fixation contributes one column: the stencil-sized crop around the
//! fixation's gaze point, channel-stacked into a vector with values scaled
//! to [0, 1]. Columns are ordered recording by recording, each recording's
//! fixations in temporal order, and every column carries provenance so the
//! temporal factors can later be split per recording.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ShapeBuilder};
use rayon::prelude::*;
use thiserror::Error;

use crate::fixation::Fixation;
use crate::ingest::{Image, IngestError, Recording};

pub const MATRIX_CACHE_MAGIC: &[u8; 8] = b"GNMFMATX";
pub const MATRIX_CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("vector length {found} does not match 3*{width}*{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        found: usize,
    },
    #[error("recording {0} contributed zero fixations")]
    EmptyRecording(String),
    #[error("recording {recording_id}: {source}")]
    Frame {
        recording_id: String,
        source: IngestError,
    },
    #[error("matrix cache is corrupt: {0}")]
    Cache(String),
    #[error("matrix cache version {found} unsupported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Odd-sized crop window so a center pixel exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StencilSpec {
    width_px: usize,
    height_px: usize,
}

impl StencilSpec {
    /// Both dimensions must be odd and positive.
    pub fn new(width_px: usize, height_px: usize) -> Option<StencilSpec> {
        if width_px == 0
            || height_px == 0
            || width_px.is_multiple_of(2)
            || height_px.is_multiple_of(2)
        {
            return None;
        }
        Some(StencilSpec {
            width_px,
            height_px,
        })
    }

    pub fn width(&self) -> usize {
        self.width_px
    }

    pub fn height(&self) -> usize {
        self.height_px
    }
}

/// Provenance of one matrix column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub recording_id: String,
    /// 0-based fixation ordinal within its recording.
    pub ordinal_in_recording: usize,
    pub anchor_frame_index: usize,
    pub anchor_time_ms: i64,
}

/// The universal matrix: every fixation patch of every recording,
/// vectorized and stacked column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    values: Array2<f64>,
    meta: Vec<ColumnMeta>,
    stencil: StencilSpec,
    downscale: usize,
}

impl PatchMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn stencil(&self) -> StencilSpec {
        self.stencil
    }

    pub fn downscale(&self) -> usize {
        self.downscale
    }

    /// Patch dimensions after the optional downscale.
    pub fn patch_dims(&self) -> (usize, usize) {
        downscaled_dims(self.stencil, self.downscale)
    }

    /// Recording ids in column order, deduplicated.
    pub fn recording_order(&self) -> Vec<String> {
        let mut order: Vec<String> = Vec::new();
        for meta in &self.meta {
            if order.last().map(String::as_str) != Some(meta.recording_id.as_str()) {
                order.push(meta.recording_id.clone());
            }
        }
        order
    }
}

fn downscaled_dims(stencil: StencilSpec, downscale: usize) -> (usize, usize) {
    let d = downscale.max(1);
    (stencil.width().div_ceil(d), stencil.height().div_ceil(d))
}

/// Round half up, the fixed gaze-to-pixel rule.
fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Crop a stencil-sized patch whose center pixel is the rounded gaze
/// position. Regions outside the source image are zero (black) padded.
pub fn crop_patch(img: &Image, gaze: (f64, f64), stencil: StencilSpec) -> Image {
    let center_x = round_half_up(gaze.0);
    let center_y = round_half_up(gaze.1);
    let half_w = (stencil.width() / 2) as i64;
    let half_h = (stencil.height() / 2) as i64;
    let mut patch = Image::black(stencil.width(), stencil.height());
    for py in 0..stencil.height() {
        let sy = center_y - half_h + py as i64;
        if sy < 0 || sy >= img.height() as i64 {
            continue;
        }
        for px in 0..stencil.width() {
            let sx = center_x - half_w + px as i64;
            if sx < 0 || sx >= img.width() as i64 {
                continue;
            }
            patch.set_pixel(px, py, img.pixel(sx as usize, sy as usize));
        }
    }
    patch
}

/// Box-average downscale by an integer factor; edge boxes that hang over
/// the image average only the covered pixels.
pub fn downscale_box(img: &Image, factor: usize) -> Image {
    if factor <= 1 {
        return img.clone();
    }
    let out_w = img.width().div_ceil(factor);
    let out_h = img.height().div_ceil(factor);
    let mut out = Image::black(out_w, out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let x0 = ox * factor;
            let y0 = oy * factor;
            let x1 = (x0 + factor).min(img.width());
            let y1 = (y0 + factor).min(img.height());
            let mut sums = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (r, g, b) = img.pixel(x, y);
                    sums[0] += r as u64;
                    sums[1] += g as u64;
                    sums[2] += b as u64;
                }
            }
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            let avg = |s: u64| round_half_up(s as f64 / count).clamp(0, 255) as u8;
            out.set_pixel(ox, oy, (avg(sums[0]), avg(sums[1]), avg(sums[2])));
        }
    }
    out
}

/// Stack the patch channel-wise into a vector: all R values row-major,
/// then all G, then all B, each divided by 255.
pub fn vectorize_patch(patch: &Image) -> Vec<f64> {
    let bytes = patch.as_bytes();
    let pixel_count = patch.width() * patch.height();
    let mut v = Vec::with_capacity(3 * pixel_count);
    for channel in 0..3 {
        for p in 0..pixel_count {
            v.push(bytes[p * 3 + channel] as f64 / 255.0);
        }
    }
    v
}

/// Invert [`vectorize_patch`]: values are scaled by 255 and rounded half
/// up. Callers are responsible for bringing unbounded factor entries into
/// [0, 1] first.
pub fn devectorize(v: &[f64], dims: (usize, usize)) -> Result<Image, PatchError> {
    let (width, height) = dims;
    let pixel_count = width * height;
    if v.len() != 3 * pixel_count {
        return Err(PatchError::LengthMismatch {
            width,
            height,
            found: v.len(),
        });
    }
    let mut img = Image::black(width, height);
    for p in 0..pixel_count {
        let channel = |c: usize| round_half_up(v[c * pixel_count + p] * 255.0).clamp(0, 255) as u8;
        img.set_pixel(p % width, p / width, (channel(0), channel(1), channel(2)));
    }
    Ok(img)
}

/// Extract one column's patch: crop around the fixation gaze on its anchor
/// frame, then optionally downscale.
pub fn extract_patch(
    recording: &Recording,
    fixation: &Fixation,
    stencil: StencilSpec,
    downscale: usize,
) -> Result<Image, PatchError> {
    let frame = recording
        .frame(fixation.anchor_frame_index)
        .map_err(|source| PatchError::Frame {
            recording_id: recording.id.clone(),
            source,
        })?;
    let patch = crop_patch(&frame, fixation.anchor_gaze, stencil);
    Ok(downscale_box(&patch, downscale))
}

/// Assemble the universal matrix from all recordings' fixation patches.
/// Columns are extracted in parallel but placed strictly in provenance
/// order: recording by recording, fixations in temporal order.
pub fn build_patch_matrix(
    recordings: &[Recording],
    fixations: &[Vec<Fixation>],
    stencil: StencilSpec,
    downscale: usize,
) -> Result<PatchMatrix, PatchError> {
    assert_eq!(
        recordings.len(),
        fixations.len(),
        "one fixation list per recording"
    );
    for (recording, fixation_list) in recordings.iter().zip(fixations) {
        if fixation_list.is_empty() {
            return Err(PatchError::EmptyRecording(recording.id.clone()));
        }
    }

    let mut jobs: Vec<(usize, usize)> = Vec::new();
    let mut meta: Vec<ColumnMeta> = Vec::new();
    for (rec_idx, (recording, fixation_list)) in recordings.iter().zip(fixations).enumerate() {
        for (ordinal, fixation) in fixation_list.iter().enumerate() {
            jobs.push((rec_idx, ordinal));
            meta.push(ColumnMeta {
                recording_id: recording.id.clone(),
                ordinal_in_recording: ordinal,
                anchor_frame_index: fixation.anchor_frame_index,
                anchor_time_ms: fixation.start_ms + (fixation.end_ms - fixation.start_ms) / 2,
            });
        }
    }

    let (patch_w, patch_h) = downscaled_dims(stencil, downscale);
    let rows = 3 * patch_w * patch_h;
    let cols = jobs.len();

    let columns: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(rec_idx, ordinal)| {
            let patch = extract_patch(
                &recordings[rec_idx],
                &fixations[rec_idx][ordinal],
                stencil,
                downscale,
            )?;
            Ok(vectorize_patch(&patch))
        })
        .collect::<Result<_, PatchError>>()?;

    let mut flat = Vec::with_capacity(rows * cols);
    for column in &columns {
        flat.extend_from_slice(column);
    }
    let values = Array2::from_shape_vec((rows, cols).f(), flat).expect("column sizes agree");

    Ok(PatchMatrix {
        values,
        meta,
        stencil,
        downscale: downscale.max(1),
    })
}

// ---------------------------------------------------------------------------
// Matrix cache file
// ---------------------------------------------------------------------------

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct CacheReader<R> {
    inner: R,
}

impl<R: Read> CacheReader<R> {
    fn u32(&mut self) -> Result<u32, PatchError> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u64(&mut self) -> Result<u64, PatchError> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn i64(&mut self) -> Result<i64, PatchError> {
        Ok(self.u64()? as i64)
    }

    fn f64(&mut self) -> Result<f64, PatchError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String, PatchError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| PatchError::Cache("non-utf8 recording id".into()))
    }
}

/// Serialize the matrix: header, column provenance, then the values as
/// little-endian 64-bit floats in column-major order.
pub fn matrix_cache_bytes(matrix: &PatchMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MATRIX_CACHE_MAGIC);
    put_u32(&mut out, MATRIX_CACHE_VERSION);
    put_u64(&mut out, matrix.rows() as u64);
    put_u64(&mut out, matrix.cols() as u64);
    put_u32(&mut out, matrix.stencil.width() as u32);
    put_u32(&mut out, matrix.stencil.height() as u32);
    put_u32(&mut out, matrix.downscale as u32);

    let order = matrix.recording_order();
    put_u32(&mut out, order.len() as u32);
    for id in &order {
        put_str(&mut out, id);
    }
    for meta in &matrix.meta {
        let table_idx = order
            .iter()
            .position(|id| id == &meta.recording_id)
            .expect("meta id present in recording order") as u32;
        put_u32(&mut out, table_idx);
        put_u64(&mut out, meta.ordinal_in_recording as u64);
        put_u64(&mut out, meta.anchor_frame_index as u64);
        put_u64(&mut out, meta.anchor_time_ms as u64);
    }
    for column in matrix.values.columns() {
        for &v in column.iter() {
            put_u64(&mut out, v.to_bits());
        }
    }
    out
}

pub fn write_matrix_cache(path: &Path, matrix: &PatchMatrix) -> Result<(), PatchError> {
    let bytes = matrix_cache_bytes(matrix);
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| PatchError::Io(e.error))?;
    Ok(())
}

pub fn read_matrix_cache(path: &Path) -> Result<PatchMatrix, PatchError> {
    let file = std::fs::File::open(path)?;
    let mut reader = CacheReader {
        inner: std::io::BufReader::new(file),
    };
    let mut magic = [0u8; 8];
    reader.inner.read_exact(&mut magic)?;
    if &magic != MATRIX_CACHE_MAGIC {
        return Err(PatchError::Cache("bad magic".into()));
    }
    let version = reader.u32()?;
    if version != MATRIX_CACHE_VERSION {
        return Err(PatchError::UnsupportedVersion {
            found: version,
            expected: MATRIX_CACHE_VERSION,
        });
    }
    let rows = reader.u64()? as usize;
    let cols = reader.u64()? as usize;
    let stencil_w = reader.u32()? as usize;
    let stencil_h = reader.u32()? as usize;
    let downscale = reader.u32()? as usize;
    let stencil = StencilSpec::new(stencil_w, stencil_h)
        .ok_or_else(|| PatchError::Cache("even stencil in header".into()))?;
    let (patch_w, patch_h) = downscaled_dims(stencil, downscale);
    if rows != 3 * patch_w * patch_h {
        return Err(PatchError::Cache(format!(
            "row count {rows} does not match stencil {stencil_w}x{stencil_h}/{downscale}"
        )));
    }

    let table_len = reader.u32()? as usize;
    let mut table = Vec::with_capacity(table_len);
    for _ in 0..table_len {
        table.push(reader.string()?);
    }
    let mut meta = Vec::with_capacity(cols);
    for _ in 0..cols {
        let table_idx = reader.u32()? as usize;
        let recording_id = table
            .get(table_idx)
            .ok_or_else(|| PatchError::Cache("meta references unknown recording".into()))?
            .clone();
        meta.push(ColumnMeta {
            recording_id,
            ordinal_in_recording: reader.u64()? as usize,
            anchor_frame_index: reader.u64()? as usize,
            anchor_time_ms: reader.i64()?,
        });
    }
    let mut flat = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        flat.push(reader.f64()?);
    }
    let mut trailing = [0u8; 1];
    if reader.inner.read(&mut trailing)? != 0 {
        return Err(PatchError::Cache("trailing bytes".into()));
    }
    let values = Array2::from_shape_vec((rows, cols).f(), flat)
        .map_err(|e| PatchError::Cache(e.to_string()))?;
    Ok(PatchMatrix {
        values,
        meta,
        stencil,
        downscale: downscale.max(1),
    })
}
