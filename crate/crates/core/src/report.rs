//! Renders a component analysis into files: spatial component images,
//! stacked temporal indicator plots as SVG, representative-frame montages,
//! and a machine-readable summary.
//!
//! Plots and montages are rendered from the summary data structure itself,
//! so re-rendering a parsed `summary.json` against the cached frames
//! reproduces the files byte for byte. All writes go through a
//! write-temp-then-rename step.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{ComponentAnalysis, ComponentsError};
use crate::ingest::{encode_ppm, Image, IngestError, Recording};
use crate::patchgrid::PatchError;

/// Fixed categorical palette; recording `i` uses entry `i mod 12`.
pub const RECORDING_PALETTE: [(u8, u8, u8); 12] = [
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
    (174, 199, 232),
    (255, 187, 120),
];

/// Border thickness around montage frames, in pixels.
const MONTAGE_BORDER_PX: usize = 4;

/// A decoded representative frame paired with its border color.
pub type BorderedFrame = (Image, (u8, u8, u8));

const LABEL_W: f64 = 120.0;
const CHART_W: f64 = 480.0;
const CHART_H: f64 = 40.0;
const ROW_GAP: f64 = 14.0;
const HEADER_H: f64 = 54.0;
const RIGHT_PAD: f64 = 16.0;
const BOTTOM_PAD: f64 = 12.0;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Components(#[from] ComponentsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("summary references recording {0} which is not loaded")]
    UnknownRecording(String),
    #[error("summary serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run parameters echoed into the summary for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryParameters {
    pub stencil: [usize; 2],
    pub downscale: usize,
    pub min_fixation_ms: i64,
    pub dispersion_px: f64,
    pub k: usize,
    pub algorithm: String,
    pub max_iters: usize,
    pub replicates: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub boundary_margin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFactorization {
    pub iterations_run: usize,
    pub final_objective: f64,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFiles {
    pub spatial: String,
    pub indicators: String,
    pub montage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryIndicator {
    pub recording_id: String,
    pub active: bool,
    pub raw_max: f64,
    pub peak_ordinal: usize,
    pub peak_at_boundary: bool,
    pub anchor_frame_index: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryComponent {
    /// 1-based position after sorting by impact.
    pub rank: usize,
    pub index_original: usize,
    pub impact: f64,
    pub files: SummaryFiles,
    pub recordings: Vec<SummaryIndicator>,
}

/// The machine-readable report document. Key order is fixed by the struct
/// layout, so identical runs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub parameters: SummaryParameters,
    pub recording_order: Vec<String>,
    pub per_recording_fixations: Vec<usize>,
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub factorization: SummaryFactorization,
    pub components: Vec<SummaryComponent>,
}

/// Paths produced by one report run.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub component_dirs: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

pub fn recording_color(index: usize) -> (u8, u8, u8) {
    RECORDING_PALETTE[index % RECORDING_PALETTE.len()]
}

fn hex(color: (u8, u8, u8)) -> String {
    format!("#{:02x}{:02x}{:02x}", color.0, color.1, color.2)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Render one component's stacked indicator charts as an SVG 1.1 document:
/// one line chart per recording in the shared recording order, y fixed to
/// [0, 1], the highest peak enclosed by two gray bars (one when the peak
/// sits at a boundary), and the line drawn in the recording's palette
/// color. Inactive recordings get a flat zero line and no bars.
pub fn render_indicator_svg(component: &SummaryComponent, boundary_margin: usize) -> String {
    let n = component.recordings.len();
    let width = LABEL_W + CHART_W + RIGHT_PAD;
    let height = HEADER_H + n as f64 * (CHART_H + ROW_GAP) + BOTTOM_PAD;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{LABEL_W}" y="20" font-family="monospace" font-size="14">component {} (impact {:.4})</text>"#,
        component.rank, component.impact
    );
    let bar_w = component.impact * CHART_W;
    let _ = writeln!(
        svg,
        r##"<rect x="{LABEL_W}" y="28" width="{bar_w:.3}" height="10" fill="#333333"/>"##
    );

    for (i, indicator) in component.recordings.iter().enumerate() {
        let y0 = HEADER_H + i as f64 * (CHART_H + ROW_GAP);
        let color = hex(recording_color(i));
        let label_y = y0 + CHART_H / 2.0 + 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{label_y}" font-family="monospace" font-size="12" fill="{color}">{}</text>"#,
            xml_escape(&indicator.recording_id)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{LABEL_W}" y="{y0}" width="{CHART_W}" height="{CHART_H}" fill="none" stroke="#cccccc" stroke-width="1"/>"##
        );
        let len = indicator.values.len();
        if len == 0 {
            continue;
        }
        let step = CHART_W / len as f64;
        let mut points = String::new();
        for (o, &v) in indicator.values.iter().enumerate() {
            let x = LABEL_W + (o as f64 + 0.5) * step;
            let y = y0 + CHART_H * (1.0 - v);
            let _ = write!(points, "{x:.3},{y:.3} ");
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.trim_end()
        );
        if indicator.active {
            let peak = indicator.peak_ordinal;
            let at_left = peak < boundary_margin;
            let at_right = peak + boundary_margin >= len;
            let y1 = y0 + CHART_H;
            let mut bar = |edge: usize| {
                let x = LABEL_W + edge as f64 * step;
                let _ = writeln!(
                    svg,
                    r##"<line class="peak" x1="{x:.3}" y1="{y0}" x2="{x:.3}" y2="{y1}" stroke="#808080" stroke-width="1.5"/>"##
                );
            };
            if at_left {
                bar(peak + 1);
            } else if at_right {
                bar(peak);
            } else {
                bar(peak);
                bar(peak + 1);
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Lay representative frames out left-to-right, top-to-bottom in recording
/// order on a ceil(sqrt(n))-column grid, each framed by its recording's
/// border color. Inactive recordings are skipped; an empty set renders a
/// single black pixel.
pub fn render_montage(frames: &[BorderedFrame]) -> Image {
    if frames.is_empty() {
        return Image::black(1, 1);
    }
    let max_w = frames.iter().map(|(f, _)| f.width()).max().unwrap();
    let max_h = frames.iter().map(|(f, _)| f.height()).max().unwrap();
    let cell_w = max_w + 2 * MONTAGE_BORDER_PX;
    let cell_h = max_h + 2 * MONTAGE_BORDER_PX;
    let cols = (frames.len() as f64).sqrt().ceil() as usize;
    let rows = frames.len().div_ceil(cols);
    let mut out = Image::black(cols * cell_w, rows * cell_h);
    for (i, (frame, color)) in frames.iter().enumerate() {
        let cx = (i % cols) * cell_w;
        let cy = (i / cols) * cell_h;
        for y in 0..cell_h {
            for x in 0..cell_w {
                out.set_pixel(cx + x, cy + y, *color);
            }
        }
        let off_x = cx + (cell_w - frame.width()) / 2;
        let off_y = cy + (cell_h - frame.height()) / 2;
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                out.set_pixel(off_x + x, off_y + y, frame.pixel(x, y));
            }
        }
    }
    out
}

/// Atomic file write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Build the summary document for an analysis (file paths filled in
/// relative to the report directory).
pub fn build_summary(
    analysis: &ComponentAnalysis,
    parameters: SummaryParameters,
    factorization: SummaryFactorization,
    per_recording_fixations: Vec<usize>,
    matrix_rows: usize,
    matrix_cols: usize,
) -> Summary {
    let components = analysis
        .components
        .iter()
        .enumerate()
        .map(|(i, component)| {
            let rank = i + 1;
            let dir = format!("component_{rank:02}");
            SummaryComponent {
                rank,
                index_original: component.index_original,
                impact: component.impact,
                files: SummaryFiles {
                    spatial: format!("{dir}/spatial.ppm"),
                    indicators: format!("{dir}/indicators.svg"),
                    montage: format!("{dir}/montage.ppm"),
                },
                recordings: component
                    .indicators
                    .iter()
                    .map(|indicator| SummaryIndicator {
                        recording_id: indicator.recording_id.clone(),
                        active: indicator.series.is_active(),
                        raw_max: indicator.series.raw_max,
                        peak_ordinal: indicator.series.peak_ordinal,
                        peak_at_boundary: indicator.series.peak_at_boundary,
                        anchor_frame_index: indicator
                            .representative
                            .as_ref()
                            .map(|r| r.frame_index),
                        values: indicator.series.values.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    Summary {
        format_version: 1,
        parameters,
        recording_order: analysis.recording_order.clone(),
        per_recording_fixations,
        matrix_rows,
        matrix_cols,
        factorization,
        components,
    }
}

fn montage_frames(
    summary: &Summary,
    component: &SummaryComponent,
    recordings: &[Recording],
) -> Result<Vec<BorderedFrame>, ReportError> {
    let mut frames = Vec::new();
    for indicator in &component.recordings {
        let Some(frame_index) = indicator.anchor_frame_index else {
            continue;
        };
        let recording = recordings
            .iter()
            .find(|r| r.id == indicator.recording_id)
            .ok_or_else(|| ReportError::UnknownRecording(indicator.recording_id.clone()))?;
        let color_index = summary
            .recording_order
            .iter()
            .position(|id| id == &indicator.recording_id)
            .ok_or_else(|| ReportError::UnknownRecording(indicator.recording_id.clone()))?;
        frames.push((recording.frame(frame_index)?, recording_color(color_index)));
    }
    Ok(frames)
}

/// Render every plot and montage named by a summary into `out_dir`.
/// This is the re-render path used by both [`write_report`] and the
/// summary round-trip check; it touches nothing but the summary contents
/// and the recordings' frames.
pub fn render_from_summary(
    summary: &Summary,
    recordings: &[Recording],
    out_dir: &Path,
) -> Result<(), ReportError> {
    for component in &summary.components {
        let dir = out_dir.join(format!("component_{:02}", component.rank));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let svg = render_indicator_svg(component, summary.parameters.boundary_margin);
        write_atomic(&out_dir.join(&component.files.indicators), svg.as_bytes())?;
        let frames = montage_frames(summary, component, recordings)?;
        let montage = render_montage(&frames);
        write_atomic(
            &out_dir.join(&component.files.montage),
            &encode_ppm(&montage),
        )?;
    }
    Ok(())
}

/// Write the complete report: per-component spatial image, indicator SVG,
/// and montage, then `summary.json`. The summary is written last so it
/// only ever references files that exist.
#[allow(clippy::too_many_arguments)]
pub fn write_report(
    analysis: &ComponentAnalysis,
    recordings: &[Recording],
    parameters: SummaryParameters,
    factorization: SummaryFactorization,
    per_recording_fixations: Vec<usize>,
    matrix_rows: usize,
    matrix_cols: usize,
    out_dir: &Path,
) -> Result<ReportBundle, ReportError> {
    if !out_dir.exists() {
        fs::create_dir(out_dir).map_err(io_err(out_dir))?;
    }
    let summary = build_summary(
        analysis,
        parameters,
        factorization,
        per_recording_fixations,
        matrix_rows,
        matrix_cols,
    );

    let mut component_dirs = Vec::new();
    for (component, summary_component) in analysis.components.iter().zip(&summary.components) {
        let dir = out_dir.join(format!("component_{:02}", summary_component.rank));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let spatial = crate::components::spatial_image(&component.spatial, analysis.patch_dims)?;
        write_atomic(
            &out_dir.join(&summary_component.files.spatial),
            &encode_ppm(&spatial),
        )?;
        component_dirs.push(dir);
    }
    render_from_summary(&summary, recordings, out_dir)?;

    let summary_path = out_dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&summary_path, &json)?;

    Ok(ReportBundle {
        out_dir: out_dir.to_path_buf(),
        component_dirs,
        summary_path,
        summary,
    })
}
