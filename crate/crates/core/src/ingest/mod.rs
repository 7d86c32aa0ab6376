//! Recording ingestion: frame decoding, gaze-log parsing, and the
//! [`Recording`] abstraction the rest of the pipeline works against.
//!
//! A recording on disk is a directory holding `gaze.csv` and a `frames/`
//! subdirectory of zero-padded `NNNNNN.ppm` files (`.png` when the `png`
//! feature is enabled). Frames are decoded lazily; only their headers are
//! read at load time to validate dimensions.

mod ppm;

pub use ppm::{decode_ppm, encode_ppm, peek_ppm_dims};

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

/// Expected `gaze.csv` header.
pub const GAZE_CSV_HEADER: [&str; 4] = ["timestamp_ms", "frame_index", "x_px", "y_px"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing gaze file: {0}")]
    MissingGazeFile(PathBuf),
    #[error("no frames found under {0}")]
    NoFrames(PathBuf),
    #[error("frame {frame} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        frame: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("malformed gaze csv at line {line}: {reason}")]
    MalformedCsv { line: u64, reason: String },
    #[error("frame_index regresses at timestamp {timestamp_ms} after sorting by time")]
    NonMonotonicTimestamps { timestamp_ms: i64 },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image payload shorter than its header declares")]
    TruncatedPayload,
    #[error("image payload carries bytes past the declared pixel data")]
    TrailingData,
    #[error("frame numbering gap: expected frame {expected}, found {found:?}")]
    FrameGap { expected: usize, found: String },
    #[error("duplicate frame index {0} in frames/ directory")]
    DuplicateFrame(usize),
    #[error("gaze sample at {timestamp_ms} ms references frame {frame_index}, but only {frame_count} frames exist")]
    FrameIndexOutOfRange {
        timestamp_ms: i64,
        frame_index: usize,
        frame_count: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Non-fatal findings surfaced during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestWarning {
    /// A later row repeated an earlier timestamp and was dropped.
    DuplicateTimestamp { timestamp_ms: i64 },
    /// A valid gaze coordinate fell outside the frame and was clamped
    /// to the nearest border pixel.
    ClampedGaze { timestamp_ms: i64 },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::DuplicateTimestamp { timestamp_ms } => {
                write!(f, "dropped duplicate timestamp {timestamp_ms} ms")
            }
            IngestWarning::ClampedGaze { timestamp_ms } => {
                write!(f, "clamped out-of-frame gaze at {timestamp_ms} ms")
            }
        }
    }
}

/// One timestamped gaze measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub timestamp_ms: i64,
    pub frame_index: usize,
    /// Pixels from the left frame edge. Meaningless when `valid` is false.
    pub x_px: f64,
    /// Pixels from the top frame edge. Meaningless when `valid` is false.
    pub y_px: f64,
    /// False when the tracker lost the gaze for this sample.
    pub valid: bool,
}

/// Row-major interleaved RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    /// All-black image of the given size.
    pub fn black(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    /// Wrap interleaved RGB bytes. Panics if the byte count does not match.
    pub fn from_rgb_bytes(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height * 3, "pixel buffer size");
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: (u8, u8, u8)) {
        let i = (y * self.width + x) * 3;
        self.pixels[i] = rgb.0;
        self.pixels[i + 1] = rgb.1;
        self.pixels[i + 2] = rgb.2;
    }

    /// Interleaved RGB bytes, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
}

/// Decode a frame payload. Binary PPM (P6, maxval 255) is always available;
/// PNG is accepted when the `png` feature is compiled in.
pub fn decode_image(bytes: &[u8]) -> Result<Image, IngestError> {
    if bytes.starts_with(b"\x89PNG") {
        #[cfg(feature = "png")]
        {
            return decode_png(bytes);
        }
        #[cfg(not(feature = "png"))]
        {
            return Err(IngestError::UnsupportedFormat(
                "PNG payload, but the png feature is not compiled in".into(),
            ));
        }
    }
    decode_ppm(bytes)
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Image, IngestError> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| IngestError::UnsupportedFormat(format!("png decode: {e}")))?;
    let rgb = decoded.to_rgb8();
    Ok(Image::from_rgb_bytes(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.into_raw(),
    ))
}

/// Parse `gaze.csv` bytes into samples sorted by timestamp.
///
/// Rows with both coordinates empty are kept with `valid = false`.
/// Duplicate timestamps keep the first occurrence; each drop is reported
/// as a warning. A frame index that moves backwards after the sort is an
/// error, since time and frame order then disagree.
pub fn parse_gaze_csv(bytes: &[u8]) -> Result<(Vec<GazeSample>, Vec<IngestWarning>), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedCsv {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = GAZE_CSV_HEADER.to_vec();
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(IngestError::MalformedCsv {
            line: 1,
            reason: format!("header {found:?} does not match {expected:?}"),
        });
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize| -> &str { record.get(idx).unwrap_or("") };
        if record.len() != 4 {
            return Err(IngestError::MalformedCsv {
                line,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let timestamp_ms: i64 = field(0).parse().map_err(|_| IngestError::MalformedCsv {
            line,
            reason: format!("bad timestamp_ms {:?}", field(0)),
        })?;
        let frame_index: usize = field(1).parse().map_err(|_| IngestError::MalformedCsv {
            line,
            reason: format!("bad frame_index {:?}", field(1)),
        })?;
        let (x_raw, y_raw) = (field(2), field(3));
        let sample = match (x_raw.is_empty(), y_raw.is_empty()) {
            (true, true) => GazeSample {
                timestamp_ms,
                frame_index,
                x_px: 0.0,
                y_px: 0.0,
                valid: false,
            },
            (false, false) => {
                let x_px: f64 = x_raw.parse().map_err(|_| IngestError::MalformedCsv {
                    line,
                    reason: format!("bad x_px {x_raw:?}"),
                })?;
                let y_px: f64 = y_raw.parse().map_err(|_| IngestError::MalformedCsv {
                    line,
                    reason: format!("bad y_px {y_raw:?}"),
                })?;
                if !x_px.is_finite() || !y_px.is_finite() {
                    return Err(IngestError::MalformedCsv {
                        line,
                        reason: "non-finite gaze coordinate".into(),
                    });
                }
                GazeSample {
                    timestamp_ms,
                    frame_index,
                    x_px,
                    y_px,
                    valid: true,
                }
            }
            _ => {
                return Err(IngestError::MalformedCsv {
                    line,
                    reason: "x_px and y_px must be both present or both empty".into(),
                })
            }
        };
        samples.push(sample);
    }

    samples.sort_by_key(|s| s.timestamp_ms);

    let mut warnings = Vec::new();
    let mut deduped: Vec<GazeSample> = Vec::with_capacity(samples.len());
    for sample in samples {
        if deduped
            .last()
            .is_some_and(|prev| prev.timestamp_ms == sample.timestamp_ms)
        {
            warnings.push(IngestWarning::DuplicateTimestamp {
                timestamp_ms: sample.timestamp_ms,
            });
        } else {
            deduped.push(sample);
        }
    }

    for pair in deduped.windows(2) {
        if pair[1].frame_index < pair[0].frame_index {
            return Err(IngestError::NonMonotonicTimestamps {
                timestamp_ms: pair[1].timestamp_ms,
            });
        }
    }

    Ok((deduped, warnings))
}

/// Resolves frame indices to decoded images.
///
/// Disk-backed sources decode on every access; in-memory sources (used by
/// the synthetic scene generator) clone stored frames. Both count full
/// pixel decodes so tests can observe ingestion laziness, and both are
/// safe for concurrent reads.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Disk {
        paths: Arc<Vec<PathBuf>>,
        decoded: Arc<AtomicUsize>,
    },
    Memory {
        frames: Arc<Vec<Image>>,
        decoded: Arc<AtomicUsize>,
    },
}

impl FrameSource {
    pub fn from_images(frames: Vec<Image>) -> Self {
        FrameSource::Memory {
            frames: Arc::new(frames),
            decoded: Arc::new(AtomicUsize::new(0)),
        }
    }

    fn frame(&self, index: usize) -> Result<Image, IngestError> {
        match self {
            FrameSource::Disk { paths, decoded } => {
                let path = &paths[index];
                let bytes = fs::read(path).map_err(|source| IngestError::Io {
                    path: path.clone(),
                    source,
                })?;
                let img = decode_image(&bytes)?;
                decoded.fetch_add(1, Ordering::Relaxed);
                Ok(img)
            }
            FrameSource::Memory { frames, decoded } => {
                decoded.fetch_add(1, Ordering::Relaxed);
                Ok(frames[index].clone())
            }
        }
    }

    fn decode_count(&self) -> usize {
        match self {
            FrameSource::Disk { decoded, .. } | FrameSource::Memory { decoded, .. } => {
                decoded.load(Ordering::Relaxed)
            }
        }
    }
}

/// One eye-tracking recording: constant-size frames plus its gaze samples.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<GazeSample>,
    frames: FrameSource,
}

impl Recording {
    /// Assemble a recording from already-decoded frames (synthetic scenes).
    pub fn from_frames(
        id: impl Into<String>,
        frames: Vec<Image>,
        samples: Vec<GazeSample>,
    ) -> Self {
        assert!(!frames.is_empty(), "a recording needs at least one frame");
        let width = frames[0].width();
        let height = frames[0].height();
        Recording {
            id: id.into(),
            frame_count: frames.len(),
            width,
            height,
            samples,
            frames: FrameSource::from_images(frames),
        }
    }

    /// Decode the frame at `index`.
    pub fn frame(&self, index: usize) -> Result<Image, IngestError> {
        self.frames.frame(index)
    }

    /// Number of full frame decodes performed so far.
    pub fn frames_decoded(&self) -> usize {
        self.frames.decode_count()
    }
}

fn frame_extension(path: &Path) -> Option<&str> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => Some("ppm"),
        #[cfg(feature = "png")]
        Some("png") => Some("png"),
        _ => None,
    }
}

/// Read only the dimensions of a frame file.
fn peek_frame_dims(path: &Path) -> Result<(usize, usize), IngestError> {
    let mapped_io = |source: std::io::Error| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    #[cfg(feature = "png")]
    if path.extension().and_then(|e| e.to_str()) == Some("png") {
        let (w, h) = image::image_dimensions(path)
            .map_err(|e| IngestError::UnsupportedFormat(format!("png header: {e}")))?;
        return Ok((w as usize, h as usize));
    }
    let mut file = fs::File::open(path).map_err(mapped_io)?;
    let mut head = [0u8; 256];
    let mut filled = 0;
    while filled < head.len() {
        let n = file.read(&mut head[filled..]).map_err(mapped_io)?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    peek_ppm_dims(&head[..filled])
}

/// Load a recording directory: parse and sort the gaze log, validate all
/// frame headers against frame 0, and set up lazy pixel decoding.
///
/// Valid samples with coordinates outside the frame are clamped to the
/// nearest border pixel; each clamp is reported as a warning.
pub fn load_recording(dir: &Path) -> Result<(Recording, Vec<IngestWarning>), IngestError> {
    let gaze_path = dir.join("gaze.csv");
    if !gaze_path.is_file() {
        return Err(IngestError::MissingGazeFile(gaze_path));
    }

    let frames_dir = dir.join("frames");
    let mut entries: Vec<PathBuf> = match fs::read_dir(&frames_dir) {
        Ok(iter) => iter
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| frame_extension(p).is_some())
            .collect(),
        Err(_) => Vec::new(),
    };
    if entries.is_empty() {
        return Err(IngestError::NoFrames(frames_dir));
    }
    entries.sort();

    // Frame files must be a gapless zero-padded sequence starting at 0 so
    // that frame_index can address them directly.
    let mut paths: Vec<PathBuf> = Vec::with_capacity(entries.len());
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let parsed: usize = stem.parse().map_err(|_| IngestError::FrameGap {
            expected: paths.len(),
            found: stem.to_string(),
        })?;
        if parsed < paths.len() {
            return Err(IngestError::DuplicateFrame(parsed));
        }
        if parsed > paths.len() {
            return Err(IngestError::FrameGap {
                expected: paths.len(),
                found: stem.to_string(),
            });
        }
        paths.push(path);
    }

    let (width, height) = peek_frame_dims(&paths[0])?;
    for (i, path) in paths.iter().enumerate().skip(1) {
        let (w, h) = peek_frame_dims(path)?;
        if (w, h) != (width, height) {
            return Err(IngestError::DimensionMismatch {
                frame: i,
                expected_w: width,
                expected_h: height,
                found_w: w,
                found_h: h,
            });
        }
    }

    let gaze_bytes = fs::read(&gaze_path).map_err(|source| IngestError::Io {
        path: gaze_path.clone(),
        source,
    })?;
    let (mut samples, mut warnings) = parse_gaze_csv(&gaze_bytes)?;

    let frame_count = paths.len();
    for sample in &mut samples {
        if sample.frame_index >= frame_count {
            return Err(IngestError::FrameIndexOutOfRange {
                timestamp_ms: sample.timestamp_ms,
                frame_index: sample.frame_index,
                frame_count,
            });
        }
        if sample.valid {
            let max_x = (width - 1) as f64;
            let max_y = (height - 1) as f64;
            let clamped_x = sample.x_px.clamp(0.0, max_x);
            let clamped_y = sample.y_px.clamp(0.0, max_y);
            if clamped_x != sample.x_px || clamped_y != sample.y_px {
                warnings.push(IngestWarning::ClampedGaze {
                    timestamp_ms: sample.timestamp_ms,
                });
                sample.x_px = clamped_x;
                sample.y_px = clamped_y;
            }
        }
    }

    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());

    Ok((
        Recording {
            id,
            frame_count,
            width,
            height,
            samples,
            frames: FrameSource::Disk {
                paths: Arc::new(paths),
                decoded: Arc::new(AtomicUsize::new(0)),
            },
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_frame(dir: &Path, index: usize, img: &Image) {
        let path = dir.join(format!("{index:06}.ppm"));
        fs::File::create(path)
            .unwrap()
            .write_all(&encode_ppm(img))
            .unwrap();
    }

    fn scaffold_recording(root: &Path, frames: &[Image], gaze_csv: &str) -> std::path::PathBuf {
        let dir = root.join("rec_a");
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).unwrap();
        for (i, img) in frames.iter().enumerate() {
            write_frame(&frames_dir, i, img);
        }
        fs::write(dir.join("gaze.csv"), gaze_csv).unwrap();
        dir
    }

    fn gaze_rows(n: usize) -> String {
        let mut s = String::from("timestamp_ms,frame_index,x_px,y_px\n");
        for i in 0..n {
            s.push_str(&format!("{},{},10.0,20.0\n", i as i64 * 33, i.min(2)));
        }
        s
    }

    #[test]
    fn loads_recording_with_frames_and_samples() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(64, 48); 3];
        let dir = scaffold_recording(tmp.path(), &frames, &gaze_rows(10));
        let (rec, warnings) = load_recording(&dir).unwrap();
        assert_eq!(rec.frame_count, 3);
        assert_eq!((rec.width, rec.height), (64, 48));
        assert_eq!(rec.samples.len(), 10);
        assert_eq!(rec.id, "rec_a");
        assert!(warnings.is_empty());
    }

    #[test]
    fn load_is_lazy_about_pixel_data() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(8, 8); 4];
        let dir = scaffold_recording(tmp.path(), &frames, &gaze_rows(2));
        let (rec, _) = load_recording(&dir).unwrap();
        assert_eq!(rec.frames_decoded(), 0);
        rec.frame(2).unwrap();
        assert_eq!(rec.frames_decoded(), 1);
    }

    #[test]
    fn frames_decode_concurrently() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Recording>();

        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(8, 8); 4];
        let dir = scaffold_recording(tmp.path(), &frames, &gaze_rows(2));
        let (rec, _) = load_recording(&dir).unwrap();
        std::thread::scope(|scope| {
            for i in 0..4 {
                let rec = &rec;
                scope.spawn(move || rec.frame(i).unwrap());
            }
        });
        assert_eq!(rec.frames_decoded(), 4);
    }

    #[test]
    fn dimension_mismatch_is_reported_for_later_frame() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(64, 48), Image::black(64, 48)];
        let dir = scaffold_recording(tmp.path(), &frames, &gaze_rows(2));
        write_frame(&dir.join("frames"), 2, &Image::black(32, 32));
        let err = load_recording(&dir).unwrap_err();
        assert!(matches!(
            err,
            IngestError::DimensionMismatch { frame: 2, .. }
        ));
    }

    #[test]
    fn missing_gaze_file_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("rec_b");
        fs::create_dir_all(dir.join("frames")).unwrap();
        write_frame(&dir.join("frames"), 0, &Image::black(4, 4));
        assert!(matches!(
            load_recording(&dir),
            Err(IngestError::MissingGazeFile(_))
        ));
    }

    #[test]
    fn empty_frames_dir_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("rec_c");
        fs::create_dir_all(dir.join("frames")).unwrap();
        fs::write(dir.join("gaze.csv"), gaze_rows(1)).unwrap();
        assert!(matches!(
            load_recording(&dir),
            Err(IngestError::NoFrames(_))
        ));
    }

    #[test]
    fn frame_numbering_gap_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(4, 4)];
        let dir = scaffold_recording(tmp.path(), &frames, &gaze_rows(1));
        write_frame(&dir.join("frames"), 2, &Image::black(4, 4));
        assert!(matches!(
            load_recording(&dir),
            Err(IngestError::FrameGap { expected: 1, .. })
        ));
    }

    #[test]
    fn frame_index_past_frame_count_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(8, 8); 2];
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,1.0,1.0\n33,5,1.0,1.0\n";
        let dir = scaffold_recording(tmp.path(), &frames, csv);
        assert!(matches!(
            load_recording(&dir),
            Err(IngestError::FrameIndexOutOfRange {
                frame_index: 5,
                frame_count: 2,
                ..
            })
        ));
    }

    #[test]
    fn out_of_frame_gaze_is_clamped_with_warning() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = vec![Image::black(64, 48)];
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,-5.0,20.0\n33,0,70.5,100.0\n";
        let dir = scaffold_recording(tmp.path(), &frames, csv);
        let (rec, warnings) = load_recording(&dir).unwrap();
        assert_eq!(rec.samples[0].x_px, 0.0);
        assert_eq!(rec.samples[1].x_px, 63.0);
        assert_eq!(rec.samples[1].y_px, 47.0);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn parses_two_valid_rows() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,10.0,20.0\n33,1,12.0,21.0\n";
        let (samples, warnings) = parse_gaze_csv(csv.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert!(samples.iter().all(|s| s.valid));
        assert_eq!(samples[1].timestamp_ms, 33);
        assert!(warnings.is_empty());
    }

    #[test]
    fn empty_coordinates_mark_sample_invalid() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,,\n";
        let (samples, _) = parse_gaze_csv(csv.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(!samples[0].valid);
    }

    #[test]
    fn non_numeric_coordinate_reports_line() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,10.0,20.0\n33,1,oops,21.0\n";
        let err = parse_gaze_csv(csv.as_bytes()).unwrap_err();
        match err {
            IngestError::MalformedCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("expected MalformedCsv, got {other:?}"),
        }
    }

    #[test]
    fn one_sided_empty_coordinate_is_malformed() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,10.0,\n";
        assert!(matches!(
            parse_gaze_csv(csv.as_bytes()),
            Err(IngestError::MalformedCsv { .. })
        ));
    }

    #[test]
    fn duplicate_timestamps_keep_first_and_warn() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,0,1.0,1.0\n33,1,2.0,2.0\n33,1,9.0,9.0\n";
        let (samples, warnings) = parse_gaze_csv(csv.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[1].x_px, 2.0);
        assert_eq!(
            warnings,
            vec![IngestWarning::DuplicateTimestamp { timestamp_ms: 33 }]
        );
    }

    #[test]
    fn unsorted_rows_are_sorted_by_timestamp() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n66,2,3.0,3.0\n0,0,1.0,1.0\n33,1,2.0,2.0\n";
        let (samples, _) = parse_gaze_csv(csv.as_bytes()).unwrap();
        let times: Vec<i64> = samples.iter().map(|s| s.timestamp_ms).collect();
        assert_eq!(times, vec![0, 33, 66]);
    }

    #[test]
    fn frame_regression_after_sort_is_an_error() {
        let csv = "timestamp_ms,frame_index,x_px,y_px\n0,5,1.0,1.0\n33,1,2.0,2.0\n";
        assert!(matches!(
            parse_gaze_csv(csv.as_bytes()),
            Err(IngestError::NonMonotonicTimestamps { timestamp_ms: 33 })
        ));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let csv = "time,frame,x,y\n0,0,1.0,1.0\n";
        assert!(matches!(
            parse_gaze_csv(csv.as_bytes()),
            Err(IngestError::MalformedCsv { line: 1, .. })
        ));
    }

    #[cfg(feature = "png")]
    mod png {
        use super::*;

        fn encode_png(img: &Image) -> Vec<u8> {
            let buffer = image::RgbImage::from_raw(
                img.width() as u32,
                img.height() as u32,
                img.as_bytes().to_vec(),
            )
            .unwrap();
            let mut bytes = std::io::Cursor::new(Vec::new());
            buffer
                .write_to(&mut bytes, image::ImageFormat::Png)
                .unwrap();
            bytes.into_inner()
        }

        fn gradient(width: usize, height: usize) -> Image {
            let mut img = Image::black(width, height);
            for y in 0..height {
                for x in 0..width {
                    img.set_pixel(x, y, (x as u8, y as u8, 200));
                }
            }
            img
        }

        #[test]
        fn decodes_png_payloads() {
            let img = gradient(7, 5);
            let decoded = decode_image(&encode_png(&img)).unwrap();
            assert_eq!(decoded, img);
        }

        #[test]
        fn loads_recordings_with_png_frames() {
            let tmp = tempfile::tempdir().unwrap();
            let dir = tmp.path().join("rec_png");
            let frames_dir = dir.join("frames");
            fs::create_dir_all(&frames_dir).unwrap();
            for i in 0..3 {
                fs::write(
                    frames_dir.join(format!("{i:06}.png")),
                    encode_png(&gradient(16, 12)),
                )
                .unwrap();
            }
            fs::write(dir.join("gaze.csv"), gaze_rows(4)).unwrap();
            let (rec, _) = load_recording(&dir).unwrap();
            assert_eq!((rec.width, rec.height), (16, 12));
            assert_eq!(rec.frames_decoded(), 0);
            assert_eq!(rec.frame(1).unwrap(), gradient(16, 12));
            assert_eq!(rec.frames_decoded(), 1);
        }
    }
}
