//! Synthetic gallery scenes with known ground truth, used as an oracle for
//! end-to-end recovery testing.
//!
//! Each AOI is a solid-color tile occupying its own cell of a small grid
//! inside the stencil window (a single AOI fills the whole stencil). The
//! disjoint tile supports are load-bearing twice over: they make the
//! template vectors linearly independent, so the zero-noise patch matrix
//! has exact rank equal to the AOI count, and they make the nonnegative
//! factorization unique up to scale and permutation. More than three
//! full-stencil solid colors could do neither: their vectors live in the
//! 3-dimensional RGB span, and overlapping supports admit alternative
//! exact factorizations in which one component sheds a fraction of
//! another, which would cap the achievable template similarity.
//!
//! Gaze is held at the AOI center with seeded jitter of at most 2 px.
//! Within one dwell the jitter is mirrored so it cancels in the fixation
//! centroid; every patch cropped at that centroid therefore reproduces
//! its AOI template bit for bit (at zero noise).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::components::ComponentAnalysis;
use crate::ingest::{encode_ppm, GazeSample, Image, IngestError, Recording};
use crate::patchgrid::{vectorize_patch, StencilSpec};

/// Milliseconds between consecutive synthetic gaze samples (one per frame).
pub const SAMPLE_CADENCE_MS: i64 = 30;

const MAX_JITTER_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("{components} components cannot be matched against {aois} AOIs")]
    KMismatch { components: usize, aois: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Saturated default palette for up to eight AOIs.
pub const DEFAULT_AOI_COLORS: [(u8, u8, u8); 8] = [
    (230, 25, 30),
    (60, 180, 75),
    (0, 130, 200),
    (255, 225, 25),
    (145, 30, 180),
    (245, 130, 48),
    (70, 240, 240),
    (240, 50, 230),
];

/// Declarative description of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub aoi_count: usize,
    /// One RGB color per AOI, pairwise distinct.
    pub aoi_colors: Vec<(u8, u8, u8)>,
    /// Frame size (width, height) in pixels.
    pub frame_size: (usize, usize),
    /// Per recording: ordered (aoi_index, dwell_frames) visits.
    pub visit_schedules: Vec<Vec<(usize, usize)>>,
    /// Uniform pixel noise amplitude in [0, 1).
    pub noise_amplitude: f64,
    pub seed: u64,
    /// Patch stencil the scene is built for.
    pub stencil: StencilSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.aoi_count == 0 {
            return fail("aoi_count must be >= 1".into());
        }
        if self.aoi_colors.len() != self.aoi_count {
            return fail(format!(
                "{} colors for {} AOIs",
                self.aoi_colors.len(),
                self.aoi_count
            ));
        }
        for (i, a) in self.aoi_colors.iter().enumerate() {
            for (j, b) in self.aoi_colors.iter().enumerate().skip(i + 1) {
                if a == b {
                    return fail(format!("AOI colors {i} and {j} are identical"));
                }
            }
        }
        if self.visit_schedules.is_empty() {
            return fail("at least one recording schedule is required".into());
        }
        for (r, schedule) in self.visit_schedules.iter().enumerate() {
            if schedule.is_empty() {
                return fail(format!("recording {r} has an empty schedule"));
            }
            for &(aoi, dwell) in schedule {
                if aoi >= self.aoi_count {
                    return fail(format!("recording {r} visits unknown AOI {aoi}"));
                }
                if dwell == 0 {
                    return fail(format!("recording {r} has a zero-length dwell"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.noise_amplitude) {
            return fail(format!(
                "noise_amplitude {} outside [0, 1)",
                self.noise_amplitude
            ));
        }
        let (sw, sh) = (self.stencil.width(), self.stencil.height());
        let grid = tile_grid(self.aoi_count);
        if sw / grid < 3 || sh / grid < 3 {
            return fail(format!(
                "stencil {sw}x{sh} too small for a {grid}x{grid} AOI tile grid"
            ));
        }
        let (margin_x, margin_y) = margins(self.stencil);
        let (fw, fh) = self.frame_size;
        if fw < 2 * margin_x + 1 || fh < 2 * margin_y + 1 {
            return fail(format!(
                "frame {fw}x{fh} too small for stencil {sw}x{sh} plus jitter margin"
            ));
        }
        Ok(())
    }
}

/// Per-frame AOI labels and the exact patch templates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per recording, aligned with the generated recordings: per frame the
    /// visited AOI index.
    pub frame_aois: Vec<(String, Vec<usize>)>,
    /// Per AOI: the patch a perfectly centered crop reproduces.
    pub templates: Vec<Image>,
    /// Per AOI: integer center position within the frame.
    pub aoi_centers: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn aoi_at(&self, recording_id: &str, frame_index: usize) -> Option<usize> {
        self.frame_aois
            .iter()
            .find(|(id, _)| id == recording_id)
            .and_then(|(_, frames)| frames.get(frame_index).copied())
    }
}

fn margins(stencil: StencilSpec) -> (usize, usize) {
    // Half stencil plus jitter plus rounding slack.
    (stencil.width() / 2 + 3, stencil.height() / 2 + 3)
}

/// Side length of the tile grid inside the stencil.
fn tile_grid(aoi_count: usize) -> usize {
    (aoi_count as f64).sqrt().ceil() as usize
}

/// The patch template of one AOI: a solid-color tile in the AOI's own
/// grid cell, black elsewhere. A single AOI fills the entire stencil.
/// The cells are disjoint, which is what pins the factorization to the
/// templates (see the module docs).
pub fn aoi_template(spec: &SceneSpec, aoi: usize) -> Image {
    let (sw, sh) = (spec.stencil.width(), spec.stencil.height());
    let grid = tile_grid(spec.aoi_count);
    let (col, row) = (aoi % grid, aoi / grid);
    let x0 = sw * col / grid;
    let x1 = sw * (col + 1) / grid;
    let y0 = sh * row / grid;
    let y1 = sh * (row + 1) / grid;
    let mut img = Image::black(sw, sh);
    let color = spec.aoi_colors[aoi];
    for y in y0..y1 {
        for x in x0..x1 {
            img.set_pixel(x, y, color);
        }
    }
    img
}

fn aoi_center(spec: &SceneSpec, aoi: usize) -> (usize, usize) {
    let (margin_x, margin_y) = margins(spec.stencil);
    let (fw, fh) = spec.frame_size;
    let usable = fw - 2 * margin_x;
    let cx = if spec.aoi_count == 1 {
        margin_x + usable / 2
    } else {
        margin_x + usable * aoi / (spec.aoi_count - 1)
    };
    (cx, margin_y + (fh - 2 * margin_y) / 2)
}

/// Mirrored per-dwell jitter: the first half is drawn, the second half
/// negates it, an odd middle sample gets zero. The dwell centroid is the
/// AOI center up to rounding noise far below half a pixel.
fn dwell_jitter(rng: &mut ChaCha8Rng, dwell: usize) -> Vec<(f64, f64)> {
    let half = dwell / 2;
    let mut jitter = Vec::with_capacity(dwell);
    for _ in 0..half {
        let dx = (rng.random::<f64>() * 2.0 - 1.0) * MAX_JITTER_PX;
        let dy = (rng.random::<f64>() * 2.0 - 1.0) * MAX_JITTER_PX;
        jitter.push((dx, dy));
    }
    if dwell % 2 == 1 {
        jitter.push((0.0, 0.0));
    }
    for i in 0..half {
        let (dx, dy) = jitter[i];
        jitter.push((-dx, -dy));
    }
    jitter
}

fn blit(frame: &mut Image, template: &Image, center: (usize, usize)) {
    let left = center.0 - template.width() / 2;
    let top = center.1 - template.height() / 2;
    for y in 0..template.height() {
        for x in 0..template.width() {
            frame.set_pixel(left + x, top + y, template.pixel(x, y));
        }
    }
}

fn add_noise(frame: &mut Image, amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude <= 0.0 {
        return;
    }
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let (r, g, b) = frame.pixel(x, y);
            let mut bump = |v: u8| -> u8 {
                let noise = (rng.random::<f64>() * amplitude * 255.0 + 0.5).floor() as i64;
                (v as i64 + noise).clamp(0, 255) as u8
            };
            let rgb = (bump(r), bump(g), bump(b));
            frame.set_pixel(x, y, rgb);
        }
    }
}

/// Generate the recordings and ground truth for a scene. Bit-identical
/// output for equal specs.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Vec<Recording>, GroundTruth), SynthError> {
    spec.validate()?;
    let templates: Vec<Image> = (0..spec.aoi_count).map(|a| aoi_template(spec, a)).collect();
    let centers: Vec<(usize, usize)> = (0..spec.aoi_count).map(|a| aoi_center(spec, a)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut recordings = Vec::with_capacity(spec.visit_schedules.len());
    let mut frame_aois = Vec::with_capacity(spec.visit_schedules.len());

    for (rec_index, schedule) in spec.visit_schedules.iter().enumerate() {
        let id = format!("rec_{rec_index:02}");
        let mut frames = Vec::new();
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for &(aoi, dwell) in schedule {
            let jitter = dwell_jitter(&mut rng, dwell);
            let center = centers[aoi];
            for (dx, dy) in jitter {
                let frame_index = frames.len();
                let mut frame = Image::black(spec.frame_size.0, spec.frame_size.1);
                blit(&mut frame, &templates[aoi], center);
                add_noise(&mut frame, spec.noise_amplitude, &mut rng);
                samples.push(GazeSample {
                    timestamp_ms: frame_index as i64 * SAMPLE_CADENCE_MS,
                    frame_index,
                    x_px: center.0 as f64 + dx,
                    y_px: center.1 as f64 + dy,
                    valid: true,
                });
                frames.push(frame);
                labels.push(aoi);
            }
        }
        frame_aois.push((id.clone(), labels));
        recordings.push(Recording::from_frames(id, frames, samples));
    }

    Ok((
        recordings,
        GroundTruth {
            frame_aois,
            templates,
            aoi_centers: centers,
        },
    ))
}

/// Round-robin schedules: recording `r` visits the AOIs in rotated order
/// starting from AOI `r mod aoi_count`.
pub fn rotation_schedules(
    recordings: usize,
    aoi_count: usize,
    dwell_frames: usize,
) -> Vec<Vec<(usize, usize)>> {
    (0..recordings)
        .map(|r| {
            (0..aoi_count)
                .map(|i| ((r + i) % aoi_count, dwell_frames))
                .collect()
        })
        .collect()
}

/// Write one recording in the on-disk layout the loader consumes:
/// `<dir>/<id>/frames/NNNNNN.ppm` plus `<dir>/<id>/gaze.csv`.
pub fn write_recording_dir(dir: &Path, recording: &Recording) -> Result<(), SynthError> {
    let rec_dir = dir.join(&recording.id);
    let frames_dir = rec_dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for index in 0..recording.frame_count {
        let frame = recording.frame(index)?;
        fs::write(
            frames_dir.join(format!("{index:06}.ppm")),
            encode_ppm(&frame),
        )?;
    }
    let mut gaze = fs::File::create(rec_dir.join("gaze.csv"))?;
    writeln!(gaze, "timestamp_ms,frame_index,x_px,y_px")?;
    for s in &recording.samples {
        if s.valid {
            writeln!(
                gaze,
                "{},{},{},{}",
                s.timestamp_ms, s.frame_index, s.x_px, s.y_px
            )?;
        } else {
            writeln!(gaze, "{},{},,", s.timestamp_ms, s.frame_index)?;
        }
    }
    Ok(())
}

/// Outcome of matching spatial components against AOI templates.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryScore {
    /// For each component (in analysis order): the assigned AOI index.
    pub assignment: Vec<usize>,
    /// For each component: cosine similarity with its assigned template.
    pub similarities: Vec<f64>,
    /// Fraction of active (component, recording) peaks whose representative
    /// frame falls inside the assigned AOI's scheduled dwell intervals.
    pub peak_hit_fraction: f64,
    pub active_pairs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn best_assignment(similarity: &[Vec<f64>]) -> Vec<usize> {
    // Exhaustive search over permutations; fine for the small k the
    // synthetic scenes use.
    let k = similarity.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best_perm = perm.clone();
    let mut best_total = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &a)| similarity[i][a]).sum();
        if total > best_total {
            best_total = total;
            best_perm = p.to_vec();
        }
    });
    best_perm
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Match components one-to-one against AOI templates by cosine similarity
/// (optimal assignment) and score how many indicator peaks land inside
/// their AOI's scheduled dwells.
pub fn evaluate_recovery(
    analysis: &ComponentAnalysis,
    ground_truth: &GroundTruth,
) -> Result<RecoveryScore, SynthError> {
    let k = analysis.components.len();
    if k != ground_truth.templates.len() {
        return Err(SynthError::KMismatch {
            components: k,
            aois: ground_truth.templates.len(),
        });
    }
    let template_vectors: Vec<Vec<f64>> =
        ground_truth.templates.iter().map(vectorize_patch).collect();
    let similarity: Vec<Vec<f64>> = analysis
        .components
        .iter()
        .map(|c| {
            template_vectors
                .iter()
                .map(|t| cosine(&c.spatial, t))
                .collect()
        })
        .collect();
    let assignment = best_assignment(&similarity);
    let similarities: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &a)| similarity[i][a])
        .collect();

    let mut hits = 0usize;
    let mut active_pairs = 0usize;
    for (component, &aoi) in analysis.components.iter().zip(&assignment) {
        for indicator in &component.indicators {
            let Some(rep) = &indicator.representative else {
                continue;
            };
            active_pairs += 1;
            if ground_truth.aoi_at(&rep.recording_id, rep.frame_index) == Some(aoi) {
                hits += 1;
            }
        }
    }
    let peak_hit_fraction = if active_pairs == 0 {
        0.0
    } else {
        hits as f64 / active_pairs as f64
    };
    Ok(RecoveryScore {
        assignment,
        similarities,
        peak_hit_fraction,
        active_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixation::{detect_fixations, FixationParams};
    use crate::patchgrid::{build_patch_matrix, crop_patch};

    fn spec(aois: usize, noise: f64, seed: u64) -> SceneSpec {
        SceneSpec {
            aoi_count: aois,
            aoi_colors: DEFAULT_AOI_COLORS[..aois].to_vec(),
            frame_size: (160, 120),
            visit_schedules: rotation_schedules(3, aois, 10),
            noise_amplitude: noise,
            seed,
            stencil: StencilSpec::new(31, 31).unwrap(),
        }
    }

    #[test]
    fn single_aoi_zero_noise_patches_are_identical() {
        let spec = SceneSpec {
            visit_schedules: vec![vec![(0, 10)]],
            ..spec(1, 0.0, 7)
        };
        let (recordings, truth) = generate_scene(&spec).unwrap();
        let rec = &recordings[0];
        assert_eq!(rec.frame_count, 10);
        let reference = &truth.templates[0];
        for i in 0..rec.frame_count {
            let frame = rec.frame(i).unwrap();
            let patch = crop_patch(
                &frame,
                (truth.aoi_centers[0].0 as f64, truth.aoi_centers[0].1 as f64),
                spec.stencil,
            );
            assert_eq!(&patch, reference, "frame {i}");
        }
    }

    #[test]
    fn colors_switch_exactly_at_scheduled_frame() {
        let spec = SceneSpec {
            visit_schedules: vec![vec![(0, 4), (1, 4)]],
            ..spec(2, 0.0, 3)
        };
        let (recordings, truth) = generate_scene(&spec).unwrap();
        let rec = &recordings[0];
        assert_eq!(truth.frame_aois[0].1, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        for i in 0..8 {
            let aoi = truth.aoi_at(&rec.id, i).unwrap();
            let frame = rec.frame(i).unwrap();
            let center = truth.aoi_centers[aoi];
            let patch = crop_patch(&frame, (center.0 as f64, center.1 as f64), spec.stencil);
            assert_eq!(&patch, &truth.templates[aoi], "frame {i}");
        }
    }

    #[test]
    fn jitter_stays_within_two_pixels() {
        let spec = spec(4, 0.0, 99);
        let (recordings, truth) = generate_scene(&spec).unwrap();
        for (rec, (_, labels)) in recordings.iter().zip(&truth.frame_aois) {
            for (sample, &aoi) in rec.samples.iter().zip(labels) {
                let center = truth.aoi_centers[aoi];
                assert!((sample.x_px - center.0 as f64).abs() <= MAX_JITTER_PX);
                assert!((sample.y_px - center.1 as f64).abs() <= MAX_JITTER_PX);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_spec() {
        let spec = spec(3, 0.2, 41);
        let (a, _) = generate_scene(&spec).unwrap();
        let (b, _) = generate_scene(&spec).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.samples, rb.samples);
            for i in 0..ra.frame_count {
                assert_eq!(ra.frame(i).unwrap(), rb.frame(i).unwrap());
            }
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let good = spec(2, 0.0, 1);
        assert!(good.validate().is_ok());

        let mut dup_colors = good.clone();
        dup_colors.aoi_colors = vec![(10, 10, 10), (10, 10, 10)];
        assert!(matches!(
            dup_colors.validate(),
            Err(SynthError::InvalidSpec(_))
        ));

        let mut bad_noise = good.clone();
        bad_noise.noise_amplitude = 1.0;
        assert!(bad_noise.validate().is_err());

        let mut tiny_frame = good.clone();
        tiny_frame.frame_size = (20, 20);
        assert!(tiny_frame.validate().is_err());

        let mut bad_schedule = good.clone();
        bad_schedule.visit_schedules = vec![vec![(5, 4)]];
        assert!(bad_schedule.validate().is_err());
    }

    /// Jacobi eigenvalue iteration on the (small) Gram matrix; the singular
    /// values of X are the square roots of the eigenvalues of X^T X. This
    /// is the brute-force rank oracle, independent of the solver code.
    #[allow(clippy::needless_range_loop)]
    fn singular_values(columns: &[Vec<f64>]) -> Vec<f64> {
        let m = columns.len();
        let mut gram = vec![vec![0.0f64; m]; m];
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = columns[i]
                    .iter()
                    .zip(&columns[j])
                    .map(|(&a, &b)| a * b)
                    .sum();
            }
        }
        for _ in 0..100 {
            let mut off = 0.0f64;
            let (mut p, mut q) = (0, 1);
            for i in 0..m {
                for j in i + 1..m {
                    if gram[i][j].abs() > off {
                        off = gram[i][j].abs();
                        (p, q) = (i, j);
                    }
                }
            }
            if off < 1e-12 {
                break;
            }
            let theta = 0.5 * (2.0 * gram[p][q]).atan2(gram[p][p] - gram[q][q]);
            let (c, s) = (theta.cos(), theta.sin());
            for i in 0..m {
                let (gip, giq) = (gram[i][p], gram[i][q]);
                gram[i][p] = c * gip + s * giq;
                gram[i][q] = -s * gip + c * giq;
            }
            for j in 0..m {
                let (gpj, gqj) = (gram[p][j], gram[q][j]);
                gram[p][j] = c * gpj + s * gqj;
                gram[q][j] = -s * gpj + c * gqj;
            }
        }
        let mut eigenvalues: Vec<f64> = (0..m).map(|i| gram[i][i].max(0.0)).collect();
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eigenvalues.into_iter().map(f64::sqrt).collect()
    }

    #[test]
    fn zero_noise_matrix_has_exact_aoi_rank() {
        let spec = spec(4, 0.0, 11);
        let (recordings, _) = generate_scene(&spec).unwrap();
        let params = FixationParams {
            dispersion_px: 25.0,
            min_duration_ms: 200,
        };
        let fixations: Vec<_> = recordings
            .iter()
            .map(|r| detect_fixations(&r.samples, &params))
            .collect();
        assert!(
            fixations.iter().all(|f| f.len() == 4),
            "one fixation per dwell"
        );
        let matrix = build_patch_matrix(&recordings, &fixations, spec.stencil, 1).unwrap();
        let columns: Vec<Vec<f64>> = (0..matrix.cols())
            .map(|j| matrix.values().column(j).iter().copied().collect())
            .collect();
        let sigma = singular_values(&columns);
        assert!(sigma[3] > 1e-6, "fourth singular value {}", sigma[3]);
        assert!(
            sigma[4] < 1e-8 * sigma[0],
            "fifth singular value {} vs leading {}",
            sigma[4],
            sigma[0]
        );
    }

    #[test]
    fn written_scene_reloads_identically() {
        let spec = SceneSpec {
            visit_schedules: rotation_schedules(2, 2, 8),
            ..spec(2, 0.1, 5)
        };
        let (recordings, _) = generate_scene(&spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        for rec in &recordings {
            write_recording_dir(tmp.path(), rec).unwrap();
        }
        for rec in &recordings {
            let (loaded, warnings) =
                crate::ingest::load_recording(&tmp.path().join(&rec.id)).unwrap();
            assert!(warnings.is_empty());
            assert_eq!(loaded.frame_count, rec.frame_count);
            assert_eq!(loaded.samples, rec.samples);
            for i in 0..rec.frame_count {
                assert_eq!(loaded.frame(i).unwrap(), rec.frame(i).unwrap());
            }
        }
    }

    #[test]
    fn kmismatch_is_reported() {
        let analysis = ComponentAnalysis {
            components: vec![],
            recording_order: vec![],
            patch_dims: (1, 1),
            boundary_margin: 1,
        };
        let truth = GroundTruth {
            frame_aois: vec![],
            templates: vec![Image::black(1, 1)],
            aoi_centers: vec![(0, 0)],
        };
        assert!(matches!(
            evaluate_recovery(&analysis, &truth),
            Err(SynthError::KMismatch { .. })
        ));
    }
}
