//! Dispersion-threshold (I-DT) fixation detection and per-fixation anchor
//! selection. Fixations thin a recording down to one representative
//! (frame, gaze point) pair each, which is what the patch extraction
//! stage consumes.

use std::io::{self, Write};

use crate::ingest::GazeSample;

/// I-DT parameters: maximum bounding-box extent and minimum duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixationParams {
    pub dispersion_px: f64,
    pub min_duration_ms: i64,
}

impl Default for FixationParams {
    fn default() -> Self {
        FixationParams {
            dispersion_px: 25.0,
            min_duration_ms: 200,
        }
    }
}

/// A maximal run of gaze samples confined to a small spatial window.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixation {
    pub start_ms: i64,
    pub end_ms: i64,
    pub centroid_x_px: f64,
    pub centroid_y_px: f64,
    pub sample_count: usize,
    /// Frame of the member sample closest to the temporal midpoint.
    pub anchor_frame_index: usize,
    /// The fixation centroid, i.e. the gaze point used for cropping.
    pub anchor_gaze: (f64, f64),
}

struct BoundingBox {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl BoundingBox {
    fn new(s: &GazeSample) -> Self {
        BoundingBox {
            min_x: s.x_px,
            max_x: s.x_px,
            min_y: s.y_px,
            max_y: s.y_px,
        }
    }

    fn grown(&self, s: &GazeSample) -> BoundingBox {
        BoundingBox {
            min_x: self.min_x.min(s.x_px),
            max_x: self.max_x.max(s.x_px),
            min_y: self.min_y.min(s.y_px),
            max_y: self.max_y.max(s.y_px),
        }
    }

    fn within(&self, dispersion_px: f64) -> bool {
        self.max_x - self.min_x <= dispersion_px && self.max_y - self.min_y <= dispersion_px
    }
}

/// Detect fixations with greedy maximal extension.
///
/// A window opens at the first valid sample, must span `min_duration_ms`
/// while staying inside a `dispersion_px` bounding box (width and height),
/// and is then extended sample by sample until the box would burst.
/// Invalid samples terminate any open window and never join one.
pub fn detect_fixations(samples: &[GazeSample], params: &FixationParams) -> Vec<Fixation> {
    debug_assert!(params.dispersion_px > 0.0 && params.min_duration_ms > 0);
    let n = samples.len();
    let mut fixations = Vec::new();
    let mut i = 0;
    while i < n {
        if !samples[i].valid {
            i += 1;
            continue;
        }
        // Smallest window starting at i that spans the minimum duration.
        let mut bbox = BoundingBox::new(&samples[i]);
        let mut j = i;
        while j < n
            && samples[j].valid
            && samples[j].timestamp_ms - samples[i].timestamp_ms < params.min_duration_ms
        {
            bbox = bbox.grown(&samples[j]);
            j += 1;
        }
        if j == n || !samples[j].valid {
            // The valid run ends before min duration is reachable from i,
            // so no later start inside the run can reach it either.
            i = j + 1;
            continue;
        }
        bbox = bbox.grown(&samples[j]);
        if !bbox.within(params.dispersion_px) {
            i += 1;
            continue;
        }
        let mut end = j;
        while end + 1 < n && samples[end + 1].valid {
            let grown = bbox.grown(&samples[end + 1]);
            if !grown.within(params.dispersion_px) {
                break;
            }
            bbox = grown;
            end += 1;
        }
        fixations.push(make_fixation(&samples[i..=end]));
        i = end + 1;
    }
    fixations
}

fn make_fixation(members: &[GazeSample]) -> Fixation {
    let count = members.len();
    let sum_x: f64 = members.iter().map(|s| s.x_px).sum();
    let sum_y: f64 = members.iter().map(|s| s.y_px).sum();
    let mut fixation = Fixation {
        start_ms: members[0].timestamp_ms,
        end_ms: members[count - 1].timestamp_ms,
        centroid_x_px: sum_x / count as f64,
        centroid_y_px: sum_y / count as f64,
        sample_count: count,
        anchor_frame_index: 0,
        anchor_gaze: (0.0, 0.0),
    };
    let (frame, gaze) = fixation_anchor(&fixation, members);
    fixation.anchor_frame_index = frame;
    fixation.anchor_gaze = gaze;
    fixation
}

/// Pick the fixation's representative (frame, gaze point).
///
/// The frame comes from the member sample nearest the temporal midpoint
/// (ties go to the earlier sample); the gaze point is the fixation
/// centroid rather than that sample's raw coordinates.
pub fn fixation_anchor(fixation: &Fixation, samples: &[GazeSample]) -> (usize, (f64, f64)) {
    let midpoint = (fixation.start_ms + fixation.end_ms) as f64 / 2.0;
    let mut best: Option<(f64, usize)> = None;
    for sample in samples {
        if !sample.valid
            || sample.timestamp_ms < fixation.start_ms
            || sample.timestamp_ms > fixation.end_ms
        {
            continue;
        }
        let distance = (sample.timestamp_ms as f64 - midpoint).abs();
        if best.is_none_or(|(d, _)| distance < d) {
            best = Some((distance, sample.frame_index));
        }
    }
    let frame = best.map(|(_, f)| f).expect("fixation has member samples");
    (frame, (fixation.centroid_x_px, fixation.centroid_y_px))
}

/// Write the optional `fixations.csv` export.
pub fn write_fixations_csv<W: Write>(mut out: W, fixations: &[Fixation]) -> io::Result<()> {
    writeln!(out, "start_ms,end_ms,centroid_x,centroid_y,anchor_frame")?;
    for f in fixations {
        writeln!(
            out,
            "{},{},{},{},{}",
            f.start_ms, f.end_ms, f.centroid_x_px, f.centroid_y_px, f.anchor_frame_index
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: i64, frame: usize, x: f64, y: f64) -> GazeSample {
        GazeSample {
            timestamp_ms: t,
            frame_index: frame,
            x_px: x,
            y_px: y,
            valid: true,
        }
    }

    fn invalid(t: i64, frame: usize) -> GazeSample {
        GazeSample {
            timestamp_ms: t,
            frame_index: frame,
            x_px: 0.0,
            y_px: 0.0,
            valid: false,
        }
    }

    fn params(dispersion: f64, min_ms: i64) -> FixationParams {
        FixationParams {
            dispersion_px: dispersion,
            min_duration_ms: min_ms,
        }
    }

    #[test]
    fn stationary_gaze_yields_one_fixation() {
        let samples: Vec<GazeSample> = (0..10).map(|i| sample(i * 33, 0, 100.0, 100.0)).collect();
        let fixations = detect_fixations(&samples, &params(10.0, 200));
        assert_eq!(fixations.len(), 1);
        let f = &fixations[0];
        assert_eq!((f.centroid_x_px, f.centroid_y_px), (100.0, 100.0));
        assert_eq!(f.sample_count, 10);
        assert_eq!((f.start_ms, f.end_ms), (0, 297));
    }

    #[test]
    fn alternating_extremes_yield_no_fixations() {
        let samples: Vec<GazeSample> = (0..20)
            .map(|i| {
                let p = if i % 2 == 0 { 0.0 } else { 500.0 };
                sample(i * 33, 0, p, p)
            })
            .collect();
        assert!(detect_fixations(&samples, &params(10.0, 200)).is_empty());
    }

    // Hand-traced I-DT oracle. Samples every 50 ms: seven at (100,100)
    // covering t=0..300, seven at (400,100) covering t=350..650, with
    // dispersion 10 and minimum duration 200.
    //
    //   i=0: the initial window must span 200 ms, so it runs to t=200
    //        (indices 0..=4). Box extent 0 <= 10, so it extends over
    //        t=250 and t=300; index 7 sits at x=400 and would stretch
    //        the box to 300 px, so the fixation is samples 0..=6.
    //   i=7: window runs to t=550 (indices 7..=11), extends to t=650,
    //        fixation is samples 7..=13.
    #[test]
    fn split_gaze_yields_two_fixations_per_hand_trace() {
        let mut samples = Vec::new();
        for i in 0..7 {
            samples.push(sample(i * 50, i as usize, 100.0, 100.0));
        }
        for i in 7..14 {
            samples.push(sample(i * 50, i as usize, 400.0, 100.0));
        }
        let fixations = detect_fixations(&samples, &params(10.0, 200));
        assert_eq!(fixations.len(), 2);
        assert_eq!((fixations[0].start_ms, fixations[0].end_ms), (0, 300));
        assert_eq!(fixations[0].sample_count, 7);
        assert_eq!(
            (fixations[0].centroid_x_px, fixations[0].centroid_y_px),
            (100.0, 100.0)
        );
        assert_eq!((fixations[1].start_ms, fixations[1].end_ms), (350, 650));
        assert_eq!(fixations[1].sample_count, 7);
        assert_eq!(
            (fixations[1].centroid_x_px, fixations[1].centroid_y_px),
            (400.0, 100.0)
        );
        // Midpoint anchors: t=150 (frame 3) and t=500 (frame 10).
        assert_eq!(fixations[0].anchor_frame_index, 3);
        assert_eq!(fixations[1].anchor_frame_index, 10);
    }

    #[test]
    fn invalid_samples_break_windows() {
        let mut samples: Vec<GazeSample> =
            (0..3).map(|i| sample(i * 50, 0, 100.0, 100.0)).collect();
        samples.push(invalid(150, 0));
        samples.extend((4..7).map(|i| sample(i * 50, 0, 100.0, 100.0)));
        // Both valid runs span only 100 ms, below the 200 ms minimum.
        assert!(detect_fixations(&samples, &params(10.0, 200)).is_empty());
    }

    #[test]
    fn empty_input_yields_empty_output() {
        assert!(detect_fixations(&[], &params(10.0, 200)).is_empty());
    }

    #[test]
    fn anchor_picks_sample_nearest_midpoint() {
        let members = vec![
            sample(0, 0, 10.0, 10.0),
            sample(100, 3, 10.0, 10.0),
            sample(200, 6, 10.0, 10.0),
        ];
        let fixation = Fixation {
            start_ms: 0,
            end_ms: 200,
            centroid_x_px: 10.0,
            centroid_y_px: 10.0,
            sample_count: 3,
            anchor_frame_index: 0,
            anchor_gaze: (0.0, 0.0),
        };
        let (frame, gaze) = fixation_anchor(&fixation, &members);
        assert_eq!(frame, 3);
        assert_eq!(gaze, (10.0, 10.0));
    }

    #[test]
    fn anchor_tie_breaks_to_earlier_sample() {
        let members = vec![sample(0, 0, 5.0, 5.0), sample(100, 4, 5.0, 5.0)];
        let fixation = Fixation {
            start_ms: 0,
            end_ms: 100,
            centroid_x_px: 5.0,
            centroid_y_px: 5.0,
            sample_count: 2,
            anchor_frame_index: 0,
            anchor_gaze: (0.0, 0.0),
        };
        let (frame, _) = fixation_anchor(&fixation, &members);
        assert_eq!(frame, 0);

        // Two samples at t=0 and t=250: midpoint 125 is equidistant.
        let members = vec![sample(0, 1, 5.0, 5.0), sample(250, 8, 5.0, 5.0)];
        let fixation = Fixation {
            start_ms: 0,
            end_ms: 250,
            centroid_x_px: 5.0,
            centroid_y_px: 5.0,
            sample_count: 2,
            anchor_frame_index: 0,
            anchor_gaze: (0.0, 0.0),
        };
        let (frame, _) = fixation_anchor(&fixation, &members);
        assert_eq!(frame, 1);
    }

    #[test]
    fn duration_meets_minimum_inclusive() {
        // Exactly 200 ms of stationary gaze qualifies.
        let samples: Vec<GazeSample> = (0..5).map(|i| sample(i * 50, 0, 50.0, 50.0)).collect();
        let fixations = detect_fixations(&samples, &params(10.0, 200));
        assert_eq!(fixations.len(), 1);
        assert_eq!(fixations[0].end_ms - fixations[0].start_ms, 200);
    }

    #[test]
    fn csv_export_format() {
        let samples: Vec<GazeSample> = (0..5).map(|i| sample(i * 50, 2, 50.0, 60.0)).collect();
        let fixations = detect_fixations(&samples, &params(10.0, 200));
        let mut buf = Vec::new();
        write_fixations_csv(&mut buf, &fixations).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "start_ms,end_ms,centroid_x,centroid_y,anchor_frame\n0,200,50,60,2\n"
        );
    }
}
