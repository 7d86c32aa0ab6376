//! Golden-file tests pinning the indicator SVG bytes, in particular the
//! peak-bar rules: two bars around an interior peak, exactly one when the
//! peak sits at a series boundary.
//!
//! Regenerate the goldens with `GOLDEN_UPDATE=1 cargo test -p gazenmf
//! --test golden_svg` after an intentional renderer change.

use std::path::PathBuf;

use gazenmf::report::{render_indicator_svg, SummaryComponent, SummaryFiles, SummaryIndicator};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn indicator(id: &str, values: Vec<f64>, active: bool) -> SummaryIndicator {
    let (peak, at_boundary) = if active {
        let peak = values
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .map(|(i, _)| i)
            .unwrap();
        (peak, peak == 0 || peak + 1 >= values.len())
    } else {
        (0, true)
    };
    SummaryIndicator {
        recording_id: id.to_string(),
        active,
        raw_max: if active { 2.5 } else { 0.0 },
        peak_ordinal: peak,
        peak_at_boundary: at_boundary,
        anchor_frame_index: active.then_some(3),
        values,
    }
}

fn fixture() -> SummaryComponent {
    SummaryComponent {
        rank: 1,
        index_original: 2,
        impact: 0.3125,
        files: SummaryFiles {
            spatial: "component_01/spatial.ppm".into(),
            indicators: "component_01/indicators.svg".into(),
            montage: "component_01/montage.ppm".into(),
        },
        recordings: vec![
            indicator("rec_00", vec![1.0, 0.5, 0.25, 0.125, 0.0625], true),
            indicator("rec_01", vec![0.125, 0.25, 1.0, 0.5, 0.25, 0.125], true),
            indicator("rec_02", vec![0.0, 0.0, 0.0, 0.0], false),
        ],
    }
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("GOLDEN_UPDATE").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden {}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

#[test]
fn boundary_and_interior_peaks_render_goldenly() {
    let svg = render_indicator_svg(&fixture(), 1);
    // rec_00 peaks at ordinal 0 (left boundary): one bar. rec_01 peaks
    // at ordinal 2 (interior): two bars. rec_02 is inactive: none.
    assert_eq!(svg.matches(r#"class="peak""#).count(), 3);
    check_golden("indicators_mixed_peaks.svg", &svg);
}

#[test]
fn right_boundary_peak_renders_goldenly() {
    let component = SummaryComponent {
        recordings: vec![indicator("rec_00", vec![0.25, 0.5, 1.0], true)],
        ..fixture()
    };
    let svg = render_indicator_svg(&component, 1);
    assert_eq!(svg.matches(r#"class="peak""#).count(), 1);
    check_golden("indicators_right_boundary.svg", &svg);
}
