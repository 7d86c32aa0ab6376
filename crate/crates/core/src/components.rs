//! Turns a factorization plus column provenance into ranked, interpretable
//! components: impact shares, per-recording temporal indicator series,
//! peak selection, and displayable spatial images.

use ndarray::Array2;
use thiserror::Error;

use crate::ingest::Image;
use crate::nmf::Factorization;
use crate::patchgrid::{self, ColumnMeta, PatchError, PatchMatrix};

#[derive(Debug, Error)]
pub enum ComponentsError {
    #[error("every temporal component is zero")]
    AllZeroTemporal,
    #[error("temporal vector has {h_len} entries but meta lists {meta_len} columns")]
    MetaLengthMismatch { h_len: usize, meta_len: usize },
    #[error("recording {0} has columns in non-contiguous blocks")]
    MetaNotGrouped(String),
    #[error("recording {0} has an all-zero indicator, no representative exists")]
    InactiveRecording(String),
    #[error("no column for recording {recording_id} ordinal {ordinal}")]
    UnknownColumn {
        recording_id: String,
        ordinal: usize,
    },
    #[error("component index {j} out of range for k = {k}")]
    ComponentOutOfRange { j: usize, k: usize },
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("factorization is {f_rows}x{f_cols}, matrix is {m_rows}x{m_cols}")]
    FactorizationMismatch {
        f_rows: usize,
        f_cols: usize,
        m_rows: usize,
        m_cols: usize,
    },
}

/// Non-fatal findings from component analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComponentWarning {
    /// A spatial column was all zero; its temporal row was zeroed too.
    ZeroSpatialColumn { index: usize },
}

impl std::fmt::Display for ComponentWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ComponentWarning::ZeroSpatialColumn { index } => {
                write!(f, "spatial component {index} is all zero")
            }
        }
    }
}

/// One recording's slice of a temporal component, max-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    /// Normalized activations, one per fixation ordinal, in [0, 1].
    pub values: Vec<f64>,
    /// Pre-normalization maximum, kept for audit; 0 marks an inactive series.
    pub raw_max: f64,
    /// Index of the (pre-normalization) maximum, ties to the smallest index.
    pub peak_ordinal: usize,
    pub peak_at_boundary: bool,
}

impl IndicatorSeries {
    pub fn is_active(&self) -> bool {
        self.raw_max > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingIndicator {
    pub recording_id: String,
    pub series: IndicatorSeries,
    /// Anchor frame behind the peak; None when the series is inactive.
    pub representative: Option<FrameRef>,
}

/// One spatiotemporal component after normalization and ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Position in the factorization before sorting by impact.
    pub index_original: usize,
    /// Spatial component w_j, unit Euclidean norm (or all zero).
    pub spatial: Vec<f64>,
    /// Relative impact share in [0, 1]; shares sum to 1.
    pub impact: f64,
    /// Indicator series per recording, in matrix recording order.
    pub indicators: Vec<RecordingIndicator>,
}

impl Component {
    pub fn indicator(&self, recording_id: &str) -> Option<&IndicatorSeries> {
        self.indicators
            .iter()
            .find(|r| r.recording_id == recording_id)
            .map(|r| &r.series)
    }
}

/// Reference to a representative frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    pub recording_id: String,
    pub frame_index: usize,
}

/// The full analysis: sorted components plus the shared recording order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentAnalysis {
    pub components: Vec<Component>,
    pub recording_order: Vec<String>,
    pub patch_dims: (usize, usize),
    pub boundary_margin: usize,
}

/// Resolve NMF's scale ambiguity: rescale every column of W to unit
/// Euclidean norm and push the removed scale into the matching row of H.
/// The product WH is unchanged up to rounding. All-zero columns stay zero
/// and zero their paired row, each reported as a warning.
pub fn normalize_factorization(f: &Factorization) -> (Factorization, Vec<ComponentWarning>) {
    let mut w = f.w.clone();
    let mut h = f.h.clone();
    let mut warnings = Vec::new();
    for j in 0..w.ncols() {
        let norm = w.column(j).iter().map(|&v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            w.column_mut(j).mapv_inplace(|v| v / norm);
            h.row_mut(j).mapv_inplace(|v| v * norm);
        } else {
            h.row_mut(j).fill(0.0);
            warnings.push(ComponentWarning::ZeroSpatialColumn { index: j });
        }
    }
    (
        Factorization {
            w,
            h,
            objective_trace: f.objective_trace.clone(),
            final_objective: f.final_objective,
            iterations_run: f.iterations_run,
            seed_used: f.seed_used,
        },
        warnings,
    )
}

fn row_norms(h: &Array2<f64>) -> Vec<f64> {
    (0..h.nrows())
        .map(|j| h.row(j).iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Impact of component `j` as the relative share ‖h_j‖₂ / Σ_i ‖h_i‖₂.
pub fn impact(h: &Array2<f64>, j: usize) -> Result<f64, ComponentsError> {
    if j >= h.nrows() {
        return Err(ComponentsError::ComponentOutOfRange { j, k: h.nrows() });
    }
    Ok(impacts(h)?[j])
}

/// Impact shares of all components at once.
pub fn impacts(h: &Array2<f64>) -> Result<Vec<f64>, ComponentsError> {
    let norms = row_norms(h);
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Err(ComponentsError::AllZeroTemporal);
    }
    Ok(norms.into_iter().map(|n| n / total).collect())
}

/// Sort descending by impact; ties keep the smaller original index first.
pub fn sort_components(mut components: Vec<Component>) -> Vec<Component> {
    components.sort_by(|a, b| {
        b.impact
            .partial_cmp(&a.impact)
            .expect("impacts are finite")
            .then(a.index_original.cmp(&b.index_original))
    });
    components
}

/// Split a temporal component into its per-recording slices, in recording
/// order. Concatenating the slices reproduces the input exactly.
pub fn split_temporal(
    h_j: &[f64],
    meta: &[ColumnMeta],
) -> Result<Vec<(String, Vec<f64>)>, ComponentsError> {
    if h_j.len() != meta.len() {
        return Err(ComponentsError::MetaLengthMismatch {
            h_len: h_j.len(),
            meta_len: meta.len(),
        });
    }
    let mut splits: Vec<(String, Vec<f64>)> = Vec::new();
    for (value, m) in h_j.iter().zip(meta) {
        match splits.last_mut() {
            Some((id, values)) if *id == m.recording_id => values.push(*value),
            _ => {
                if splits.iter().any(|(id, _)| *id == m.recording_id) {
                    return Err(ComponentsError::MetaNotGrouped(m.recording_id.clone()));
                }
                splits.push((m.recording_id.clone(), vec![*value]));
            }
        }
    }
    Ok(splits)
}

/// Max-normalize one raw slice. The peak is the argmax of the raw values
/// (ties to the smallest index); dividing by a positive maximum cannot
/// reorder entries, so the peak survives normalization. An all-zero slice
/// stays all zero with `raw_max = 0`, marking the series inactive.
pub fn normalize_indicator(raw: &[f64]) -> IndicatorSeries {
    let mut peak_ordinal = 0;
    let mut raw_max = 0.0;
    for (i, &v) in raw.iter().enumerate() {
        if v > raw_max {
            raw_max = v;
            peak_ordinal = i;
        }
    }
    let values = if raw_max > 0.0 {
        raw.iter().map(|&v| v / raw_max).collect()
    } else {
        vec![0.0; raw.len()]
    };
    IndicatorSeries {
        values,
        raw_max,
        peak_ordinal,
        peak_at_boundary: false,
    }
}

/// The highest peak and whether it sits within `boundary_margin` ordinals
/// of either end of the series.
pub fn find_peak(series: &IndicatorSeries, boundary_margin: usize) -> (usize, bool) {
    let peak = series.peak_ordinal;
    let len = series.values.len();
    let at_boundary = peak < boundary_margin || peak + boundary_margin >= len;
    (peak, at_boundary)
}

/// The anchor frame behind the series' peak column, looked up through the
/// column provenance.
pub fn representative_frame(
    meta: &[ColumnMeta],
    recording_id: &str,
    series: &IndicatorSeries,
) -> Result<FrameRef, ComponentsError> {
    if !series.is_active() {
        return Err(ComponentsError::InactiveRecording(recording_id.to_string()));
    }
    let column = meta
        .iter()
        .find(|m| m.recording_id == recording_id && m.ordinal_in_recording == series.peak_ordinal)
        .ok_or_else(|| ComponentsError::UnknownColumn {
            recording_id: recording_id.to_string(),
            ordinal: series.peak_ordinal,
        })?;
    Ok(FrameRef {
        recording_id: column.recording_id.clone(),
        frame_index: column.anchor_frame_index,
    })
}

/// Render a spatial component: rescale so the maximum entry maps to 255,
/// then undo the vectorization. The all-zero vector maps to black, and any
/// positive rescaling of w_j produces the identical image.
pub fn spatial_image(w_j: &[f64], dims: (usize, usize)) -> Result<Image, ComponentsError> {
    let max = w_j.iter().fold(0.0_f64, |m, &v| m.max(v));
    let scaled: Vec<f64> = if max > 0.0 {
        w_j.iter().map(|&v| v / max).collect()
    } else {
        vec![0.0; w_j.len()]
    };
    Ok(patchgrid::devectorize(&scaled, dims)?)
}

/// Run the whole component analysis for a factorization of `matrix`.
pub fn analyze(
    matrix: &PatchMatrix,
    factorization: &Factorization,
    boundary_margin: usize,
) -> Result<(ComponentAnalysis, Vec<ComponentWarning>), ComponentsError> {
    if factorization.w.nrows() != matrix.rows() || factorization.h.ncols() != matrix.cols() {
        return Err(ComponentsError::FactorizationMismatch {
            f_rows: factorization.w.nrows(),
            f_cols: factorization.h.ncols(),
            m_rows: matrix.rows(),
            m_cols: matrix.cols(),
        });
    }
    let (normalized, warnings) = normalize_factorization(factorization);
    let shares = impacts(&normalized.h)?;
    let k = normalized.w.ncols();
    let mut components = Vec::with_capacity(k);
    for (j, &share) in shares.iter().enumerate() {
        let spatial: Vec<f64> = normalized.w.column(j).iter().copied().collect();
        let h_j: Vec<f64> = normalized.h.row(j).iter().copied().collect();
        let splits = split_temporal(&h_j, matrix.meta())?;
        let mut indicators = Vec::with_capacity(splits.len());
        for (recording_id, raw) in splits {
            let mut series = normalize_indicator(&raw);
            let (_, at_boundary) = find_peak(&series, boundary_margin);
            series.peak_at_boundary = at_boundary;
            let representative = if series.is_active() {
                Some(representative_frame(matrix.meta(), &recording_id, &series)?)
            } else {
                None
            };
            indicators.push(RecordingIndicator {
                recording_id,
                series,
                representative,
            });
        }
        components.push(Component {
            index_original: j,
            spatial,
            impact: share,
            indicators,
        });
    }
    Ok((
        ComponentAnalysis {
            components: sort_components(components),
            recording_order: matrix.recording_order(),
            patch_dims: matrix.patch_dims(),
            boundary_margin,
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bare_factorization(w: Array2<f64>, h: Array2<f64>) -> Factorization {
        Factorization {
            w,
            h,
            objective_trace: vec![],
            final_objective: 0.0,
            iterations_run: 0,
            seed_used: 0,
        }
    }

    #[test]
    fn normalization_moves_scale_into_h() {
        let f = bare_factorization(array![[3.0], [4.0]], array![[1.0, 2.0]]);
        let (n, warnings) = normalize_factorization(&f);
        assert_eq!(n.w, array![[0.6], [0.8]]);
        assert_eq!(n.h, array![[5.0, 10.0]]);
        assert!(warnings.is_empty());
        let before = f.w.dot(&f.h);
        let after = n.w.dot(&n.h);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn unit_column_is_unchanged() {
        let f = bare_factorization(array![[1.0], [0.0]], array![[2.0, 3.0]]);
        let (n, _) = normalize_factorization(&f);
        assert_eq!(n.w, f.w);
        assert_eq!(n.h, f.h);
    }

    #[test]
    fn zero_column_zeroes_its_row_with_warning() {
        let f = bare_factorization(
            array![[1.0, 0.0], [0.0, 0.0]],
            array![[1.0, 1.0], [3.0, 4.0]],
        );
        let (n, warnings) = normalize_factorization(&f);
        assert_eq!(n.w.column(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(n.h.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(
            warnings,
            vec![ComponentWarning::ZeroSpatialColumn { index: 1 }]
        );
    }

    #[test]
    fn impact_is_relative_norm_share() {
        let h = array![[3.0, 4.0], [0.0, 5.0]];
        assert_eq!(impact(&h, 0).unwrap(), 0.5);
        assert_eq!(impact(&h, 1).unwrap(), 0.5);
    }

    #[test]
    fn single_component_has_full_impact() {
        let h = array![[0.3, 0.4]];
        assert_eq!(impact(&h, 0).unwrap(), 1.0);
    }

    #[test]
    fn zero_row_among_nonzero_has_zero_impact() {
        let h = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(impact(&h, 0).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_temporal_is_an_error() {
        let h = Array2::<f64>::zeros((2, 3));
        assert!(matches!(impacts(&h), Err(ComponentsError::AllZeroTemporal)));
    }

    fn component_with_impact(index: usize, impact: f64) -> Component {
        Component {
            index_original: index,
            spatial: vec![],
            impact,
            indicators: vec![],
        }
    }

    #[test]
    fn sorting_is_descending_by_impact() {
        let sorted = sort_components(vec![
            component_with_impact(0, 0.2),
            component_with_impact(1, 0.5),
            component_with_impact(2, 0.3),
        ]);
        let order: Vec<usize> = sorted.iter().map(|c| c.index_original).collect();
        assert_eq!(order, vec![1, 2, 0]);
    }

    #[test]
    fn sorting_ties_keep_original_order() {
        let sorted = sort_components(vec![
            component_with_impact(0, 0.5),
            component_with_impact(1, 0.5),
        ]);
        let order: Vec<usize> = sorted.iter().map(|c| c.index_original).collect();
        assert_eq!(order, vec![0, 1]);
    }

    fn meta_for(ids: &[&str]) -> Vec<ColumnMeta> {
        let mut ordinals = std::collections::HashMap::new();
        ids.iter()
            .map(|id| {
                let ordinal = ordinals.entry(id.to_string()).or_insert(0usize);
                let m = ColumnMeta {
                    recording_id: id.to_string(),
                    ordinal_in_recording: *ordinal,
                    anchor_frame_index: 10 + *ordinal,
                    anchor_time_ms: *ordinal as i64 * 100,
                };
                *ordinal += 1;
                m
            })
            .collect()
    }

    #[test]
    fn split_groups_by_recording() {
        let meta = meta_for(&["A", "A", "A", "B", "B"]);
        let h = [1.0, 2.0, 3.0, 4.0, 5.0];
        let splits = split_temporal(&h, &meta).unwrap();
        assert_eq!(
            splits,
            vec![
                ("A".to_string(), vec![1.0, 2.0, 3.0]),
                ("B".to_string(), vec![4.0, 5.0]),
            ]
        );
        let concat: Vec<f64> = splits.iter().flat_map(|(_, v)| v.clone()).collect();
        assert_eq!(concat, h);
    }

    #[test]
    fn split_single_recording_is_whole_vector() {
        let meta = meta_for(&["A", "A"]);
        let splits = split_temporal(&[7.0, 8.0], &meta).unwrap();
        assert_eq!(splits, vec![("A".to_string(), vec![7.0, 8.0])]);
    }

    #[test]
    fn split_checks_length() {
        let meta = meta_for(&["A"]);
        assert!(matches!(
            split_temporal(&[1.0, 2.0], &meta),
            Err(ComponentsError::MetaLengthMismatch { .. })
        ));
    }

    #[test]
    fn split_rejects_interleaved_recordings() {
        let mut meta = meta_for(&["A", "B"]);
        meta.push(ColumnMeta {
            recording_id: "A".to_string(),
            ordinal_in_recording: 1,
            anchor_frame_index: 0,
            anchor_time_ms: 0,
        });
        assert!(matches!(
            split_temporal(&[1.0, 2.0, 3.0], &meta),
            Err(ComponentsError::MetaNotGrouped(_))
        ));
    }

    #[test]
    fn indicator_normalizes_by_max() {
        let s = normalize_indicator(&[0.1, 0.9, 0.3]);
        assert_eq!(s.values, vec![0.1 / 0.9, 1.0, 0.3 / 0.9]);
        assert_eq!(s.peak_ordinal, 1);
        assert_eq!(s.raw_max, 0.9);
        assert!(s.is_active());
    }

    #[test]
    fn all_zero_indicator_is_inactive() {
        let s = normalize_indicator(&[0.0, 0.0, 0.0]);
        assert_eq!(s.values, vec![0.0, 0.0, 0.0]);
        assert_eq!(s.raw_max, 0.0);
        assert_eq!(s.peak_ordinal, 0);
        assert!(!s.is_active());
    }

    #[test]
    fn indicator_peak_ties_to_smallest_index() {
        let s = normalize_indicator(&[2.0, 2.0]);
        assert_eq!(s.values, vec![1.0, 1.0]);
        assert_eq!(s.peak_ordinal, 0);
    }

    #[test]
    fn peak_boundary_classification() {
        let series = |peak: usize| {
            let mut raw = vec![0.1; 10];
            raw[peak] = 1.0;
            normalize_indicator(&raw)
        };
        assert_eq!(find_peak(&series(0), 1), (0, true));
        assert_eq!(find_peak(&series(5), 1), (5, false));
        assert_eq!(find_peak(&series(9), 1), (9, true));
    }

    #[test]
    fn representative_frame_looks_up_meta() {
        let meta = meta_for(&["A", "A", "A"]);
        let series = normalize_indicator(&[0.2, 0.1, 0.9]);
        let frame = representative_frame(&meta, "A", &series).unwrap();
        assert_eq!(
            frame,
            FrameRef {
                recording_id: "A".into(),
                frame_index: 12
            }
        );

        let inactive = normalize_indicator(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            representative_frame(&meta, "A", &inactive),
            Err(ComponentsError::InactiveRecording(_))
        ));
    }

    #[test]
    fn spatial_image_max_scales_to_255() {
        let img = spatial_image(&[1.0, 0.0, 0.0], (1, 1)).unwrap();
        assert_eq!(img.pixel(0, 0), (255, 0, 0));

        let uniform = spatial_image(&[0.4, 0.4, 0.4], (1, 1)).unwrap();
        assert_eq!(uniform.pixel(0, 0), (255, 255, 255));
    }

    #[test]
    fn spatial_image_is_scale_invariant() {
        let w: Vec<f64> = vec![
            0.9, 0.1, 0.0, 0.5, 0.3, 0.2, 0.25, 0.8, 0.05, 0.6, 0.15, 0.7,
        ];
        let scaled: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
        assert_eq!(
            spatial_image(&w, (2, 2)).unwrap(),
            spatial_image(&scaled, (2, 2)).unwrap()
        );
    }

    #[test]
    fn zero_spatial_vector_renders_black() {
        let img = spatial_image(&[0.0, 0.0, 0.0], (1, 1)).unwrap();
        assert_eq!(img.pixel(0, 0), (0, 0, 0));
    }
}
