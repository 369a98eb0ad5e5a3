use super::{CorpusError, Image};
use crate::colorfeat::histogram_counts;

/// Default L1 histogram difference above which a cut is declared.
pub const DEFAULT_SHOT_TAU: f64 = 0.4;

/// Inclusive frame range of one detected shot and its keyframe (the middle
/// frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotSpan {
    pub start: usize,
    pub end: usize,
    pub keyframe: usize,
}

/// Returns the frame indices at which a new shot starts. Index 0 always
/// starts a shot; index `i > 0` does when the L1 distance between the
/// normalized histograms of frames `i - 1` and `i` exceeds `tau`.
pub fn segment_shots(frames: &[Image], tau: f64) -> Result<Vec<usize>, CorpusError> {
    let first = frames.first().ok_or(CorpusError::EmptyInput)?;
    if !(tau > 0.0) {
        return Err(CorpusError::InvalidThreshold(tau));
    }
    let dims = (first.width(), first.height());
    if let Some(i) = frames
        .iter()
        .position(|f| (f.width(), f.height()) != dims)
    {
        return Err(CorpusError::DimensionMismatch(format!(
            "frame {i} is {}x{}, frame 0 is {}x{}",
            frames[i].width(),
            frames[i].height(),
            dims.0,
            dims.1
        )));
    }
    // All frames share a pixel count, so the normalized L1 distance is the
    // integer count difference over that count. This keeps the distance of
    // two disjoint histograms at exactly 2.0.
    let n = (dims.0 * dims.1) as f64;
    let mut boundaries = vec![0];
    let mut prev = histogram_counts(first);
    for (i, frame) in frames.iter().enumerate().skip(1) {
        let cur = histogram_counts(frame);
        let diff: u64 = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| a.abs_diff(*b) as u64)
            .sum();
        if diff as f64 / n > tau {
            boundaries.push(i);
        }
        prev = cur;
    }
    Ok(boundaries)
}

/// Expands boundaries into contiguous spans covering `0..frame_count`.
pub fn shot_spans(boundaries: &[usize], frame_count: usize) -> Vec<ShotSpan> {
    boundaries
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = boundaries
                .get(k + 1)
                .map_or(frame_count.saturating_sub(1), |next| next - 1);
            ShotSpan {
                start,
                end,
                keyframe: (start + end) / 2,
            }
        })
        .collect()
}
