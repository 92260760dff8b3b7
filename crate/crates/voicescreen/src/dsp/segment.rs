//! Non-overlapping 30-second segmentation with zero padding of the tail.

use super::{Waveform, SEGMENT_SAMPLES};
use crate::error::{Error, Result};

/// Consecutive 30 s segments of a recording; only the last may be padded.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub segments: Vec<Vec<f32>>,
    pub pad_samples_last: usize,
}

/// Split into ceil(N / 480000) segments of exactly 480 000 samples,
/// zero-padding the final partial segment.
pub fn segment_30s(wave: &Waveform) -> Result<SegmentSet> {
    let n = wave.len();
    if n == 0 {
        return Err(Error::invalid("cannot segment an empty waveform"));
    }
    let n_seg = n.div_ceil(SEGMENT_SAMPLES);
    let mut segments = Vec::with_capacity(n_seg);
    let mut pad = 0;
    for i in 0..n_seg {
        let start = i * SEGMENT_SAMPLES;
        let end = ((i + 1) * SEGMENT_SAMPLES).min(n);
        let mut seg = wave.samples[start..end].to_vec();
        if seg.len() < SEGMENT_SAMPLES {
            pad = SEGMENT_SAMPLES - seg.len();
            seg.resize(SEGMENT_SAMPLES, 0.0);
        }
        segments.push(seg);
    }
    Ok(SegmentSet { segments, pad_samples_last: pad })
}
