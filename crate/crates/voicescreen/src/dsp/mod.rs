//! Audio I/O, 30-second segmentation, and log-mel features.

pub mod fbank;
pub mod mel;
pub mod segment;
pub mod wav;

pub use fbank::{read_fbank, write_fbank};
pub use mel::{log_mel, mel_bin_centers_hz, mel_hz, MelParams};
pub use segment::{segment_30s, SegmentSet};
pub use wav::{read_wav, wav_len, write_wav, Waveform};

/// Fixed corpus sample rate (Hz).
pub const SAMPLE_RATE: u32 = 16_000;
/// Samples in one 30-second segment.
pub const SEGMENT_SAMPLES: usize = 480_000;
/// Analysis window length in samples (25 ms).
pub const WINDOW: usize = 400;
/// Hop length in samples (10 ms).
pub const HOP: usize = 160;
/// FFT size.
pub const N_FFT: usize = 512;
/// Mel bins per frame.
pub const N_MELS: usize = 40;
/// Frames produced by one full 30-second segment.
pub const FRAMES_PER_SEGMENT: usize = 2998;
/// Spectral floor applied before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

/// A time × mel matrix of log-filterbank features, stored row-major in f32.
///
/// Values are computed in f64 and rounded to f32 exactly once at
/// construction, so in-memory features and cache-file round-trips are
/// bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, bins: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * bins);
        FeatureMatrix { frames, bins, data }
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Borrow rows `[start, start + frames)` as a new owned matrix.
    pub fn slice_rows(&self, start: usize, frames: usize) -> FeatureMatrix {
        assert!(start + frames <= self.frames, "row slice out of range");
        FeatureMatrix {
            frames,
            bins: self.bins,
            data: self.data[start * self.bins..(start + frames) * self.bins].to_vec(),
        }
    }

    /// Frame count for an `n`-sample input under the fixed window/hop.
    pub fn frames_for_samples(n: usize) -> usize {
        if n < WINDOW {
            0
        } else {
            1 + (n - WINDOW) / HOP
        }
    }
}
