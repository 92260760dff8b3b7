//! Log-mel filterbank features: magnitude STFT → triangular mel bank → ln.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMatrix, Waveform, HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};

/// STFT / filterbank parameters. Defaults are the toolkit-wide constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MelParams {
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            window: WINDOW,
            hop: HOP,
            n_fft: N_FFT,
            n_mels: N_MELS,
            fmin: 0.0,
            fmax: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

/// HTK mel scale.
pub fn mel_hz(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn hz_from_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequency (Hz) of each triangular filter under `params`.
pub fn mel_bin_centers_hz(params: &MelParams) -> Vec<f64> {
    let edges = mel_edges(params);
    (0..params.n_mels).map(|m| edges[m + 1]).collect()
}

/// n_mels + 2 mel-spaced edge frequencies in Hz from fmin to fmax.
fn mel_edges(params: &MelParams) -> Vec<f64> {
    let lo = mel_hz(params.fmin);
    let hi = mel_hz(params.fmax);
    let n = params.n_mels + 2;
    (0..n)
        .map(|i| hz_from_mel(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Sparse triangular filterbank over FFT bins, area-normalized so each
/// filter integrates to 1 over frequency (weight scale 2 / (f_hi - f_lo)).
struct MelBank {
    /// Per filter: first FFT bin index and the run of weights from there.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelBank {
    fn new(params: &MelParams) -> Self {
        let edges = mel_edges(params);
        let n_bins = params.n_fft / 2 + 1;
        let hz_per_bin = SAMPLE_RATE as f64 / params.n_fft as f64;
        let mut filters = Vec::with_capacity(params.n_mels);
        for m in 0..params.n_mels {
            let (f_lo, f_c, f_hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (f_hi - f_lo);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * hz_per_bin;
                let w = if f <= f_lo || f >= f_hi {
                    0.0
                } else if f <= f_c {
                    (f - f_lo) / (f_c - f_lo)
                } else {
                    (f_hi - f) / (f_hi - f_c)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w * norm);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push((start.unwrap_or(0), weights));
        }
        MelBank { filters }
    }
}

fn shared_fft() -> Arc<dyn Fft<f64>> {
    static FFT: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    FFT.get_or_init(|| FftPlanner::new().plan_fft_forward(N_FFT)).clone()
}

/// Log-mel features of a waveform.
///
/// Frames are Hann-windowed (periodic window), zero-padded to the FFT size;
/// the magnitude spectrum is pooled by the triangular mel bank and floored at
/// 1e-10 before the natural log. All arithmetic runs in f64; the result is
/// rounded to f32 once, so recomputation and cache round-trips agree bitwise.
pub fn log_mel(wave: &Waveform, params: &MelParams) -> Result<FeatureMatrix> {
    let n = wave.len();
    if n < params.window {
        return Err(Error::invalid(format!(
            "input of {n} samples is shorter than one {}-sample window",
            params.window
        )));
    }
    let t_frames = 1 + (n - params.window) / params.hop;
    let hann: Vec<f64> = (0..params.window)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / params.window as f64).cos())
        .collect();
    let bank = MelBank::new(params);
    let fft = if params.n_fft == N_FFT {
        shared_fft()
    } else {
        FftPlanner::new().plan_fft_forward(params.n_fft)
    };
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); params.n_fft];
    let mut mags = vec![0.0f64; params.n_fft / 2 + 1];
    let mut out = Vec::with_capacity(t_frames * params.n_mels);
    for t in 0..t_frames {
        let frame = &wave.samples[t * params.hop..t * params.hop + params.window];
        for i in 0..params.window {
            buf[i] = Complex::new(frame[i] as f64 * hann[i], 0.0);
        }
        for b in buf.iter_mut().skip(params.window) {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, m) in mags.iter_mut().enumerate() {
            *m = buf[k].norm();
        }
        for (start, weights) in &bank.filters {
            let mut e = 0.0;
            for (w, m) in weights.iter().zip(&mags[*start..]) {
                e += w * m;
            }
            out.push(e.max(LOG_FLOOR).ln() as f32);
        }
    }
    Ok(FeatureMatrix::new(t_frames, params.n_mels, out))
}
