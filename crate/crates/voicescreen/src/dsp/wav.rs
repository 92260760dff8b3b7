//! PCM16 mono WAV read/write at the fixed 16 kHz corpus rate.

use std::path::Path;

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Mono waveform at the fixed sample rate, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Waveform { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// Read a 16 kHz mono PCM16 WAV file; samples are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: format!("unsupported sample rate {} (need {})", spec.sample_rate, SAMPLE_RATE),
        });
    }
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: format!("mono required, got {} channels", spec.channels),
        });
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: "PCM16 encoding required".to_string(),
        });
    }
    let mut samples = Vec::with_capacity(reader.len() as usize);
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
        samples.push(s as f32 / 32768.0);
    }
    Ok(Waveform::new(samples))
}

/// Number of samples in a WAV file without decoding them.
pub fn wav_len(path: &Path) -> Result<usize> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    Ok(reader.len() as usize)
}

/// Write samples as 16 kHz mono PCM16; inputs are clamped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    for &x in samples {
        let q = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..2000)
            .map(|i| (0.7 * (i as f32 * 0.01).sin()).clamp(-1.0, 1.0))
            .collect();
        write_wav(&path, &samples).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            // Write scales by 32767, read divides by 32768, so the bound is
            // half a step of rounding plus |x|/32768 of scale shrink.
            let bound = (0.5 + a.abs()) / 32768.0 + 1e-7;
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();

        let p8k = dir.path().join("8k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p8k, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p8k).unwrap_err().to_string();
        assert!(err.contains("sample rate"), "{err}");

        let pst = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&pst, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&pst).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");
    }
}
