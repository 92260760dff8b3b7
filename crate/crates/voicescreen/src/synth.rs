//! Synthetic biomarker corpus: prosody that varies monotonically with a
//! latent severity, ordinal labels derived from the same latent, and a
//! lexical sidecar channel for cross-modal experiments.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledRecording, Split, LEX_DIM};
use crate::dsp::{write_wav, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, salt};

/// Fixed seed of the lexical mixing matrix (shared by every corpus so the
/// lexical channel's geometry does not depend on the corpus seed).
const LEX_MIX_SEED: u64 = 0x5EED_1EA5;

/// Scale of the anxiety-specific latent inside the lexical channel, relative
/// to the severity component. Kept well below 1 so embedding-matching targets
/// are mostly predictable from audio.
const LEX_U_SCALE: f64 = 0.25;

/// Per-voice generative parameters. All biomarkers are monotone in severity.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub severity: f64,
    pub f0_base: f64,
    pub jitter_amp: f64,
    pub pause_fraction: f64,
    pub am_depth: f64,
    pub speaking_rate: f64,
    pub seed: u64,
}

/// Corpus generation config (JSON-friendly; see `default` for the baseline).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_voices: usize,
    #[serde(default = "default_recordings_per_voice")]
    pub recordings_per_voice: usize,
    /// Uniform duration range in seconds; minimum must be ≥ 30.
    #[serde(default = "default_duration_range")]
    pub duration_range: [f64; 2],
    /// Label noise in units of the label range (0.15 ≈ 4 PHQ-9 points sd).
    #[serde(default)]
    pub label_noise_sd: f64,
    /// Correlation between the severity latent and the anxiety label latent.
    #[serde(default = "default_gad_mixing")]
    pub gad_mixing: f64,
    pub master_seed: u64,
    /// Scale on voice-level biomarker noise (1.0 = baseline, 0.0 = exact
    /// monotone biomarkers).
    #[serde(default = "default_one")]
    pub biomarker_noise_scale: f64,
    /// Voice-count fractions for train/validation/test.
    #[serde(default = "default_split_ratios")]
    pub split_ratios: [f64; 3],
}

fn default_recordings_per_voice() -> usize {
    2
}
fn default_duration_range() -> [f64; 2] {
    [35.0, 90.0]
}
fn default_gad_mixing() -> f64 {
    0.85
}
fn default_one() -> f64 {
    1.0
}
fn default_split_ratios() -> [f64; 3] {
    [0.68, 0.17, 0.15]
}

impl Default for CorpusConfig {
    /// Baseline knobs with `n_voices`/`master_seed` zeroed; callers override
    /// at least those two.
    fn default() -> Self {
        Self {
            n_voices: 0,
            recordings_per_voice: default_recordings_per_voice(),
            duration_range: default_duration_range(),
            label_noise_sd: 0.0,
            gad_mixing: default_gad_mixing(),
            master_seed: 0,
            biomarker_noise_scale: default_one(),
            split_ratios: default_split_ratios(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_voices == 0 {
            return Err(Error::invalid("n_voices must be positive"));
        }
        if self.recordings_per_voice == 0 {
            return Err(Error::invalid("recordings_per_voice must be ≥ 1"));
        }
        if self.duration_range[0] < 30.0 || self.duration_range[1] < self.duration_range[0] {
            return Err(Error::invalid(format!(
                "duration_range must satisfy 30 ≤ min ≤ max, got {:?}",
                self.duration_range
            )));
        }
        if !(0.0..=1.0).contains(&self.gad_mixing) {
            return Err(Error::invalid("gad_mixing must be in [0, 1]"));
        }
        if self.label_noise_sd < 0.0 || self.biomarker_noise_scale < 0.0 {
            return Err(Error::invalid("noise scales must be ≥ 0"));
        }
        Ok(())
    }
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Draw the per-voice profile for `(master_seed, voice_index)`.
///
/// Severity is uniform on [0, 1]. Biomarker means: f0 150 − 40·severity Hz,
/// jitter 0.02 + 0.10·severity, pausing 0.10 + 0.25·severity, AM depth
/// 0.5 − 0.3·severity; each gets Gaussian voice noise with sd = 5% of its
/// range (times `noise_scale`), truncated at ±3 sd, then clamped to a
/// physically sensible interval.
pub fn sample_voice_profile(master_seed: u64, voice_index: u64, noise_scale: f64) -> VoiceProfile {
    let mut r = rng::stream(master_seed, &[salt::VOICE_PROFILE, voice_index]);
    let severity: f64 = r.random();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut noise = |sd: f64| clamp(normal.sample(&mut r) * sd * noise_scale, -3.0 * sd, 3.0 * sd);
    let f0_base = clamp(150.0 - 40.0 * severity + noise(0.05 * 40.0), 80.0, 200.0);
    let jitter_amp = clamp(0.02 + 0.10 * severity + noise(0.05 * 0.10), 0.0, 0.2);
    let pause_fraction = clamp(0.10 + 0.25 * severity + noise(0.05 * 0.25), 0.02, 0.6);
    let am_depth = clamp(0.5 - 0.3 * severity + noise(0.05 * 0.30), 0.05, 0.8);
    let speaking_rate = 3.0 + 2.5 * r.random::<f64>();
    VoiceProfile {
        severity,
        f0_base,
        jitter_amp,
        pause_fraction,
        am_depth,
        speaking_rate,
        seed: rng::mix(&[master_seed, salt::UTTERANCE, voice_index]),
    }
}

/// Latents behind a voice's labels: severity drives PHQ-9; the anxiety label
/// mixes severity with an independent uniform `u`.
pub fn label_latents(master_seed: u64, voice_index: u64) -> (f64, f64) {
    let mut r = rng::stream(master_seed, &[salt::VOICE_PROFILE, voice_index]);
    let severity: f64 = r.random();
    let mut r = rng::stream(master_seed, &[salt::LABELS, voice_index]);
    let u: f64 = r.random();
    (severity, u)
}

/// Map latents to integer labels.
///
/// phq9 = clamp(round(27·severity + ε1)); the anxiety latent is a
/// variance-matched blend g = m·severity + sqrt(1 − m²)·(u − ½) + (1 − m)/2,
/// which has the same variance as severity and Pearson correlation exactly
/// `m` with it before rounding/clamping; gad7 = clamp(round(21·g + ε2)).
/// Noise sds are `label_noise_sd` × the label range.
pub fn labels_from_latents(
    severity: f64,
    u: f64,
    label_noise_sd: f64,
    gad_mixing: f64,
    noise_seed: u64,
) -> (u8, u8) {
    let mut r = rng::stream(noise_seed, &[salt::LABELS]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let e1: f64 = if label_noise_sd > 0.0 { normal.sample(&mut r) * label_noise_sd * 27.0 } else { 0.0 };
    let e2: f64 = if label_noise_sd > 0.0 { normal.sample(&mut r) * label_noise_sd * 21.0 } else { 0.0 };
    let m = gad_mixing;
    let g = m * severity + (1.0 - m * m).sqrt() * (u - 0.5) + (1.0 - m) * 0.5;
    let phq9 = clamp((27.0 * severity + e1).round(), 0.0, 27.0) as u8;
    let gad7 = clamp((21.0 * g + e2).round(), 0.0, 21.0) as u8;
    (phq9, gad7)
}

/// Labels for `(master_seed, voice_index)` under the given noise settings.
pub fn labels_for_voice(
    master_seed: u64,
    voice_index: u64,
    label_noise_sd: f64,
    gad_mixing: f64,
) -> (u8, u8) {
    let (severity, u) = label_latents(master_seed, voice_index);
    let noise_seed = rng::mix(&[master_seed, salt::LABELS, voice_index, 1]);
    labels_from_latents(severity, u, label_noise_sd, gad_mixing, noise_seed)
}

/// Number of samples synthesized for a nominal duration, rounded up to a
/// whole feature hop so every recording length is a multiple of 160 samples.
pub fn samples_for_duration(duration_secs: f64) -> usize {
    let raw = (duration_secs * SAMPLE_RATE as f64).ceil() as usize;
    raw.div_ceil(HOP) * HOP
}

/// Synthesize one utterance: voiced harmonic stretches (5 harmonics, 1/k
/// amplitudes, per-period multiplicative amplitude jitter, amplitude
/// modulation at the speaking rate) alternating with silent pauses that
/// occupy `pause_fraction` of the time. Samples stay in [−1, 1].
pub fn synthesize_utterance(profile: &VoiceProfile, duration_secs: f64, seed: u64) -> Result<Vec<f32>> {
    if duration_secs < 30.0 {
        return Err(Error::invalid(format!("duration {duration_secs} s is below the 30 s floor")));
    }
    let n = samples_for_duration(duration_secs);
    let mut r = rng::stream(seed, &[salt::UTTERANCE]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sr = SAMPLE_RATE as f64;
    let base_amp = 0.65;
    let harmonics = 5usize;
    let h_norm: f64 = (1..=harmonics).map(|k| 1.0 / k as f64).sum();
    let pf = profile.pause_fraction.min(0.95);
    let ramp = 80usize; // 5 ms raised-cosine block edges

    let mut out = vec![0.0f32; n];
    let mut pos = 0usize;
    let mut phase = 0.0f64;
    let mut t_abs = 0usize;
    while pos < n {
        let voiced_secs = 0.8 + 1.2 * r.random::<f64>();
        let voiced_len = ((voiced_secs * sr) as usize).min(n - pos).max(1);
        let mut period_jitter = jitter_factor(&mut r, &normal, profile.jitter_amp);
        for i in 0..voiced_len {
            let t = (t_abs + i) as f64 / sr;
            let env_am =
                1.0 - profile.am_depth * 0.5 * (1.0 + (2.0 * std::f64::consts::PI * profile.speaking_rate * t).sin());
            let edge = edge_gain(i, voiced_len, ramp);
            let mut s = 0.0;
            for k in 1..=harmonics {
                s += (1.0 / k as f64) * (k as f64 * phase).sin();
            }
            s *= base_amp * env_am * period_jitter * edge / h_norm;
            out[pos + i] = s as f32;
            let prev = phase;
            phase += 2.0 * std::f64::consts::PI * profile.f0_base / sr;
            if phase >= 2.0 * std::f64::consts::PI {
                phase -= 2.0 * std::f64::consts::PI;
                period_jitter = jitter_factor(&mut r, &normal, profile.jitter_amp);
            }
            let _ = prev;
        }
        pos += voiced_len;
        t_abs += voiced_len;
        if pf > 0.0 && pos < n {
            let pause_len = ((voiced_len as f64) * pf / (1.0 - pf)) as usize;
            let pause_len = pause_len.min(n - pos);
            // Pause samples are already zero.
            pos += pause_len;
            t_abs += pause_len;
        }
    }
    debug_assert!(out.iter().all(|x| x.abs() <= 1.0));
    Ok(out)
}

fn jitter_factor(r: &mut impl Rng, normal: &Normal<f64>, jitter_amp: f64) -> f64 {
    (1.0 + jitter_amp * clamp(normal.sample(r), -2.5, 2.5)).max(0.05)
}

fn edge_gain(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let x = if i < ramp {
        i as f64 / ramp as f64
    } else if i + ramp >= len {
        (len - 1 - i) as f64 / ramp as f64
    } else {
        return 1.0;
    };
    0.5 - 0.5 * (std::f64::consts::PI * x).cos()
}

/// The fixed 16×2 lexical mixing matrix and 16-dim offset.
fn lex_mixer() -> ([f64; LEX_DIM], [f64; LEX_DIM], [f64; LEX_DIM]) {
    let mut r = rng::stream(LEX_MIX_SEED, &[salt::LEXICAL]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut col_s = [0.0; LEX_DIM];
    let mut col_u = [0.0; LEX_DIM];
    let mut offset = [0.0; LEX_DIM];
    for i in 0..LEX_DIM {
        col_s[i] = normal.sample(&mut r);
        col_u[i] = normal.sample(&mut r) * LEX_U_SCALE;
        offset[i] = normal.sample(&mut r) * 0.5;
    }
    (col_s, col_u, offset)
}

/// Lexical sidecar vector for one recording: an affine image of the voice
/// latents plus small per-recording noise.
pub fn lexical_vector(severity: f64, u: f64, rec_seed: u64) -> Vec<f32> {
    let (col_s, col_u, offset) = lex_mixer();
    let mut r = rng::stream(rec_seed, &[salt::LEXICAL]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..LEX_DIM)
        .map(|i| {
            let x = col_s[i] * (severity - 0.5) + col_u[i] * (u - 0.5) + offset[i]
                + 0.05 * normal.sample(&mut r);
            x as f32
        })
        .collect()
}

/// Generate a full corpus under `out_dir`: WAVs in `audio/`, `.lex` sidecars
/// next to them, and a validated manifest. Returns the manifest path.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let voice_ids: Vec<String> = (0..config.n_voices).map(|i| format!("v{i:05}")).collect();
    let split_of: std::collections::HashMap<String, Split> =
        data::split_disjoint(&voice_ids, config.split_ratios, config.master_seed)?
            .into_iter()
            .collect();

    struct RecJob {
        voice_index: u64,
        rec_index: u64,
    }
    let jobs: Vec<RecJob> = (0..config.n_voices as u64)
        .flat_map(|v| (0..config.recordings_per_voice as u64).map(move |r| RecJob { voice_index: v, rec_index: r }))
        .collect();

    // Synthesis is pure per recording; fan out, then write sequentially.
    let rendered: Vec<(String, Vec<f32>, Vec<f32>)> = {
        let cfg = config;
        par::map_collect(&jobs, |job| {
            let profile = sample_voice_profile(cfg.master_seed, job.voice_index, cfg.biomarker_noise_scale);
            let (severity, u) = label_latents(cfg.master_seed, job.voice_index);
            let mut dr = rng::stream(cfg.master_seed, &[salt::DURATION, job.voice_index, job.rec_index]);
            let duration = cfg.duration_range[0]
                + (cfg.duration_range[1] - cfg.duration_range[0]) * dr.random::<f64>();
            let utt_seed = rng::mix(&[profile.seed, job.rec_index]);
            let samples = synthesize_utterance(&profile, duration, utt_seed)
                .expect("duration respects the config floor");
            let lex = lexical_vector(severity, u, rng::mix(&[cfg.master_seed, salt::LEXICAL, job.voice_index, job.rec_index]));
            let name = format!("v{:05}_r{}", job.voice_index, job.rec_index);
            (name, samples, lex)
        })
    };

    let mut records = Vec::with_capacity(jobs.len());
    for (job, (name, samples, lex)) in jobs.iter().zip(rendered) {
        let wav_rel = format!("audio/{name}.wav");
        write_wav(&out_dir.join(&wav_rel), &samples)?;
        data::write_lex(&audio_dir.join(format!("{name}.lex")), &lex)?;
        let voice_id = format!("v{:05}", job.voice_index);
        let (phq9, gad7) = labels_for_voice(
            config.master_seed,
            job.voice_index,
            config.label_noise_sd,
            config.gad_mixing,
        );
        records.push(LabeledRecording {
            voice_id: voice_id.clone(),
            audio_path: wav_rel,
            phq9,
            gad7,
            split: split_of[&voice_id],
            extra: Default::default(),
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    data::write_manifest(&manifest, &records)?;
    Ok(manifest)
}
