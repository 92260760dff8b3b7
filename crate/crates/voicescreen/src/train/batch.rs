//! Paired 30 s clip batches: two clips per voice, both carrying the voice's
//! labels, so a per-voice consistency penalty is well defined.
//!
//! Per voice, all recordings are concatenated in manifest order. When the
//! concatenation reaches 60 s, a uniform-random hop-aligned 60 s window is
//! split into two halves; otherwise the first and last 30 s are used and
//! overlap by whatever is missing. Window draws are keyed by
//! (seed, epoch, voice), never by execution order, so batches are identical
//! for any thread count.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Split};
use crate::dsp::{HOP, SEGMENT_SAMPLES};
use crate::rng::{salt, stream};
use crate::{Error, Result};

use super::FeatureStore;

/// One voice's paired clips. Starts are hop-aligned sample offsets into the
/// voice's concatenated audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub voice_id: String,
    /// Index of the voice in the split's canonical voice list.
    pub voice_index: usize,
    pub phq9: u8,
    pub gad7: u8,
    pub start_a: usize,
    pub start_b: usize,
}

/// A batch of paired clips, one entry per sampled voice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub entries: Vec<PairEntry>,
}

/// Batch size after scaling down to the corpus: never more voices than
/// exist, and no smaller than 8 unless fewer than 8 exist.
pub fn effective_batch_voices(requested: usize, available: usize) -> usize {
    requested.min(available).max(8.min(available))
}

/// Build the batch for `voices` (pairs of canonical index and id).
pub fn build_pair_batch(
    ds: &Dataset,
    store: &FeatureStore,
    voices: &[(usize, String)],
    seed: u64,
    epoch: usize,
) -> Result<PairBatch> {
    let mut entries = Vec::with_capacity(voices.len());
    for (voice_index, voice_id) in voices {
        let recs = ds.recordings_of_voice(voice_id);
        if recs.is_empty() {
            return Err(Error::invalid(format!("unknown voice {voice_id}")));
        }
        let feats = store.voice_features(ds, voice_id)?;
        // An unpadded matrix of T samples has T/hop − 2 frames.
        let total_samples = (feats.frames + 2) * HOP;
        if total_samples < SEGMENT_SAMPLES {
            return Err(Error::invalid(format!(
                "voice {voice_id} has under 30 s of audio"
            )));
        }
        let (start_a, start_b) = if total_samples >= 2 * SEGMENT_SAMPLES {
            let max_start_frame = (total_samples - 2 * SEGMENT_SAMPLES) / HOP;
            let mut r = stream(seed, &[salt::CLIP_WINDOW, epoch as u64, *voice_index as u64]);
            let f = r.random_range(0..=max_start_frame);
            (f * HOP, f * HOP + SEGMENT_SAMPLES)
        } else {
            (0, total_samples - SEGMENT_SAMPLES)
        };
        entries.push(PairEntry {
            voice_id: voice_id.clone(),
            voice_index: *voice_index,
            phq9: recs[0].phq9,
            gad7: recs[0].gad7,
            start_a,
            start_b,
        });
    }
    Ok(PairBatch { entries })
}

/// All batches of one epoch: the split's voices shuffled without replacement
/// and chunked at the effective batch size.
pub fn epoch_pair_batches(
    ds: &Dataset,
    store: &FeatureStore,
    split: Split,
    batch_voices: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<PairBatch>> {
    let voices = ds.voices_of_split(split);
    if voices.is_empty() {
        return Err(Error::invalid(format!("no voices in the {} split", split.name())));
    }
    let eff = effective_batch_voices(batch_voices, voices.len());
    let mut order: Vec<usize> = (0..voices.len()).collect();
    order.shuffle(&mut stream(seed, &[salt::SHUFFLE, epoch as u64]));
    let mut batches = Vec::new();
    for chunk in order.chunks(eff) {
        let picked: Vec<(usize, String)> =
            chunk.iter().map(|&i| (i, voices[i].clone())).collect();
        batches.push(build_pair_batch(ds, store, &picked, seed, epoch)?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};

    fn corpus(dir: &std::path::Path, n_voices: usize, durations: [f64; 2]) -> Dataset {
        let cfg = CorpusConfig {
            n_voices,
            duration_range: durations,
            master_seed: 5,
            split_ratios: [1.0, 0.0, 0.0],
            ..CorpusConfig::default()
        };
        let manifest = generate_corpus(&cfg, dir).unwrap();
        crate::data::load_manifest(&manifest).unwrap()
    }

    #[test]
    fn scaling_keeps_at_least_eight_when_possible() {
        assert_eq!(effective_batch_voices(128, 200), 128);
        assert_eq!(effective_batch_voices(128, 50), 50);
        assert_eq!(effective_batch_voices(4, 200), 8);
        assert_eq!(effective_batch_voices(128, 5), 5);
        assert_eq!(effective_batch_voices(4, 5), 5);
    }

    #[test]
    fn short_voices_use_first_and_last_thirty_seconds() {
        // One 40 s recording per voice keeps totals under 60 s, so the
        // minimal-overlap rule must apply: clips [0, 30) and [10, 40).
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_voices: 2,
            recordings_per_voice: 1,
            duration_range: [40.0, 40.0],
            master_seed: 1,
            split_ratios: [1.0, 0.0, 0.0],
            ..CorpusConfig::default()
        };
        let manifest = generate_corpus(&cfg, dir.path()).unwrap();
        let ds = crate::data::load_manifest(&manifest).unwrap();
        let store = FeatureStore::new(&ds).unwrap();
        let voices: Vec<(usize, String)> =
            ds.voices().into_iter().enumerate().collect();
        let batch = build_pair_batch(&ds, &store, &voices, 3, 0).unwrap();
        for e in &batch.entries {
            let feats = store.voice_features(&ds, &e.voice_id).unwrap();
            let total = (feats.frames + 2) * HOP;
            assert!(total < 2 * SEGMENT_SAMPLES);
            assert_eq!(e.start_a, 0);
            assert_eq!(e.start_b, total - SEGMENT_SAMPLES);
            // 40 s total → clips [0, 30) and [10, 40): 20 s overlap.
            let overlap = e.start_a + SEGMENT_SAMPLES - e.start_b;
            assert_eq!(overlap, 2 * SEGMENT_SAMPLES - total);
        }
    }

    #[test]
    fn long_voices_draw_reproducible_windows_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let ds = corpus(dir.path(), 3, [45.0, 45.0]); // 90 s per voice
        let store = FeatureStore::new(&ds).unwrap();
        let voices: Vec<(usize, String)> =
            ds.voices().into_iter().enumerate().collect();
        let b1 = build_pair_batch(&ds, &store, &voices, 7, 2).unwrap();
        let b2 = build_pair_batch(&ds, &store, &voices, 7, 2).unwrap();
        assert_eq!(b1, b2);
        for e in &b1.entries {
            // Window start lies in [0, total − 60 s] and halves are adjacent.
            let feats = store.voice_features(&ds, &e.voice_id).unwrap();
            let total = (feats.frames + 2) * HOP;
            assert!(e.start_a <= total - 2 * SEGMENT_SAMPLES);
            assert_eq!(e.start_b, e.start_a + SEGMENT_SAMPLES);
            assert_eq!(e.start_a % HOP, 0);
        }
        // A different epoch draws different windows somewhere.
        let b3 = build_pair_batch(&ds, &store, &voices, 7, 3).unwrap();
        assert_ne!(b1, b3);
    }

    #[test]
    fn epoch_batches_cover_every_voice_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let ds = corpus(dir.path(), 9, [31.0, 35.0]);
        let store = FeatureStore::new(&ds).unwrap();
        let batches = epoch_pair_batches(&ds, &store, Split::Train, 4, 11, 0).unwrap();
        // 9 voices at effective batch 8 → two batches.
        assert_eq!(batches.len(), 2);
        let mut seen: Vec<String> = batches
            .iter()
            .flat_map(|b| b.entries.iter().map(|e| e.voice_id.clone()))
            .collect();
        seen.sort();
        let mut all = ds.voices_of_split(Split::Train);
        all.sort();
        assert_eq!(seen, all);
        // Shuffling differs across epochs.
        let batches2 = epoch_pair_batches(&ds, &store, Split::Train, 4, 11, 1).unwrap();
        let order1: Vec<usize> =
            batches.iter().flat_map(|b| b.entries.iter().map(|e| e.voice_index)).collect();
        let order2: Vec<usize> =
            batches2.iter().flat_map(|b| b.entries.iter().map(|e| e.voice_index)).collect();
        assert_ne!(order1, order2);
    }
}
