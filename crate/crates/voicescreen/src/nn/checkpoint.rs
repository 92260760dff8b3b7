//! Checkpoint files: one JSON header line describing the model kind, config,
//! and parameter table, followed by a little-endian 32-bit float payload.
//! Optimizer state uses the same layout with a 64-bit payload in a sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelKind};
use super::optim::{AdamW, AdamWConfig};
use super::params::ParamSet;
use super::tensor::Mat;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A complete loadable model: kind, architecture, and parameters.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    weight_decay: bool,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_kind: ModelKind,
    config: ModelConfig,
    config_hash: String,
    params: Vec<ParamMeta>,
    payload_bytes: u64,
}

fn read_header_line(reader: &mut impl Read, path: &Path) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Checkpoint(format!(
                "{}: missing header terminator",
                path.display()
            )));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(Error::Checkpoint(format!("{}: header too large", path.display())));
        }
    }
    String::from_utf8(line)
        .map_err(|_| Error::Checkpoint(format!("{}: header is not UTF-8", path.display())))
}

pub fn save_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut metas = Vec::with_capacity(data.params.len());
    let mut payload: Vec<u8> = Vec::new();
    for e in data.params.entries() {
        metas.push(ParamMeta {
            name: e.name.clone(),
            rows: e.value.rows,
            cols: e.value.cols,
            trainable: e.trainable,
            weight_decay: e.weight_decay,
            offset: payload.len() as u64,
        });
        for &x in &e.value.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model_kind: data.kind,
        config: data.config.clone(),
        config_hash: data.config.hash_hex(),
        params: metas,
        payload_bytes: payload.len() as u64,
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let header: Header = serde_json::from_str(&read_header_line(&mut r, path)?)?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            header.format_version
        )));
    }
    if header.config_hash != header.config.hash_hex() {
        return Err(Error::Checkpoint(format!(
            "{}: config hash mismatch",
            path.display()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() as u64 != header.payload_bytes {
        return Err(Error::Checkpoint(format!(
            "{}: payload is {} bytes, header says {}",
            path.display(),
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut params = ParamSet::new();
    for m in &header.params {
        let n_bytes = m
            .rows
            .checked_mul(m.cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{}: shape overflow", path.display())))?;
        let start = m.offset as usize;
        let end = start
            .checked_add(n_bytes)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "{}: parameter {} extends past payload",
                    path.display(),
                    m.name
                ))
            })?;
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(&m.name, Mat::from_vec(m.rows, m.cols, data), m.trainable, m.weight_decay);
    }
    Ok(CheckpointData { kind: header.model_kind, config: header.config, params })
}

#[derive(Debug, Serialize, Deserialize)]
struct OptMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset of the first-moment block; the second moment follows it.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptHeader {
    format_version: u32,
    optimizer: String,
    config: AdamWConfig,
    step_count: u64,
    params: Vec<OptMeta>,
    payload_bytes: u64,
}

/// Save moments for the trainable entries of `params`.
pub fn save_optimizer(path: &Path, opt: &AdamW, params: &ParamSet<f32>) -> Result<()> {
    let mut metas = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (e, slot) in params.entries().iter().zip(&opt.moments) {
        let Some((m, v)) = slot else { continue };
        metas.push(OptMeta {
            name: e.name.clone(),
            rows: m.rows,
            cols: m.cols,
            offset: payload.len() as u64,
        });
        for &x in m.data.iter().chain(&v.data) {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = OptHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        optimizer: "adamw".to_string(),
        config: opt.cfg,
        step_count: opt.step_count,
        params: metas,
        payload_bytes: payload.len() as u64,
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load optimizer state aligned with `params` (names and shapes must match
/// its trainable entries exactly).
pub fn load_optimizer(path: &Path, params: &ParamSet<f32>) -> Result<AdamW> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let header: OptHeader = serde_json::from_str(&read_header_line(&mut r, path)?)?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION || header.optimizer != "adamw" {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported optimizer state",
            path.display()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() as u64 != header.payload_bytes {
        return Err(Error::Checkpoint(format!("{}: truncated optimizer payload", path.display())));
    }
    let mut opt = AdamW::new(header.config, params);
    opt.step_count = header.step_count;
    let mut meta_iter = header.params.iter();
    for (e, slot) in params.entries().iter().zip(opt.moments.iter_mut()) {
        let Some((m, v)) = slot else { continue };
        let meta = meta_iter.next().ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing moments for {}", path.display(), e.name))
        })?;
        if meta.name != e.name || meta.rows != m.rows || meta.cols != m.cols {
            return Err(Error::Checkpoint(format!(
                "{}: optimizer entry {} does not match parameter {}",
                path.display(),
                meta.name,
                e.name
            )));
        }
        let n = m.rows * m.cols;
        let start = meta.offset as usize;
        let end = start + 16 * n;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{}: moments for {} extend past payload",
                path.display(),
                meta.name
            )));
        }
        let floats: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        m.data.copy_from_slice(&floats[..n]);
        v.data.copy_from_slice(&floats[n..]);
    }
    if meta_iter.next().is_some() {
        return Err(Error::Checkpoint(format!(
            "{}: optimizer state has extra entries",
            path.display()
        )));
    }
    Ok(opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{self, ModelConfig};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            enc_dims: vec![6, 5],
            lora_rank: 2,
            lex_dims: vec![4, 3],
            trunk_hidden: 8,
            embed_dim: 4,
            head_hidden: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let params = model::init_audio(&cfg, 77);
        let data = CheckpointData { kind: ModelKind::Audio, config: cfg.clone(), params };
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &data).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.kind, ModelKind::Audio);
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.params.len(), data.params.len());
        for (a, b) in data.params.entries().iter().zip(loaded.params.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.weight_decay, b.weight_decay);
            assert_eq!(
                a.value.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.value.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let params = model::init_lexical(&cfg, 5);
        let data = CheckpointData { kind: ModelKind::Lexical, config: cfg, params };
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn optimizer_round_trip_preserves_moments() {
        use crate::nn::optim::AdamWConfig;
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let mut params = model::init_audio(&cfg, 9);
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        // A couple of synthetic steps to make the moments non-trivial.
        let grads: Vec<Option<Mat<f32>>> = params
            .entries()
            .iter()
            .map(|e| {
                e.trainable.then(|| {
                    Mat::from_vec(
                        e.value.rows,
                        e.value.cols,
                        (0..e.value.len()).map(|i| (i % 5) as f32 * 0.1 - 0.2).collect(),
                    )
                })
            })
            .collect();
        opt.step(&mut params, &grads);
        opt.step(&mut params, &grads);

        let path = dir.path().join("model.opt");
        save_optimizer(&path, &opt, &params).unwrap();
        let loaded = load_optimizer(&path, &params).unwrap();
        assert_eq!(loaded.step_count, 2);
        for (a, b) in opt.moments.iter().zip(&loaded.moments) {
            match (a, b) {
                (None, None) => {}
                (Some((ma, va)), Some((mb, vb))) => {
                    assert_eq!(ma.data, mb.data);
                    assert_eq!(va.data, vb.data);
                }
                _ => panic!("moment slots disagree"),
            }
        }
    }

    #[test]
    fn optimizer_for_different_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let params = model::init_audio(&cfg, 9);
        let opt = AdamW::new(Default::default(), &params);
        let path = dir.path().join("model.opt");
        save_optimizer(&path, &opt, &params).unwrap();
        let other = model::init_lexical(&cfg, 9);
        assert!(load_optimizer(&path, &other).is_err());
    }
}
