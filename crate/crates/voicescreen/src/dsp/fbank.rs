//! Feature cache files: 8-byte header (frames, bins as u32 LE) + f32 LE data.

use std::io::{Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Write a feature matrix to a `.fbank` cache file.
pub fn write_fbank(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + fm.data.len() * 4);
    bytes.extend_from_slice(&(fm.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(fm.bins as u32).to_le_bytes());
    for &x in &fm.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a `.fbank` cache file.
pub fn read_fbank(path: &Path) -> Result<FeatureMatrix> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 8];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let frames = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != frames * bins * 4 {
        return Err(Error::invalid(format!(
            "feature cache {} has {} payload bytes, expected {}",
            path.display(),
            payload.len(),
            frames * bins * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix::new(frames, bins, data))
}
