//! SPFT speech feature files.
//!
//! Layout: magic `SPFT`, then little-endian `u32` frames, `u32` dims,
//! `u32` frame shift in milliseconds, then `frames * dims` little-endian
//! `f32` values in row-major order.

use super::CorpusError;

pub const MAGIC: &[u8; 4] = b"SPFT";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dims: usize,
    data: Vec<f32>,
    pub frame_shift_ms: u32,
}

impl FeatureMatrix {
    pub fn new(
        frames: usize,
        dims: usize,
        data: Vec<f32>,
        frame_shift_ms: u32,
    ) -> Result<Self, CorpusError> {
        if frames == 0 || dims == 0 || data.len() != frames * dims {
            return Err(CorpusError::SizeMismatch {
                expected: frames * dims,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue { index: i });
        }
        Ok(FeatureMatrix {
            frames,
            dims,
            data,
            frame_shift_ms,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.dims..(frame + 1) * self.dims]
    }

    /// Mean of squared values in one frame.
    pub fn frame_energy(&self, frame: usize) -> f32 {
        let row = self.row(frame);
        row.iter().map(|v| v * v).sum::<f32>() / row.len() as f32
    }
}

pub fn write_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.dims as u32).to_le_bytes());
    out.extend_from_slice(&m.frame_shift_ms.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureMatrix, CorpusError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let frames = u32_at(4) as usize;
    let dims = u32_at(8) as usize;
    let shift = u32_at(12);
    let body = &bytes[HEADER_LEN..];
    let expected = frames * dims;
    if body.len() % 4 != 0 || body.len() / 4 != expected {
        return Err(CorpusError::SizeMismatch {
            expected,
            found: body.len() / 4,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(frames, dims, data, shift)
}
