//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "OSCK" | u32 version | u32 scalar bytes (4 or 8)
//! u64 step | u64 sample seed | u64 sample count | scalar base scale
//! u32 rows | u32 cols | u32 channels | feature values
//! u32 layers | per layer: u32 inputs | u32 outputs | weights | biases
//! u32 frames | u32 joints | per frame: Δθ (joints×3) | Δt (3)
//! u32 buffers | per buffer: u64 length | u64 updates | first | second
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{DecoderNet, Dense, FeatureTensor};
use crate::linalg::Vec3;
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"OSCK";

/// Adam moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBuffers<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    /// Updates applied so far, for bias correction.
    pub updates: u64,
}

impl<T: Real> MomentBuffers<T> {
    pub fn zeros(len: usize) -> Self {
        MomentBuffers { first: vec![T::zero(); len], second: vec![T::zero(); len], updates: 0 }
    }
}

/// Everything needed to resume training or render a fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub sample_seed: u64,
    pub sample_count: u64,
    pub base_scale: T,
    pub features: FeatureTensor<T>,
    pub net: DecoderNet<T>,
    /// Per-frame `(Δθ, Δt)`.
    pub corrections: Vec<(Vec<Vec3<T>>, Vec3<T>)>,
    pub moments: Vec<MomentBuffers<T>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn scalars<T: Real>(&mut self, vs: &[T]) {
        for v in vs {
            v.write_le(&mut self.0);
        }
    }
}

pub fn encode_checkpoint<T: Real>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u32(T::BYTES);
    w.u64(ck.step);
    w.u64(ck.sample_seed);
    w.u64(ck.sample_count);
    w.scalars(&[ck.base_scale]);
    let f = &ck.features;
    w.u32(f.rows);
    w.u32(f.cols);
    w.u32(f.channels);
    w.scalars(&f.values);
    w.u32(ck.net.layers.len());
    for l in &ck.net.layers {
        w.u32(l.inputs);
        w.u32(l.outputs);
        w.scalars(&l.weights);
        w.scalars(&l.bias);
    }
    w.u32(ck.corrections.len());
    w.u32(ck.corrections.first().map_or(0, |c| c.0.len()));
    for (dt, dtr) in &ck.corrections {
        for v in dt {
            w.scalars(v);
        }
        w.scalars(dtr);
    }
    w.u32(ck.moments.len());
    for m in &ck.moments {
        w.u64(m.first.len() as u64);
        w.u64(m.updates);
        w.scalars(&m.first);
        w.scalars(&m.second);
    }
    w.0
}

pub fn write_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    if ck.corrections.iter().any(|c| c.0.len() != ck.corrections[0].0.len()) {
        return Err(crate::error::invalid("frames disagree on joint count"));
    }
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Corrupt { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalars<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let len = n.checked_mul(T::BYTES).ok_or_else(|| self.corrupt("length overflow"))?;
        Ok(self.take(len)?.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn vec3<T: Real>(&mut self) -> Result<Vec3<T>> {
        let v = self.scalars::<T>(3)?;
        Ok([v[0], v[1], v[2]])
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.corrupt("not a checkpoint (bad magic)"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { expected: CHECKPOINT_VERSION, found: version });
    }
    let width = r.u32()?;
    if width != T::BYTES {
        return Err(r.corrupt(format!("stores {width}-byte scalars, expected {}", T::BYTES)));
    }
    let step = r.u64()?;
    let sample_seed = r.u64()?;
    let sample_count = r.u64()?;
    let base_scale = r.scalars::<T>(1)?[0];
    let (rows, cols, channels) = (r.u32()?, r.u32()?, r.u32()?);
    let values = r.scalars(rows * cols * channels)?;
    let features = FeatureTensor { rows, cols, channels, values };
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (inputs, outputs) = (r.u32()?, r.u32()?);
        let weights = r.scalars(inputs * outputs)?;
        let bias = r.scalars(outputs)?;
        layers.push(Dense { inputs, outputs, weights, bias });
    }
    if layers.is_empty() || layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
        return Err(r.corrupt("inconsistent decoder layer shapes"));
    }
    let (frames, joints) = (r.u32()?, r.u32()?);
    let mut corrections = Vec::with_capacity(frames);
    for _ in 0..frames {
        let dt = (0..joints).map(|_| r.vec3()).collect::<Result<Vec<_>>>()?;
        corrections.push((dt, r.vec3()?));
    }
    let n_moments = r.u32()?;
    let mut moments = Vec::with_capacity(n_moments);
    for _ in 0..n_moments {
        let len = r.u64()? as usize;
        let updates = r.u64()?;
        moments.push(MomentBuffers { first: r.scalars(len)?, second: r.scalars(len)?, updates });
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { step, sample_seed, sample_count, base_scale, features, net: DecoderNet { layers }, corrections, moments })
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&std::fs::read(path)?, path)
}
