//! Binary parameter container shared by every model kind.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "REPINFCK" | version u32 | kind u32 | latent_dim u32 | hidden_width u32
//! | float_width u32 | seed u64 | epoch u32 | block_count u32
//! then per block: name_len u32 | name (utf-8) | rank u32 | dims u32 x rank
//!                 | data (float_width-byte little-endian floats)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"REPINFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Vae,
    Discriminator,
    /// Free-form array dump (e.g. latent trajectories).
    Arrays,
}

impl ModelKind {
    fn tag(self) -> u32 {
        match self {
            ModelKind::Vae => 1,
            ModelKind::Discriminator => 2,
            ModelKind::Arrays => 3,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Vae),
            2 => Ok(ModelKind::Discriminator),
            3 => Ok(ModelKind::Arrays),
            other => Err(Error::format("checkpoint", format!("unknown model kind tag {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: ModelKind,
    pub latent_dim: u32,
    pub hidden_width: u32,
    pub float_width: u32,
    pub seed: u64,
    pub epoch: u32,
}

impl CheckpointHeader {
    pub fn new<T: Scalar>(kind: ModelKind, latent_dim: usize, hidden_width: usize, seed: u64, epoch: usize) -> Self {
        CheckpointHeader {
            version: FORMAT_VERSION,
            kind,
            latent_dim: latent_dim as u32,
            hidden_width: hidden_width as u32,
            float_width: T::BYTES as u32,
            seed,
            epoch: epoch as u32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar = f32> {
    pub header: CheckpointHeader,
    pub blocks: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn block(&self, name: &str) -> Result<&Tensor<T>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format("checkpoint", format!("missing block {name:?}")))
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::CheckpointMismatch(format!("expected a {kind:?} checkpoint, found {:?}", self.header.kind)));
        }
        Ok(())
    }
}

pub fn encode<T: Scalar>(header: &CheckpointHeader, blocks: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [header.version, header.kind.tag(), header.latent_dim, header.hidden_width, T::BYTES as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.seed.to_le_bytes());
    out.extend_from_slice(&header.epoch.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, t) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported format version {version}")));
    }
    let kind = ModelKind::from_tag(c.u32()?)?;
    let latent_dim = c.u32()?;
    let hidden_width = c.u32()?;
    let float_width = c.u32()?;
    if float_width as usize != T::BYTES {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint stores {float_width}-byte floats, reader expects {}",
            T::BYTES
        )));
    }
    let seed = c.u64()?;
    let epoch = c.u32()?;
    let count = c.u32()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format("checkpoint", "block name is not utf-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::format("checkpoint", "block too large"))?)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        blocks.push((name, Tensor::new(shape, data)?));
    }
    if c.at != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes after last block"));
    }
    let header = CheckpointHeader { version, kind, latent_dim, hidden_width, float_width, seed, epoch };
    Ok(Checkpoint { header, blocks })
}

pub fn write<T: Scalar>(path: &Path, header: &CheckpointHeader, blocks: &[(String, &Tensor<T>)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(header, blocks)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(
            seed in any::<u64>(),
            epoch in 0u32..1000,
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..5, 0..4), 0..4),
        ) {
            let tensors: Vec<Tensor<f32>> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| Tensor::from_fn(s.clone(), |j| (i * 100 + j) as f32 * 0.25 - 3.0))
                .collect();
            let blocks: Vec<(String, &Tensor<f32>)> =
                tensors.iter().enumerate().map(|(i, t)| (format!("block.{i}"), t)).collect();
            let header = CheckpointHeader { epoch, ..CheckpointHeader::new::<f32>(ModelKind::Vae, 7, 9, seed, 0) };
            let back: Checkpoint<f32> = decode(&encode(&header, &blocks)).unwrap();
            prop_assert_eq!(back.header, header);
            prop_assert_eq!(back.blocks.len(), tensors.len());
            for ((name, t), (orig_name, orig)) in back.blocks.iter().zip(&blocks) {
                prop_assert_eq!(name, orig_name);
                prop_assert_eq!(t, *orig);
            }
        }
    }

    #[test]
    fn rejects_float_width_and_truncation() {
        let t = Tensor::<f32>::vector(vec![1.0, 2.0]);
        let header = CheckpointHeader::new::<f32>(ModelKind::Arrays, 0, 0, 1, 0);
        let bytes = encode(&header, &[("x".to_string(), &t)]);
        assert!(matches!(decode::<f64>(&bytes), Err(Error::CheckpointMismatch(_))));
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
    }

    #[test]
    fn header_is_little_endian_at_fixed_offsets() {
        let header = CheckpointHeader::new::<f32>(ModelKind::Vae, 100, 1024, 0x0102_0304_0506_0708, 60);
        let bytes = encode::<f32>(&header, &[]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &100u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1024u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &4u32.to_le_bytes());
        assert_eq!(&bytes[28..36], &0x0102_0304_0506_0708u64.to_le_bytes());
        assert_eq!(&bytes[36..40], &60u32.to_le_bytes());
        assert_eq!(bytes.len(), 44);
    }
}
