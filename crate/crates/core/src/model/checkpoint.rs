//! Binary checkpoint format.
//!
//! All integers are little-endian:
//!
//! ```text
//! "SSMX"  version:u32
//! config: patch_size, pca_dims, stem_filters, channels, hidden, blocks, classes (u32 each)
//!         flags:u8 (bit0 spectral, bit1 spatial, bit2 attention, bit3 relu mixer activation)
//!         init_seed:u64
//! total scalar count:u64   tensor count:u32
//! per tensor: name_len:u32 name:utf8 ndim:u32 dims:u32*ndim data:f32*numel
//! ```

use std::fs;
use std::path::Path;

use super::{MixerActivation, Model, ModelConfig, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSMX";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + model.num_params() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.patch_size, c.pca_dims, c.stem_filters, c.channels, c.hidden, c.blocks, c.classes] {
        put_u32(&mut out, v);
    }
    let flags = c.use_spectral as u8
        | (c.use_spatial as u8) << 1
        | (c.use_attention as u8) << 2
        | ((c.mixer_activation == MixerActivation::Relu) as u8) << 3;
    out.push(flags);
    out.extend_from_slice(&c.init_seed.to_le_bytes());
    out.extend_from_slice(&(model.num_params() as u64).to_le_bytes());
    put_u32(&mut out, model.params().len());
    for p in model.params() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.ndim());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing SSMX magic"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let flags = r.take(1)?[0];
    let config = ModelConfig {
        patch_size: dims[0],
        pca_dims: dims[1],
        stem_filters: dims[2],
        channels: dims[3],
        hidden: dims[4],
        blocks: dims[5],
        classes: dims[6],
        use_spectral: flags & 1 != 0,
        use_spatial: flags & 2 != 0,
        use_attention: flags & 4 != 0,
        mixer_activation: if flags & 8 != 0 {
            MixerActivation::Relu
        } else {
            MixerActivation::Gelu
        },
        init_seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| Error::format(path, format!("invalid config: {e}")))?;
    let total = r.u64()? as usize;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not utf-8"))?
            .to_string();
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.push(Param {
            name,
            value: Tensor::new(&shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::from_params(config, params).map_err(|e| Error::format(path, e.to_string()))?;
    if model.num_params() != total {
        return Err(Error::format(
            path,
            format!("header promises {total} parameters, file holds {}", model.num_params()),
        ));
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

impl Model<f32> {
    /// Replaces this model's weights with a checkpoint's; the configurations must match.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let loaded = load_checkpoint(path)?;
        if loaded.config() != self.config() {
            return Err(Error::format(
                path,
                format!(
                    "checkpoint configuration {:?} differs from the model's {:?}",
                    loaded.config(),
                    self.config()
                ),
            ));
        }
        *self = loaded;
        Ok(())
    }
}
