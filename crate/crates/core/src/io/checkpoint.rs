//! Binary checkpoints: model config echo, epoch, RNG position, and every
//! parameter's values and momentum, bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{ModelConfig, PrNet};
use crate::scalar::{DType, Scalar};

const MAGIC: &[u8; 4] = b"PRCK";
const VERSION: u32 = 1;

/// Position of the training RNG, enough to reproduce the remaining schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }

    fn str16(&mut self, s: &str) -> Result<()> {
        let b = s.as_bytes();
        if b.len() > u16::MAX as usize {
            return Err(Error::Checkpoint {
                offset: self.buf.len() as u64,
                detail: format!("name too long: {} bytes", b.len()),
            });
        }
        self.bytes(&(b.len() as u16).to_le_bytes());
        self.bytes(b);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!(
                "unexpected end of file (want {n} bytes, {} left)",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("parameter name is not utf-8"))
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    net: &PrNet<T>,
    epoch: u32,
    rng: &RngState,
) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let cfg = serde_json::to_vec(&net.cfg).map_err(|e| Error::Checkpoint {
        offset: w.buf.len() as u64,
        detail: e.to_string(),
    })?;
    w.u32(cfg.len() as u32);
    w.bytes(&cfg);
    w.u32(epoch);
    w.u64(rng.seed);
    w.u128(rng.word_pos);
    let params = net.store().all();
    w.u32(params.len() as u32);
    for p in params {
        w.str16(&p.name())?;
        w.u8(T::DTYPE.tag());
        let dims = p.shape();
        w.u8(dims.len() as u8);
        for &d in &dims {
            w.u32(d as u32);
        }
        w.u8(u8::from(p.trainable()) | (u8::from(p.decay_exempt()) << 1));
        let mut data = Vec::with_capacity(p.numel() * T::DTYPE.size());
        for v in p.values() {
            v.to_le_bytes(&mut data);
        }
        w.bytes(&data);
        let mut mom = Vec::with_capacity(p.numel() * T::DTYPE.size());
        for v in p.momentum() {
            v.to_le_bytes(&mut mom);
        }
        w.bytes(&mom);
    }
    fs::write(path, w.buf)?;
    Ok(())
}

/// Read only the embedded model config (to construct a matching net).
pub fn peek_config(path: &Path) -> Result<ModelConfig> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader) -> Result<ModelConfig> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let n = r.u32()? as usize;
    let at = r.pos;
    let cfg = r.take(n)?;
    serde_json::from_slice(cfg).map_err(|e| Error::Checkpoint {
        offset: at as u64,
        detail: format!("config does not parse: {e}"),
    })
}

/// Restore parameters and momentum into `net`, which must have been built
/// from the same config the checkpoint embeds.
pub fn load_checkpoint<T: Scalar>(path: &Path, net: &PrNet<T>) -> Result<(u32, RngState)> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let cfg = read_header(&mut r)?;
    if cfg != net.cfg {
        return Err(Error::Checkpoint {
            offset: 8,
            detail: format!("config mismatch: checkpoint has {cfg:?}, net has {:?}", net.cfg),
        });
    }
    let epoch = r.u32()?;
    let rng = RngState {
        seed: r.u64()?,
        word_pos: r.u128()?,
    };
    let count = r.u32()? as usize;
    let params = net.store().all();
    if count != params.len() {
        return Err(r.err(format!("{count} parameters on disk, net has {}", params.len())));
    }
    for p in params {
        let name = r.str16()?;
        if name != p.name() {
            return Err(r.err(format!("parameter order mismatch: '{name}' vs '{}'", p.name())));
        }
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| r.err(format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(r.err(format!("'{name}' stored as {dtype:?}, net wants {:?}", T::DTYPE)));
        }
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        if dims != p.shape() {
            return Err(r.err(format!("'{name}' has dims {dims:?}, net wants {:?}", p.shape())));
        }
        let _flags = r.u8()?;
        let numel = p.numel();
        let raw = r.take(numel * T::DTYPE.size())?;
        p.set_values(&decode::<T>(raw));
        let raw = r.take(numel * T::DTYPE.size())?;
        p.set_momentum(&decode::<T>(raw));
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok((epoch, rng))
}

fn decode<T: Scalar>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(T::DTYPE.size()).map(T::from_le_slice).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("checkpoint_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            stage_channels: [4, 4, 8, 8, 8],
            unified: 8,
            variant: Variant::Fpn,
            ieo: false,
            input_size: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let path = tmp("rt.ck");
        let net = PrNet::<f32>::new(small_cfg()).unwrap();
        // give momentum a non-trivial value
        for p in net.store().all() {
            let m: Vec<f32> = (0..p.numel()).map(|i| i as f32 * 0.01).collect();
            p.set_momentum(&m);
        }
        let rng = RngState { seed: 7, word_pos: 1234567890123 };
        save_checkpoint(&path, &net, 13, &rng).unwrap();

        let cfg = peek_config(&path).unwrap();
        assert_eq!(cfg, net.cfg);
        let other = PrNet::<f32>::new(ModelConfig { seed: 99, ..small_cfg() }).unwrap();
        // seed is part of the echoed config; align it so the configs compare equal
        assert!(load_checkpoint(&path, &other).is_err());
        let other = PrNet::<f32>::new(small_cfg()).unwrap();
        for p in other.store().all() {
            p.set_values(&vec![0.0; p.numel()]);
        }
        let (epoch, r2) = load_checkpoint(&path, &other).unwrap();
        assert_eq!(epoch, 13);
        assert_eq!(r2, rng);
        for (a, b) in net.store().all().iter().zip(other.store().all()) {
            assert_eq!(a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(a.momentum(), b.momentum());
        }
    }

    #[test]
    fn truncation_reports_an_offset() {
        let path = tmp("trunc.ck");
        let net = PrNet::<f32>::new(small_cfg()).unwrap();
        save_checkpoint(&path, &net, 0, &RngState { seed: 0, word_pos: 0 }).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        let short = tmp("short.ck");
        std::fs::write(&short, bytes).unwrap();
        match load_checkpoint(&short, &net).unwrap_err() {
            Error::Checkpoint { offset, .. } => assert!(offset > 0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let path = tmp("magic.ck");
        std::fs::write(&path, b"NOPEnope").unwrap();
        match peek_config(&path).unwrap_err() {
            Error::Checkpoint { offset, detail } => {
                assert_eq!(offset, 0);
                assert!(detail.contains("magic"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn config_mismatch_is_descriptive() {
        let path = tmp("cfgmm.ck");
        let net = PrNet::<f32>::new(small_cfg()).unwrap();
        save_checkpoint(&path, &net, 0, &RngState { seed: 0, word_pos: 0 }).unwrap();
        let bigger = PrNet::<f32>::new(ModelConfig {
            unified: 16,
            ..small_cfg()
        })
        .unwrap();
        let msg = load_checkpoint(&path, &bigger).unwrap_err().to_string();
        assert!(msg.contains("config mismatch"), "{msg}");
    }
}
