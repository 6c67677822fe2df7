//! Flat binary container for network parameters.
//!
//! Layout (little endian): 8-byte magic, `u32` version, 4-byte section tag,
//! `u32` metadata count followed by that many `f64`, `u32` network count, a
//! layer table (`u32` layer count, then per layer `u32` inputs, `u32`
//! outputs, `u8` activation tag), and finally every parameter as `f64` in
//! network order, each layer row-major weights then bias.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, MlpNetwork};

pub const MAGIC: &[u8; 8] = b"DHLABCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionTag {
    Model,
    Flow,
}

impl SectionTag {
    fn bytes(self) -> &'static [u8; 4] {
        match self {
            SectionTag::Model => b"MODL",
            SectionTag::Flow => b"FLOW",
        }
    }

    fn parse(raw: &[u8]) -> Result<Self> {
        match raw {
            b"MODL" => Ok(SectionTag::Model),
            b"FLOW" => Ok(SectionTag::Flow),
            other => Err(Error::Format(format!("unknown section tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tag: SectionTag,
    pub meta: Vec<f64>,
    pub networks: Vec<MlpNetwork>,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let out = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(self.tag.bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for m in &self.meta {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for net in &self.networks {
            out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
            for l in net.layers() {
                out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
                out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
                out.push(l.activation.tag());
            }
        }
        let mut params = Vec::new();
        for net in &self.networks {
            net.write_params(&mut params);
        }
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let tag = SectionTag::parse(r.take(4)?)?;
        let n_meta = r.u32()? as usize;
        let meta = (0..n_meta).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_nets = r.u32()? as usize;
        let mut networks = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let n_layers = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let act = Activation::from_tag(r.take(1)?[0])?;
                layers.push(Dense::zeros(inputs, outputs, act));
            }
            networks.push(MlpNetwork::new(layers)?);
        }
        for net in &mut networks {
            let n = net.param_count();
            let vals = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            net.read_params(&vals)?;
        }
        if r.at != buf.len() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok(Self { tag, meta, networks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_tag(self, tag: SectionTag) -> Result<Self> {
        if self.tag == tag {
            Ok(self)
        } else {
            Err(Error::Format(format!("expected {tag:?} section, found {:?}", self.tag)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = MlpNetwork::random(&[2, 3, 1], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let b = MlpNetwork::random(&[4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let ckpt = Checkpoint {
            tag: SectionTag::Flow,
            meta: vec![2.0, -0.0, f64::MIN_POSITIVE],
            networks: vec![a, b],
        };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_corruption() {
        let net = MlpNetwork::new(vec![Dense::zeros(1, 1, Activation::Identity)]).unwrap();
        let bytes = Checkpoint {
            tag: SectionTag::Model,
            meta: vec![],
            networks: vec![net],
        }
        .to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let ok = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(ok.expect_tag(SectionTag::Flow).is_err());
    }
}
