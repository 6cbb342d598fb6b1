//! Versioned binary checkpoints: header, flat parameters, config echo.

use super::net::{DenoiserNet, NetConfig};
use crate::error::{Error, Result};
use crate::process::PredictionKind;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"DIFFLOSS";
pub const VERSION: u32 = 1;

fn kind_code(k: PredictionKind) -> u8 {
    PredictionKind::ALL.iter().position(|x| *x == k).unwrap() as u8
}

/// Serializes the network and a free-form config echo.
pub fn to_bytes(net: &DenoiserNet, echo: &str) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.dim, cfg.embed_dim, cfg.hidden.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for h in &cfg.hidden {
        out.extend_from_slice(&(*h as u32).to_le_bytes());
    }
    out.push(kind_code(cfg.kind));
    out.push(cfg.zero_final as u8);
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Io("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Parses [`to_bytes`] output.
pub fn from_bytes(bytes: &[u8]) -> Result<(DenoiserNet, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Io("not a checkpoint file".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Io(format!("unsupported checkpoint version {version}")));
    }
    let (dim, embed_dim, layers) = (r.u32()?, r.u32()?, r.u32()?);
    let hidden = (0..layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let kind = *PredictionKind::ALL.get(r.u8()? as usize).ok_or_else(|| Error::Io("bad prediction kind".into()))?;
    let zero_final = r.u8()? != 0;
    let count = r.u64()?;
    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Io("bad parameter count".into()))?)?;
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let len = r.u64()?;
    let echo = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Io(e.to_string()))?;
    let net = DenoiserNet::from_params(NetConfig { dim, embed_dim, hidden, kind, zero_final }, params)?;
    Ok((net, echo))
}

pub fn write_checkpoint(path: &Path, net: &DenoiserNet, echo: &str) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(net, echo))?)
}

pub fn read_checkpoint(path: &Path) -> Result<(DenoiserNet, String)> {
    from_bytes(&std::fs::read(path)?)
}
