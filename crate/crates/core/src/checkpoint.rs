//! Binary model checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "MTCA"  u32 version
//! u32 channels  u32 bottleneck  u32 classes
//! u32 encoder[0]  u32 encoder[1]  u32 local_hidden  u32 global_hidden
//! f64 elu_alpha
//! u32 × channels   per-channel input widths
//! f64 × P          parameter blocks in `MtcAeModel::block_layout` order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, MtcAeModel};
use crate::rng::seeded;

pub const MAGIC: &[u8; 4] = b"MTCA";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub channel_dims: Vec<usize>,
    pub arch: Architecture,
}

impl CheckpointHeader {
    pub fn channels(&self) -> usize {
        self.channel_dims.len()
    }
}

pub fn encode(model: &MtcAeModel) -> Vec<u8> {
    let arch = &model.arch;
    let dims = model.channel_dims();
    let mut out = Vec::with_capacity(48 + 4 * dims.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    let u32s = [
        VERSION,
        dims.len() as u32,
        arch.bottleneck as u32,
        arch.classes as u32,
        arch.encoder[0] as u32,
        arch.encoder[1] as u32,
        arch.local_hidden as u32,
        arch.global_hidden as u32,
    ];
    u32s.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out.extend_from_slice(&arch.elu_alpha.to_le_bytes());
    dims.iter()
        .for_each(|&d| out.extend_from_slice(&(d as u32).to_le_bytes()));
    for v in model.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes (not an MTCA checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let channels = r.u32("channel count")? as usize;
    let bottleneck = r.u32("bottleneck width")? as usize;
    let classes = r.u32("class count")? as usize;
    let e0 = r.u32("encoder width")? as usize;
    let e1 = r.u32("encoder width")? as usize;
    let local_hidden = r.u32("local hidden width")? as usize;
    let global_hidden = r.u32("global hidden width")? as usize;
    let elu_alpha = r.f64("elu alpha")?;
    if channels == 0 || channels > (r.bytes.len() - r.pos) / 4 {
        return Err(Error::Checkpoint(format!("implausible channel count {channels}")));
    }
    let channel_dims = (0..channels)
        .map(|_| r.u32("channel widths").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        encoder: [e0, e1],
        bottleneck,
        local_hidden,
        global_hidden,
        classes,
        elu_alpha,
    };
    arch.validate()
        .map_err(|e| Error::Checkpoint(format!("inconsistent header: {e}")))?;
    if channel_dims.contains(&0) {
        return Err(Error::Checkpoint("inconsistent header: zero-width channel".into()));
    }
    Ok(CheckpointHeader {
        version,
        channel_dims,
        arch,
    })
}

pub fn decode(bytes: &[u8]) -> Result<MtcAeModel> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    // parameter count from the shapes alone, before allocating anything
    let a = &header.arch;
    let layer = |i: usize, o: usize| i * o + o;
    let per_local = |d: usize| {
        layer(d, a.encoder[0])
            + layer(a.encoder[0], a.encoder[1])
            + layer(a.encoder[1], a.bottleneck)
            + layer(a.bottleneck, a.local_hidden)
            + layer(a.local_hidden, a.classes)
    };
    let expected: usize = header.channel_dims.iter().map(|&d| per_local(d)).sum::<usize>()
        + layer(header.channels() * a.bottleneck, a.global_hidden)
        + layer(a.global_hidden, a.classes);
    let remaining = bytes.len() - r.pos;
    if remaining != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "{} parameter bytes, header implies {}",
            remaining,
            expected * 8
        )));
    }
    let params: Vec<f64> = bytes[r.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    let mut model = MtcAeModel::random(&header.channel_dims, &header.arch, &mut seeded(0))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.set_flat(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &MtcAeModel, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(model))?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MtcAeModel> {
    decode(&fs::read(path)?)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    read_header(&mut Reader { bytes: &bytes, pos: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MtcAeModel {
        let arch = Architecture {
            encoder: [6, 5],
            bottleneck: 3,
            local_hidden: 4,
            global_hidden: 7,
            classes: 4,
            elu_alpha: 1.0,
        };
        MtcAeModel::random(&[2, 3, 1], &arch, &mut seeded(42)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = toy();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        let bits = |m: &MtcAeModel| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mtca");
        save_checkpoint(&toy(), &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), toy());
        let h = read_checkpoint_header(&p).unwrap();
        assert_eq!((h.channels(), h.arch.bottleneck, h.version), (3, 3, VERSION));
    }

    #[test]
    fn default_model_header_declares_38_by_30() {
        let m = MtcAeModel::random(&[2; 38], &Architecture::default(), &mut seeded(0)).unwrap();
        let bytes = encode(&m);
        let h = read_header(&mut Reader { bytes: &bytes, pos: 0 }).unwrap();
        assert_eq!((h.channels(), h.arch.bottleneck), (38, 30));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = encode(&toy());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).unwrap_err().to_string().contains("magic"));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(decode(&bad_version).unwrap_err().to_string().contains("version"));

        assert!(decode(&good[..good.len() - 3]).is_err());
        assert!(decode(&good[..10]).unwrap_err().to_string().contains("truncated"));

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0; 8]);
        assert!(decode(&trailing).is_err());

        let mut wrong_dim = good.clone();
        wrong_dim[44] = 9; // first channel width
        assert!(decode(&wrong_dim).is_err());
    }
}
