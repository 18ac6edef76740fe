//! Checkpoint container.
//!
//! ```text
//! magic    8 bytes  "WDCKPT\0\0"
//! version  u32 LE
//! hlen     u32 LE
//! header   hlen bytes of JSON (CheckpointHeader)
//! params   f64 LE, every parameter in header order
//! adam     f64 LE m buffers then v buffers, if header.adam is present
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::net::UNetConfig;
use crate::schedule::ScheduleSpec;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"WDCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub unet: UNetConfig,
    pub schedule: ScheduleSpec,
    pub diffusion: DiffusionConfig,
    pub epoch: usize,
    pub params: Vec<ParamMeta>,
    pub adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Data("checkpoint size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    /// Fills in the parameter table and optimizer metadata from the live
    /// state; the other header fields are taken as given.
    pub fn new(mut header: CheckpointHeader, params: ParamStore, adam: Option<AdamState>) -> Self {
        header.params = params
            .iter()
            .map(|(n, t)| ParamMeta {
                name: n.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect();
        header.adam = adam.as_ref().map(|a| AdamMeta {
            config: a.config,
            step: a.step,
        });
        Self {
            header,
            params,
            adam,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + self.params.numel() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            put_f64s(&mut out, t.data());
        }
        if let Some(a) = &self.adam {
            for m in &a.m {
                put_f64s(&mut out, m);
            }
            for v in &a.v {
                put_f64s(&mut out, v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        let mut params = ParamStore::new();
        for p in &header.params {
            let n = p.shape.iter().product();
            params.push(p.name.clone(), Tensor::new(&p.shape, r.f64s(n)?)?)?;
        }
        let adam = match header.adam {
            None => None,
            Some(meta) => {
                let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
                let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<_>>()?;
                let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<_>>()?;
                Some(AdamState {
                    config: meta.config,
                    step: meta.step,
                    m,
                    v,
                })
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            header,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_gaussian;

    fn sample() -> Checkpoint {
        let mut p = ParamStore::new();
        p.push("a.w", seeded_gaussian(&[2, 3], 1)).unwrap();
        p.push("a.b", seeded_gaussian(&[3], 2)).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step = 4;
        adam.m[0][1] = 0.25;
        adam.v[1][2] = 1e-9;
        let header = CheckpointHeader {
            config_hash: "abc".into(),
            config: BTreeMap::from([("seed".into(), "3".into())]),
            unet: UNetConfig::toy(),
            schedule: ScheduleSpec::default(),
            diffusion: DiffusionConfig::default(),
            epoch: 2,
            params: vec![],
            adam: None,
        };
        Checkpoint::new(header, p, Some(adam))
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
