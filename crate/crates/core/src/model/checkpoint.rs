//! Checkpoint file, little-endian throughout:
//!
//! ```text
//! b"YBEV1"
//! u64 n, n bytes       model config as JSON
//! u32 count            then per tensor: u32 len, name bytes, YBEVT tensor
//! u8 has_optimizer     if 1: u64 t, f64 lr, beta1, beta2, epsilon,
//!                      then m and v tensors per parameter
//! u64 step             completed training steps
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{read_tensor, write_tensor, Tensor};
use crate::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"YBEV1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub step: u64,
}

fn put(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(bytes);
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    put(&mut buf, CHECKPOINT_MAGIC);
    let cfg = serde_json::to_vec(&ck.model.config).expect("config serializes");
    put(&mut buf, &(cfg.len() as u64).to_le_bytes());
    put(&mut buf, &cfg);
    let params = ck.model.params();
    put(&mut buf, &(params.len() as u32).to_le_bytes());
    for (name, t) in ck.model.names().iter().zip(params) {
        put(&mut buf, &(name.len() as u32).to_le_bytes());
        put(&mut buf, name.as_bytes());
        write_tensor(&mut buf, t)?;
    }
    match &ck.optimizer {
        None => buf.push(0),
        Some(s) => {
            buf.push(1);
            put(&mut buf, &s.t.to_le_bytes());
            for x in [s.lr, s.beta1, s.beta2, s.epsilon] {
                put(&mut buf, &x.to_le_bytes());
            }
            for (i, p) in params.iter().enumerate() {
                write_tensor(&mut buf, &Tensor::new(p.shape(), s.m[i].clone())?)?;
                write_tensor(&mut buf, &Tensor::new(p.shape(), s.v[i].clone())?)?;
            }
        }
    }
    put(&mut buf, &ck.step.to_le_bytes());
    Ok(buf)
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
    Ok(b)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    if &take::<5>(&mut r, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a YBEV1 checkpoint".into()));
    }
    let n = u64::from_le_bytes(take(&mut r, "config length")?) as usize;
    if n > bytes.len() {
        return Err(Error::Checkpoint("truncated while reading config".into()));
    }
    let mut cfg = vec![0u8; n];
    r.read_exact(&mut cfg)
        .map_err(|_| Error::Checkpoint("truncated while reading config".into()))?;
    let config: ModelConfig = serde_json::from_slice(&cfg)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    let count = u32::from_le_bytes(take(&mut r, "tensor count")?) as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let len = u32::from_le_bytes(take(&mut r, "tensor name")?) as usize;
        if len > 256 {
            return Err(Error::Checkpoint(format!("tensor {i}: name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated while reading tensor name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?;
        named.push((name, read_tensor(&mut r)?));
    }
    let model = Model::from_parts(config, named)?;
    let optimizer = match take::<1>(&mut r, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let t = u64::from_le_bytes(take(&mut r, "optimizer step")?);
            let mut f = [0.0; 4];
            for x in &mut f {
                *x = f64::from_le_bytes(take(&mut r, "optimizer hyperparameters")?);
            }
            let mut s = AdamState::for_params(f[0], model.params());
            s.t = t;
            (s.beta1, s.beta2, s.epsilon) = (f[1], f[2], f[3]);
            for (i, p) in model.params().iter().enumerate() {
                for buf in [&mut s.m[i], &mut s.v[i]] {
                    let t = read_tensor(&mut r)?;
                    if t.shape() != p.shape() {
                        return Err(Error::Checkpoint(format!(
                            "optimizer moment {i} has shape {:?}, parameter {:?}",
                            t.shape(),
                            p.shape()
                        )));
                    }
                    *buf = t.data().to_vec();
                }
            }
            Some(s)
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    let step = u64::from_le_bytes(take(&mut r, "step")?);
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        step,
    })
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, HeadConfig, StageConfig};

    fn small() -> Model {
        Model::new(ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 2,
                stages: vec![StageConfig {
                    channels: 3,
                    stride: 2,
                    depth: 1,
                }],
            },
            head: HeadConfig {
                n_l: 1,
                ch: vec![3],
                mid_channels: 2,
                out_channels: 4,
            },
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_with_optimizer() {
        let model = small();
        let mut opt = AdamState::for_params(0.01, model.params());
        opt.t = 7;
        opt.m[0][1] = 0.25;
        opt.v[3][0] = 1e-9;
        let ck = Checkpoint {
            model,
            optimizer: Some(opt),
            step: 7,
        };
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn every_truncation_fails() {
        let ck = Checkpoint {
            model: small(),
            optimizer: Some(AdamState::for_params(0.1, small().params())),
            step: 1,
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        for cut in (0..bytes.len()).step_by(37) {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ck = Checkpoint {
            model: small(),
            optimizer: None,
            step: 0,
        };
        let mut bytes = encode_checkpoint(&ck).unwrap();
        // mid_channels 2 -> 3 in the JSON block; tensor shapes no longer fit
        let pos = bytes
            .windows(16)
            .position(|w| w == b"\"mid_channels\":2")
            .unwrap();
        bytes[pos + 15] = b'3';
        let err = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(err.contains("config expects"), "{err}");
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
