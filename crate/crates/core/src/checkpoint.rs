//! Binary checkpoints: model config (canonical text), every parameter tensor
//! (trainable weights and running-statistic buffers), and the training RNG
//! state. Saving the same state twice produces byte-identical files, so a
//! deterministic run can be verified by comparing checkpoints directly.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "dfa-ckpt-1\n"
//! u32  config_len   | canonical config text
//! u32  n_tensors
//! per tensor (name-sorted):
//!   u16 name_len | name | u8 dtype (0=f32, 1=f64) | u8 ndim | u32×ndim dims
//!   u64 byte_len | payload
//! [u8; 32] rng seed | u128 rng word position
//! ```
//!
//! Momentum buffers are deliberately not stored: a resumed run restarts its
//! optimizer state, matching how the training loop initializes.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{ModelConfig, Network};
use crate::params::ParamSet;
use crate::scalar::{Dtype, Scalar};

const MAGIC: &str = "dfa-ckpt-1\n";
const MAGIC_PREFIX: &str = "dfa-ckpt-";

fn dtype_tag(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

fn tag_dtype(t: u8, offset: usize) -> Result<Dtype> {
    match t {
        0 => Ok(Dtype::F32),
        1 => Ok(Dtype::F64),
        other => Err(Error::Format {
            offset: offset as u64,
            msg: format!("unknown dtype tag {other}"),
        }),
    }
}

/// Serializes config, parameters, buffers, and RNG state to `path`.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    cfg: &ModelConfig,
    pset: &ParamSet<S>,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    let cfg_text = cfg.canonical_text();
    out.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg_text.as_bytes());
    out.extend_from_slice(&(pset.len() as u32).to_le_bytes());
    for (name, entry) in pset.iter() {
        let shape = entry.value.shape();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype_tag(S::DTYPE));
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let byte_len = (entry.value.numel() * S::WIDTH) as u64;
        out.extend_from_slice(&byte_len.to_le_bytes());
        for &v in entry.value.data() {
            v.write_le(&mut out);
        }
    }
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Byte reader that reports the offset of whatever it failed to read.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated reading {what} ({n} bytes needed)"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("len checked")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("len checked")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("len checked")))
    }

    fn str(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let offset = self.pos as u64;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Format {
            offset,
            msg: format!("{what} is not UTF-8"),
        })
    }
}

fn check_magic(r: &mut Reader) -> Result<()> {
    let offset = r.pos as u64;
    let head = r.str(MAGIC.len(), "magic")?;
    if head == MAGIC {
        return Ok(());
    }
    let msg = if head.starts_with(MAGIC_PREFIX) {
        format!("unsupported version '{}'", head.trim_end())
    } else {
        "bad magic (not a checkpoint file)".to_string()
    };
    Err(Error::Format { offset, msg })
}

/// Reads only as far as the first tensor's dtype tag, letting a caller pick
/// the scalar type before a full [`load_checkpoint`].
pub fn checkpoint_dtype(path: &Path) -> Result<Dtype> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    check_magic(&mut r)?;
    let cfg_len = r.u32("config length")? as usize;
    r.take(cfg_len, "config text")?;
    let n = r.u32("tensor count")?;
    if n == 0 {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: "checkpoint holds no tensors".into(),
        });
    }
    let name_len = r.u16("tensor name length")? as usize;
    r.take(name_len, "tensor name")?;
    let offset = r.pos;
    let tag = r.take(1, "dtype tag")?[0];
    tag_dtype(tag, offset)
}

/// Loads a checkpoint: rebuilds the network skeleton from the stored config,
/// then overwrites every registered tensor with the stored values. The file
/// must cover the parameter set exactly — no missing, unknown, or mis-shaped
/// tensors — and carry the dtype matching `S`.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(ModelConfig, ParamSet<S>, ChaCha8Rng)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    check_magic(&mut r)?;

    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = r.str(cfg_len, "config text")?;
    let cfg = ModelConfig::parse_canonical(cfg_text)?;

    // The skeleton defines names, shapes, and trainability; stored values
    // replace the throwaway initialization draw.
    let net = Network::build(cfg.clone())?;
    let mut pset = ParamSet::<S>::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    net.register(&mut pset, &mut init_rng)?;

    let n_tensors = r.u32("tensor count")? as usize;
    if n_tensors != pset.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: format!(
                "checkpoint holds {n_tensors} tensors, model expects {}",
                pset.len()
            ),
        });
    }
    for _ in 0..n_tensors {
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.str(name_len, "tensor name")?.to_string();
        let tag_offset = r.pos;
        let tag = r.take(1, "dtype tag")?[0];
        let dtype = tag_dtype(tag, tag_offset)?;
        if dtype != S::DTYPE {
            return Err(Error::Format {
                offset: tag_offset as u64,
                msg: format!("tensor '{name}' is {dtype:?}, expected {:?}", S::DTYPE),
            });
        }
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let len_offset = r.pos;
        let byte_len = r.u64("payload length")? as usize;
        let payload = r.take(byte_len, "tensor payload")?;
        let entry = pset.entry_mut(&name).map_err(|_| Error::Format {
            offset: len_offset as u64,
            msg: format!("tensor '{name}' not part of this model"),
        })?;
        if entry.value.shape() != shape.as_slice() {
            return Err(Error::Format {
                offset: len_offset as u64,
                msg: format!(
                    "tensor '{name}' has shape {shape:?}, model expects {:?}",
                    entry.value.shape()
                ),
            });
        }
        if byte_len != entry.value.numel() * S::WIDTH {
            return Err(Error::Format {
                offset: len_offset as u64,
                msg: format!(
                    "tensor '{name}' payload is {byte_len} bytes, expected {}",
                    entry.value.numel() * S::WIDTH
                ),
            });
        }
        for (i, slot) in entry.value.data_mut().iter_mut().enumerate() {
            *slot = S::read_le(&payload[i * S::WIDTH..(i + 1) * S::WIDTH]);
        }
    }

    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("len checked");
    let word_pos = u128::from_le_bytes(r.take(16, "rng word position")?.try_into().expect("len checked"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);

    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok((cfg, pset, rng))
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;
    use crate::models::ModelConfig;

    fn tiny_state(seed: u64) -> (ModelConfig, ParamSet<f64>, ChaCha8Rng) {
        let cfg = ModelConfig {
            num_points: 16,
            k: 4,
            width_scale: 0.125,
            ..ModelConfig::classification(3)
        };
        let net = Network::build(cfg.clone()).unwrap();
        let mut pset = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.register(&mut pset, &mut rng).unwrap();
        (cfg, pset, rng)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (cfg, mut pset, mut rng) = tiny_state(42);
        // Touch a buffer so the round trip covers non-trainable state too.
        pset.entry_mut("embed.bn.run_mean").unwrap().value.data_mut()[0] = 0.75;
        rng.next_u64(); // advance the stream position past zero
        save_checkpoint(&path, &cfg, &pset, &rng).unwrap();

        let (cfg2, pset2, mut rng2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(pset2.len(), pset.len());
        for ((n1, e1), (n2, e2)) in pset.iter().zip(pset2.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(e1.value.data(), e2.value.data(), "tensor '{n1}'");
            assert_eq!(e1.trainable, e2.trainable, "tensor '{n1}'");
        }
        // The restored stream continues exactly where the original left off.
        for _ in 0..5 {
            assert_eq!(rng.next_u64(), rng2.next_u64());
        }
    }

    #[test]
    fn identical_state_saves_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, pset, rng) = tiny_state(7);
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&a, &cfg, &pset, &rng).unwrap();
        save_checkpoint(&b, &cfg, &pset, &rng).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn dtype_peek_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig {
            num_points: 16,
            k: 4,
            width_scale: 0.125,
            ..ModelConfig::classification(3)
        };
        let net = Network::build(cfg.clone()).unwrap();
        let mut pset = ParamSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        net.register(&mut pset, &mut rng).unwrap();
        save_checkpoint(&path, &cfg, &pset, &rng).unwrap();

        assert_eq!(checkpoint_dtype(&path).unwrap(), Dtype::F32);
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("F32"));
        assert!(load_checkpoint::<f32>(&path).is_ok());
    }

    #[test]
    fn malformed_files_fail_with_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");

        std::fs::write(&path, b"not a checkpoint at all....").unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));

        std::fs::write(&path, b"dfa-ckpt-2\n").unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));

        let (cfg, pset, rng) = tiny_state(3);
        save_checkpoint(&path, &cfg, &pset, &rng).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "truncation: {err}");
        assert!(err.to_string().contains("truncated"));

        let mut padded = full.clone();
        padded.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &padded).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }
}
