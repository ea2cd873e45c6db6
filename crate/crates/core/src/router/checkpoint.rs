//! Little-endian binary checkpoints for [`RouterParams`].
//!
//! Layout (see `docs/checkpoint-format.md`):
//!
//! ```text
//! magic      4 bytes  b"MXRT"
//! version    u32
//! config     embed_dim, num_layers, num_heads, ffn_dim, num_precisions, max_len: u32 each
//!            dropout: f64
//! tensors    u32 count, then per tensor: rows u32, cols u32, rows*cols f64 values
//! ```
//!
//! Only parameter values are stored; gradients and optimizer moments are not.

use std::fs;
use std::path::Path;

use super::{RouterConfig, RouterError, RouterParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MXRT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn params_to_bytes(params: &RouterParams) -> Vec<u8> {
    let cfg = params.config();
    let mut buf = Vec::with_capacity(64 + params.num_parameters() * 8);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.embed_dim,
        cfg.num_layers,
        cfg.num_heads,
        cfg.ffn_dim,
        cfg.num_precisions,
        cfg.max_len,
    ] {
        push_u32(&mut buf, v);
    }
    buf.extend_from_slice(&cfg.dropout.to_le_bytes());
    let tensors = params.tensors();
    push_u32(&mut buf, tensors.len());
    for t in tensors {
        let (r, c) = t.shape();
        push_u32(&mut buf, r);
        push_u32(&mut buf, c);
        for v in t.value.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RouterError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(RouterError::CorruptCheckpoint(format!(
                "unexpected end of file at byte {} (need {n} more)",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32, RouterError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, RouterError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint and checks it against `expected`.
pub fn params_from_bytes(bytes: &[u8], expected: &RouterConfig) -> Result<RouterParams, RouterError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(RouterError::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(RouterError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let found = RouterConfig {
        embed_dim: dims[0],
        num_layers: dims[1],
        num_heads: dims[2],
        ffn_dim: dims[3],
        num_precisions: dims[4],
        max_len: dims[5],
        dropout: r.f64()?,
    };
    if found != *expected {
        return Err(RouterError::ConfigMismatch {
            found: Box::new(found),
            expected: Box::new(*expected),
        });
    }
    let mut params = RouterParams::new(found, 0)?;
    let count = r.u32()? as usize;
    let n_tensors = params.tensors().len();
    if count != n_tensors {
        return Err(RouterError::CorruptCheckpoint(format!(
            "{count} tensors stored, config implies {n_tensors}"
        )));
    }
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != t.shape() {
            return Err(RouterError::CorruptCheckpoint(format!(
                "tensor {i} stored as {rows}x{cols}, expected {}x{}",
                t.shape().0,
                t.shape().1
            )));
        }
        for v in t.value.as_mut_slice() {
            *v = r.f64()?;
        }
        t.zero_grad();
    }
    if r.pos != bytes.len() {
        return Err(RouterError::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(params.snapshot())
}

pub fn save_params(params: &RouterParams, path: impl AsRef<Path>) -> Result<(), RouterError> {
    fs::write(path, params_to_bytes(params))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>, config: &RouterConfig) -> Result<RouterParams, RouterError> {
    let bytes = fs::read(path)?;
    params_from_bytes(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::{route, RouteMode, StepSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> RouterConfig {
        RouterConfig {
            embed_dim: 8,
            num_heads: 2,
            ffn_dim: 12,
            max_len: 4,
            ..RouterConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        let params = RouterParams::new(cfg(), 77).unwrap();
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path, &cfg()).unwrap();
        assert_eq!(params.flat_values(), loaded.flat_values());
        let seq = StepSequence::from_steps(&[vec![0.1; 8], vec![-0.3; 8]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = route(&seq, &params, RouteMode::Greedy, &mut rng).unwrap();
        let b = route(&seq, &loaded, RouteMode::Greedy, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_mismatch_is_distinct() {
        let three = RouterConfig {
            num_precisions: 3,
            ..cfg()
        };
        let bytes = params_to_bytes(&RouterParams::new(three, 1).unwrap());
        assert!(matches!(
            params_from_bytes(&bytes, &cfg()),
            Err(RouterError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = params_to_bytes(&RouterParams::new(cfg(), 1).unwrap());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    params_from_bytes(&bytes[..cut], &cfg()),
                    Err(RouterError::CorruptCheckpoint(_))
                ),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            params_from_bytes(&extra, &cfg()),
            Err(RouterError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let mut bytes = params_to_bytes(&RouterParams::new(cfg(), 1).unwrap());
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            params_from_bytes(&bytes, &cfg()),
            Err(RouterError::VersionMismatch { found: 99, .. })
        ));
    }
}
