//! Flat binary parameter files.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   "GRACCKPT"            8 bytes
//! version u32                   = 1
//! count   u32
//! count × { name_len u32, name utf8, rank u32, dims u64 × rank }
//! payload f64 × Σ numel, tensors in table order
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRACCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path)?;
    let bad = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    if r.u32() != Some(VERSION) {
        return Err(bad("unsupported version"));
    }
    let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32().ok_or_else(|| bad("truncated table"))? as usize;
        let name = r.take(len).ok_or_else(|| bad("truncated name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not utf8"))?;
        let rank = r.u32().ok_or_else(|| bad("truncated table"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64().ok_or_else(|| bad("truncated dims"))? as usize);
        }
        table.push((name, dims));
    }
    let mut out = Vec::with_capacity(count);
    for (name, dims) in table {
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8).ok_or_else(|| bad("truncated payload"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(dims, data).map_err(|_| bad("invalid shape"))?));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ActorParams, Parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn actor_survives_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actor.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actor = ActorParams::new(3, 2, 8, 1.0, &mut rng);
        save_checkpoint(&path, &actor.named_tensors()).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut other = ActorParams::zeros(3, 2, 8, 1.0);
        other.load_named(&loaded).unwrap();
        assert_eq!(actor, other);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint { .. })));

        let t = Tensor::vector(vec![1.0, 2.0]);
        save_checkpoint(&path, &[("t".to_string(), &t)]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint { .. })));
    }
}
