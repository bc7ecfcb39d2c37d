//! Binary parameter checkpoints.
//!
//! Layout: magic `VALNCKPT`, format version (u32 LE), parameter count
//! (u32 LE); then per parameter: name length (u32 LE), UTF-8 name, rank
//! (u32 LE), dimensions (u64 LE each), values (f64 LE, row-major). Writing
//! follows the parameter set's insertion order, so identical models produce
//! byte-identical files.

use super::params::ParamSet;
use super::Tensor;
use crate::error::{CoreError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VALNCKPT";
const VERSION: u32 = 1;

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| CoreError::io(path, e))?);
    let io = |e| CoreError::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes()).map_err(io)?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| CoreError::io(path, e))?);
    let bad = |msg: &str| CoreError::Data(format!("{}: {}", path.display(), msg));

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {}", version)));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, path)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| bad("parameter name is not valid UTF-8"))?;
        let rank = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, path)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, path)?;
            data.push(f64::from_le_bytes(b));
        }
        params.add(name, Tensor::new(shape, data));
    }
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| CoreError::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = std::env::temp_dir().join(format!("valign-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");

        let mut ps = ParamSet::new();
        ps.add("t", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-300, 2.5, -7.0]));
        ps.add("jump", Tensor::from_vec(vec![0.25, 0.75]));
        ps.add("scalar", Tensor::scalar(42.0));
        save(&ps, &path).unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for ((n0, t0), (n1, t1)) in ps.iter().zip(loaded.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0, t1);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_garbage() {
        let dir = std::env::temp_dir().join(format!("valign-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
