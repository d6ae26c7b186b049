//! The LMPT1 on-disk tensor format.
//!
//! Layout: 8-byte magic `LMPTENS1`, a little-endian u32 rank, `rank`
//! little-endian u32 dims, then the elements as little-endian f32 in
//! row-major order. Computation stays f64; only this format is 32-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use lmpkit_core::Tensor;

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"LMPTENS1";
const MAX_RANK: u32 = 8;

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CliError::io(&format!("writing {}", path.display()), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for &dim in t.shape() {
        w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_tensor(path: &Path) -> Result<Tensor, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| CliError::Io {
        message: format!("{}: {msg}", path.display()),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    if &magic != MAGIC {
        return Err(bad("not an LMPT1 tensor (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    let rank = u32::from_le_bytes(word);
    if rank > MAX_RANK {
        return Err(bad(&format!("rank {rank} exceeds the supported maximum")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        r.read_exact(&mut word)
            .map_err(|e| CliError::io(&path.display().to_string(), e))?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        r.read_exact(&mut word)
            .map_err(|_| bad("truncated tensor data"))?;
        data.push(f64::from(f32::from_le_bytes(word)));
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer).map_err(|e| CliError::io(&path.display().to_string(), e))? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Tensor::from_vec(&shape, data).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_shape_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lmpt");
        let t = Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 42.0, -0.125]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lmpt");
        let t = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"LMPTENS1");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.lmpt");
        std::fs::write(&bad, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
        assert!(read_tensor(&bad).is_err());

        let trunc = dir.path().join("trunc.lmpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // only 1 of 4 values
        std::fs::write(&trunc, bytes).unwrap();
        assert!(read_tensor(&trunc).is_err());
    }
}
