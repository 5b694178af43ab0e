//! LATN binary trajectory files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "LATN" | version=1 | layers | heads | n | d | T
//! T * layers * heads * 3 matrices of n*d little-endian f32, row-major,
//! ordered by (t, layer, head, {Q, K, V})
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::operand::{AttentionOperand, Trajectory};

pub const MAGIC: &[u8; 4] = b"LATN";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 4 + 6 * 4;

/// Size in bytes of a file holding the given shape.
pub fn file_size(layers: usize, heads: usize, n: usize, d: usize, steps: usize) -> usize {
    HEADER_BYTES + steps * layers * heads * 3 * n * d * 4
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what}={x} does not fit in u32")))
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    w.write_all(MAGIC)?;
    for (x, what) in [
        (VERSION as usize, "version"),
        (traj.layers(), "layers"),
        (traj.heads(), "heads"),
        (traj.n(), "n"),
        (traj.d(), "d"),
        (traj.len(), "T"),
    ] {
        w.write_all(&to_u32(x, what)?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(traj.n() * traj.d() * 4);
    for step in traj.steps() {
        for op in step {
            for m in [op.q(), op.k(), op.v()] {
                buf.clear();
                buf.extend(m.as_slice().iter().flat_map(|x| x.to_le_bytes()));
                w.write_all(&buf)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_trajectory<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let layers = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let steps = read_u32(&mut r)? as usize;
    if layers == 0 || heads == 0 || n == 0 || d == 0 || steps == 0 {
        return Err(Error::Format(format!(
            "empty shape layers={layers} heads={heads} n={n} d={d} T={steps}"
        )));
    }

    let mut bytes = vec![0u8; n * d * 4];
    let mut read_matrix = |r: &mut R| -> Result<Matrix<f32>> {
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Matrix::from_vec(n, d, data)
    };
    let mut all = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut step = Vec::with_capacity(layers * heads);
        for _ in 0..layers * heads {
            let q = read_matrix(&mut r)?;
            let k = read_matrix(&mut r)?;
            let v = read_matrix(&mut r)?;
            step.push(AttentionOperand::new(q, k, v)?);
        }
        all.push(step);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after last matrix".into()));
    }
    Trajectory::new(layers, heads, all)
}

pub fn save(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), traj)
}

pub fn load(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory(BufReader::new(File::open(path)?))
}
