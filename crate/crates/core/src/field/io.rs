//! Binary and CSV serialization of scalar fields.
//!
//! Binary layout (little-endian): the 6-byte magic `SWOMT1`, `u32` rank,
//! `u32` cell count per axis, then `f64` origin and `f64` extent for each axis
//! (interleaved per axis), followed by the row-major `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FieldError, GridSpec, ScalarField, MAX_RANK};

pub const MAGIC: &[u8; 6] = b"SWOMT1";

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let rank = grid.rank();
    let mut out = Vec::with_capacity(6 + 4 * (1 + rank) + 16 * rank + 8 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rank as u32).to_le_bytes());
    for &d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for axis in 0..rank {
        out.extend_from_slice(&grid.origin()[axis].to_le_bytes());
        out.extend_from_slice(&grid.extent()[axis].to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        if self.pos + n > self.bytes.len() {
            return Err(FieldError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FieldError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField, FieldError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(FieldError::Format(format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let mut origin = Vec::with_capacity(rank);
    let mut extent = Vec::with_capacity(rank);
    for _ in 0..rank {
        origin.push(r.f64()?);
        extent.push(r.f64()?);
    }
    let grid = GridSpec::new(dims, origin, extent)?;
    let n = grid.len();
    if bytes.len() - r.pos != 8 * n {
        return Err(FieldError::Format(format!(
            "expected {} value bytes, found {}",
            8 * n,
            bytes.len() - r.pos
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f64()?);
    }
    ScalarField::new(grid, values)
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<(), FieldError> {
    fs::write(path, encode(field))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField, FieldError> {
    decode(&fs::read(path)?)
}

/// One row per cell: center coordinates followed by the value.
pub fn write_csv(path: &Path, field: &ScalarField) -> Result<(), FieldError> {
    let grid = field.grid();
    let rank = grid.rank();
    let mut out = String::new();
    let axes = ["x", "y", "z"];
    out.push_str(&axes[..rank].join(","));
    out.push_str(",value\n");
    for (i, v) in field.values().iter().enumerate() {
        let c = grid.center(i);
        for x in &c[..rank] {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{v}\n"));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
