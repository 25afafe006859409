//! Raw sample files: a 4-integer shape header (C, H, W, S as u32
//! little-endian) followed by the voxel data as 64-bit little-endian
//! floats in row-major (C, H, W, S) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array4;

use crate::error::{Error, Result};

pub fn write_array(path: &Path, data: &Array4<f64>) -> Result<()> {
    let (c, h, w, s) = data.dim();
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for dim in [c, h, w, s] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    let slice = data
        .as_slice()
        .ok_or_else(|| Error::shape("sample array is not contiguous".to_string()))?;
    for v in slice {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array4<f64>> {
    let file = File::open(path)?;
    let mut rd = BufReader::new(file);
    let mut head = [0u8; 16];
    rd.read_exact(&mut head)?;
    let dims: Vec<usize> = head
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let (c, h, w, s) = (dims[0], dims[1], dims[2], dims[3]);
    let n = c * h * w * s;
    let mut bytes = vec![0u8; n * 8];
    rd.read_exact(&mut bytes)?;
    let mut values = Vec::with_capacity(n);
    for b in bytes.chunks_exact(8) {
        values.push(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]));
    }
    Array4::from_shape_vec((c, h, w, s), values)
        .map_err(|e| Error::shape(format!("bad sample file shape: {e}")))
}

/// Read only the shape header of a raw sample file.
pub fn read_shape(path: &Path) -> Result<(usize, usize, usize, usize)> {
    let file = File::open(path)?;
    let mut rd = BufReader::new(file);
    let mut head = [0u8; 16];
    rd.read_exact(&mut head)?;
    let d: Vec<usize> = head
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    Ok((d[0], d[1], d[2], d[3]))
}
