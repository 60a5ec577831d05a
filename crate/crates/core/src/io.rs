//! Binary tensor dump format used by fixtures and checkpoints.
//!
//! Layout, all little-endian: rank as u32, each dim as u32, then the raw
//! f64 data in row-major order.

use std::io::{self, Read, Write};

pub fn write_tensor(w: &mut impl Write, shape: &[usize], data: &[f64]) -> io::Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("shape {shape:?} does not match {} data elements", data.len()),
        ));
    }
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        let d32 = u32::try_from(d).map_err(|_| {
            io::Error::new(io::ErrorKind::InvalidInput, format!("dimension {d} exceeds u32"))
        })?;
        w.write_all(&d32.to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> io::Result<(Vec<usize>, Vec<f64>)> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 16 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("implausible tensor rank {rank}"),
        ));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut f64buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    Ok((shape, data))
}
