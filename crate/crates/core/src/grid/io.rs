//! Grid field persistence.
//!
//! CSV: one row per node, coordinate columns (`x` or `x,y`) then `value`, RFC-4180 with
//! `\n` line ends and shortest round-trip float formatting.
//!
//! Binary dump, all little-endian:
//!
//! | offset | type        | content                                 |
//! |--------|-------------|-----------------------------------------|
//! | 0      | `u64`       | space dimension `n`                     |
//! | 8      | `u64`       | nodes per axis                          |
//! | 16     | `f64` × len | values, row-major, last axis fastest    |

use std::io::{Read, Write};

use super::{GridField, Lattice};
use crate::{Error, Result};

pub fn write_csv(field: &GridField, mut out: impl Write) -> Result<()> {
    let lat = field.lattice;
    if lat.dim == 1 {
        writeln!(out, "x,value")?;
    } else {
        writeln!(out, "x,y,value")?;
    }
    for (k, v) in field.values.iter().enumerate() {
        let c = lat.coords(k);
        if lat.dim == 1 {
            writeln!(out, "{},{}", c[0], v)?;
        } else {
            writeln!(out, "{},{},{}", c[0], c[1], v)?;
        }
    }
    Ok(())
}

pub fn write_binary(field: &GridField, mut out: impl Write) -> Result<()> {
    out.write_all(&(field.lattice.dim as u64).to_le_bytes())?;
    out.write_all(&(field.lattice.nodes as u64).to_le_bytes())?;
    for v in &field.values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a binary dump. The spacing and boundary type are not stored, so the caller
/// supplies the lattice it expects; the header must agree with it.
pub fn read_binary(expected: Lattice, mut input: impl Read) -> Result<GridField> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let nodes = u64::from_le_bytes(word) as usize;
    if dim != expected.dim || nodes != expected.nodes {
        return Err(Error::InvalidArgument(format!(
            "binary header (n={dim}, nodes={nodes}) does not match the expected lattice (n={}, nodes={})",
            expected.dim, expected.nodes
        )));
    }
    let mut values = Vec::with_capacity(expected.count());
    for _ in 0..expected.count() {
        input.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    GridField::new(expected, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainGrid;

    #[test]
    fn csv_layout() {
        let f = DomainGrid::new(1, 4).unwrap().sample(|x| x[0] * 2.0);
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,value\n0,0\n0.25,0.5\n0.5,1\n0.75,1.5\n1,2\n");
    }

    #[test]
    fn binary_round_trip() {
        let f = DomainGrid::new(2, 5).unwrap().sample(|x| x[0] - 3.0 * x[1]);
        let mut buf = Vec::new();
        write_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 36);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        let back = read_binary(f.lattice, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
