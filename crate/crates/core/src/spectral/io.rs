//! Binary field dumps.
//!
//! Layout: magic "CIEF1", rank u8 (0 scalar, 1 vector, 2 symmetric tensor),
//! N u32 little-endian, layout flag u8 (0 physical real, 1 spectral complex
//! interleaved re/im), then the f64 payload in C order, component-major.

use super::{PeriodicGrid, SpectralField, SpectralScalar, SpectralTensorField};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 5] = b"CIEF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Physical,
    Spectral,
}

fn rank_components(rank: u8) -> Result<usize> {
    match rank {
        0 => Ok(1),
        1 => Ok(3),
        2 => Ok(6),
        _ => Err(Error::spectral(format!("bad dump rank {rank}"))),
    }
}

fn write_header(w: &mut impl Write, rank: u8, n: u32, layout: Layout) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[rank])?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&[match layout {
        Layout::Physical => 0u8,
        Layout::Spectral => 1u8,
    }])?;
    Ok(())
}

fn write_spectral(w: &mut impl Write, hat: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(hat.len() * 16);
    for c in hat {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_physical(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_scalar(w: &mut impl Write, f: &SpectralScalar, layout: Layout) -> Result<()> {
    write_header(w, 0, f.grid.n as u32, layout)?;
    match layout {
        Layout::Spectral => write_spectral(w, &f.hat),
        Layout::Physical => write_physical(w, &f.to_physical()),
    }
}

pub fn write_vector(w: &mut impl Write, f: &SpectralField, layout: Layout) -> Result<()> {
    write_header(w, 1, f.grid.n as u32, layout)?;
    match layout {
        Layout::Spectral => {
            for c in 0..3 {
                write_spectral(w, &f.hat[c])?;
            }
            Ok(())
        }
        Layout::Physical => {
            for comp in f.to_physical() {
                write_physical(w, &comp)?;
            }
            Ok(())
        }
    }
}

pub fn write_tensor(w: &mut impl Write, f: &SpectralTensorField, layout: Layout) -> Result<()> {
    write_header(w, 2, f.grid.n as u32, layout)?;
    match layout {
        Layout::Spectral => {
            for c in 0..6 {
                write_spectral(w, &f.hat[c])?;
            }
            Ok(())
        }
        Layout::Physical => {
            for comp in f.to_physical() {
                write_physical(w, &comp)?;
            }
            Ok(())
        }
    }
}

pub struct DumpHeader {
    pub rank: u8,
    pub n: u32,
    pub layout: Layout,
}

pub fn read_header(r: &mut impl Read) -> Result<DumpHeader> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::spectral("bad magic in field dump"));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut nb = [0u8; 4];
    r.read_exact(&mut nb)?;
    let mut layout = [0u8; 1];
    r.read_exact(&mut layout)?;
    let layout = match layout[0] {
        0 => Layout::Physical,
        1 => Layout::Spectral,
        x => return Err(Error::spectral(format!("bad layout flag {x}"))),
    };
    Ok(DumpHeader {
        rank: rank[0],
        n: u32::from_le_bytes(nb),
        layout,
    })
}

fn read_component(
    r: &mut impl Read,
    grid: PeriodicGrid,
    layout: Layout,
) -> Result<Vec<Complex64>> {
    let len = grid.len();
    match layout {
        Layout::Spectral => {
            let mut buf = vec![0u8; len * 16];
            r.read_exact(&mut buf)?;
            Ok((0..len)
                .map(|i| {
                    let re = f64::from_le_bytes(buf[i * 16..i * 16 + 8].try_into().unwrap());
                    let im = f64::from_le_bytes(buf[i * 16 + 8..i * 16 + 16].try_into().unwrap());
                    Complex64::new(re, im)
                })
                .collect())
        }
        Layout::Physical => {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            let phys: Vec<f64> = (0..len)
                .map(|i| f64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().unwrap()))
                .collect();
            Ok(SpectralScalar::from_physical(grid, &phys).hat)
        }
    }
}

pub fn read_vector(r: &mut impl Read) -> Result<SpectralField> {
    let h = read_header(r)?;
    if rank_components(h.rank)? != 3 {
        return Err(Error::spectral("dump is not a vector field"));
    }
    let grid = PeriodicGrid::new(h.n as usize)?;
    let c0 = read_component(r, grid, h.layout)?;
    let c1 = read_component(r, grid, h.layout)?;
    let c2 = read_component(r, grid, h.layout)?;
    Ok(SpectralField {
        grid,
        hat: [c0, c1, c2],
        divergence_free: false,
        mean_zero: false,
    })
}

pub fn read_tensor(r: &mut impl Read) -> Result<SpectralTensorField> {
    let h = read_header(r)?;
    if rank_components(h.rank)? != 6 {
        return Err(Error::spectral("dump is not a tensor field"));
    }
    let grid = PeriodicGrid::new(h.n as usize)?;
    let hat = [
        read_component(r, grid, h.layout)?,
        read_component(r, grid, h.layout)?,
        read_component(r, grid, h.layout)?,
        read_component(r, grid, h.layout)?,
        read_component(r, grid, h.layout)?,
        read_component(r, grid, h.layout)?,
    ];
    Ok(SpectralTensorField {
        grid,
        hat,
        traceless: false,
    })
}

pub fn read_scalar(r: &mut impl Read) -> Result<SpectralScalar> {
    let h = read_header(r)?;
    if rank_components(h.rank)? != 1 {
        return Err(Error::spectral("dump is not a scalar field"));
    }
    let grid = PeriodicGrid::new(h.n as usize)?;
    let hat = read_component(r, grid, h.layout)?;
    Ok(SpectralScalar { grid, hat })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_roundtrip_both_layouts() {
        let grid = PeriodicGrid::new(8).unwrap();
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for ix in 0..grid.n {
            for iy in 0..grid.n {
                for iz in 0..grid.n {
                    comps[0][grid.idx(ix, iy, iz)] = grid.coord(ix).sin();
                    comps[1][grid.idx(ix, iy, iz)] = grid.coord(iy).cos();
                }
            }
        }
        let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
        let f = SpectralField::from_physical(grid, refs);
        for layout in [Layout::Spectral, Layout::Physical] {
            let mut buf = Vec::new();
            write_vector(&mut buf, &f, layout).unwrap();
            let g = read_vector(&mut buf.as_slice()).unwrap();
            for d in 0..3 {
                let err = f.hat[d]
                    .iter()
                    .zip(g.hat[d].iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(err < 1e-13, "layout {layout:?}: {err}");
            }
        }
    }
}
