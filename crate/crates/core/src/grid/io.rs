//! The `.grid` binary container, little-endian.
//!
//! Version 1 (float grids):
//! magic "NFMG" | u32 version=1 | u32 H | u32 W | u32 D | u32 channels |
//! f64 min xyz | f64 max xyz | f64 delta | H*W*D*channels f32 values,
//! ordered `[i][j][k][c]` with `c` fastest and `i` slowest.
//!
//! Version 2 (integer label grids) inserts a u8 channel-type flag after
//! `channels` (0 = f32, 1 = u16) and stores u16 payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelGrid, RadianceDensityGrid, SceneBounds};

const MAGIC: &[u8; 4] = b"NFMG";

fn write_header<W: Write>(
    w: &mut W,
    version: u32,
    spec: &GridSpec,
    channels: u32,
    channel_type: Option<u8>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&version.to_le_bytes())?;
    for &r in &spec.resolution {
        w.write_all(&(r as u32).to_le_bytes())?;
    }
    w.write_all(&channels.to_le_bytes())?;
    if let Some(t) = channel_type {
        w.write_all(&[t])?;
    }
    for &v in &spec.bounds.min {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in &spec.bounds.max {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&spec.delta.to_le_bytes())?;
    Ok(())
}

pub fn write_grid(grid: &RadianceDensityGrid, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 1, &grid.spec, 4, None)?;
    for &v in &grid.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_label_grid(grid: &LabelGrid, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 2, &grid.spec, 1, Some(1))?;
    for &v in &grid.labels {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Header {
    version: u32,
    resolution: [usize; 3],
    channels: u32,
    channel_type: u8,
    bounds: SceneBounds,
    delta: f64,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], field: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated while reading {field}")))
}

fn read_u32(r: &mut impl Read, field: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, field)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, field: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    Ok(f64::from_le_bytes(b))
}

fn read_header(r: &mut impl Read, expect_version: u32) -> Result<Header> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let version = read_u32(r, "version")?;
    if version != expect_version {
        return Err(Error::Format(format!(
            "version {version} unsupported, expected {expect_version}"
        )));
    }
    let h = read_u32(r, "H")? as usize;
    let w = read_u32(r, "W")? as usize;
    let d = read_u32(r, "D")? as usize;
    let channels = read_u32(r, "channels")?;
    let channel_type = if version >= 2 {
        let mut b = [0u8; 1];
        read_exact(r, &mut b, "channel_type")?;
        b[0]
    } else {
        0
    };
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for (a, v) in min.iter_mut().enumerate() {
        *v = read_f64(r, &format!("bounds.min[{a}]"))?;
    }
    for (a, v) in max.iter_mut().enumerate() {
        *v = read_f64(r, &format!("bounds.max[{a}]"))?;
    }
    let delta = read_f64(r, "delta")?;
    Ok(Header {
        version,
        resolution: [h, w, d],
        channels,
        channel_type,
        bounds: SceneBounds { min, max },
        delta,
    })
}

pub fn read_grid(path: &Path) -> Result<RadianceDensityGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r, 1)?;
    if header.channels != 4 {
        return Err(Error::Format(format!(
            "radiance grid expects 4 channels, header says {}",
            header.channels
        )));
    }
    let spec = GridSpec {
        resolution: header.resolution,
        bounds: header.bounds,
        delta: header.delta,
    };
    let count = spec.voxel_count() * 4;
    let mut values = vec![0.0f32; count];
    let mut buf = [0u8; 4];
    for (i, v) in values.iter_mut().enumerate() {
        r.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("payload truncated at value {i} of {count}"))
        })?;
        *v = f32::from_le_bytes(buf);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(RadianceDensityGrid { spec, values })
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r, 2)?;
    if header.channels != 1 || header.channel_type != 1 {
        return Err(Error::Format(format!(
            "label grid expects 1 u16 channel, header says channels={} type={}",
            header.channels, header.channel_type
        )));
    }
    debug_assert_eq!(header.version, 2);
    let spec = GridSpec {
        resolution: header.resolution,
        bounds: header.bounds,
        delta: header.delta,
    };
    let count = spec.voxel_count();
    let mut labels = vec![0u16; count];
    let mut buf = [0u8; 2];
    for (i, v) in labels.iter_mut().enumerate() {
        r.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("payload truncated at label {i} of {count}"))
        })?;
        *v = u16::from_le_bytes(buf);
    }
    Ok(LabelGrid { spec, labels })
}
