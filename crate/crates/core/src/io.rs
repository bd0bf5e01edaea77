//! Tractogram, label and heatmap files.
//!
//! Binary formats are little-endian with 32-bit floats:
//!
//! * tractogram: `SWMT`, version `u32`, streamline count `u64`, then per
//!   streamline a `u32` point count followed by `(R, A, S)` triplets;
//! * heatmap: `SWMH`, version `u32`, origin `3 × f32`, voxel size `f32`,
//!   dims `3 × u32`, then the values with the first axis varying fastest.
//!
//! Label files are CSV with header `index,label`.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::evaluation::{GridSpec, Heatmap};
use crate::geometry::Streamline;
use crate::network::serialize::truncated;
use crate::pipeline::{FinalLabel, ParcellationResult, DWM, SWM};

pub const TRACTOGRAM_MAGIC: [u8; 4] = *b"SWMT";
pub const TRACTOGRAM_VERSION: u32 = 1;
pub const HEATMAP_MAGIC: [u8; 4] = *b"SWMH";
pub const HEATMAP_VERSION: u32 = 1;

fn read_header(r: &mut impl Read, magic: [u8; 4], version: u32) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(truncated("magic"))?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let v = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if v != version {
        return Err(Error::VersionMismatch {
            expected: version,
            found: v,
        });
    }
    Ok(())
}

fn expect_end(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub fn write_tractogram(w: &mut impl Write, streamlines: &[Streamline]) -> Result<()> {
    w.write_all(&TRACTOGRAM_MAGIC)?;
    w.write_u32::<LittleEndian>(TRACTOGRAM_VERSION)?;
    w.write_u64::<LittleEndian>(streamlines.len() as u64)?;
    for s in streamlines {
        let count = u32::try_from(s.len()).map_err(|_| Error::Format("streamline has too many points".into()))?;
        w.write_u32::<LittleEndian>(count)?;
        for p in s.points() {
            for &v in p {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    Ok(())
}

pub fn read_tractogram(r: &mut impl Read) -> Result<Vec<Streamline>> {
    read_header(r, TRACTOGRAM_MAGIC, TRACTOGRAM_VERSION)?;
    let count = r.read_u64::<LittleEndian>().map_err(truncated("streamline count"))?;
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let n = r.read_u32::<LittleEndian>().map_err(truncated("point count"))? as usize;
        let mut points = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = f64::from(r.read_f32::<LittleEndian>().map_err(truncated("point data"))?);
            }
            points.push(p);
        }
        let s = Streamline::new(points).map_err(|e| Error::Format(format!("streamline {i}: {e}")))?;
        out.push(s);
    }
    expect_end(r)?;
    Ok(out)
}

pub fn write_labels(w: &mut impl Write, labels: &[FinalLabel]) -> Result<()> {
    writeln!(w, "index,label")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}

/// Class-id labels (dataset ground truth) in the same CSV layout.
pub fn write_class_labels(w: &mut impl Write, labels: &[usize]) -> Result<()> {
    writeln!(w, "index,label")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}

/// Parses `index,label` rows; indices must run `0, 1, 2, …`.
pub fn read_labels(r: impl BufRead) -> Result<Vec<FinalLabel>> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == "index,label" => {}
        Some(h) => return Err(Error::Format(format!("unexpected label header `{h}`"))),
        None => return Err(Error::Format("label file is empty".into())),
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("label row {row}: expected two columns")))?;
        if idx.trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(Error::Format(format!("label row {row}: index out of sequence")));
        }
        out.push(label.trim().parse::<FinalLabel>()?);
    }
    Ok(out)
}

/// Like [`read_labels`] but every label must be a class id.
pub fn read_class_labels(r: impl BufRead) -> Result<Vec<usize>> {
    read_labels(r)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| match l {
            FinalLabel::Cluster(c) => Ok(c),
            FinalLabel::NonSwm => Err(Error::Format(format!("row {i}: NON_SWM is not a class id"))),
        })
        .collect()
}

/// Extended label CSV with the per-stage predictions:
/// `index,stage_one,stage_two,label`, where `stage_two` is empty for
/// streamlines filtered at stage one.
pub fn write_extended_labels(w: &mut impl Write, result: &ParcellationResult) -> Result<()> {
    writeln!(w, "index,stage_one,stage_two,label")?;
    for i in 0..result.len() {
        let s1 = match result.stage_one[i] {
            SWM => "SWM",
            DWM => "DWM",
            other => return Err(Error::Format(format!("stage-one label {other}"))),
        };
        let s2 = result.stage_two[i].map(|c| c.to_string()).unwrap_or_default();
        writeln!(w, "{i},{s1},{s2},{}", result.final_labels[i])?;
    }
    Ok(())
}

pub fn write_heatmap(w: &mut impl Write, h: &Heatmap) -> Result<()> {
    w.write_all(&HEATMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(HEATMAP_VERSION)?;
    for &v in &h.grid.origin {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.write_f32::<LittleEndian>(h.grid.voxel as f32)?;
    for &d in &h.grid.dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in &h.values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_heatmap(r: &mut impl Read) -> Result<Heatmap> {
    read_header(r, HEATMAP_MAGIC, HEATMAP_VERSION)?;
    let mut origin = [0.0; 3];
    for v in &mut origin {
        *v = f64::from(r.read_f32::<LittleEndian>().map_err(truncated("origin"))?);
    }
    let voxel = f64::from(r.read_f32::<LittleEndian>().map_err(truncated("voxel size"))?);
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(truncated("dims"))? as usize;
    }
    let grid = GridSpec { origin, voxel, dims };
    grid.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len().min(1 << 24));
    for _ in 0..grid.len() {
        values.push(f64::from(r.read_f32::<LittleEndian>().map_err(truncated("values"))?));
    }
    expect_end(r)?;
    Heatmap::new(grid, values).map_err(|e| Error::Format(e.to_string()))
}

/// Nonzero voxels as `i,j,k,value` rows.
pub fn write_heatmap_csv(w: &mut impl Write, h: &Heatmap) -> Result<()> {
    writeln!(w, "i,j,k,value")?;
    let [nx, ny, nz] = h.grid.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = h.get([i, j, k]);
                if v != 0.0 {
                    writeln!(w, "{i},{j},{k},{v}")?;
                }
            }
        }
    }
    Ok(())
}
