//! Binary dataset container.
//!
//! All values little-endian.
//!
//! ```text
//! offset size  field
//!  0      8    magic "RAKISMS\0"
//!  8      4    u32 format version (1)
//! 12      4    u32 height
//! 16      4    u32 width
//! 20      4    u32 coil count
//! 24      4    u32 SMS factor n
//! 28      8    f64 FOV shift fraction
//! 36      4    u32 frame count F
//! 40      8    f64 noise sigma
//! 48      8    f64 perturbation amplitude
//! 56      8    u64 seed
//! 64      8·F·n  f64 slice intensity factors, frame-major
//! then    calibration block: for coil c, for slice s: H·W complex
//! then    frames: for frame f, for coil c: H·W complex
//! ```
//!
//! A complex value is two f64 (real, imaginary); planes are row-major with
//! the phase-encode axis as rows.

use super::{caipi_delta, Dataset, Grid, MultiCoil, SimTimeseries};
use crate::codec::{put_plane, put_u32, Cursor};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"RAKISMS\0";
pub const VERSION: u32 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let ts = &ds.timeseries;
    let grid = ts.grid();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, grid.height)?;
    put_u32(&mut out, grid.width)?;
    put_u32(&mut out, ts.coil_count())?;
    put_u32(&mut out, ts.sms_factor())?;
    out.extend_from_slice(&ts.fov_shift.to_le_bytes());
    put_u32(&mut out, ts.frames.len())?;
    out.extend_from_slice(&ts.noise_sigma.to_le_bytes());
    out.extend_from_slice(&ts.perturbation.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for f in ts.factors.iter().flatten() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for c in 0..ts.coil_count() {
        for s in &ts.calibration {
            put_plane(&mut out, &s.coils[c]);
        }
    }
    for frame in &ts.frames {
        for plane in &frame.coils {
            put_plane(&mut out, plane);
        }
    }
    Ok(out)
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor::new(buf);
    if cur.take(8)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let grid = Grid::new(cur.u32()?, cur.u32()?);
    let coils = cur.u32()?;
    let n = cur.u32()?;
    let fov_shift = cur.f64()?;
    let frames = cur.u32()?;
    let noise_sigma = cur.f64()?;
    let perturbation = cur.f64()?;
    let seed = cur.u64()?;
    if grid.is_empty() || coils == 0 || n == 0 {
        return Err(Error::Format("empty geometry".into()));
    }
    let expected = 64 + 8 * frames * n + 16 * grid.len() * coils * (n + frames);
    if buf.len() != expected {
        return Err(Error::Format(format!("container is {} bytes, header implies {expected}", buf.len())));
    }
    let factors = (0..frames)
        .map(|_| (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut calibration = vec![MultiCoil::zeros(grid, coils); n];
    for c in 0..coils {
        for slice in calibration.iter_mut() {
            slice.coils[c] = cur.plane(grid.len())?;
        }
    }
    let frames = (0..frames)
        .map(|_| {
            Ok(MultiCoil {
                grid,
                coils: (0..coils).map(|_| cur.plane(grid.len())).collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        seed,
        timeseries: SimTimeseries {
            fov_shift,
            shifts: (0..n).map(|s| caipi_delta(s, fov_shift, grid.height)).collect(),
            calibration,
            frames,
            factors,
            perturbation,
            noise_sigma,
        },
        phantoms: Vec::new(),
    })
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_dataset(&buf)
}
