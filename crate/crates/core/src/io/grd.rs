//! GRD1: a time series of fields on one regular grid.
//!
//! ```text
//! "GRD1"  u32 version=1  u32 T  u32 J  u32 K
//! f64 lat0  f64 lon0  f64 dlat  f64 dlon
//! u32 name_len  name (UTF-8)
//! T*J*K f32 values, time-major then row-major; NaN = missing
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridField, GridGeometry};
use crate::io::atomic::{read_file, write_atomic};
use crate::io::reader::ByteReader;

pub const GRD_MAGIC: [u8; 4] = *b"GRD1";
pub const GRD_VERSION: u32 = 1;
/// Header size without the name bytes.
pub const GRD_FIXED_HEADER: usize = 4 + 4 * 4 + 4 * 8 + 4;

pub fn encode_grd(fields: &[GridField]) -> Result<Vec<u8>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("GRD1 needs at least one time step".into()))?;
    let g = first.geometry();
    for (t, f) in fields.iter().enumerate() {
        if f.geometry() != g {
            return Err(Error::Shape(format!(
                "time step {t}: {}x{} grid differs from the first step's {}x{} (or its georeference)",
                f.rows, f.cols, g.rows, g.cols
            )));
        }
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v)
            .map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
    };
    let name = first.name.as_bytes();
    let mut out =
        Vec::with_capacity(GRD_FIXED_HEADER + name.len() + 4 * fields.len() * g.rows * g.cols);
    out.extend_from_slice(&GRD_MAGIC);
    out.extend_from_slice(&GRD_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(fields.len(), "time steps")?.to_le_bytes());
    out.extend_from_slice(&to_u32(g.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(g.cols, "cols")?.to_le_bytes());
    for v in [g.lat0, g.lon0, g.dlat, g.dlon] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(name.len(), "name length")?.to_le_bytes());
    out.extend_from_slice(name);
    for f in fields {
        for &v in &f.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_grd(bytes: &[u8], path: &Path) -> Result<Vec<GridField>> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(GRD_MAGIC)?;
    let version = r.u32("version")?;
    if version != GRD_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let t = r.u32("time steps")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let lat0 = r.f64("lat0")?;
    let lon0 = r.f64("lon0")?;
    let dlat = r.f64("dlat")?;
    let dlon = r.f64("dlon")?;
    let name_len = r.u32("name length")? as usize;
    let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
        .map_err(|_| r.corrupt("name is not UTF-8"))?;
    let cells = rows
        .checked_mul(cols)
        .filter(|&c| c > 0)
        .ok_or_else(|| r.corrupt(&format!("invalid grid {rows}x{cols}")))?;
    let expected = t.checked_mul(cells).and_then(|n| n.checked_mul(4));
    match expected {
        Some(n) if n == r.remaining() => {}
        Some(n) if n > r.remaining() => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("payload has {} bytes, header promises {n}", r.remaining()),
            })
        }
        _ => {
            return Err(r.corrupt(&format!(
                "{} payload bytes for {t}x{rows}x{cols} values",
                r.remaining()
            )))
        }
    }
    let geometry = GridGeometry {
        rows,
        cols,
        lat0,
        lon0,
        dlat,
        dlon,
    };
    let payload = r.take(r.remaining(), "payload")?;
    payload
        .chunks_exact(4 * cells)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            GridField::new(geometry, values, name.clone()).map_err(|e| r.corrupt(&e.to_string()))
        })
        .collect()
}

pub fn write_grd(fields: &[GridField], path: &Path) -> Result<()> {
    write_atomic(path, &encode_grd(fields)?)
}

pub fn read_grd(path: &Path) -> Result<Vec<GridField>> {
    decode_grd(&read_file(path)?, path)
}
