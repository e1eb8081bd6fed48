//! PGRID v1 raster files.
//!
//! ```text
//! pgrid 1 <rows> <cols> <kind>\n
//! <payload>
//! ```
//!
//! `kind` is `f64` (little-endian IEEE-754 doubles, row-major) or `mask`
//! (one byte per pixel, `0` or `1`).

use std::io::{self, BufRead, Write};

use crate::grid::{Image, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    F64,
    Mask,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::F64 => "f64",
            Kind::Mask => "mask",
        }
    }
}

/// A decoded PGRID file.
#[derive(Debug, Clone, PartialEq)]
pub enum Raster {
    Image(Image),
    Mask(RegionMask),
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn write_header(w: &mut impl Write, n: usize, kind: Kind) -> io::Result<()> {
    writeln!(w, "pgrid 1 {n} {n} {}", kind.as_str())
}

pub fn write_image(w: &mut impl Write, img: &Image) -> io::Result<()> {
    write_header(w, img.side(), Kind::F64)?;
    let mut buf = Vec::with_capacity(img.len() * 8);
    for v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_mask(w: &mut impl Write, mask: &RegionMask) -> io::Result<()> {
    write_header(w, mask.side(), Kind::Mask)?;
    let buf: Vec<u8> = mask.inside().iter().map(|&b| u8::from(b)).collect();
    w.write_all(&buf)
}

pub fn read(r: &mut impl BufRead) -> io::Result<Raster> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let header = header
        .strip_suffix('\n')
        .ok_or_else(|| invalid("missing pgrid header line"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, version, rows, cols, kind] = fields[..] else {
        return Err(invalid(format!("malformed pgrid header {header:?}")));
    };
    if magic != "pgrid" || version != "1" {
        return Err(invalid(format!("unsupported header {header:?}")));
    }
    let rows: usize = rows.parse().map_err(|_| invalid("bad row count"))?;
    let cols: usize = cols.parse().map_err(|_| invalid("bad column count"))?;
    if rows == 0 || rows != cols {
        return Err(invalid(format!("grid must be square, got {rows}x{cols}")));
    }
    let kind = match kind {
        "f64" => Kind::F64,
        "mask" => Kind::Mask,
        other => return Err(invalid(format!("unknown pgrid kind {other:?}"))),
    };
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid("grid too large"))?;
    let width = if kind == Kind::F64 { 8 } else { 1 };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != pixels * width {
        return Err(invalid(format!(
            "expected {} payload bytes, found {}",
            pixels * width,
            payload.len()
        )));
    }
    match kind {
        Kind::F64 => {
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Image::new(rows, cols, data)
                .map(Raster::Image)
                .map_err(|e| invalid(e.to_string()))
        }
        Kind::Mask => {
            let inside = payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(invalid(format!("mask byte must be 0 or 1, got {other}"))),
                })
                .collect::<io::Result<Vec<bool>>>()?;
            RegionMask::new(rows, inside)
                .map(Raster::Mask)
                .map_err(|e| invalid(e.to_string()))
        }
    }
}

pub fn read_image(r: &mut impl BufRead) -> io::Result<Image> {
    match read(r)? {
        Raster::Image(img) => Ok(img),
        Raster::Mask(_) => Err(invalid("expected an f64 grid, found a mask")),
    }
}

pub fn read_mask(r: &mut impl BufRead) -> io::Result<RegionMask> {
    match read(r)? {
        Raster::Mask(m) => Ok(m),
        Raster::Image(_) => Err(invalid("expected a mask, found an f64 grid")),
    }
}

/// Human-readable export: one CSV line per row, shortest round-trip floats.
pub fn write_image_csv(w: &mut impl Write, img: &Image) -> io::Result<()> {
    let n = img.side();
    for row in img.data().chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_mask_csv(w: &mut impl Write, mask: &RegionMask) -> io::Result<()> {
    let n = mask.side();
    for row in mask.inside().chunks(n) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
