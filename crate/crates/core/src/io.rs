//! File helpers shared by the exporters: 16-bit PGM rasters with a sidecar
//! header, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Writes `bytes` to `path` through a sibling temp file and a rename, so a
/// reader never observes a partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Header describing how a single-band PGM maps back to georeferenced values.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterHeader {
    pub band: String,
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    /// Value mapped to code 0.
    pub value_min: f64,
    /// Value mapped to code 65535.
    pub value_max: f64,
}

impl RasterHeader {
    pub fn to_text(&self) -> String {
        format!(
            "band = {}\norigin_x = {:.9}\norigin_y = {:.9}\ncell_size = {:.9}\nwidth = {}\nheight = {}\nvalue_min = {:.12e}\nvalue_max = {:.12e}\nrow_order = north_up\n",
            self.band,
            self.origin[0],
            self.origin[1],
            self.cell_size,
            self.width,
            self.height,
            self.value_min,
            self.value_max
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut band = None;
        let (mut ox, mut oy, mut cs) = (None, None, None);
        let (mut w, mut h) = (None, None);
        let (mut vmin, mut vmax) = (None, None);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("raster header", format!("bad line `{line}`")))?;
            let v = v.trim();
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|e| Error::parse("raster header", format!("{k}: {e}")))
            };
            match k.trim() {
                "band" => band = Some(v.to_string()),
                "origin_x" => ox = Some(num(v)?),
                "origin_y" => oy = Some(num(v)?),
                "cell_size" => cs = Some(num(v)?),
                "width" => w = Some(num(v)? as usize),
                "height" => h = Some(num(v)? as usize),
                "value_min" => vmin = Some(num(v)?),
                "value_max" => vmax = Some(num(v)?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::parse("raster header", format!("missing `{k}`"));
        Ok(RasterHeader {
            band: band.ok_or_else(|| missing("band"))?,
            origin: [ox.ok_or_else(|| missing("origin_x"))?, oy.ok_or_else(|| missing("origin_y"))?],
            cell_size: cs.ok_or_else(|| missing("cell_size"))?,
            width: w.ok_or_else(|| missing("width"))?,
            height: h.ok_or_else(|| missing("height"))?,
            value_min: vmin.ok_or_else(|| missing("value_min"))?,
            value_max: vmax.ok_or_else(|| missing("value_max"))?,
        })
    }
}

/// Encodes a row-major (south row first) raster as a binary 16-bit PGM with
/// the north row first. Returns the PGM bytes and the value range used.
pub fn encode_pgm16(values: &[f64], width: usize, height: usize) -> (Vec<u8>, f64, f64) {
    assert_eq!(values.len(), width * height);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 0.0;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(values.len() * 2);
    for row in (0..height).rev() {
        for col in 0..width {
            let v = values[row * width + col];
            let code = if v.is_finite() {
                (((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            out.extend_from_slice(&code.to_be_bytes());
        }
    }
    (out, lo, hi)
}

/// Decodes a 16-bit PGM written by [`encode_pgm16`]; returns raw codes in
/// south-row-first order.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(Vec<u16>, usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0usize;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("pgm", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::parse("pgm", format!("unsupported magic {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::parse("pgm", e.to_string()))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 65535 {
        return Err(Error::parse("pgm", "only 16-bit rasters are supported"));
    }
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() < w * h * 2 {
        return Err(Error::parse("pgm", "truncated pixel data"));
    }
    let mut codes = vec![0u16; w * h];
    for r in 0..h {
        let row = h - 1 - r;
        for c in 0..w {
            let i = (r * w + c) * 2;
            codes[row * w + c] = u16::from_be_bytes([data[i], data[i + 1]]);
        }
    }
    Ok((codes, w, h))
}

/// Writes `<dir>/<band>.pgm` and `<dir>/<band>.hdr`; returns both paths.
pub fn write_layer(
    dir: &Path,
    band: &str,
    origin: [f64; 2],
    cell_size: f64,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<Vec<PathBuf>> {
    let (pgm, lo, hi) = encode_pgm16(values, width, height);
    let header = RasterHeader {
        band: band.to_string(),
        origin,
        cell_size,
        width,
        height,
        value_min: lo,
        value_max: hi,
    };
    let pgm_path = dir.join(format!("{band}.pgm"));
    let hdr_path = dir.join(format!("{band}.hdr"));
    write_atomic(&pgm_path, &pgm)?;
    write_atomic(&hdr_path, header.to_text().as_bytes())?;
    Ok(vec![pgm_path, hdr_path])
}

/// Reads a layer written by [`write_layer`]; values are quantized to 16 bits.
pub fn read_layer(dir: &Path, band: &str) -> Result<(RasterHeader, Vec<f64>)> {
    let hdr_path = dir.join(format!("{band}.hdr"));
    let pgm_path = dir.join(format!("{band}.pgm"));
    let header = RasterHeader::parse(&read_to_string(&hdr_path)?)?;
    let bytes = fs::read(&pgm_path).map_err(|e| Error::io(&pgm_path, e))?;
    let (codes, w, h) = decode_pgm16(&bytes)?;
    if w != header.width || h != header.height {
        return Err(Error::parse("pgm", "size disagrees with header"));
    }
    let span = if header.value_max > header.value_min {
        header.value_max - header.value_min
    } else {
        0.0
    };
    let values = codes
        .iter()
        .map(|&c| header.value_min + span * f64::from(c) / 65535.0)
        .collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_within_quantization() {
        let (w, h) = (5, 3);
        let values: Vec<f64> = (0..w * h).map(|i| (i as f64).sin()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_layer(dir.path(), "g", [1.0, 2.0], 0.5, w, h, &values).unwrap();
        let (hdr, back) = read_layer(dir.path(), "g").unwrap();
        assert_eq!(hdr.width, w);
        assert_eq!(hdr.origin, [1.0, 2.0]);
        let q = (hdr.value_max - hdr.value_min) / 65535.0;
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() <= q);
        }
    }

    #[test]
    fn header_rejects_missing_keys() {
        assert!(RasterHeader::parse("band = r\n").is_err());
    }
}
