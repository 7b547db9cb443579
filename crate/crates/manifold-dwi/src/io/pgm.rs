//! 8-bit PGM (P5) and PPM (P6) slice export for scalar and RGB maps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Extracts slice `index` along `axis` (0 = x, 1 = y, 2 = z) of a scalar
/// volume as (width, height, values). Columns run along the lower remaining
/// axis, rows along the higher one.
pub fn extract_slice(vol: &Volume, axis: usize, index: usize) -> Result<(usize, usize, Vec<f64>)> {
    if vol.channels() != 1 {
        return Err(Error::InvalidParameter(
            "slice export expects a scalar volume".into(),
        ));
    }
    if axis > 2 {
        return Err(Error::InvalidParameter(format!("axis {axis} out of range")));
    }
    let dims = vol.dims();
    if index >= dims[axis] {
        return Err(Error::InvalidParameter(format!(
            "slice index {index} outside axis of {} voxels",
            dims[axis]
        )));
    }
    let (ca, ra) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (w, h) = (dims[ca], dims[ra]);
    let mut values = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut p = [0usize; 3];
            p[axis] = index;
            p[ca] = c;
            p[ra] = r;
            values.push(vol.get(p[0], p[1], p[2], 0) as f64);
        }
    }
    Ok((w, h, values))
}

/// Writes one slice of a scalar volume as binary PGM, min-max scaled to
/// [0, 255]; a constant slice maps to all zeros. Non-finite values abort
/// before any file is created.
pub fn export_slice_pgm(
    vol: &Volume,
    axis: usize,
    index: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let (w, h, values) = extract_slice(vol, axis, index)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slice values".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pixels: Vec<u8> = if max > min {
        let scale = 255.0 / (max - min);
        values
            .iter()
            .map(|v| ((v - min) * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0u8; values.len()]
    };
    write_pnm(path, b"P5", w, h, &pixels)
}

/// Writes an RGB slice (rows x cols x 3, values in [0, 1]) as binary PPM.
pub fn export_slice_ppm(
    width: usize,
    height: usize,
    rgb: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {width}x{height} RGB slice",
            rgb.len()
        )));
    }
    if rgb.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slice values".into()));
    }
    let pixels: Vec<u8> = rgb
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_pnm(path, b"P6", width, height, &pixels)
}

fn write_pnm(path: impl AsRef<Path>, magic: &[u8], w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    out.write_all(magic).map_err(|e| Error::io(path, e))?;
    out.write_all(format!("\n{w} {h}\n255\n").as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.write_all(pixels).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
