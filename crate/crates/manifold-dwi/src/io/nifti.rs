//! Minimal NIfTI-1 reader/writer.
//!
//! Supported subset: single-file .nii, 348-byte little-endian header, float32
//! payload, no extensions, affine from the srow fields. Anything else is
//! rejected loudly rather than silently reinterpreted. Channels are stored as
//! the 4th dimension (plain 4D layout), x-fastest.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Domain, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;

/// Parsed header metadata of the supported subset.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub channels: usize,
    pub spacing: [f64; 3],
    pub affine: [[f64; 4]; 4],
}

impl VolumeHeader {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::MalformedHeader("zero dimension".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::MalformedHeader("non-positive spacing".into()));
        }
        if ![1usize, 6, 9, 15].contains(&self.channels) {
            return Err(Error::UnsupportedFormat(format!(
                "channel count {} (supported: 1, 6, 9, 15)",
                self.channels
            )));
        }
        if self.affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::MalformedHeader("non-finite affine".into()));
        }
        crate::volume::invert_affine(&self.affine)?;
        Ok(())
    }
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Reads a volume in the supported NIfTI-1 subset.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(VolumeHeader, Volume)> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(Error::UnsupportedFormat("gzip-compressed NIfTI".into()));
    }
    if bytes.len() < VOX_OFFSET {
        return Err(Error::MalformedHeader(format!(
            "file holds {} bytes, need at least {VOX_OFFSET}",
            bytes.len()
        )));
    }

    let sizeof_hdr = rd_i32(&bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::UnsupportedFormat("big-endian NIfTI".into()));
        }
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348"
        )));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        if magic.starts_with(b"ni1") {
            return Err(Error::UnsupportedFormat(
                "two-file NIfTI (.hdr/.img pair)".into(),
            ));
        }
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let datatype = rd_i16(&bytes, 70);
    if datatype != DT_FLOAT32 {
        return Err(Error::UnsupportedFormat(format!(
            "datatype code {datatype} (only float32 = 16)"
        )));
    }
    if rd_i16(&bytes, 72) != 32 {
        return Err(Error::MalformedHeader("bitpix does not match float32".into()));
    }
    // First extender byte nonzero means header extensions follow.
    if bytes[HEADER_SIZE] != 0 {
        return Err(Error::UnsupportedFormat("NIfTI header extensions".into()));
    }
    let vox_offset = rd_f32(&bytes, 108);
    if vox_offset != VOX_OFFSET as f32 {
        return Err(Error::UnsupportedFormat(format!(
            "vox_offset {vox_offset} (expected 352)"
        )));
    }
    let scl_slope = rd_f32(&bytes, 112);
    let scl_inter = rd_f32(&bytes, 116);
    if !(scl_slope == 0.0 || scl_slope == 1.0) || scl_inter != 0.0 {
        return Err(Error::UnsupportedFormat(
            "value scaling (scl_slope/scl_inter)".into(),
        ));
    }

    let ndim = rd_i16(&bytes, 40);
    let dim = |i: usize| rd_i16(&bytes, 40 + 2 * i);
    let (dims, channels) = match ndim {
        3 => ([dim(1), dim(2), dim(3)], 1i16),
        4 => ([dim(1), dim(2), dim(3)], dim(4)),
        // Vector-intent layout: 5D with a singleton 4th dimension.
        5 if dim(4) == 1 => ([dim(1), dim(2), dim(3)], dim(5)),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "dim[0] = {other} (supported: 3, 4, or 5 with dim[4] = 1)"
            )))
        }
    };
    if dims.iter().any(|&d| d < 1) || channels < 1 {
        return Err(Error::MalformedHeader("non-positive dimension".into()));
    }
    let dims = [dims[0] as usize, dims[1] as usize, dims[2] as usize];
    let channels = channels as usize;

    let spacing = [
        rd_f32(&bytes, 80) as f64,
        rd_f32(&bytes, 84) as f64,
        rd_f32(&bytes, 88) as f64,
    ];
    let sform_code = rd_i16(&bytes, 254);
    let affine = if sform_code > 0 {
        let row = |off: usize| {
            [
                rd_f32(&bytes, off) as f64,
                rd_f32(&bytes, off + 4) as f64,
                rd_f32(&bytes, off + 8) as f64,
                rd_f32(&bytes, off + 12) as f64,
            ]
        };
        [row(280), row(296), row(312), [0.0, 0.0, 0.0, 1.0]]
    } else {
        [
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    };

    let header = VolumeHeader {
        dims,
        channels,
        spacing,
        affine,
    };
    header.validate()?;

    let n_values = dims[0] * dims[1] * dims[2] * channels;
    let payload = &bytes[VOX_OFFSET..];
    if payload.len() != n_values * 4 {
        return Err(Error::MalformedPayload(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            n_values * 4
        )));
    }
    let mut data = Vec::with_capacity(n_values);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }

    let volume = Volume::from_parts(dims, channels, spacing, affine, Domain::Manifold, data)?;
    Ok((header, volume))
}

/// Writes a volume as a single-file float32 NIfTI-1. Byte-deterministic for
/// identical input.
pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    let path = path.as_ref();
    let dims = vol.dims();
    let channels = vol.channels();
    for (name, v) in [("x", dims[0]), ("y", dims[1]), ("z", dims[2]), ("c", channels)] {
        if v > i16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "dimension {name} = {v} exceeds the NIfTI-1 i16 range"
            )));
        }
    }

    let mut h = vec![0u8; VOX_OFFSET];
    let wr_i32 = |h: &mut [u8], off: usize, v: i32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let wr_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let wr_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    wr_i32(&mut h, 0, HEADER_SIZE as i32);
    let ndim: i16 = if channels == 1 { 3 } else { 4 };
    wr_i16(&mut h, 40, ndim);
    wr_i16(&mut h, 42, dims[0] as i16);
    wr_i16(&mut h, 44, dims[1] as i16);
    wr_i16(&mut h, 46, dims[2] as i16);
    wr_i16(&mut h, 48, if channels == 1 { 1 } else { channels as i16 });
    for off in [50usize, 52, 54] {
        wr_i16(&mut h, off, 1);
    }
    wr_i16(&mut h, 70, DT_FLOAT32);
    wr_i16(&mut h, 72, 32); // bitpix
    wr_f32(&mut h, 76, 1.0); // pixdim[0] (qfac)
    wr_f32(&mut h, 80, vol.spacing()[0] as f32);
    wr_f32(&mut h, 84, vol.spacing()[1] as f32);
    wr_f32(&mut h, 88, vol.spacing()[2] as f32);
    wr_f32(&mut h, 108, VOX_OFFSET as f32);
    wr_f32(&mut h, 112, 1.0); // scl_slope
    h[123] = 2; // xyzt_units: millimeters
    wr_i16(&mut h, 252, 0); // qform_code
    wr_i16(&mut h, 254, 1); // sform_code
    let a = vol.affine();
    for (row, off) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for col in 0..4 {
            wr_f32(&mut h, off + 4 * col, a[row][col] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    // Bytes 348..352 stay zero: no extensions.

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    out.write_all(&h).map_err(|e| Error::io(path, e))?;
    for v in vol.data() {
        out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
