//! Compact streamline binary.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size            content
//! 0       8               magic "MDWISL01"
//! 8       4               u32 streamline count N
//! 12      4*N             u32 point count per streamline (each >= 2)
//! ...     4*3*sum(counts) f32 point triples, world millimeters
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MDWISL01";

/// In-memory tractogram: each streamline is an ordered polyline of 3D
/// world-space points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamlineFile {
    pub streamlines: Vec<Vec<[f32; 3]>>,
}

impl StreamlineFile {
    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }
}

pub fn write_streamlines(path: impl AsRef<Path>, file: &StreamlineFile) -> Result<()> {
    let path = path.as_ref();
    for (i, line) in file.streamlines.iter().enumerate() {
        if line.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "streamline {i} has {} point(s); minimum is 2",
                line.len()
            )));
        }
    }
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    out.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    out.write_all(&(file.streamlines.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    for line in &file.streamlines {
        out.write_all(&(line.len() as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    for line in &file.streamlines {
        for p in line {
            for c in p {
                out.write_all(&c.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_streamlines(path: impl AsRef<Path>) -> Result<StreamlineFile> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 {
        return Err(Error::MalformedHeader("file shorter than header".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::UnsupportedFormat(
            "not a MDWISL01 streamline file".into(),
        ));
    }
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let counts_end = 12 + 4 * count;
    if bytes.len() < counts_end {
        return Err(Error::MalformedPayload("truncated point-count table".into()));
    }
    let mut counts = Vec::with_capacity(count);
    for i in 0..count {
        let off = 12 + 4 * i;
        let c = u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
            as usize;
        if c < 2 {
            return Err(Error::MalformedPayload(format!(
                "streamline {i} declares {c} point(s)"
            )));
        }
        counts.push(c);
    }
    let total_points: usize = counts.iter().sum();
    let expected = counts_end + 12 * total_points;
    if bytes.len() != expected {
        return Err(Error::MalformedPayload(format!(
            "payload holds {} bytes, counts require {expected}",
            bytes.len()
        )));
    }
    let mut streamlines = Vec::with_capacity(count);
    let mut off = counts_end;
    for c in counts {
        let mut line = Vec::with_capacity(c);
        for _ in 0..c {
            let f = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            line.push([f(off), f(off + 4), f(off + 8)]);
            off += 12;
        }
        streamlines.push(line);
    }
    Ok(StreamlineFile { streamlines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.strm");
        write_streamlines(&path, &StreamlineFile::default()).unwrap();
        let back = read_streamlines(&path).unwrap();
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn two_point_line_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.strm");
        let file = StreamlineFile {
            streamlines: vec![vec![[0.0, 1.0, 2.0], [3.5, -1.25, 0.5]]],
        };
        write_streamlines(&path, &file).unwrap();
        assert_eq!(read_streamlines(&path).unwrap(), file);
    }

    #[test]
    fn random_tractogram_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let streamlines: Vec<Vec<[f32; 3]>> = (0..1000)
            .map(|_| {
                (0..rng.gen_range(2..40))
                    .map(|_| {
                        [
                            rng.gen_range(-100.0..100.0),
                            rng.gen_range(-100.0..100.0),
                            rng.gen_range(-100.0..100.0),
                        ]
                    })
                    .collect()
            })
            .collect();
        let file = StreamlineFile { streamlines };
        let p1 = dir.path().join("a.strm");
        let p2 = dir.path().join("b.strm");
        write_streamlines(&p1, &file).unwrap();
        let back = read_streamlines(&p1).unwrap();
        assert_eq!(back, file);
        write_streamlines(&p2, &back).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.strm");
        let file = StreamlineFile {
            streamlines: vec![vec![[0.0; 3]; 5]],
        };
        write_streamlines(&path, &file).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_streamlines(&path),
            Err(Error::MalformedPayload(_))
        ));
    }

    #[test]
    fn single_point_line_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let file = StreamlineFile {
            streamlines: vec![vec![[0.0; 3]]],
        };
        assert!(write_streamlines(dir.path().join("bad.strm"), &file).is_err());
    }
}
