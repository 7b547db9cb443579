//! Bit-exact file I/O: NIfTI-1 float32 subset, PGM/PPM slice images, and a
//! compact streamline binary. All writers are deterministic (no timestamps);
//! read(write(x)) reproduces the payload bit-exactly.

mod nifti;
mod pgm;
mod streamlines;

pub use nifti::{read_volume, write_volume, VolumeHeader};
pub use pgm::{export_slice_pgm, export_slice_ppm, extract_slice};
pub use streamlines::{read_streamlines, write_streamlines, StreamlineFile};
