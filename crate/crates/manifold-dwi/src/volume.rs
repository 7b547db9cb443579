//! Voxel grids of scalars, tensors or SH coefficient vectors.
//!
//! Data is stored channel-planar in x-fastest order (x, then y, then z, then
//! channel), the same layout a 4D NIfTI file uses on disk. Multichannel
//! volumes carry a [`Domain`] tag recording whether voxel values live on
//! their manifold (SPD tensors, unit-norm coefficients) or in the
//! Log-Euclidean tangent plane; resampling is only legal in the tangent
//! domain.

use crate::error::{Error, Result};
use crate::spd::SymMat3;

/// Channel counts with a defined interpretation.
pub const SCALAR_CHANNELS: usize = 1;
pub const SYM_TENSOR_CHANNELS: usize = 6;
pub const FULL_TENSOR_CHANNELS: usize = 9;
pub const SH_ORDER4_CHANNELS: usize = 15;

/// Whether multichannel voxel values are manifold points or tangent vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Manifold,
    Tangent,
}

/// A 3D voxel grid with spacing and affine metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    channels: usize,
    spacing: [f64; 3],
    /// Row-major 4x4 map from voxel index to world millimeters.
    affine: [[f64; 4]; 4],
    domain: Domain,
    data: Vec<f32>,
}

impl Volume {
    /// Zero-filled volume with a diagonal affine built from the spacing.
    pub fn zeros(dims: [usize; 3], channels: usize, spacing: [f64; 3]) -> Volume {
        let affine = [
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Volume {
            dims,
            channels,
            spacing,
            affine,
            domain: Domain::Manifold,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    pub fn from_parts(
        dims: [usize; 3],
        channels: usize,
        spacing: [f64; 3],
        affine: [[f64; 4]; 4],
        domain: Domain,
        data: Vec<f32>,
    ) -> Result<Volume> {
        if dims.iter().any(|&d| d == 0) || channels == 0 {
            return Err(Error::InvalidParameter("zero-sized volume".into()));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("non-positive spacing".into()));
        }
        let expect = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "payload holds {} values, dims x channels require {}",
                data.len(),
                expect
            )));
        }
        Ok(Volume {
            dims,
            channels,
            spacing,
            affine,
            domain,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn set_affine(&mut self, affine: [[f64; 4]; 4]) {
        self.affine = affine;
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Linear voxel index -> (x, y, z).
    pub fn voxel_coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f32 {
        self.data[c * self.n_voxels() + self.voxel_index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, v: f32) {
        let idx = c * self.n_voxels() + self.voxel_index(x, y, z);
        self.data[idx] = v;
    }

    /// All channel values at a voxel, widened to f64.
    pub fn voxel(&self, idx: usize) -> Vec<f64> {
        let n = self.n_voxels();
        (0..self.channels)
            .map(|c| self.data[c * n + idx] as f64)
            .collect()
    }

    pub fn set_voxel(&mut self, idx: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels);
        let n = self.n_voxels();
        for (c, &v) in values.iter().enumerate() {
            self.data[c * n + idx] = v as f32;
        }
    }

    /// Voxel value as a symmetric matrix; accepts the 6-channel upper
    /// triangle directly and symmetrizes 9-channel row-major layouts.
    pub fn voxel_sym(&self, idx: usize) -> Result<SymMat3> {
        let n = self.n_voxels();
        match self.channels {
            SYM_TENSOR_CHANNELS => {
                let d = &self.data;
                Ok(SymMat3::new(
                    d[idx] as f64,
                    d[n + idx] as f64,
                    d[2 * n + idx] as f64,
                    d[3 * n + idx] as f64,
                    d[4 * n + idx] as f64,
                    d[5 * n + idx] as f64,
                ))
            }
            FULL_TENSOR_CHANNELS => {
                let at = |c: usize| self.data[c * n + idx] as f64;
                let full = [
                    [at(0), at(1), at(2)],
                    [at(3), at(4), at(5)],
                    [at(6), at(7), at(8)],
                ];
                Ok(SymMat3::from_full_symmetrized(&full))
            }
            other => Err(Error::InvalidParameter(format!(
                "voxel_sym on a {other}-channel volume"
            ))),
        }
    }

    pub fn set_voxel_sym(&mut self, idx: usize, m: &SymMat3) {
        debug_assert_eq!(self.channels, SYM_TENSOR_CHANNELS);
        let n = self.n_voxels();
        for (c, v) in m.to_array().into_iter().enumerate() {
            self.data[c * n + idx] = v as f32;
        }
    }

    /// Asymmetry of a 9-channel voxel: max |A_ij - A_ji|.
    pub fn voxel_asymmetry(&self, idx: usize) -> f64 {
        debug_assert_eq!(self.channels, FULL_TENSOR_CHANNELS);
        let n = self.n_voxels();
        let at = |c: usize| self.data[c * n + idx] as f64;
        (at(1) - at(3))
            .abs()
            .max((at(2) - at(6)).abs())
            .max((at(5) - at(7)).abs())
    }

    /// Volume with the same grid and metadata but different channel count
    /// and zeroed payload.
    pub fn like(&self, channels: usize, domain: Domain) -> Volume {
        Volume {
            dims: self.dims,
            channels,
            spacing: self.spacing,
            affine: self.affine,
            domain,
            data: vec![0.0; self.n_voxels() * channels],
        }
    }

    /// Voxel index (continuous) to world millimeters.
    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2] + a[0][3],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2] + a[1][3],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2] + a[2][3],
        ]
    }

    /// World millimeters to continuous voxel index.
    pub fn world_to_voxel(&self, w: [f64; 3]) -> Result<[f64; 3]> {
        let inv = invert_affine(&self.affine)?;
        Ok([
            inv[0][0] * w[0] + inv[0][1] * w[1] + inv[0][2] * w[2] + inv[0][3],
            inv[1][0] * w[0] + inv[1][1] * w[1] + inv[1][2] * w[2] + inv[1][3],
            inv[2][0] * w[0] + inv[2][1] * w[1] + inv[2][2] * w[2] + inv[2][3],
        ])
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims
    }
}

/// Inverse of a 4x4 affine with last row (0, 0, 0, 1).
pub fn invert_affine(a: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let m = [
        [a[0][0], a[0][1], a[0][2]],
        [a[1][0], a[1][1], a[1][2]],
        [a[2][0], a[2][1], a[2][2]],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 || !det.is_finite() {
        return Err(Error::MalformedHeader("singular affine".into()));
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0f64; 4]; 4];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    for i in 0..3 {
        inv[i][3] = -(inv[i][0] * a[0][3] + inv[i][1] * a[1][3] + inv[i][2] * a[2][3]);
    }
    inv[3][3] = 1.0;
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let v = Volume::zeros([4, 5, 6], 2, [1.0, 1.0, 1.0]);
        for z in 0..6 {
            for y in 0..5 {
                for x in 0..4 {
                    let idx = v.voxel_index(x, y, z);
                    assert_eq!(v.voxel_coords(idx), [x, y, z]);
                }
            }
        }
    }

    #[test]
    fn x_fastest_layout() {
        let mut v = Volume::zeros([3, 2, 2], 1, [1.0, 1.0, 1.0]);
        v.set(1, 0, 0, 0, 7.0);
        assert_eq!(v.data()[1], 7.0);
        v.set(0, 1, 0, 0, 8.0);
        assert_eq!(v.data()[3], 8.0);
    }

    #[test]
    fn world_round_trip() {
        let mut v = Volume::zeros([8, 8, 8], 1, [0.5, 1.0, 2.0]);
        let mut affine = *v.affine();
        affine[0][3] = -3.0;
        affine[1][3] = 5.0;
        v.set_affine(affine);
        let p = [1.25, 6.5, 3.75];
        let w = v.voxel_to_world(p);
        let back = v.world_to_voxel(w).unwrap();
        for i in 0..3 {
            assert!((back[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nine_channel_symmetrization() {
        let mut v = Volume::zeros([1, 1, 1], 9, [1.0, 1.0, 1.0]);
        // Row-major full matrix with asymmetric off-diagonals.
        let full = [1.0, 0.5, 0.0, 0.3, 2.0, 0.1, 0.0, 0.3, 3.0];
        for (c, &val) in full.iter().enumerate() {
            v.set(0, 0, 0, c, val);
        }
        let m = v.voxel_sym(0).unwrap();
        assert!((m.xy - 0.4).abs() < 1e-7);
        assert!((m.yz - 0.2).abs() < 1e-7);
        assert!((v.voxel_asymmetry(0) - 0.2).abs() < 1e-7);
    }
}
