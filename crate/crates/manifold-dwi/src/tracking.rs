//! Deterministic streamline propagation on tensor or ODF fields.
//!
//! First-order Euler integration: at each step the local fiber direction is
//! looked up at the current position, sign-aligned with the previous step,
//! gated by the maximum turning angle, and followed for one step length.
//! Each seed grows two half-tracks (along and against the initial
//! direction) which are merged. Tensor fields are interpolated in the log
//! domain; ODF coefficients are interpolated linearly and renormalized.

use rayon::prelude::*;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::StreamlineFile;
use crate::odf::{self, PeakParams, ShBasis, ShCoeffs, SphereGrid};
use crate::ops;
use crate::spd::{self, dot3, norm3};
use crate::volume::{Domain, Volume};

/// Propagation parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrackingParams {
    pub step_mm: f64,
    pub max_angle_deg: f64,
    pub seeds_per_voxel: usize,
    pub min_length_mm: f64,
    pub max_length_mm: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            step_mm: 0.5,
            max_angle_deg: 60.0,
            seeds_per_voxel: 2,
            min_length_mm: 10.0,
            max_length_mm: 300.0,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm > 0.0) {
            return Err(Error::InvalidParameter("step size must be positive".into()));
        }
        if !(self.max_angle_deg > 0.0 && self.max_angle_deg < 90.0) {
            return Err(Error::InvalidParameter(
                "max angle must lie in (0, 90) degrees".into(),
            ));
        }
        if !(self.min_length_mm < self.max_length_mm) {
            return Err(Error::InvalidParameter(
                "min length must be below max length".into(),
            ));
        }
        if self.seeds_per_voxel == 0 {
            return Err(Error::InvalidParameter("seeds per voxel must be >= 1".into()));
        }
        Ok(())
    }
}

/// One tracked polyline in world millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    pub points: Vec<[f64; 3]>,
}

impl Streamline {
    pub fn length_mm(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                norm3([
                    w[1][0] - w[0][0],
                    w[1][1] - w[0][1],
                    w[1][2] - w[0][2],
                ])
            })
            .sum()
    }
}

pub fn to_streamline_file(lines: &[Streamline]) -> StreamlineFile {
    StreamlineFile {
        streamlines: lines
            .iter()
            .map(|l| {
                l.points
                    .iter()
                    .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                    .collect()
            })
            .collect(),
    }
}

/// Local fiber-direction model over a voxel grid.
pub trait DirectionField: Sync {
    /// Grid carrying the geometry (dims, affine).
    fn grid(&self) -> &Volume;

    /// Direction at a continuous voxel coordinate, or `None` when tracking
    /// must stop there (ill-defined orientation, or the best candidate turns
    /// more than `max_angle_deg` away from `prev`). The result is
    /// sign-aligned with `prev` when given.
    fn direction_at_voxel(
        &self,
        p: [f64; 3],
        prev: Option<[f64; 3]>,
        max_angle_deg: f64,
    ) -> Option<[f64; 3]>;
}

/// Tensor field: principal eigenvector of the log-domain trilinearly
/// interpolated tensor. The log map commutes with the eigenbasis, so the
/// principal direction of exp(S) is read off the interpolated tangent S
/// directly.
pub struct TensorField {
    log_vol: Volume,
}

impl TensorField {
    /// `vol` is a manifold-domain 6/9-channel SPD volume; non-SPD voxels are
    /// clamped to the floor (background voxels are typically isotropic and
    /// simply yield no direction).
    pub fn new(vol: &Volume) -> Result<TensorField> {
        Ok(TensorField {
            log_vol: ops::log_tensor_volume(vol, true)?,
        })
    }

    /// Field already in the tangent domain.
    pub fn from_log_volume(log_vol: Volume) -> Result<TensorField> {
        if log_vol.domain() != Domain::Tangent || log_vol.channels() != 6 {
            return Err(Error::InvalidParameter(
                "tensor field expects a 6-channel tangent volume".into(),
            ));
        }
        Ok(TensorField { log_vol })
    }
}

impl DirectionField for TensorField {
    fn grid(&self) -> &Volume {
        &self.log_vol
    }

    fn direction_at_voxel(
        &self,
        p: [f64; 3],
        prev: Option<[f64; 3]>,
        max_angle_deg: f64,
    ) -> Option<[f64; 3]> {
        let mut s = [0.0f64; 6];
        for (c, v) in s.iter_mut().enumerate() {
            *v = ops::trilinear_sample(&self.log_vol, c, p);
        }
        let m = spd::SymMat3::from_array(s);
        if !m.is_finite() {
            return None;
        }
        let e = spd::eig_sym3(&m).ok()?;
        let dir = spd::principal_direction(&e).ok()?;
        align_and_gate(dir, prev, max_angle_deg)
    }
}

/// ODF field: peaks of the ODF reconstructed from linearly interpolated,
/// renormalized coefficients; the peak closest in angle to the incoming
/// direction wins, ties broken by amplitude.
pub struct OdfField<'a> {
    vol: &'a Volume,
    grid: &'a SphereGrid,
    basis: &'a ShBasis,
    peaks: PeakParams,
}

impl<'a> OdfField<'a> {
    pub fn new(
        vol: &'a Volume,
        grid: &'a SphereGrid,
        basis: &'a ShBasis,
        peaks: PeakParams,
    ) -> Result<OdfField<'a>> {
        if odf::order_for_size(vol.channels()).is_none() || vol.channels() == 1 {
            return Err(Error::InvalidParameter(format!(
                "{}-channel volume is not an SH coefficient field",
                vol.channels()
            )));
        }
        if basis.size() != vol.channels() {
            return Err(Error::BasisSizeMismatch {
                got: vol.channels(),
                expected: basis.size(),
            });
        }
        Ok(OdfField {
            vol,
            grid,
            basis,
            peaks,
        })
    }
}

impl DirectionField for OdfField<'_> {
    fn grid(&self) -> &Volume {
        self.vol
    }

    fn direction_at_voxel(
        &self,
        p: [f64; 3],
        prev: Option<[f64; 3]>,
        max_angle_deg: f64,
    ) -> Option<[f64; 3]> {
        let k = self.vol.channels();
        let mut c = vec![0.0f64; k];
        for (ch, v) in c.iter_mut().enumerate() {
            *v = ops::trilinear_sample(self.vol, ch, p);
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.5 {
            return None;
        }
        for v in &mut c {
            *v /= norm;
        }
        let coeffs = ShCoeffs::new(c).ok()?;
        let peaks = odf::odf_maxima(&coeffs, self.grid, self.basis, &self.peaks).ok()?;
        if peaks.is_empty() {
            return None;
        }
        match prev {
            None => align_and_gate(peaks[0].direction, None, max_angle_deg),
            Some(prev_dir) => {
                // Closest peak by unsigned angle; amplitude breaks ties.
                let mut best: Option<([f64; 3], f64, f64)> = None;
                for pk in &peaks {
                    let a = dot3(pk.direction, prev_dir).abs();
                    match best {
                        Some((_, best_a, best_v))
                            if a < best_a - 1e-12
                                || ((a - best_a).abs() <= 1e-12 && pk.value <= best_v) => {}
                        _ => best = Some((pk.direction, a, pk.value)),
                    }
                }
                let (dir, _, _) = best?;
                align_and_gate(dir, Some(prev_dir), max_angle_deg)
            }
        }
    }
}

fn align_and_gate(
    dir: [f64; 3],
    prev: Option<[f64; 3]>,
    max_angle_deg: f64,
) -> Option<[f64; 3]> {
    let dir = spd::normalize3(dir);
    match prev {
        None => Some(dir),
        Some(p) => {
            let d = dot3(dir, p);
            let aligned = if d < 0.0 { [-dir[0], -dir[1], -dir[2]] } else { dir };
            if dot3(aligned, p) < max_angle_deg.to_radians().cos() {
                None
            } else {
                Some(aligned)
            }
        }
    }
}

/// Jittered seed points inside every masked voxel, in world millimeters.
/// Deterministic for a given seed: voxels are visited in index order, each
/// drawing `seeds_per_voxel` uniform positions.
pub fn seed_mask(mask: &Volume, seeds_per_voxel: usize, rng_seed: u64) -> Result<Vec<[f64; 3]>> {
    if mask.channels() != 1 {
        return Err(Error::InvalidParameter("mask must be a scalar volume".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seeds = Vec::new();
    for idx in 0..mask.n_voxels() {
        if mask.data()[idx] <= 0.5 {
            continue;
        }
        let [x, y, z] = mask.voxel_coords(idx);
        for _ in 0..seeds_per_voxel {
            let p = [
                x as f64 + rng.gen_range(-0.5..0.5),
                y as f64 + rng.gen_range(-0.5..0.5),
                z as f64 + rng.gen_range(-0.5..0.5),
            ];
            seeds.push(mask.voxel_to_world(p));
        }
    }
    Ok(seeds)
}

fn in_mask(mask: &Volume, voxel: [f64; 3]) -> bool {
    let dims = mask.dims();
    let i = [
        voxel[0].round() as i64,
        voxel[1].round() as i64,
        voxel[2].round() as i64,
    ];
    if i.iter().any(|&v| v < 0)
        || i[0] as usize >= dims[0]
        || i[1] as usize >= dims[1]
        || i[2] as usize >= dims[2]
    {
        return false;
    }
    mask.data()[(i[2] as usize * dims[1] + i[1] as usize) * dims[0] + i[0] as usize] > 0.5
}

/// Bidirectional deterministic tracking from jittered seeds over the masked
/// region. Streamlines outside [min, max] length are discarded.
pub fn track(
    field: &dyn DirectionField,
    mask: &Volume,
    params: &TrackingParams,
    rng_seed: u64,
) -> Result<Vec<Streamline>> {
    params.validate()?;
    if !field.grid().same_grid(mask) {
        return Err(Error::ShapeMismatch(
            "field and mask grids do not match".into(),
        ));
    }
    let seeds = seed_mask(mask, params.seeds_per_voxel, rng_seed)?;
    let max_steps = (params.max_length_mm / params.step_mm).ceil() as usize + 2;

    let world_to_voxel = crate::volume::invert_affine(mask.affine())?;
    let to_voxel = |w: [f64; 3]| -> [f64; 3] {
        [
            world_to_voxel[0][0] * w[0] + world_to_voxel[0][1] * w[1] + world_to_voxel[0][2] * w[2] + world_to_voxel[0][3],
            world_to_voxel[1][0] * w[0] + world_to_voxel[1][1] * w[1] + world_to_voxel[1][2] * w[2] + world_to_voxel[1][3],
            world_to_voxel[2][0] * w[0] + world_to_voxel[2][1] * w[1] + world_to_voxel[2][2] * w[2] + world_to_voxel[2][3],
        ]
    };

    let half_track = |seed: [f64; 3], d0: [f64; 3]| -> Vec<[f64; 3]> {
        let mut points = vec![seed];
        let mut cur = seed;
        let mut dir = d0;
        for _ in 0..max_steps {
            let next = [
                cur[0] + params.step_mm * dir[0],
                cur[1] + params.step_mm * dir[1],
                cur[2] + params.step_mm * dir[2],
            ];
            let v = to_voxel(next);
            if !in_mask(mask, v) {
                break;
            }
            points.push(next);
            cur = next;
            match field.direction_at_voxel(v, Some(dir), params.max_angle_deg) {
                Some(d) => dir = d,
                None => break,
            }
        }
        points
    };

    let lines: Vec<Option<Streamline>> = seeds
        .par_iter()
        .map(|&seed| {
            let v = to_voxel(seed);
            if !in_mask(mask, v) {
                return None;
            }
            let d0 = field.direction_at_voxel(v, None, params.max_angle_deg)?;
            let forward = half_track(seed, d0);
            let mut backward = half_track(seed, [-d0[0], -d0[1], -d0[2]]);
            backward.reverse();
            backward.pop(); // seed sits at the end after reversal
            backward.extend(forward);
            let line = Streamline { points: backward };
            let len = line.length_mm();
            if line.points.len() >= 2
                && len >= params.min_length_mm
                && len <= params.max_length_mm
            {
                Some(line)
            } else {
                None
            }
        })
        .collect();

    Ok(lines.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::SymMat3;

    fn uniform_z_field(dims: [usize; 3]) -> TensorField {
        let mut vol = Volume::zeros(dims, 6, [1.0, 1.0, 1.0]);
        for idx in 0..vol.n_voxels() {
            vol.set_voxel_sym(idx, &SymMat3::diag(0.4, 0.4, 2.0));
        }
        TensorField::new(&vol).unwrap()
    }

    fn full_mask(dims: [usize; 3]) -> Volume {
        let mut mask = Volume::zeros(dims, 1, [1.0, 1.0, 1.0]);
        for v in mask.data_mut() {
            *v = 1.0;
        }
        mask
    }

    #[test]
    fn params_validation() {
        assert!(TrackingParams::default().validate().is_ok());
        assert!(TrackingParams { step_mm: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrackingParams { max_angle_deg: 95.0, ..Default::default() }
            .validate()
            .is_err());
        assert!(TrackingParams {
            min_length_mm: 400.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn seed_counts_and_determinism() {
        let mut mask = Volume::zeros([4, 4, 4], 1, [1.0, 1.0, 1.0]);
        assert!(seed_mask(&mask, 2, 0).unwrap().is_empty());

        mask.set(1, 2, 3, 0, 1.0);
        let seeds = seed_mask(&mask, 2, 7).unwrap();
        assert_eq!(seeds.len(), 2);
        for s in &seeds {
            assert!((s[0] - 1.0).abs() <= 0.5);
            assert!((s[1] - 2.0).abs() <= 0.5);
            assert!((s[2] - 3.0).abs() <= 0.5);
        }
        assert_eq!(seeds, seed_mask(&mask, 2, 7).unwrap());
        assert_ne!(seeds, seed_mask(&mask, 2, 8).unwrap());

        let full = full_mask([4, 4, 4]);
        assert_eq!(seed_mask(&full, 2, 0).unwrap().len(), 2 * 64);
    }

    #[test]
    fn direction_antipodal_alignment() {
        let field = uniform_z_field([4, 4, 4]);
        let d = field
            .direction_at_voxel([1.5, 1.5, 1.5], Some([0.0, 0.0, 1.0]), 60.0)
            .unwrap();
        assert!(d[2] > 0.999);
        let d = field
            .direction_at_voxel([1.5, 1.5, 1.5], Some([0.0, 0.0, -1.0]), 60.0)
            .unwrap();
        assert!(d[2] < -0.999);
    }

    #[test]
    fn angle_gate_terminates() {
        let field = uniform_z_field([4, 4, 4]);
        // Incoming direction orthogonal to the field: 90 degrees > 60.
        assert!(field
            .direction_at_voxel([1.5, 1.5, 1.5], Some([1.0, 0.0, 0.0]), 60.0)
            .is_none());
    }

    #[test]
    fn isotropic_field_yields_no_streamlines() {
        let mut vol = Volume::zeros([6, 6, 20], 6, [1.0, 1.0, 1.0]);
        for idx in 0..vol.n_voxels() {
            vol.set_voxel_sym(idx, &SymMat3::diag(0.7, 0.7, 0.7));
        }
        let field = TensorField::new(&vol).unwrap();
        let mask = full_mask([6, 6, 20]);
        let lines = track(&field, &mask, &TrackingParams::default(), 0).unwrap();
        assert!(lines.is_empty());
    }

    #[test]
    fn corridor_lengths_and_filters() {
        // 40-voxel corridor along z in a 6x6x48 grid, 1 mm spacing.
        let dims = [6, 6, 48];
        let field = uniform_z_field(dims);
        let mut mask = Volume::zeros(dims, 1, [1.0, 1.0, 1.0]);
        for z in 4..44 {
            for y in 1..5 {
                for x in 1..5 {
                    mask.set(x, y, z, 0, 1.0);
                }
            }
        }
        let params = TrackingParams {
            seeds_per_voxel: 1,
            ..Default::default()
        };
        let lines = track(&field, &mask, &params, 3).unwrap();
        assert!(!lines.is_empty());
        for line in &lines {
            let len = line.length_mm();
            assert!((len - 40.0).abs() <= 1.5, "length {len}");
            // Angle invariant: consecutive segments never turn.
            for w in line.points.windows(3) {
                let a = [
                    w[1][0] - w[0][0],
                    w[1][1] - w[0][1],
                    w[1][2] - w[0][2],
                ];
                let b = [
                    w[2][0] - w[1][0],
                    w[2][1] - w[1][1],
                    w[2][2] - w[1][2],
                ];
                let cos = dot3(spd::normalize3(a), spd::normalize3(b));
                assert!(cos >= 60.0f64.to_radians().cos() - 1e-9);
            }
        }

        // A 5 mm corridor falls below the 10 mm filter.
        let mut short_mask = Volume::zeros(dims, 1, [1.0, 1.0, 1.0]);
        for z in 20..25 {
            for y in 1..5 {
                for x in 1..5 {
                    short_mask.set(x, y, z, 0, 1.0);
                }
            }
        }
        let lines = track(&field, &short_mask, &params, 3).unwrap();
        assert!(lines.is_empty(), "short corridor must be filtered out");
    }

    #[test]
    fn tracking_is_deterministic() {
        let dims = [6, 6, 30];
        let field = uniform_z_field(dims);
        let mask = full_mask(dims);
        let params = TrackingParams {
            seeds_per_voxel: 1,
            min_length_mm: 5.0,
            ..Default::default()
        };
        let a = track(&field, &mask, &params, 11).unwrap();
        let b = track(&field, &mask, &params, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn odf_crossing_stays_on_axis() {
        // 90-degree crossing: equal-weight mixture of x- and z-aligned
        // single-fiber ODFs at every voxel.
        let grid = SphereGrid::icosphere(3);
        let basis = ShBasis::new(4, &grid).unwrap();
        let dims = [4, 4, 4];

        let kernel = |d: [f64; 3], axis: [f64; 3]| -> f64 {
            // Gaussian-profile ODF of a prolate tensor along `axis`.
            let c = dot3(d, axis);
            let q = 1.0 / 0.3 + c * c * (1.0 / 2.0 - 1.0 / 0.3);
            q.powf(-1.5)
        };
        let psi: Vec<f64> = grid
            .directions()
            .iter()
            .map(|&d| {
                let p = 0.5 * kernel(d, [1.0, 0.0, 0.0]) + 0.5 * kernel(d, [0.0, 0.0, 1.0]);
                p.sqrt()
            })
            .collect();
        let coeffs = odf::fit_sh(&psi, &grid, &basis).unwrap();

        let mut vol = Volume::zeros(dims, 15, [1.0, 1.0, 1.0]);
        for idx in 0..vol.n_voxels() {
            vol.set_voxel(idx, coeffs.coeffs());
        }
        let field = OdfField::new(&vol, &grid, &basis, PeakParams::default()).unwrap();

        // Two peaks exist; the tracker keeps following the incoming axis.
        let along_x = field
            .direction_at_voxel([1.5, 1.5, 1.5], Some([1.0, 0.0, 0.0]), 60.0)
            .unwrap();
        assert!(along_x[0].abs() > 0.99, "{along_x:?}");
        let along_z = field
            .direction_at_voxel([1.5, 1.5, 1.5], Some([0.0, 0.0, 1.0]), 60.0)
            .unwrap();
        assert!(along_z[2].abs() > 0.99, "{along_z:?}");
    }
}
