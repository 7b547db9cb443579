//! Quantitative comparison of diffusion fields and tractograms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::StreamlineFile;
use crate::odf::{self, PeakParams, ShBasis, SphereGrid};
use crate::ops;
use crate::spd::{self, SpdTensor};
use crate::volume::{Domain, Volume, FULL_TENSOR_CHANNELS, SYM_TENSOR_CHANNELS};

/// |a.b| / (|a||b|): absolute-value cosine, invariant to sign flips of
/// either vector.
pub fn cosine_similarity(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let na = spd::norm3(a);
    let nb = spd::norm3(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidParameter(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((spd::dot3(a, b).abs() / (na * nb)).min(1.0))
}

/// Per-voxel principal orientations of a diffusion field: the leading
/// eigenvector for tensors, the strongest ODF peak for coefficient volumes.
/// `None` marks ill-defined voxels (eigenvalue ties, degenerate tensors, no
/// peak above threshold).
pub fn principal_direction_map(
    vol: &Volume,
    odf_ctx: Option<(&SphereGrid, &ShBasis)>,
) -> Result<Vec<Option<[f64; 3]>>> {
    match vol.channels() {
        SYM_TENSOR_CHANNELS | FULL_TENSOR_CHANNELS => (0..vol.n_voxels())
            .into_par_iter()
            .map(|idx| {
                let m = vol.voxel_sym(idx)?;
                if !m.is_finite() {
                    return Ok(None);
                }
                let e = spd::eig_sym3(&m)?;
                Ok(spd::principal_direction(&e).ok())
            })
            .collect(),
        k if odf::order_for_size(k).is_some() && k > 1 => {
            let (grid, basis) = odf_ctx.ok_or_else(|| {
                Error::InvalidParameter(
                    "ODF volume needs a sphere grid and basis for peak extraction".into(),
                )
            })?;
            if basis.size() != k {
                return Err(Error::BasisSizeMismatch {
                    got: k,
                    expected: basis.size(),
                });
            }
            let params = PeakParams::default();
            (0..vol.n_voxels())
                .into_par_iter()
                .map(|idx| {
                    let mut c = vol.voxel(idx);
                    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(norm > 0.5) {
                        return Ok(None);
                    }
                    for v in &mut c {
                        *v /= norm;
                    }
                    let coeffs = match odf::ShCoeffs::new(c) {
                        Ok(c) => c,
                        Err(_) => return Ok(None),
                    };
                    let peaks = odf::odf_maxima(&coeffs, grid, basis, &params)?;
                    Ok(peaks.first().map(|p| p.direction))
                })
                .collect()
        }
        k => Err(Error::InvalidParameter(format!(
            "principal directions of a {k}-channel volume"
        ))),
    }
}

/// Outcome of a voxelwise orientation comparison.
#[derive(Debug, Clone)]
pub struct FieldSimilarity {
    pub mean: f64,
    /// Number of voxels entering the mean.
    pub compared: usize,
    /// Reference voxels above threshold whose direction is ill-defined.
    pub undefined_reference: usize,
    /// Voxels where only the generated direction is ill-defined.
    pub undefined_generated: usize,
    /// Per-voxel |cos| map (0 outside the evaluation mask), exportable as a
    /// slice image.
    pub map: Volume,
}

/// Mean absolute-cosine similarity between principal orientations over
/// voxels where the reference anisotropy (FA or GFA) meets `threshold`.
/// Voxels with an ill-defined direction on either side are excluded from the
/// mean and counted.
pub fn field_similarity(
    gen: &Volume,
    reference: &Volume,
    threshold: f64,
    odf_ctx: Option<(&SphereGrid, &ShBasis)>,
) -> Result<FieldSimilarity> {
    if !gen.same_grid(reference) {
        return Err(Error::ShapeMismatch("fields on different grids".into()));
    }
    let ref_aniso = ops::anisotropy_map(reference)?;
    let gen_dirs = principal_direction_map(gen, odf_ctx)?;
    let ref_dirs = principal_direction_map(reference, odf_ctx)?;

    let mut map = reference.like(1, Domain::Manifold);
    let mut sum = 0.0f64;
    let mut compared = 0usize;
    let mut undefined_reference = 0usize;
    let mut undefined_generated = 0usize;
    for idx in 0..reference.n_voxels() {
        if (ref_aniso.data()[idx] as f64) < threshold {
            continue;
        }
        match (ref_dirs[idx], gen_dirs[idx]) {
            (None, _) => undefined_reference += 1,
            (Some(_), None) => undefined_generated += 1,
            (Some(r), Some(g)) => {
                let cos = cosine_similarity(r, g)?;
                map.data_mut()[idx] = cos as f32;
                sum += cos;
                compared += 1;
            }
        }
    }
    if compared == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(FieldSimilarity {
        mean: sum / compared as f64,
        compared,
        undefined_reference,
        undefined_generated,
        map,
    })
}

/// Mean squared error between the anisotropy maps (FA or GFA) over voxels
/// where the reference anisotropy meets `threshold`.
pub fn fa_mse(gen: &Volume, reference: &Volume, threshold: f64) -> Result<f64> {
    if !gen.same_grid(reference) {
        return Err(Error::ShapeMismatch("fields on different grids".into()));
    }
    let a_gen = ops::anisotropy_map(gen)?;
    let a_ref = ops::anisotropy_map(reference)?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for idx in 0..reference.n_voxels() {
        let r = a_ref.data()[idx] as f64;
        if r < threshold {
            continue;
        }
        let d = a_gen.data()[idx] as f64 - r;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean Log-Euclidean geodesic distance between corresponding voxels, over
/// voxels where the reference (second argument) anisotropy meets
/// `threshold`. The per-voxel distance is symmetric; at threshold 0 the
/// whole measure is symmetric in its arguments since every voxel enters.
pub fn mean_geodesic(a: &Volume, reference: &Volume, threshold: f64) -> Result<f64> {
    let b = reference;
    if !a.same_grid(b) || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch("fields on different grids".into()));
    }
    let an_b = ops::anisotropy_map(b)?;
    let is_tensor = a.channels() == SYM_TENSOR_CHANNELS || a.channels() == FULL_TENSOR_CHANNELS;
    let included: Vec<usize> = (0..a.n_voxels())
        .filter(|&idx| an_b.data()[idx] as f64 >= threshold)
        .collect();
    if included.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dists: Result<Vec<f64>> = included
        .par_iter()
        .map(|&idx| {
            if is_tensor {
                let pa = SpdTensor::new_lenient(a.voxel_sym(idx)?)?;
                let pb = SpdTensor::new_lenient(b.voxel_sym(idx)?)?;
                Ok(spd::geodesic_spd(&pa, &pb))
            } else {
                let norm_voxel = |v: &Volume| -> Result<Vec<f64>> {
                    let mut c = v.voxel(idx);
                    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n <= 0.0 {
                        return Err(Error::DegenerateTensor);
                    }
                    for x in &mut c {
                        *x /= n;
                    }
                    Ok(c)
                };
                let va = odf::sphere_log(&norm_voxel(a)?)?;
                let vb = odf::sphere_log(&norm_voxel(b)?)?;
                Ok(va
                    .iter()
                    .zip(vb.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt())
            }
        })
        .collect();
    let dists = dists?;
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// Boolean voxel mask on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn from_volume(vol: &Volume, threshold: f32) -> Result<BinaryMask> {
        if vol.channels() != 1 {
            return Err(Error::InvalidParameter(
                "mask source must be a scalar volume".into(),
            ));
        }
        Ok(BinaryMask {
            dims: vol.dims(),
            data: vol.data().iter().map(|&v| v > threshold).collect(),
        })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch("masks on different grids".into()));
        }
        Ok(())
    }

    fn intersection(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    fn union(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a || **b)
            .count()
    }
}

/// 2 |A n B| / (|A| + |B|).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same(b)?;
    let denom = a.count() + b.count();
    if denom == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(2.0 * a.intersection(b) as f64 / denom as f64)
}

/// Overlap |B n A| / |A|: how much of reference bundle A is reconstructed
/// by B.
pub fn overlap(a_ref: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a_ref.check_same(b)?;
    let na = a_ref.count();
    if na == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(a_ref.intersection(b) as f64 / na as f64)
}

/// Overreach (|B u A| - |B n A|) / |A|: not symmetric, can exceed 1.
pub fn overreach(a_ref: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a_ref.check_same(b)?;
    let na = a_ref.count();
    if na == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((a_ref.union(b) - a_ref.intersection(b)) as f64 / na as f64)
}

/// The more common overreach variant (|B| - |B n A|) / |A|, available for
/// comparison against other toolchains.
pub fn overreach_common(a_ref: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a_ref.check_same(b)?;
    let na = a_ref.count();
    if na == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((b.count() - a_ref.intersection(b)) as f64 / na as f64)
}

/// Aggregate measures of a tractogram on a reference grid.
#[derive(Debug, Clone)]
pub struct TractogramStats {
    pub count: usize,
    pub mean_length_mm: f64,
    /// Voxels traversed by at least one streamline.
    pub volume_voxels: usize,
    /// Streamline count per voxel.
    pub density: Volume,
}

impl TractogramStats {
    pub fn occupied_mask(&self) -> BinaryMask {
        BinaryMask {
            dims: self.density.dims(),
            data: self.density.data().iter().map(|&v| v > 0.0).collect(),
        }
    }
}

/// Polyline arc length in millimeters.
pub fn streamline_length(points: &[[f32; 3]]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let d = [
                (w[1][0] - w[0][0]) as f64,
                (w[1][1] - w[0][1]) as f64,
                (w[1][2] - w[0][2]) as f64,
            ];
            spd::norm3(d)
        })
        .sum()
}

/// Mean length, occupied-voxel volume and a density map. A voxel counts as
/// occupied when any polyline segment intersects it, not only when a vertex
/// falls inside.
pub fn tractogram_stats(tractogram: &StreamlineFile, grid: &Volume) -> Result<TractogramStats> {
    if tractogram.is_empty() {
        return Err(Error::EmptyTractogram);
    }
    let mut density = grid.like(1, Domain::Manifold);
    let dims = grid.dims();
    let n = grid.n_voxels();
    let mut counts = vec![0u32; n];
    let mut total_len = 0.0f64;
    for line in &tractogram.streamlines {
        total_len += streamline_length(line);
        let mut touched = std::collections::HashSet::new();
        for w in line.windows(2) {
            let a = grid.world_to_voxel([w[0][0] as f64, w[0][1] as f64, w[0][2] as f64])?;
            let b = grid.world_to_voxel([w[1][0] as f64, w[1][1] as f64, w[1][2] as f64])?;
            segment_cells(a, b, dims, |cell| {
                touched.insert(cell);
            });
        }
        for [x, y, z] in touched {
            counts[(z * dims[1] + y) * dims[0] + x] += 1;
        }
    }
    let volume_voxels = counts.iter().filter(|&&c| c > 0).count();
    for (d, &c) in density.data_mut().iter_mut().zip(&counts) {
        *d = c as f32;
    }
    Ok(TractogramStats {
        count: tractogram.len(),
        mean_length_mm: total_len / tractogram.len() as f64,
        volume_voxels,
        density,
    })
}

/// Enumerates every voxel cell a segment passes through. Coordinates are
/// continuous voxel indices (voxel i spans [i - 0.5, i + 0.5)); the segment
/// is cut at every half-integer plane crossing and each piece is assigned to
/// the cell of its midpoint.
pub fn segment_cells(
    a: [f64; 3],
    b: [f64; 3],
    dims: [usize; 3],
    mut visit: impl FnMut([usize; 3]),
) {
    // Shift so cell i spans [i, i + 1).
    let a = [a[0] + 0.5, a[1] + 0.5, a[2] + 0.5];
    let b = [b[0] + 0.5, b[1] + 0.5, b[2] + 0.5];
    let mut ts = vec![0.0f64, 1.0];
    for axis in 0..3 {
        let (lo, hi) = if a[axis] <= b[axis] {
            (a[axis], b[axis])
        } else {
            (b[axis], a[axis])
        };
        let d = b[axis] - a[axis];
        if d.abs() < 1e-12 {
            continue;
        }
        let mut k = lo.ceil();
        while k <= hi {
            let t = (k - a[axis]) / d;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
            k += 1.0;
        }
    }
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for w in ts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if w[1] - w[0] <= 0.0 {
            continue;
        }
        let p = [
            a[0] + mid * (b[0] - a[0]),
            a[1] + mid * (b[1] - a[1]),
            a[2] + mid * (b[2] - a[2]),
        ];
        let cell = [p[0].floor(), p[1].floor(), p[2].floor()];
        if cell[0] >= 0.0
            && cell[1] >= 0.0
            && cell[2] >= 0.0
            && (cell[0] as usize) < dims[0]
            && (cell[1] as usize) < dims[1]
            && (cell[2] as usize) < dims[2]
        {
            visit([cell[0] as usize, cell[1] as usize, cell[2] as usize]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::SymMat3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask_from_indices(dims: [usize; 3], idx: &[usize]) -> BinaryMask {
        let mut data = vec![false; dims[0] * dims[1] * dims[2]];
        for &i in idx {
            data[i] = true;
        }
        BinaryMask { dims, data }
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity([1.0, 0.0, 0.0], [-3.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity([0.0; 3], [1.0, 0.0, 0.0]).is_err());
    }

    fn tensor_field(dims: [usize; 3], m: &SymMat3) -> Volume {
        let mut v = Volume::zeros(dims, 6, [1.0, 1.0, 1.0]);
        for idx in 0..v.n_voxels() {
            v.set_voxel_sym(idx, m);
        }
        v
    }

    #[test]
    fn identical_fields_have_similarity_one() {
        let f = tensor_field([4, 4, 4], &SymMat3::diag(2.0, 0.5, 0.5));
        let s = field_similarity(&f, &f, 0.2, None).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert_eq!(s.compared, 64);
        assert_eq!(s.undefined_reference, 0);
    }

    #[test]
    fn orthogonal_fields_have_similarity_zero() {
        let a = tensor_field([3, 3, 3], &SymMat3::diag(2.0, 0.5, 0.5)); // +x
        let b = tensor_field([3, 3, 3], &SymMat3::diag(0.5, 2.0, 0.5)); // +y
        let s = field_similarity(&a, &b, 0.2, None).unwrap();
        assert!(s.mean.abs() < 1e-12);
    }

    #[test]
    fn unreachable_threshold_is_empty_mask() {
        let f = tensor_field([3, 3, 3], &SymMat3::diag(2.0, 0.5, 0.5));
        assert!(matches!(
            field_similarity(&f, &f, 1.1, None),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn fa_mse_offset_is_squared_offset() {
        // FA(2, 0.5, 0.5) vs FA(2, 0.8, 0.8): constant difference squared.
        let a = tensor_field([4, 4, 4], &SymMat3::diag(2.0, 0.5, 0.5));
        let b = tensor_field([4, 4, 4], &SymMat3::diag(2.0, 0.8, 0.8));
        assert_eq!(fa_mse(&a, &a, 0.2).unwrap(), 0.0);
        let fa_a = crate::ops::fa_map(&a).unwrap().data()[0] as f64;
        let fa_b = crate::ops::fa_map(&b).unwrap().data()[0] as f64;
        let want = (fa_a - fa_b) * (fa_a - fa_b);
        let got = fa_mse(&b, &a, 0.2).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn mean_geodesic_cases() {
        let e = std::f64::consts::E;
        let i = tensor_field([3, 3, 3], &SymMat3::IDENTITY);
        let ei = tensor_field([3, 3, 3], &SymMat3::diag(e, e, e));
        assert_eq!(mean_geodesic(&i, &i, 0.0).unwrap(), 0.0);
        let d = mean_geodesic(&i, &ei, 0.0).unwrap();
        assert!((d - 3.0f64.sqrt()).abs() < 1e-6);
        let d2 = mean_geodesic(&ei, &i, 0.0).unwrap();
        assert!((d - d2).abs() < 1e-12, "symmetry");
    }

    #[test]
    fn mask_measures() {
        let dims = [4, 4, 2];
        let a = mask_from_indices(dims, &(0..8).collect::<Vec<_>>());
        let b = mask_from_indices(dims, &(0..12).collect::<Vec<_>>());
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap(&a, &a).unwrap(), 1.0);
        assert_eq!(overreach(&a, &a).unwrap(), 0.0);

        // A of 8 voxels, B of A plus 4 extra.
        assert!((dice(&a, &b).unwrap() - 0.8).abs() < 1e-15);
        assert!((overreach(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(overlap(&a, &b).unwrap(), 1.0);
        assert!((overreach_common(&a, &b).unwrap() - 0.5).abs() < 1e-15);

        // Superset reconstruction covers A fully.
        assert_eq!(overlap(&a, &b).unwrap(), 1.0);

        // Disjoint equal-size masks: Dice 0, overreach (16-0)/8 = 2.
        let c = mask_from_indices(dims, &(8..16).collect::<Vec<_>>());
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert!((overreach(&a, &c).unwrap() - 2.0).abs() < 1e-15);
        // Written form is not symmetric in general but is here by size.
        let half = mask_from_indices(dims, &(0..4).collect::<Vec<_>>());
        assert_eq!(overlap(&a, &half).unwrap(), 0.5);
    }

    #[test]
    fn straight_line_stats() {
        let grid = Volume::zeros([50, 10, 10], 1, [1.0, 1.0, 1.0]);
        let line: Vec<[f32; 3]> = (0..=40).map(|i| [i as f32, 5.0, 5.0]).collect();
        let stats = tractogram_stats(
            &StreamlineFile {
                streamlines: vec![line],
            },
            &grid,
        )
        .unwrap();
        assert!((stats.mean_length_mm - 40.0).abs() < 1e-9);
        assert_eq!(stats.volume_voxels, 41);
        assert!(matches!(
            tractogram_stats(&StreamlineFile::default(), &grid),
            Err(Error::EmptyTractogram)
        ));
    }

    #[test]
    fn traversal_matches_slab_oracle() {
        // Independent oracle: brute-force segment/box overlap test per voxel
        // (slab clipping), entirely separate from the plane-crossing walk.
        let dims = [16usize, 16, 16];
        let grid = Volume::zeros(dims, 1, [1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let a = [
                rng.gen_range(-2.0..18.0),
                rng.gen_range(-2.0..18.0),
                rng.gen_range(-2.0..18.0),
            ];
            let b = [
                rng.gen_range(-2.0..18.0),
                rng.gen_range(-2.0..18.0),
                rng.gen_range(-2.0..18.0),
            ];
            let mut walk = std::collections::BTreeSet::new();
            segment_cells(a, b, dims, |c| {
                walk.insert(c);
            });

            let mut oracle = std::collections::BTreeSet::new();
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        // Cell [x,y,z] spans [x-0.5, x+0.5) etc.
                        let lo = [x as f64 - 0.5, y as f64 - 0.5, z as f64 - 0.5];
                        let hi = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                        let mut t0 = 0.0f64;
                        let mut t1 = 1.0f64;
                        let mut hit = true;
                        for axis in 0..3 {
                            let d = b[axis] - a[axis];
                            if d.abs() < 1e-12 {
                                if a[axis] < lo[axis] || a[axis] >= hi[axis] {
                                    hit = false;
                                    break;
                                }
                            } else {
                                let mut ta = (lo[axis] - a[axis]) / d;
                                let mut tb = (hi[axis] - a[axis]) / d;
                                if ta > tb {
                                    std::mem::swap(&mut ta, &mut tb);
                                }
                                t0 = t0.max(ta);
                                t1 = t1.min(tb);
                                if t0 >= t1 {
                                    hit = false;
                                    break;
                                }
                            }
                        }
                        if hit {
                            oracle.insert([x, y, z]);
                        }
                    }
                }
            }
            assert_eq!(walk, oracle, "traversal disagrees with slab oracle");
        }
    }

    #[test]
    fn density_volume_matches_oracle_rasterizer() {
        let dims = [12usize, 12, 12];
        let grid = Volume::zeros(dims, 1, [1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let streamlines: Vec<Vec<[f32; 3]>> = (0..100)
            .map(|_| {
                (0..5)
                    .map(|_| {
                        [
                            rng.gen_range(0.0f32..11.0),
                            rng.gen_range(0.0f32..11.0),
                            rng.gen_range(0.0f32..11.0),
                        ]
                    })
                    .collect()
            })
            .collect();
        let stats =
            tractogram_stats(&StreamlineFile { streamlines: streamlines.clone() }, &grid)
                .unwrap();
        // Dense supersampling oracle.
        let mut occupied = std::collections::BTreeSet::new();
        for line in &streamlines {
            for w in line.windows(2) {
                let a = w[0];
                let b = w[1];
                let steps = 4000;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let p = [
                        a[0] as f64 + t * (b[0] - a[0]) as f64,
                        a[1] as f64 + t * (b[1] - a[1]) as f64,
                        a[2] as f64 + t * (b[2] - a[2]) as f64,
                    ];
                    let c = [
                        (p[0] + 0.5).floor() as i64,
                        (p[1] + 0.5).floor() as i64,
                        (p[2] + 0.5).floor() as i64,
                    ];
                    if c.iter().all(|&v| v >= 0)
                        && (c[0] as usize) < dims[0]
                        && (c[1] as usize) < dims[1]
                        && (c[2] as usize) < dims[2]
                    {
                        occupied.insert([c[0] as usize, c[1] as usize, c[2] as usize]);
                    }
                }
            }
        }
        assert_eq!(stats.volume_voxels, occupied.len());
    }
}
