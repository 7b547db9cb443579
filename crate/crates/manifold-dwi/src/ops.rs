//! Volume-level operations: log/exp maps over voxel grids, log-domain
//! resampling, patch decomposition, normalization and manifold-validity
//! audits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::odf::{self, ShBasis};
use crate::spd::{self, SymMat3, TangentSym3};
use crate::volume::{
    Domain, Volume, FULL_TENSOR_CHANNELS, SCALAR_CHANNELS, SYM_TENSOR_CHANNELS,
};

/// Voxelwise matrix log of a tensor volume (6 or 9 channels, manifold
/// domain). 9-channel layouts are symmetrized first. `lenient` clamps
/// eigenvalues to the SPD floor instead of failing on non-SPD voxels.
pub fn log_tensor_volume(vol: &Volume, lenient: bool) -> Result<Volume> {
    if vol.channels() != SYM_TENSOR_CHANNELS && vol.channels() != FULL_TENSOR_CHANNELS {
        return Err(Error::InvalidParameter(format!(
            "tensor log on a {}-channel volume",
            vol.channels()
        )));
    }
    if vol.domain() != Domain::Manifold {
        return Err(Error::InvalidParameter(
            "tensor volume is already in the tangent domain".into(),
        ));
    }
    let tangents: Result<Vec<SymMat3>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let m = vol.voxel_sym(idx)?;
            let t = if lenient {
                spd::log_id_sym_lenient(&m)?
            } else {
                spd::log_id_sym(&m)?
            };
            Ok(t.0)
        })
        .collect();
    let tangents = tangents?;
    let mut out = vol.like(SYM_TENSOR_CHANNELS, Domain::Tangent);
    for (idx, t) in tangents.iter().enumerate() {
        out.set_voxel_sym(idx, t);
    }
    Ok(out)
}

/// Voxelwise matrix exp of a tangent tensor volume; the output is SPD at
/// every voxel by construction.
pub fn exp_tensor_volume(vol: &Volume) -> Result<Volume> {
    if vol.channels() != SYM_TENSOR_CHANNELS {
        return Err(Error::InvalidParameter(format!(
            "tensor exp on a {}-channel volume",
            vol.channels()
        )));
    }
    if vol.domain() != Domain::Tangent {
        return Err(Error::InvalidParameter(
            "tensor exp expects a tangent-domain volume".into(),
        ));
    }
    let mapped: Result<Vec<SymMat3>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let s = TangentSym3(vol.voxel_sym(idx)?);
            Ok(spd::exp_id(&s)?.into_matrix())
        })
        .collect();
    let mapped = mapped?;
    let mut out = vol.like(SYM_TENSOR_CHANNELS, Domain::Manifold);
    for (idx, m) in mapped.iter().enumerate() {
        out.set_voxel_sym(idx, m);
    }
    Ok(out)
}

/// Voxelwise sphere log of an ODF coefficient volume. Voxels must be unit
/// norm within 1e-4 (f32 storage quantizes the norm) and inside the positive
/// orthant; `lenient` maps invalid voxels to the zero tangent (the uniform
/// distribution) instead of failing.
pub fn log_odf_volume(vol: &Volume, lenient: bool) -> Result<Volume> {
    if vol.domain() != Domain::Manifold {
        return Err(Error::InvalidParameter(
            "ODF volume is already in the tangent domain".into(),
        ));
    }
    let k = vol.channels();
    let mapped: Result<Vec<Vec<f64>>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let mut c = vol.voxel(idx);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-4 || c[0] <= 0.0 {
                if lenient {
                    return Ok(vec![0.0; k]);
                }
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::NotUnitNorm { norm });
                }
                return Err(Error::OutsidePositiveOrthant { c0: c[0] });
            }
            for v in &mut c {
                *v /= norm;
            }
            odf::sphere_log(&c)
        })
        .collect();
    let mapped = mapped?;
    let mut out = vol.like(k, Domain::Tangent);
    for (idx, v) in mapped.iter().enumerate() {
        out.set_voxel(idx, v);
    }
    Ok(out)
}

/// Voxelwise sphere exp of a tangent ODF volume; outputs are unit norm at
/// every voxel.
pub fn exp_odf_volume(vol: &Volume) -> Result<Volume> {
    if vol.domain() != Domain::Tangent {
        return Err(Error::InvalidParameter(
            "ODF exp expects a tangent-domain volume".into(),
        ));
    }
    let k = vol.channels();
    let mapped: Result<Vec<Vec<f64>>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let mut v = vol.voxel(idx);
            v[0] = 0.0;
            odf::sphere_exp(&v)
        })
        .collect();
    let mapped = mapped?;
    let mut out = vol.like(k, Domain::Manifold);
    for (idx, c) in mapped.iter().enumerate() {
        out.set_voxel(idx, c);
    }
    Ok(out)
}

/// Output grid of an upsampling request.
#[derive(Debug, Clone, Copy)]
pub enum UpsampleTarget {
    Factor(usize),
    Dims([usize; 3]),
}

/// Channelwise trilinear interpolation on a corner-aligned grid.
///
/// Multichannel (diffusion) volumes must already be in the Log-Euclidean
/// tangent domain; interpolating raw SPD tensors would reintroduce the
/// swelling artifact the log map exists to avoid, so such inputs are
/// rejected. Borders clamp to the edge voxel.
pub fn upsample_log_trilinear(vol: &Volume, target: UpsampleTarget) -> Result<Volume> {
    if vol.channels() > SCALAR_CHANNELS && vol.domain() != Domain::Tangent {
        return Err(Error::InvalidParameter(
            "resampling of diffusion data must happen in the log (tangent) domain".into(),
        ));
    }
    let dims = vol.dims();
    let out_dims = match target {
        UpsampleTarget::Factor(f) => {
            if f < 1 {
                return Err(Error::InvalidParameter("upsample factor < 1".into()));
            }
            [dims[0] * f, dims[1] * f, dims[2] * f]
        }
        UpsampleTarget::Dims(d) => {
            if d.iter().zip(dims.iter()).any(|(o, i)| o < i) {
                return Err(Error::InvalidParameter(
                    "target dims below input dims".into(),
                ));
            }
            d
        }
    };
    if out_dims == dims {
        return Ok(vol.clone());
    }

    // Corner-aligned: out voxel i maps to in coordinate i*(n_in-1)/(n_out-1).
    let scale = |n_in: usize, n_out: usize| -> f64 {
        if n_out <= 1 {
            0.0
        } else {
            (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
        }
    };
    let sx = scale(dims[0], out_dims[0]);
    let sy = scale(dims[1], out_dims[1]);
    let sz = scale(dims[2], out_dims[2]);

    let n_out = out_dims[0] * out_dims[1] * out_dims[2];
    let channels = vol.channels();
    let data: Vec<f32> = (0..channels)
        .flat_map(|c| {
            (0..n_out)
                .into_par_iter()
                .map(|idx| {
                    let x = idx % out_dims[0];
                    let y = (idx / out_dims[0]) % out_dims[1];
                    let z = idx / (out_dims[0] * out_dims[1]);
                    trilinear_sample(
                        vol,
                        c,
                        [x as f64 * sx, y as f64 * sy, z as f64 * sz],
                    ) as f32
                })
                .collect::<Vec<f32>>()
        })
        .collect();

    // Corners coincide in world space: scale the affine columns.
    let mut affine = *vol.affine();
    for row in affine.iter_mut().take(3) {
        row[0] *= sx;
        row[1] *= sy;
        row[2] *= sz;
    }
    let spacing = [
        vol.spacing()[0] * sx.max(f64::MIN_POSITIVE),
        vol.spacing()[1] * sy.max(f64::MIN_POSITIVE),
        vol.spacing()[2] * sz.max(f64::MIN_POSITIVE),
    ];
    Volume::from_parts(out_dims, channels, spacing, affine, vol.domain(), data)
}

/// Trilinear sample of channel `c` at a continuous voxel coordinate,
/// clamp-to-edge outside the grid.
pub fn trilinear_sample(vol: &Volume, c: usize, p: [f64; 3]) -> f64 {
    let dims = vol.dims();
    let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0);
    let x = clamp(p[0], dims[0]);
    let y = clamp(p[1], dims[1]);
    let z = clamp(p[2], dims[2]);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let x1 = (x0 + 1).min(dims[0] - 1);
    let y1 = (y0 + 1).min(dims[1] - 1);
    let z1 = (z0 + 1).min(dims[2] - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let fz = z - z0 as f64;
    let at = |i, j, k| vol.get(i, j, k, c) as f64;
    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
    let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
    let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
    let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Block-mean downsampling per channel; stands in for a learned residual
/// downsampler, and the interface accepts any replacement with the same
/// shape contract. Multichannel input must be tangent-domain.
pub fn downsample_avg(vol: &Volume, factor: usize) -> Result<Volume> {
    if factor < 1 {
        return Err(Error::InvalidParameter("downsample factor < 1".into()));
    }
    if vol.channels() > SCALAR_CHANNELS && vol.domain() != Domain::Tangent {
        return Err(Error::InvalidParameter(
            "resampling of diffusion data must happen in the log (tangent) domain".into(),
        ));
    }
    let dims = vol.dims();
    if dims.iter().any(|&d| d % factor != 0) {
        return Err(Error::ShapeMismatch(format!(
            "dims {dims:?} not divisible by factor {factor}"
        )));
    }
    let out_dims = [dims[0] / factor, dims[1] / factor, dims[2] / factor];
    let inv = 1.0 / (factor * factor * factor) as f64;
    let mut out = Volume::from_parts(
        out_dims,
        vol.channels(),
        [
            vol.spacing()[0] * factor as f64,
            vol.spacing()[1] * factor as f64,
            vol.spacing()[2] * factor as f64,
        ],
        *vol.affine(),
        vol.domain(),
        vec![0.0; out_dims[0] * out_dims[1] * out_dims[2] * vol.channels()],
    )?;
    // Block centers map onto the original grid: scale the affine columns and
    // shift the origin to the center of block (0,0,0).
    let mut affine = *vol.affine();
    let half = (factor as f64 - 1.0) / 2.0;
    for row in affine.iter_mut().take(3) {
        row[3] += (row[0] + row[1] + row[2]) * half;
        row[0] *= factor as f64;
        row[1] *= factor as f64;
        row[2] *= factor as f64;
    }
    out.set_affine(affine);
    for c in 0..vol.channels() {
        for z in 0..out_dims[2] {
            for y in 0..out_dims[1] {
                for x in 0..out_dims[0] {
                    let mut acc = 0.0f64;
                    for dz in 0..factor {
                        for dy in 0..factor {
                            for dx in 0..factor {
                                acc += vol.get(
                                    x * factor + dx,
                                    y * factor + dy,
                                    z * factor + dz,
                                    c,
                                ) as f64;
                            }
                        }
                    }
                    out.set(x, y, z, c, (acc * inv) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Origins and geometry of a patch decomposition; enough to reassemble the
/// original volume exactly.
#[derive(Debug, Clone)]
pub struct PatchIndex {
    pub dims: [usize; 3],
    pub channels: usize,
    pub size: usize,
    pub origins: Vec<[usize; 3]>,
}

/// Overlapping cubic patches fully inside the volume.
///
/// Origins step by `stride` per axis, count floor((n-size)/stride)+1; when
/// the stride does not divide (n-size) a final origin at n-size is added so
/// the decomposition always covers every voxel.
pub fn extract_patches(vol: &Volume, size: usize, stride: usize) -> Result<(Vec<Volume>, PatchIndex)> {
    let dims = vol.dims();
    if size == 0 || stride == 0 {
        return Err(Error::InvalidParameter("zero patch size or stride".into()));
    }
    if dims.iter().any(|&d| size > d) {
        return Err(Error::ShapeMismatch(format!(
            "patch size {size} exceeds dims {dims:?}"
        )));
    }
    let axis_positions = |n: usize| -> Vec<usize> {
        let mut pos: Vec<usize> = (0..=(n - size) / stride).map(|i| i * stride).collect();
        if (n - size) % stride != 0 {
            pos.push(n - size);
        }
        pos
    };
    let (px, py, pz) = (
        axis_positions(dims[0]),
        axis_positions(dims[1]),
        axis_positions(dims[2]),
    );
    let mut origins = Vec::with_capacity(px.len() * py.len() * pz.len());
    let mut patches = Vec::with_capacity(origins.capacity());
    for &z in &pz {
        for &y in &py {
            for &x in &px {
                origins.push([x, y, z]);
                patches.push(copy_patch(vol, [x, y, z], size));
            }
        }
    }
    Ok((
        patches,
        PatchIndex {
            dims,
            channels: vol.channels(),
            size,
            origins,
        },
    ))
}

pub fn copy_patch(vol: &Volume, origin: [usize; 3], size: usize) -> Volume {
    let mut p = Volume::zeros([size, size, size], vol.channels(), vol.spacing());
    p.set_domain(vol.domain());
    let mut affine = *vol.affine();
    let shift = vol.voxel_to_world([origin[0] as f64, origin[1] as f64, origin[2] as f64]);
    for (i, row) in affine.iter_mut().enumerate().take(3) {
        row[3] = shift[i];
    }
    p.set_affine(affine);
    for c in 0..vol.channels() {
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    p.set(
                        x,
                        y,
                        z,
                        c,
                        vol.get(origin[0] + x, origin[1] + y, origin[2] + z, c),
                    );
                }
            }
        }
    }
    p
}

/// Exact inverse of [`extract_patches`]: accumulate and average overlaps.
pub fn reassemble_patches(index: &PatchIndex, patches: &[Volume]) -> Result<Volume> {
    if patches.len() != index.origins.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patches for {} origins",
            patches.len(),
            index.origins.len()
        )));
    }
    let size = index.size;
    let n = index.dims[0] * index.dims[1] * index.dims[2];
    let mut acc = vec![0.0f64; n * index.channels];
    let mut count = vec![0.0f64; n];
    let vol_index = |x: usize, y: usize, z: usize| (z * index.dims[1] + y) * index.dims[0] + x;
    for (patch, origin) in patches.iter().zip(&index.origins) {
        if patch.dims() != [size, size, size] || patch.channels() != index.channels {
            return Err(Error::ShapeMismatch("patch geometry drifted".into()));
        }
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    let idx = vol_index(origin[0] + x, origin[1] + y, origin[2] + z);
                    count[idx] += 1.0;
                    for c in 0..index.channels {
                        acc[c * n + idx] += patch.get(x, y, z, c) as f64;
                    }
                }
            }
        }
    }
    if count.iter().any(|&c| c == 0.0) {
        return Err(Error::ShapeMismatch("patch decomposition has holes".into()));
    }
    let mut data = vec![0.0f32; n * index.channels];
    for c in 0..index.channels {
        for idx in 0..n {
            data[c * n + idx] = (acc[c * n + idx] / count[idx]) as f32;
        }
    }
    let mut out = Volume::zeros(index.dims, index.channels, patches[0].spacing());
    out.set_domain(patches[0].domain());
    out.data_mut().copy_from_slice(&data);
    Ok(out)
}

/// Affine min-max rescale of a scalar volume to [0, 1].
pub fn minmax_normalize(vol: &Volume) -> Result<Volume> {
    if vol.channels() != SCALAR_CHANNELS {
        return Err(Error::InvalidParameter(
            "min-max normalization expects a scalar volume".into(),
        ));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in vol.data() {
        let v = v as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite("volume values".into()));
        }
        min = min.min(v);
        max = max.max(v);
    }
    if max <= min {
        return Err(Error::DegenerateRange);
    }
    let scale = 1.0 / (max - min);
    let mut out = vol.clone();
    for v in out.data_mut() {
        *v = (((*v as f64) - min) * scale) as f32;
    }
    Ok(out)
}

/// Per-failure-kind counts from a manifold-validity audit.
///
/// `invalid` counts voxels violating the guarantees the exp maps provide:
/// strict positive definiteness for tensors; unit norm and the positive
/// orthant for ODF coefficients. Pointwise nonnegativity of the
/// reconstructed ODF is a stronger constraint that the exp map does not
/// enforce; it is audited into `odf_negative` and reported, never projected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidityReport {
    pub voxels: usize,
    /// Voxels failing any manifold-guarantee check.
    pub invalid: usize,
    pub non_finite: usize,
    /// Tensors: smallest eigenvalue at or below the SPD floor.
    pub non_spd: usize,
    /// 9-channel tensors with asymmetry beyond 1e-6.
    pub asymmetric: usize,
    /// ODFs: coefficient norm away from 1 beyond 1e-6.
    pub odf_norm: usize,
    /// ODFs: c0 <= 0.
    pub odf_orthant: usize,
    /// Advisory: reconstructed psi below -1e-6 somewhere on the grid.
    pub odf_negative: usize,
    /// Whether the grid-negativity scan ran (needs a basis).
    pub negativity_checked: bool,
}

impl std::fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} invalid of {} voxels (non_finite {}, non_spd {}, asymmetric {}, \
             odf_norm {}, odf_orthant {}, odf_negative {}{})",
            self.invalid,
            self.voxels,
            self.non_finite,
            self.non_spd,
            self.asymmetric,
            self.odf_norm,
            self.odf_orthant,
            self.odf_negative,
            if self.negativity_checked { "" } else { " [not checked]" },
        )
    }
}

/// Audits every voxel of a tensor (6/9-channel) or ODF volume against its
/// manifold constraints. Pass a basis to also scan ODF nonnegativity on the
/// grid.
pub fn audit_validity(vol: &Volume, odf_basis: Option<&ShBasis>) -> Result<ValidityReport> {
    let channels = vol.channels();
    let is_tensor = channels == SYM_TENSOR_CHANNELS || channels == FULL_TENSOR_CHANNELS;
    let is_odf = odf::order_for_size(channels).is_some() && channels > 1;
    if !is_tensor && !is_odf {
        return Err(Error::InvalidParameter(format!(
            "audit on unrecognized channel count {channels}"
        )));
    }
    if let Some(basis) = odf_basis {
        if is_odf && basis.size() != channels {
            return Err(Error::BasisSizeMismatch {
                got: channels,
                expected: basis.size(),
            });
        }
    }

    let per_voxel: Vec<ValidityReport> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let mut r = ValidityReport {
                voxels: 1,
                negativity_checked: !is_odf || odf_basis.is_some(),
                ..Default::default()
            };
            let mut bad = false;
            if is_tensor {
                if channels == FULL_TENSOR_CHANNELS && vol.voxel_asymmetry(idx) > 1e-6 {
                    r.asymmetric = 1;
                    bad = true;
                }
                let m = vol.voxel_sym(idx).expect("channel count checked");
                if !m.is_finite() {
                    r.non_finite = 1;
                    bad = true;
                } else {
                    let e = spd::eig_sym3(&m).expect("finite input");
                    if e.lambda[2] <= spd::LAMBDA_FLOOR {
                        r.non_spd = 1;
                        bad = true;
                    }
                }
            } else {
                let c = vol.voxel(idx);
                if c.iter().any(|v| !v.is_finite()) {
                    r.non_finite = 1;
                    bad = true;
                } else {
                    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-6 {
                        r.odf_norm = 1;
                        bad = true;
                    }
                    if c[0] <= 0.0 {
                        r.odf_orthant = 1;
                        bad = true;
                    }
                    if let Some(basis) = odf_basis {
                        if basis.min_value(&c).expect("size checked") < -1e-6 {
                            r.odf_negative = 1;
                        }
                    }
                }
            }
            r.invalid = bad as usize;
            r
        })
        .collect();

    let mut total = ValidityReport {
        negativity_checked: !is_odf || odf_basis.is_some(),
        ..Default::default()
    };
    for r in per_voxel {
        total.voxels += r.voxels;
        total.invalid += r.invalid;
        total.non_finite += r.non_finite;
        total.non_spd += r.non_spd;
        total.asymmetric += r.asymmetric;
        total.odf_norm += r.odf_norm;
        total.odf_orthant += r.odf_orthant;
        total.odf_negative += r.odf_negative;
    }
    Ok(total)
}

/// FA of each voxel of a manifold-domain tensor volume; degenerate
/// (all-zero) voxels map to 0.
pub fn fa_map(vol: &Volume) -> Result<Volume> {
    if vol.channels() != SYM_TENSOR_CHANNELS && vol.channels() != FULL_TENSOR_CHANNELS {
        return Err(Error::InvalidParameter(format!(
            "FA map on a {}-channel volume",
            vol.channels()
        )));
    }
    let values: Result<Vec<f64>> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let m = vol.voxel_sym(idx)?;
            let e = spd::eig_sym3(&m)?;
            Ok(spd::fa(&e).unwrap_or(0.0))
        })
        .collect();
    let values = values?;
    let mut out = vol.like(1, Domain::Manifold);
    for (idx, v) in values.iter().enumerate() {
        out.data_mut()[idx] = *v as f32;
    }
    Ok(out)
}

/// GFA of each voxel of an ODF coefficient volume; zero voxels map to 0.
pub fn gfa_map(vol: &Volume) -> Result<Volume> {
    if odf::order_for_size(vol.channels()).is_none() || vol.channels() == 1 {
        return Err(Error::InvalidParameter(format!(
            "GFA map on a {}-channel volume",
            vol.channels()
        )));
    }
    let values: Vec<f64> = (0..vol.n_voxels())
        .into_par_iter()
        .map(|idx| odf::gfa_raw(&vol.voxel(idx)).unwrap_or(0.0))
        .collect();
    let mut out = vol.like(1, Domain::Manifold);
    for (idx, v) in values.iter().enumerate() {
        out.data_mut()[idx] = *v as f32;
    }
    Ok(out)
}

/// FA for tensor volumes, GFA for ODF volumes. Input must be
/// manifold-domain.
pub fn anisotropy_map(vol: &Volume) -> Result<Volume> {
    if vol.domain() != Domain::Manifold {
        return Err(Error::InvalidParameter(
            "anisotropy of tangent-domain values is undefined; exp first".into(),
        ));
    }
    match vol.channels() {
        SYM_TENSOR_CHANNELS | FULL_TENSOR_CHANNELS => fa_map(vol),
        k if odf::order_for_size(k).is_some() && k > 1 => gfa_map(vol),
        k => Err(Error::InvalidParameter(format!(
            "anisotropy map on a {k}-channel volume"
        ))),
    }
}
