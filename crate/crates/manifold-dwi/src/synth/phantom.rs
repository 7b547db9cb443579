//! Deterministic desk-scale phantoms: a T1-like scalar volume whose
//! intensity tracks tissue class, a ground-truth diffusion volume (SPD
//! tensors or square-root ODF coefficients) constructed on-manifold, and a
//! white-matter mask.
//!
//! Tensors blend between tissue classes in the log domain, so every voxel is
//! SPD no matter the blend weight or added tangent noise. ODF voxels come
//! from sampling the analytic orientation density of the local tensor
//! mixture on a sphere grid and fitting the square root with SH.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::odf::{self, ShBasis, SphereGrid};
#[cfg(test)]
use crate::ops;
use crate::spd::{self, dot3, normalize3, SymMat3, TangentSym3};
use crate::volume::{Domain, Volume};

/// Fiber layout of the phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Cylindrical corridor along +z.
    StraightBundle,
    /// Quarter-circle tube in the x-z plane.
    CurvedArc,
    /// Two orthogonal corridors (along z and along x) crossing mid-volume.
    Crossing,
}

impl std::str::FromStr for Geometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Geometry> {
        match s {
            "straight" => Ok(Geometry::StraightBundle),
            "arc" => Ok(Geometry::CurvedArc),
            "crossing" => Ok(Geometry::Crossing),
            other => Err(Error::InvalidParameter(format!(
                "unknown geometry '{other}' (straight | arc | crossing)"
            ))),
        }
    }
}

/// Which diffusion representation the phantom carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionModel {
    Tensor,
    Odf,
}

#[derive(Debug, Clone, Copy)]
pub struct PhantomSpec {
    pub geometry: Geometry,
    pub dims: [usize; 3],
    pub noise: f64,
    pub seed: u64,
    pub model: DiffusionModel,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            geometry: Geometry::StraightBundle,
            dims: [64, 64, 64],
            noise: 0.02,
            seed: 0,
            model: DiffusionModel::Tensor,
        }
    }
}

/// Eigenvalues of the two tissue classes (unitless diffusion scale).
const WM_PARALLEL: f64 = 2.0;
const WM_PERP: f64 = 0.4;
const GM_ISO: f64 = 0.7;
/// Tissue blend half-width in voxels.
const BLEND: f64 = 1.5;
/// T1 intensities per class.
const T1_WM: f64 = 0.75;
const T1_GM: f64 = 0.45;

pub struct Phantom {
    pub spec: PhantomSpec,
    /// T1-like scalar volume in [0, 1].
    pub t1: Volume,
    /// Ground-truth diffusion: 6-channel SPD tensors or 15-channel SH
    /// coefficients, manifold domain.
    pub diffusion: Volume,
    /// White-matter mask (1.0 inside).
    pub mask: Volume,
    /// z extent of the straight corridor in voxels, when applicable.
    pub corridor_span: Option<(usize, usize)>,
}

impl Phantom {
    /// Analytic corridor length in millimeters for the straight geometry:
    /// the masked voxel cells span (z1 - z0 + 1) x spacing.
    pub fn corridor_length_mm(&self) -> Option<f64> {
        self.corridor_span
            .map(|(z0, z1)| (z1 - z0 + 1) as f64 * self.mask.spacing()[2])
    }
}

/// Per-voxel fiber content: blend weights and directions of up to two
/// bundles.
struct LocalFibers {
    /// Combined white-matter weight in [0, 1].
    wm: f64,
    bundles: Vec<([f64; 3], f64)>,
}

struct GeometryField {
    dims: [usize; 3],
    geometry: Geometry,
    corridor_span: Option<(usize, usize)>,
}

impl GeometryField {
    fn new(geometry: Geometry, dims: [usize; 3]) -> GeometryField {
        let n = dims[2];
        let span = (5 * n) / 8;
        let z0 = (n - span) / 2;
        let corridor_span = match geometry {
            Geometry::StraightBundle => Some((z0, z0 + span - 1)),
            _ => None,
        };
        GeometryField {
            dims,
            geometry,
            corridor_span,
        }
    }

    fn tissue_weight(d: f64) -> f64 {
        (0.5 - d / BLEND).clamp(0.0, 1.0)
    }

    /// Signed distance (voxels) to a capped cylinder along z.
    fn cylinder_z(&self, p: [f64; 3], cx: f64, cy: f64, r: f64, z0: f64, z1: f64) -> f64 {
        let radial = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt() - r;
        radial.max(z0 - p[2]).max(p[2] - z1)
    }

    fn fibers_at(&self, p: [f64; 3]) -> LocalFibers {
        let [nx, ny, nz] = [
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ];
        let r = nx / 8.0;
        match self.geometry {
            Geometry::StraightBundle => {
                let (z0, z1) = self.corridor_span.unwrap();
                // Mask voxels have centers in [z0, z1]; the weight crosses
                // 0.5 exactly on the nominal surface.
                let d = self.cylinder_z(
                    p,
                    nx / 2.0,
                    ny / 2.0,
                    r,
                    z0 as f64 - 0.5,
                    z1 as f64 + 0.5,
                );
                let w = Self::tissue_weight(d);
                LocalFibers {
                    wm: w,
                    bundles: vec![([0.0, 0.0, 1.0], w)],
                }
            }
            Geometry::CurvedArc => {
                // Torus segment around the y axis through (cx, cz), radius
                // big_r, sweeping from -z toward +x.
                let cx = nx * 0.15;
                let cz = nz * 0.15;
                let big_r = nx * 0.55;
                let q = [p[0] - cx, p[2] - cz];
                let qn = (q[0] * q[0] + q[1] * q[1]).sqrt().max(1e-9);
                let ring = (qn - big_r).abs();
                let tube = (ring * ring + (p[1] - ny / 2.0).powi(2)).sqrt() - r;
                // Clamp to the first quadrant of the sweep.
                let theta = q[1].atan2(q[0]);
                let theta_excess = (theta - std::f64::consts::FRAC_PI_2)
                    .max(-theta)
                    .max(0.0);
                let d = tube.max(theta_excess * big_r);
                let w = Self::tissue_weight(d);
                // Tangent of the circle in the x-z plane.
                let dir = normalize3([-q[1] / qn, 0.0, q[0] / qn]);
                LocalFibers {
                    wm: w,
                    bundles: vec![(dir, w)],
                }
            }
            Geometry::Crossing => {
                let dz = self.cylinder_z(
                    p,
                    nx / 2.0,
                    ny / 2.0,
                    r,
                    nz * 0.1,
                    nz * 0.9,
                );
                let dx = self.cylinder_z(
                    [p[2], p[1], p[0]],
                    nz / 2.0,
                    ny / 2.0,
                    r,
                    nx * 0.1,
                    nx * 0.9,
                );
                let wz = Self::tissue_weight(dz);
                let wx = Self::tissue_weight(dx);
                LocalFibers {
                    wm: (wz + wx).min(1.0),
                    bundles: vec![([0.0, 0.0, 1.0], wz), ([1.0, 0.0, 0.0], wx)],
                }
            }
        }
    }
}

/// Tangent-domain (log) tensor of the local tissue mixture: log-blend of the
/// per-bundle white-matter tensors and the grey-matter background.
fn local_log_tensor(fibers: &LocalFibers) -> SymMat3 {
    let total: f64 = fibers.bundles.iter().map(|(_, w)| *w).sum();
    let wm = fibers.wm.min(1.0);
    let mut log = SymMat3::ZERO;
    if total > 0.0 {
        for (dir, w) in &fibers.bundles {
            let t = log_prolate_tensor(*dir);
            log = log.add(&t.scale(wm * w / total));
        }
    }
    let gm_log = GM_ISO.ln();
    log.add(&SymMat3::diag(gm_log, gm_log, gm_log).scale(1.0 - wm))
}

/// log of R diag(par, perp, perp) R^T for the rotation taking +x to `dir`.
fn log_prolate_tensor(dir: [f64; 3]) -> SymMat3 {
    let lp = WM_PARALLEL.ln();
    let lt = WM_PERP.ln();
    // U log(S) U^T = lt I + (lp - lt) dir dir^T.
    let d = lp - lt;
    SymMat3::new(
        lt + d * dir[0] * dir[0],
        d * dir[0] * dir[1],
        d * dir[0] * dir[2],
        lt + d * dir[1] * dir[1],
        d * dir[1] * dir[2],
        lt + d * dir[2] * dir[2],
    )
}

/// Sharpened orientation kernel of a prolate profile along `axis`:
/// (s^T D^-1 s)^(-3.5) with the WM eigenvalue ratio. The exponent puts the
/// core GFA near 0.72 at SH order 4 while the fitted square root stays
/// nonnegative on the sphere.
fn odf_kernel(s: [f64; 3], axis: [f64; 3]) -> f64 {
    let c = dot3(s, axis);
    let q = 1.0 / WM_PERP + c * c * (1.0 / WM_PARALLEL - 1.0 / WM_PERP);
    q.powf(-3.5)
}

/// Deterministic phantom synthesis.
pub fn phantom_gen(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.dims.iter().any(|&d| d < 8) {
        return Err(Error::InvalidParameter(
            "phantom dims must be at least 8 voxels per axis".into(),
        ));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidParameter("negative noise level".into()));
    }
    let field = GeometryField::new(spec.geometry, spec.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|_| Error::InvalidParameter("noise".into()))?;

    let mut t1 = Volume::zeros(spec.dims, 1, [1.0, 1.0, 1.0]);
    let mut mask = Volume::zeros(spec.dims, 1, [1.0, 1.0, 1.0]);
    let channels = match spec.model {
        DiffusionModel::Tensor => 6,
        DiffusionModel::Odf => 15,
    };
    let mut diffusion = Volume::zeros(spec.dims, channels, [1.0, 1.0, 1.0]);

    // ODF fitting machinery, shared across voxels.
    let odf_ctx = match spec.model {
        DiffusionModel::Odf => {
            let grid = SphereGrid::icosphere(2);
            let basis = ShBasis::new(4, &grid)?;
            Some((grid, basis))
        }
        DiffusionModel::Tensor => None,
    };

    let [nx, ny, nz] = spec.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = diffusion.voxel_index(x, y, z);
                let p = [x as f64, y as f64, z as f64];
                let fibers = field.fibers_at(p);

                // Smooth intensity modulation plus voxel noise keeps the
                // mapping from T1 to tissue learnable but not trivial.
                let smooth = 0.03
                    * ((p[0] * std::f64::consts::TAU / nx as f64).sin()
                        * (p[1] * std::f64::consts::TAU / ny as f64).cos()
                        + (p[2] * std::f64::consts::TAU / nz as f64).sin());
                let intensity = fibers.wm * T1_WM
                    + (1.0 - fibers.wm) * T1_GM
                    + smooth
                    + spec.noise * 0.5 * normal.sample(&mut rng);
                t1.data_mut()[idx] = intensity.clamp(0.0, 1.0) as f32;
                mask.data_mut()[idx] = if fibers.wm >= 0.5 { 1.0 } else { 0.0 };

                match spec.model {
                    DiffusionModel::Tensor => {
                        let mut log = local_log_tensor(&fibers);
                        if spec.noise > 0.0 {
                            let n = spec.noise;
                            log = log.add(&SymMat3::new(
                                n * normal.sample(&mut rng),
                                n * 0.5 * normal.sample(&mut rng),
                                n * 0.5 * normal.sample(&mut rng),
                                n * normal.sample(&mut rng),
                                n * 0.5 * normal.sample(&mut rng),
                                n * normal.sample(&mut rng),
                            ));
                        }
                        let spd = spd::exp_id(&TangentSym3(log))?;
                        diffusion.set_voxel_sym(idx, spd.matrix());
                    }
                    DiffusionModel::Odf => {
                        let (grid, basis) = odf_ctx.as_ref().unwrap();
                        let wm = fibers.wm;
                        let total: f64 =
                            fibers.bundles.iter().map(|(_, w)| *w).sum::<f64>().max(1e-9);
                        // Mixture of per-bundle kernels and an isotropic
                        // floor for the non-WM fraction.
                        let p_raw: Vec<f64> = grid
                            .directions()
                            .iter()
                            .map(|&s| {
                                let mut v = (1.0 - wm) * 1.0;
                                for (dir, w) in &fibers.bundles {
                                    v += wm * (w / total) * odf_kernel(s, *dir);
                                }
                                v
                            })
                            .collect();
                        let integral: f64 = p_raw
                            .iter()
                            .zip(grid.weights())
                            .map(|(p, w)| p * w)
                            .sum();
                        let psi: Vec<f64> =
                            p_raw.iter().map(|p| (p / integral).sqrt()).collect();
                        let mut coeffs = odf::fit_sh(&psi, grid, basis)?;
                        if spec.noise > 0.0 {
                            let mut v = odf::sphere_log(coeffs.coeffs())?;
                            for vi in v.iter_mut().skip(1) {
                                *vi += spec.noise * 0.5 * normal.sample(&mut rng);
                            }
                            let norm: f64 =
                                v.iter().map(|a| a * a).sum::<f64>().sqrt();
                            let cap = odf::ORTHANT_RADIUS * 0.95;
                            if norm > cap {
                                for vi in &mut v {
                                    *vi *= cap / norm;
                                }
                            }
                            coeffs = odf::ShCoeffs::new(odf::sphere_exp(&v)?)?;
                        }
                        diffusion.set_voxel(idx, coeffs.coeffs());
                    }
                }
            }
        }
    }
    diffusion.set_domain(Domain::Manifold);
    Ok(Phantom {
        spec: *spec,
        t1,
        diffusion,
        mask,
        corridor_span: field.corridor_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::odf::PeakParams;

    #[test]
    fn straight_bundle_directions_are_z() {
        let spec = PhantomSpec {
            dims: [24, 24, 24],
            noise: 0.0,
            ..Default::default()
        };
        let ph = phantom_gen(&spec).unwrap();
        let dirs = metrics::principal_direction_map(&ph.diffusion, None).unwrap();
        for idx in 0..ph.mask.n_voxels() {
            if ph.mask.data()[idx] > 0.5 {
                let d = dirs[idx].expect("core voxels have a direction");
                assert!(d[2].abs() > 0.999, "direction {d:?}");
            }
        }
    }

    #[test]
    fn phantom_is_on_manifold() {
        for geometry in [Geometry::StraightBundle, Geometry::CurvedArc, Geometry::Crossing] {
            let spec = PhantomSpec {
                geometry,
                dims: [16, 16, 16],
                noise: 0.05,
                seed: 3,
                ..Default::default()
            };
            let ph = phantom_gen(&spec).unwrap();
            let report = ops::audit_validity(&ph.diffusion, None).unwrap();
            assert_eq!(report.invalid, 0, "{geometry:?}: {report}");
        }
    }

    #[test]
    fn core_fa_is_high() {
        let spec = PhantomSpec {
            dims: [24, 24, 24],
            noise: 0.0,
            ..Default::default()
        };
        let ph = phantom_gen(&spec).unwrap();
        let fa = ops::fa_map(&ph.diffusion).unwrap();
        let mut core_count = 0;
        for idx in 0..ph.mask.n_voxels() {
            if ph.mask.data()[idx] > 0.5 && fa.data()[idx] >= 0.5 {
                core_count += 1;
            }
        }
        assert!(core_count > 100, "only {core_count} high-FA voxels");
    }

    #[test]
    fn determinism_per_seed() {
        let spec = PhantomSpec {
            dims: [12, 12, 12],
            seed: 9,
            ..Default::default()
        };
        let a = phantom_gen(&spec).unwrap();
        let b = phantom_gen(&spec).unwrap();
        assert_eq!(a.t1.data(), b.t1.data());
        assert_eq!(a.diffusion.data(), b.diffusion.data());
        let c = phantom_gen(&PhantomSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.t1.data(), c.t1.data());
    }

    #[test]
    fn crossing_odf_has_two_peaks() {
        let spec = PhantomSpec {
            geometry: Geometry::Crossing,
            dims: [24, 24, 24],
            noise: 0.0,
            model: DiffusionModel::Odf,
            ..Default::default()
        };
        let ph = phantom_gen(&spec).unwrap();
        let grid = SphereGrid::icosphere(3);
        let basis = ShBasis::new(4, &grid).unwrap();
        // Center voxel lies in the crossing region.
        let idx = ph.diffusion.voxel_index(12, 12, 12);
        let c = odf::ShCoeffs::new(ph.diffusion.voxel(idx)).unwrap();
        let peaks = odf::odf_maxima(&c, &grid, &basis, &PeakParams::default()).unwrap();
        assert_eq!(peaks.len(), 2, "peaks: {peaks:?}");
        for p in &peaks {
            let on_x = p.direction[0].abs();
            let on_z = p.direction[2].abs();
            let cos5 = 5.0f64.to_radians().cos();
            assert!(
                on_x > cos5 || on_z > cos5,
                "peak {:?} off the construction axes",
                p.direction
            );
        }
    }

    #[test]
    fn single_fiber_odf_peaks_along_z() {
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            noise: 0.0,
            model: DiffusionModel::Odf,
            ..Default::default()
        };
        let ph = phantom_gen(&spec).unwrap();
        let grid = SphereGrid::icosphere(3);
        let basis = ShBasis::new(4, &grid).unwrap();
        let idx = ph.diffusion.voxel_index(8, 8, 8);
        let c = odf::ShCoeffs::new(ph.diffusion.voxel(idx)).unwrap();
        let peaks = odf::odf_maxima(&c, &grid, &basis, &PeakParams::default()).unwrap();
        assert_eq!(peaks.len(), 1);
        assert!(peaks[0].direction[2] > 0.999, "{:?}", peaks[0].direction);
    }

    #[test]
    fn unknown_geometry_string_is_rejected() {
        assert!("spiral".parse::<Geometry>().is_err());
        assert_eq!(
            "straight".parse::<Geometry>().unwrap(),
            Geometry::StraightBundle
        );
    }
}
