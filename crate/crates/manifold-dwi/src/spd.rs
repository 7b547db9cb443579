//! Log-Euclidean framework on SPD(3): eigendecomposition, log/exp maps at the
//! identity, geodesic distance, fractional anisotropy and principal direction.
//!
//! All operations are pure; volumes of tensors can be processed with a
//! data-parallel map over voxels.

use crate::error::{Error, Result};

/// Eigenvalues at or below this floor are treated as non-SPD for auditing.
/// Lenient constructors clamp to the floor instead of failing.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Relative eigenvalue-gap threshold below which the closed-form eigensolver
/// defers to cyclic Jacobi iterations.
const JACOBI_GAP: f64 = 1e-6;

/// Relative leading-eigenvalue gap below which a principal direction is
/// considered ill-defined.
const DIRECTION_TIE_TOL: f64 = 1e-9;

/// A 3x3 symmetric matrix stored as its 6 unique components.
///
/// Component order is the upper triangle (xx, xy, xz, yy, yz, zz); symmetry
/// is structural, never checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: SymMat3 = SymMat3::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0);

    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        SymMat3 { xx, xy, xz, yy, yz, zz }
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        SymMat3::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Upper-triangle component vector (xx, xy, xz, yy, yz, zz).
    pub fn to_array(self) -> [f64; 6] {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        SymMat3::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// Symmetric part (A + A^T)/2 of a full row-major 3x3 matrix.
    pub fn from_full_symmetrized(m: &[[f64; 3]; 3]) -> Self {
        SymMat3::new(
            m[0][0],
            0.5 * (m[0][1] + m[1][0]),
            0.5 * (m[0][2] + m[2][0]),
            m[1][1],
            0.5 * (m[1][2] + m[2][1]),
            m[2][2],
        )
    }

    pub fn to_full(self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.xx * v[0] + self.xy * v[1] + self.xz * v[2],
            self.xy * v[0] + self.yy * v[1] + self.yz * v[2],
            self.xz * v[0] + self.yz * v[1] + self.zz * v[2],
        ]
    }

    pub fn add(&self, other: &SymMat3) -> SymMat3 {
        SymMat3::new(
            self.xx + other.xx,
            self.xy + other.xy,
            self.xz + other.xz,
            self.yy + other.yy,
            self.yz + other.yz,
            self.zz + other.zz,
        )
    }

    pub fn sub(&self, other: &SymMat3) -> SymMat3 {
        SymMat3::new(
            self.xx - other.xx,
            self.xy - other.xy,
            self.xz - other.xz,
            self.yy - other.yy,
            self.yz - other.yz,
            self.zz - other.zz,
        )
    }

    pub fn scale(&self, s: f64) -> SymMat3 {
        SymMat3::new(
            self.xx * s,
            self.xy * s,
            self.xz * s,
            self.yy * s,
            self.yz * s,
            self.zz * s,
        )
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn det(&self) -> f64 {
        self.xx * (self.yy * self.zz - self.yz * self.yz)
            - self.xy * (self.xy * self.zz - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - self.yy * self.xz)
    }

    /// Frobenius norm, counting off-diagonal entries twice.
    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix: M = U diag(lambda) U^T.
///
/// Eigenvalues are sorted descending (stable on ties); each eigenvector is
/// normalized with its first nonzero component nonnegative so decompositions
/// are deterministic.
#[derive(Debug, Clone, Copy)]
pub struct EigenDecomp3 {
    /// lambda[0] >= lambda[1] >= lambda[2]
    pub lambda: [f64; 3],
    /// vectors[i] is the unit eigenvector for lambda[i].
    pub vectors: [[f64; 3]; 3],
}

impl EigenDecomp3 {
    /// Rebuild sum_i lambda_i u_i u_i^T.
    pub fn reconstruct(&self) -> SymMat3 {
        self.map_eigenvalues(|l| l)
    }

    /// Apply a scalar function to the spectrum: U f(Sigma) U^T.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMat3 {
        let mut m = [0.0f64; 6];
        for i in 0..3 {
            let l = f(self.lambda[i]);
            let u = self.vectors[i];
            m[0] += l * u[0] * u[0];
            m[1] += l * u[0] * u[1];
            m[2] += l * u[0] * u[2];
            m[3] += l * u[1] * u[1];
            m[4] += l * u[1] * u[2];
            m[5] += l * u[2] * u[2];
        }
        SymMat3::from_array(m)
    }
}

/// A symmetric positive definite tensor (all eigenvalues strictly above
/// [`LAMBDA_FLOOR`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdTensor(SymMat3);

impl SpdTensor {
    /// Validates strict positive definiteness.
    pub fn new(m: SymMat3) -> Result<Self> {
        let e = eig_sym3(&m)?;
        if e.lambda[2] <= LAMBDA_FLOOR {
            return Err(Error::NotOnManifold {
                lambda_min: e.lambda[2],
            });
        }
        Ok(SpdTensor(m))
    }

    /// Clamps eigenvalues to [`LAMBDA_FLOOR`] instead of failing; intended for
    /// interpolation of noisy real-world data.
    pub fn new_lenient(m: SymMat3) -> Result<Self> {
        let e = eig_sym3(&m)?;
        if e.lambda[2] > LAMBDA_FLOOR {
            return Ok(SpdTensor(m));
        }
        Ok(SpdTensor(e.map_eigenvalues(|l| l.max(LAMBDA_FLOOR))))
    }

    /// Caller asserts positive definiteness (e.g. output of [`exp_id`]).
    pub(crate) fn new_unchecked(m: SymMat3) -> Self {
        SpdTensor(m)
    }

    pub fn matrix(&self) -> &SymMat3 {
        &self.0
    }

    pub fn into_matrix(self) -> SymMat3 {
        self.0
    }
}

/// A point of the tangent plane at the identity tensor: any finite symmetric
/// matrix, no positivity constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentSym3(pub SymMat3);

impl TangentSym3 {
    pub fn matrix(&self) -> &SymMat3 {
        &self.0
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix.
///
/// Closed-form (Cardano) eigenvalues with cross-product eigenvectors, falling
/// back to cyclic Jacobi when eigenvalue gaps are below `1e-6 * |lambda|_max`
/// or the analytic vectors fail their orthogonality gate. The closed form is
/// fast for volume-scale batches, Jacobi is robust near degeneracy.
pub fn eig_sym3(m: &SymMat3) -> Result<EigenDecomp3> {
    if !m.is_finite() {
        return Err(Error::NonFinite("eig_sym3 input".into()));
    }
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(finalize(
            [0.0, 0.0, 0.0],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        ));
    }
    // Work on a normalized copy for numerical range, rescale at the end.
    let a = m.scale(1.0 / scale);
    let w = eigvals_cardano(&a);
    let max_abs = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min_gap = (w[0] - w[1]).abs().min((w[1] - w[2]).abs()).min((w[0] - w[2]).abs());
    let decomp = if min_gap < JACOBI_GAP * max_abs.max(f64::MIN_POSITIVE) {
        eig_jacobi(&a)
    } else {
        // Clustered (but not degenerate) spectra erode the closed form's
        // eigenvector accuracy; a direct residual gate catches every case.
        eigvecs_analytic(&a, w)
            .filter(|d| {
                d.reconstruct().sub(&a).frobenius_norm() <= 5e-14 * a.frobenius_norm()
            })
            .unwrap_or_else(|| eig_jacobi(&a))
    };
    Ok(finalize(
        [
            decomp.lambda[0] * scale,
            decomp.lambda[1] * scale,
            decomp.lambda[2] * scale,
        ],
        decomp.vectors,
    ))
}

/// Cardano / trigonometric eigenvalues of a 3x3 symmetric matrix
/// (Kopp, Int. J. Mod. Phys. C 19, 2008). Unordered.
fn eigvals_cardano(a: &SymMat3) -> [f64; 3] {
    let de = a.xy * a.yz;
    let dd = a.xy * a.xy;
    let ee = a.yz * a.yz;
    let ff = a.xz * a.xz;

    let m = a.xx + a.yy + a.zz;
    let c1 = (a.xx * a.yy + a.xx * a.zz + a.yy * a.zz) - (dd + ee + ff);
    let c0 = a.zz * dd + a.xx * ee + a.yy * ff - a.xx * a.yy * a.zz - 2.0 * a.xz * de;

    let p = m * m - 3.0 * c1;
    let q = m * (p - 1.5 * c1) - 13.5 * c0;
    let sqrt_p = p.abs().sqrt();

    let phi = 27.0 * (0.25 * c1 * c1 * (p - c1) + c0 * (q + 6.75 * c0));
    let phi = (1.0 / 3.0) * phi.abs().sqrt().atan2(q);

    let c = sqrt_p * phi.cos();
    let s = (1.0 / 3.0f64.sqrt()) * sqrt_p * phi.sin();

    let w1 = (1.0 / 3.0) * (m - c);
    [w1 + c, w1 + s, w1 - s]
}

/// Eigenvectors from cross products of rows of (A - lambda I); returns None
/// when the vectors fail their quality gates.
fn eigvecs_analytic(a: &SymMat3, w: [f64; 3]) -> Option<EigenDecomp3> {
    let v0 = cross_row_vector(a, w[0])?;
    let v1 = cross_row_vector(a, w[1])?;
    // Orthogonality gate keeps reconstruction error near machine precision.
    if dot3(v0, v1).abs() > 1e-12 {
        return None;
    }
    let v2 = cross3(v0, v1);
    Some(EigenDecomp3 {
        lambda: w,
        vectors: [v0, v1, v2],
    })
}

fn cross_row_vector(a: &SymMat3, lambda: f64) -> Option<[f64; 3]> {
    let r0 = [a.xx - lambda, a.xy, a.xz];
    let r1 = [a.xy, a.yy - lambda, a.yz];
    let r2 = [a.xz, a.yz, a.zz - lambda];
    let c01 = cross3(r0, r1);
    let c02 = cross3(r0, r2);
    let c12 = cross3(r1, r2);
    let n01 = dot3(c01, c01);
    let n02 = dot3(c02, c02);
    let n12 = dot3(c12, c12);
    let (c, n) = if n01 >= n02 && n01 >= n12 {
        (c01, n01)
    } else if n02 >= n12 {
        (c02, n02)
    } else {
        (c12, n12)
    };
    let n = n.sqrt();
    if n < 1e-12 {
        return None;
    }
    Some([c[0] / n, c[1] / n, c[2] / n])
}

/// Cyclic Jacobi sweeps; always converges for symmetric input.
fn eig_jacobi(a: &SymMat3) -> EigenDecomp3 {
    let mut m = a.to_full();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..30 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        let diag = m[0][0].abs() + m[1][1].abs() + m[2][2].abs();
        if off <= 1e-16 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[p][q];
            if apq == 0.0 {
                continue;
            }
            let app = m[p][p];
            let aqq = m[q][q];
            let theta = (aqq - app) / (2.0 * apq);
            let t = if theta.abs() < 1e150 {
                theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
            } else {
                0.5 / theta
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            // Rotate rows/cols p and q.
            for k in 0..3 {
                let mkp = m[k][p];
                let mkq = m[k][q];
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let mpk = m[p][k];
                let mqk = m[q][k];
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for k in 0..3 {
                let vkp = v[k][p];
                let vkq = v[k][q];
                v[k][p] = c * vkp - s * vkq;
                v[k][q] = s * vkp + c * vkq;
            }
        }
    }
    EigenDecomp3 {
        lambda: [m[0][0], m[1][1], m[2][2]],
        // v holds eigenvectors as columns; expose them as rows of `vectors`.
        vectors: [
            [v[0][0], v[1][0], v[2][0]],
            [v[0][1], v[1][1], v[2][1]],
            [v[0][2], v[1][2], v[2][2]],
        ],
    }
}

/// Stable descending sort plus the deterministic sign convention.
fn finalize(lambda: [f64; 3], vectors: [[f64; 3]; 3]) -> EigenDecomp3 {
    let mut idx = [0usize, 1, 2];
    // Stable: keep solver output order on exact ties.
    idx.sort_by(|&i, &j| lambda[j].partial_cmp(&lambda[i]).unwrap());
    let mut l = [0.0f64; 3];
    let mut u = [[0.0f64; 3]; 3];
    for (dst, &src) in idx.iter().enumerate() {
        l[dst] = lambda[src];
        u[dst] = sign_fix(normalize3(vectors[src]));
    }
    EigenDecomp3 {
        lambda: l,
        vectors: u,
    }
}

/// First nonzero component made nonnegative.
fn sign_fix(v: [f64; 3]) -> [f64; 3] {
    for &c in &v {
        if c.abs() > 1e-12 {
            if c < 0.0 {
                return [-v[0], -v[1], -v[2]];
            }
            return v;
        }
    }
    v
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    dot3(v, v).sqrt()
}

pub(crate) fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    if n == 0.0 {
        return v;
    }
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Matrix logarithm at the identity: U log(Sigma) U^T.
pub fn log_id(p: &SpdTensor) -> TangentSym3 {
    let e = eig_sym3(p.matrix()).expect("SpdTensor is finite by construction");
    TangentSym3(e.map_eigenvalues(f64::ln))
}

/// Checked variant operating on a raw symmetric matrix; fails with
/// "not on manifold" when the smallest eigenvalue is at or below the floor.
pub fn log_id_sym(m: &SymMat3) -> Result<TangentSym3> {
    let e = eig_sym3(m)?;
    if e.lambda[2] <= LAMBDA_FLOOR {
        return Err(Error::NotOnManifold {
            lambda_min: e.lambda[2],
        });
    }
    Ok(TangentSym3(e.map_eigenvalues(f64::ln)))
}

/// Lenient variant: eigenvalues at or below the floor are clamped to the
/// floor before taking logs.
pub fn log_id_sym_lenient(m: &SymMat3) -> Result<TangentSym3> {
    let e = eig_sym3(m)?;
    Ok(TangentSym3(
        e.map_eigenvalues(|l| l.max(LAMBDA_FLOOR).ln()),
    ))
}

/// Matrix exponential at the identity: U exp(Sigma) U^T. Every finite
/// symmetric input maps to a strictly SPD tensor.
pub fn exp_id(s: &TangentSym3) -> Result<SpdTensor> {
    if !s.0.is_finite() {
        return Err(Error::NonFinite("exp_id input".into()));
    }
    let e = eig_sym3(&s.0)?;
    Ok(SpdTensor::new_unchecked(e.map_eigenvalues(f64::exp)))
}

/// Log-Euclidean geodesic distance ||log(P1) - log(P2)||_F.
pub fn geodesic_spd(p1: &SpdTensor, p2: &SpdTensor) -> f64 {
    log_id(p1).0.sub(&log_id(p2).0).frobenius_norm()
}

/// Fractional anisotropy from eigenvalues.
///
/// Tiny negative eigenvalues (within 1e-9 of zero relative to lambda_1) are
/// clamped to zero; an all-zero spectrum is a degenerate tensor.
pub fn fa(e: &EigenDecomp3) -> Result<f64> {
    let l1 = e.lambda[0].max(0.0);
    let l2 = e.lambda[1].max(0.0);
    let l3 = e.lambda[2].max(0.0);
    let sq = l1 * l1 + l2 * l2 + l3 * l3;
    if sq <= 0.0 {
        return Err(Error::DegenerateTensor);
    }
    let d12 = l1 - l2;
    let d23 = l2 - l3;
    let d13 = l1 - l3;
    let num = (d12 * d12 + d23 * d23 + d13 * d13).sqrt();
    Ok((0.5f64.sqrt() * num / sq.sqrt()).min(1.0))
}

/// Unit eigenvector of the largest eigenvalue, sign-normalized. Refuses
/// eigenvalue ties rather than guessing.
pub fn principal_direction(e: &EigenDecomp3) -> Result<[f64; 3]> {
    let gap = e.lambda[0] - e.lambda[1];
    let tol = DIRECTION_TIE_TOL * e.lambda[0].abs().max(f64::MIN_POSITIVE);
    if gap <= tol {
        return Err(Error::IllDefinedDirection { gap });
    }
    Ok(e.vectors[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn rotation(alpha: f64, beta: f64, gamma: f64) -> [[f64; 3]; 3] {
        let (sa, ca) = alpha.sin_cos();
        let (sb, cb) = beta.sin_cos();
        let (sg, cg) = gamma.sin_cos();
        // ZYX Euler product.
        [
            [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
            [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
            [-sb, cb * sg, cb * cg],
        ]
    }

    pub(crate) fn conjugate_diag(r: &[[f64; 3]; 3], d: [f64; 3]) -> SymMat3 {
        let mut m = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    m[i][j] += r[i][k] * d[k] * r[j][k];
                }
            }
        }
        SymMat3::from_full_symmetrized(&m)
    }

    fn random_spd(rng: &mut impl Rng, lmin: f64, lmax: f64) -> SpdTensor {
        let r = rotation(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let d = [
            rng.gen_range(lmin..lmax),
            rng.gen_range(lmin..lmax),
            rng.gen_range(lmin..lmax),
        ];
        SpdTensor::new(conjugate_diag(&r, d)).unwrap()
    }

    #[test]
    fn eig_identity() {
        let e = eig_sym3(&SymMat3::IDENTITY).unwrap();
        assert_eq!(e.lambda, [1.0, 1.0, 1.0]);
        for i in 0..3 {
            for j in 0..3 {
                let d = dot3(e.vectors[i], e.vectors[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eig_diagonal() {
        let e = eig_sym3(&SymMat3::diag(3.0, 2.0, 1.0)).unwrap();
        assert!((e.lambda[0] - 3.0).abs() < 1e-12);
        assert!((e.lambda[1] - 2.0).abs() < 1e-12);
        assert!((e.lambda[2] - 1.0).abs() < 1e-12);
        assert!((e.vectors[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((e.vectors[1][1].abs() - 1.0).abs() < 1e-12);
        assert!((e.vectors[2][2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let r = rotation(
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
            );
            let m = conjugate_diag(&r, [2.0, 1.0, 0.5]);
            let e = eig_sym3(&m).unwrap();
            assert!((e.lambda[0] - 2.0).abs() < 1e-10);
            assert!((e.lambda[1] - 1.0).abs() < 1e-10);
            assert!((e.lambda[2] - 0.5).abs() < 1e-10);
            let err = e.reconstruct().sub(&m).frobenius_norm();
            assert!(err < 1e-10, "reconstruction error {err}");
        }
    }

    #[test]
    fn eig_orthonormal_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let m = SymMat3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let e = eig_sym3(&m).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let d = dot3(e.vectors[i], e.vectors[j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-10, "U^T U deviates: {d}");
                }
            }
            let rel = e.reconstruct().sub(&m).frobenius_norm()
                / m.frobenius_norm().max(f64::MIN_POSITIVE);
            assert!(rel < 1e-8, "relative reconstruction error {rel}");
            assert!(e.lambda[0] >= e.lambda[1] && e.lambda[1] >= e.lambda[2]);
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let m = SymMat3::new(f64::NAN, 0.0, 0.0, 1.0, 0.0, 1.0);
        assert!(eig_sym3(&m).is_err());
    }

    #[test]
    fn log_of_identity_is_zero() {
        let p = SpdTensor::new(SymMat3::IDENTITY).unwrap();
        assert!(log_id(&p).0.frobenius_norm() < 1e-14);
    }

    #[test]
    fn log_of_scaled_identity() {
        let e = std::f64::consts::E;
        let p = SpdTensor::new(SymMat3::diag(e, e, e)).unwrap();
        let t = log_id(&p);
        assert!(t.0.sub(&SymMat3::IDENTITY).frobenius_norm() < 1e-12);
    }

    #[test]
    fn log_matches_scalar_log_on_eigenvalues() {
        let r = tests::rotation(0.3, 1.1, -0.7);
        let m = conjugate_diag(&r, [2.0, 1.0, 1.0]);
        let expect = conjugate_diag(&r, [2.0f64.ln(), 0.0, 0.0]);
        let t = log_id_sym(&m).unwrap();
        let diff = t.0.sub(&expect);
        for v in diff.to_array() {
            assert!(v.abs() < 1e-10, "entrywise error {v}");
        }
    }

    #[test]
    fn log_rejects_non_spd() {
        let m = SymMat3::diag(1.0, 1.0, -0.1);
        assert!(matches!(
            log_id_sym(&m),
            Err(Error::NotOnManifold { .. })
        ));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_id(&TangentSym3(SymMat3::ZERO)).unwrap();
        assert!(p.matrix().sub(&SymMat3::IDENTITY).frobenius_norm() < 1e-14);
    }

    #[test]
    fn exp_of_identity() {
        let e = std::f64::consts::E;
        let p = exp_id(&TangentSym3(SymMat3::IDENTITY)).unwrap();
        assert!(p.matrix().sub(&SymMat3::diag(e, e, e)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn exp_is_strictly_spd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let s = TangentSym3(SymMat3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ));
            let p = exp_id(&s).unwrap();
            let e = eig_sym3(p.matrix()).unwrap();
            assert!(e.lambda[2] > LAMBDA_FLOOR, "non-SPD exp output");
        }
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p = random_spd(&mut rng, 1e-3, 1e3);
            let back = exp_id(&log_id(&p)).unwrap();
            let rel = back.matrix().sub(p.matrix()).frobenius_norm()
                / p.matrix().frobenius_norm();
            assert!(rel < 1e-10, "exp(log(P)) error {rel}");
        }
    }

    #[test]
    fn geodesic_basics() {
        let p = SpdTensor::new(SymMat3::diag(2.0, 1.0, 0.5)).unwrap();
        assert_eq!(geodesic_spd(&p, &p), 0.0);
        let e = std::f64::consts::E;
        let i = SpdTensor::new(SymMat3::IDENTITY).unwrap();
        let q = SpdTensor::new(SymMat3::diag(e, e, e)).unwrap();
        assert!((geodesic_spd(&i, &q) - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geodesic_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let a = random_spd(&mut rng, 0.1, 10.0);
            let b = random_spd(&mut rng, 0.1, 10.0);
            let c = random_spd(&mut rng, 0.1, 10.0);
            let ab = geodesic_spd(&a, &b);
            let bc = geodesic_spd(&b, &c);
            let ac = geodesic_spd(&a, &c);
            assert!(ac <= ab + bc + 1e-10);
        }
    }

    #[test]
    fn geodesic_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let a = random_spd(&mut rng, 0.1, 10.0);
            let b = random_spd(&mut rng, 0.1, 10.0);
            let r = rotation(
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
                rng.gen_range(0.0..6.28),
            );
            let rot = |p: &SpdTensor| {
                let f = p.matrix().to_full();
                let mut rf = [[0.0f64; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            rf[i][j] += r[i][k] * f[k][j];
                        }
                    }
                }
                let mut rfr = [[0.0f64; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            rfr[i][j] += rf[i][k] * r[j][k];
                        }
                    }
                }
                SpdTensor::new(SymMat3::from_full_symmetrized(&rfr)).unwrap()
            };
            let d0 = geodesic_spd(&a, &b);
            let d1 = geodesic_spd(&rot(&a), &rot(&b));
            assert!((d0 - d1).abs() < 1e-8 * d0.max(1.0));
        }
    }

    #[test]
    fn fa_values() {
        let make = |l: [f64; 3]| EigenDecomp3 {
            lambda: l,
            vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        assert!(fa(&make([1.0, 1.0, 1.0])).unwrap().abs() < 1e-15);
        assert!((fa(&make([1.0, 0.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
        let want = 1.0 / 6.0f64.sqrt();
        assert!((fa(&make([2.0, 1.0, 1.0])).unwrap() - want).abs() < 1e-12);
        // Scale invariance.
        for c in [0.1, 3.0, 1e4] {
            let f = fa(&make([2.0 * c, 1.0 * c, 1.0 * c])).unwrap();
            assert!((f - want).abs() < 1e-12);
        }
        assert!(matches!(
            fa(&make([0.0, 0.0, 0.0])),
            Err(Error::DegenerateTensor)
        ));
    }

    #[test]
    fn principal_direction_cases() {
        let e = eig_sym3(&SymMat3::diag(3.0, 2.0, 1.0)).unwrap();
        let d = principal_direction(&e).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12 && d[2].abs() < 1e-12);

        let iso = eig_sym3(&SymMat3::IDENTITY).unwrap();
        assert!(matches!(
            principal_direction(&iso),
            Err(Error::IllDefinedDirection { .. })
        ));

        let r = rotation(0.9, -0.4, 2.2);
        let m = conjugate_diag(&r, [2.0, 1.0, 0.5]);
        let e = eig_sym3(&m).unwrap();
        let d = principal_direction(&e).unwrap();
        let first_col = [r[0][0], r[1][0], r[2][0]];
        let cosang = dot3(d, first_col).abs();
        assert!(cosang > 1.0 - 1e-10, "direction off: cos {cosang}");
    }

    #[test]
    fn lenient_constructor_clamps() {
        let m = SymMat3::diag(1.0, 1.0, -2.0);
        assert!(SpdTensor::new(m).is_err());
        let p = SpdTensor::new_lenient(m).unwrap();
        let e = eig_sym3(p.matrix()).unwrap();
        assert!(e.lambda[2] >= LAMBDA_FLOOR * 0.99);
    }
}
