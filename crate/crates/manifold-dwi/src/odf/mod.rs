//! Square-root ODF framework on the unit sphere of SH coefficients.
//!
//! An ODF p(s) is re-parameterized by the square root psi = sqrt(p) and
//! expanded in a real even-order SH basis; the coefficient vector c is then a
//! point on the unit sphere S^{K-1}, with the uniform distribution at
//! u = (1, 0, ..., 0). Log/exp maps at u give the Log-Euclidean framework:
//! statistics happen in the tangent plane at u and map back onto the sphere.
//!
//! Validity of a coefficient vector has three layers: unit norm (the PDF
//! integrates to one), c_0 > 0 (positive orthant of the square root), and
//! pointwise nonnegativity of psi on the grid. The maps guarantee the first;
//! the orthant holds whenever the tangent norm stays below pi/2; negativity
//! is audited and reported, never silently projected.

pub mod basis;
pub mod grid;

pub use basis::{basis_size, order_for_size, sh_row, ShBasis};
pub use grid::SphereGrid;

use crate::error::{Error, Result};
use crate::spd::{dot3, normalize3};

/// Geodesic radius of the positive orthant; tangents with norm below this
/// exp to coefficients with c_0 > 0.
pub const ORTHANT_RADIUS: f64 = std::f64::consts::FRAC_PI_2;

/// Unit-norm SH coefficient vector of a square-root ODF.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffs {
    c: Vec<f64>,
}

impl ShCoeffs {
    /// Validates the norm (within 1e-8 of one) and renormalizes exactly.
    /// The orthant and nonnegativity constraints are audited separately, see
    /// [`ShCoeffs::validity`].
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SH coefficients".into()));
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(ShCoeffs {
            c: c.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// The uniform ODF u = (1, 0, ..., 0) for a basis of size `k`.
    pub fn uniform(k: usize) -> Self {
        let mut c = vec![0.0; k];
        c[0] = 1.0;
        ShCoeffs { c }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// First coefficient (the component along the uniform distribution).
    pub fn c0(&self) -> f64 {
        self.c[0]
    }

    /// Reports which validity constraints hold: (unit norm, positive
    /// orthant, nonnegative on grid within -1e-6).
    pub fn validity(&self, basis: &ShBasis) -> Result<(bool, bool, bool)> {
        let norm = self.c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let min = basis.min_value(&self.c)?;
        Ok(((norm - 1.0).abs() <= 1e-6, self.c0() > 0.0, min >= -1e-6))
    }
}

/// Tangent vector at the uniform distribution u: first component zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentShCoeffs {
    v: Vec<f64>,
}

impl TangentShCoeffs {
    /// Validates tangency (<v, u> = v_0 = 0 within 1e-8) and zeroes the
    /// first component exactly.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tangent SH coefficients".into()));
        }
        if v[0].abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "not tangent at u: v0 = {}",
                v[0]
            )));
        }
        let mut v = v;
        v[0] = 0.0;
        Ok(TangentShCoeffs { v })
    }

    pub fn zero(k: usize) -> Self {
        TangentShCoeffs { v: vec![0.0; k] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.v
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Sphere log map at u = (1, 0, ...) on raw unit-norm coefficients; defined
/// everywhere except the antipode of u. Output first component is exactly 0.
pub fn sphere_log(c: &[f64]) -> Result<Vec<f64>> {
    let c0 = c[0];
    if c0 <= -1.0 + 1e-12 {
        return Err(Error::CutLocusExceeded {
            norm: std::f64::consts::PI,
        });
    }
    // Psi = atan2(|c - c0 u|, c0) = arccos(c0), in a form that stays
    // accurate near the cut locus.
    let rest: f64 = c[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let psi = rest.atan2(c0);
    let mut v = vec![0.0; c.len()];
    if rest > 0.0 {
        let s = psi / rest;
        for (dst, src) in v[1..].iter_mut().zip(&c[1..]) {
            *dst = src * s;
        }
    }
    Ok(v)
}

/// Sphere exp map at u on a raw tangent vector (first component ignored as
/// zero). Output is exactly unit norm; fails past the cut locus |v| >= pi.
pub fn sphere_exp(v: &[f64]) -> Result<Vec<f64>> {
    let psi: f64 = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if psi >= std::f64::consts::PI {
        return Err(Error::CutLocusExceeded { norm: psi });
    }
    let mut c = vec![0.0; v.len()];
    if psi == 0.0 {
        c[0] = 1.0;
        return Ok(c);
    }
    let (s, cos) = psi.sin_cos();
    c[0] = cos;
    let scale = s / psi;
    for (dst, src) in c[1..].iter_mut().zip(&v[1..]) {
        *dst = src * scale;
    }
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut c {
        *x /= norm;
    }
    Ok(c)
}

/// Log map of a valid square-root ODF: ||log_u(c)|| equals the geodesic
/// angle arccos(c_0). Errors when c leaves the positive orthant.
pub fn log_u(c: &ShCoeffs) -> Result<TangentShCoeffs> {
    if c.c0() <= 0.0 {
        return Err(Error::OutsidePositiveOrthant { c0: c.c0() });
    }
    Ok(TangentShCoeffs {
        v: sphere_log(&c.c)?,
    })
}

/// Exp map of a tangent vector at u. The output is always unit norm; it
/// stays inside the positive orthant iff ||v|| < pi/2.
pub fn exp_u(v: &TangentShCoeffs) -> Result<ShCoeffs> {
    Ok(ShCoeffs {
        c: sphere_exp(&v.v)?,
    })
}

/// Log-Euclidean distance through the tangent plane at u:
/// ||log_u(c1) - log_u(c2)||_2.
pub fn geodesic_odf(c1: &ShCoeffs, c2: &ShCoeffs) -> Result<f64> {
    let v1 = sphere_log(&c1.c)?;
    let v2 = sphere_log(&c2.c)?;
    Ok(v1
        .iter()
        .zip(v2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Generalized fractional anisotropy sqrt(1 - c0^2 / |c|^2): 0 for the
/// uniform distribution, 1 in the limit c0 -> 0.
pub fn gfa(c: &ShCoeffs) -> f64 {
    gfa_raw(&c.c).expect("ShCoeffs is unit norm")
}

/// GFA of a raw coefficient vector; errors on the zero vector.
pub fn gfa_raw(c: &[f64]) -> Result<f64> {
    let total: f64 = c.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateTensor);
    }
    Ok((1.0 - c[0] * c[0] / total).max(0.0).sqrt().min(1.0))
}

/// psi values of `c` on the grid directions of `basis`.
pub fn sh_eval(c: &ShCoeffs, basis: &ShBasis) -> Result<Vec<f64>> {
    basis.eval(&c.c)
}

/// Unnormalized weighted least-squares projection of grid samples onto the
/// basis: solves (B^T W B) c = B^T W psi.
pub fn project_sh(psi: &[f64], grid: &SphereGrid, basis: &ShBasis) -> Result<Vec<f64>> {
    if psi.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for a {}-direction grid",
            psi.len(),
            grid.len()
        )));
    }
    let k = basis.size();
    if grid.len() < k {
        return Err(Error::RankDeficient(format!(
            "{} grid directions cannot determine {} coefficients",
            grid.len(),
            k
        )));
    }
    let mut a = vec![0.0f64; k * k];
    let mut rhs = vec![0.0f64; k];
    for i in 0..grid.len() {
        let w = grid.weights()[i];
        let row = basis.row(i);
        let wpsi = w * psi[i];
        for p in 0..k {
            rhs[p] += wpsi * row[p];
            let wp = w * row[p];
            for q in p..k {
                a[p * k + q] += wp * row[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            a[p * k + q] = a[q * k + p];
        }
    }
    cholesky_solve(&mut a, &mut rhs, k)?;
    Ok(rhs)
}

/// Weighted least-squares fit of a sampled square-root ODF, renormalized to
/// the unit sphere.
pub fn fit_sh(psi: &[f64], grid: &SphereGrid, basis: &ShBasis) -> Result<ShCoeffs> {
    let mut c = project_sh(psi, grid, basis)?;
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::DegenerateTensor);
    }
    for v in &mut c {
        *v /= norm;
    }
    Ok(ShCoeffs { c })
}

/// In-place Cholesky solve of a dense symmetric positive-definite system.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 1e-12 {
            return Err(Error::RankDeficient(format!(
                "pivot {d:.3e} at column {j}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // Forward then backward substitution.
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Gradient of a scalar loss through the sphere exp map at u.
///
/// With Psi = |v|, c = u cos(Psi) + v sin(Psi)/Psi; the returned vector is
/// dL/dv for upstream dL/dc, projected onto the tangent space (first
/// component zero). At v = 0 the map's jacobian is the tangent injection.
pub fn sphere_exp_backward(v: &[f64], upstream: &[f64]) -> Vec<f64> {
    let k = v.len();
    let psi: f64 = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut g = vec![0.0; k];
    if psi < 1e-12 {
        g[1..].copy_from_slice(&upstream[1..]);
        return g;
    }
    let (sin, cos) = psi.sin_cos();
    let a = sin / psi;
    // d(sin(Psi)/Psi)/dPsi
    let da = cos / psi - sin / (psi * psi);
    // dc_0 = -sin dPsi, dc_i = a dv_i + v_i da dPsi, dPsi = (v . dv)/Psi.
    let vg: f64 = v[1..]
        .iter()
        .zip(&upstream[1..])
        .map(|(x, y)| x * y)
        .sum();
    let coeff = vg * da - upstream[0] * sin;
    for i in 1..k {
        g[i] = a * upstream[i] + coeff * v[i] / psi;
    }
    g
}

/// Gradient of a scalar loss through the sphere log map at u: dL/dc for
/// upstream dL/dv. `c` must be unit norm away from the cut locus.
pub fn sphere_log_backward(c: &[f64], upstream: &[f64]) -> Vec<f64> {
    let k = c.len();
    let c0 = c[0];
    let rest: f64 = c[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut g = vec![0.0; k];
    if rest < 1e-12 {
        // log is the tangent projection to first order at u.
        g[1..].copy_from_slice(&upstream[1..]);
        return g;
    }
    let psi = rest.atan2(c0);
    let s = psi / rest;
    // v_i = s(c0, rest) * c_i for i >= 1, Psi = atan2(rest, c0); the exact
    // ambient jacobian (valid slightly off the sphere, where finite
    // differences probe it): dPsi/dc0 = -rest/q, dPsi/drest = c0/q with
    // q = rest^2 + c0^2, and drest/dc_i = c_i/rest.
    let q = rest * rest + c0 * c0;
    let ug: f64 = c[1..]
        .iter()
        .zip(&upstream[1..])
        .map(|(x, y)| x * y)
        .sum();
    let ds_dc0 = -1.0 / q;
    let ds_drest = c0 / (q * rest) - psi / (rest * rest);
    g[0] = ug * ds_dc0;
    for i in 1..k {
        g[i] = s * upstream[i] + ug * ds_drest * c[i] / rest;
    }
    g
}

/// Peak-extraction parameters: candidates below `relative_threshold` of the
/// global maximum are discarded and accepted peaks must be separated by at
/// least `min_separation_deg` (measured on collapsed antipodes).
#[derive(Debug, Clone, Copy)]
pub struct PeakParams {
    pub relative_threshold: f64,
    pub min_separation_deg: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            relative_threshold: 0.5,
            min_separation_deg: 25.0,
        }
    }
}

/// A local maximum of p(s | c) = psi(s)^2.
#[derive(Debug, Clone, Copy)]
pub struct OdfPeak {
    /// Unit direction, antipode collapsed (first nonzero component >= 0).
    pub direction: [f64; 3],
    /// p value at the peak.
    pub value: f64,
}

/// Strict local maxima of p(s | c) over the grid neighbor graph, filtered by
/// the relative threshold and minimum separation angle, descending by value.
/// Antipodal twins collapse to a single representative; a flat function
/// yields no peaks.
pub fn odf_maxima(
    c: &ShCoeffs,
    grid: &SphereGrid,
    basis: &ShBasis,
    params: &PeakParams,
) -> Result<Vec<OdfPeak>> {
    let psi = basis.eval(&c.c)?;
    let p: Vec<f64> = psi.iter().map(|v| v * v).collect();
    let global_max = p.iter().fold(0.0f64, |m, &v| m.max(v));
    if global_max <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = params.relative_threshold * global_max;

    let mut candidates: Vec<(usize, f64)> = (0..grid.len())
        .filter(|&i| {
            p[i] >= threshold && grid.neighbors(i).iter().all(|&j| p[j] < p[i])
        })
        .map(|i| (i, p[i]))
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let min_cos = (params.min_separation_deg.to_radians()).cos();
    let mut peaks: Vec<OdfPeak> = Vec::new();
    for (i, value) in candidates {
        let dir = collapse_antipode(grid.directions()[i]);
        // |dot| >= cos(sep) means closer than the separation angle to an
        // accepted peak (or its antipode).
        if peaks
            .iter()
            .all(|pk| dot3(pk.direction, dir).abs() < min_cos)
        {
            peaks.push(OdfPeak {
                direction: dir,
                value,
            });
        }
    }
    Ok(peaks)
}

/// Same sign convention as eigenvectors: first nonzero component
/// nonnegative.
pub fn collapse_antipode(d: [f64; 3]) -> [f64; 3] {
    for &c in &d {
        if c.abs() > 1e-12 {
            if c < 0.0 {
                return normalize3([-d[0], -d[1], -d[2]]);
            }
            return normalize3(d);
        }
    }
    d
}
