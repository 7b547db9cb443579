//! Real, symmetric, even-order spherical-harmonic basis (Descoteaux-style
//! ordering) tabulated over a sphere grid.
//!
//! Flat index j runs over orders l = 0, 2, ..., L and degrees m = -l..l, so
//! j = 0 is the constant function Y_0^0 = 1/sqrt(4 pi) and K = (L+1)(L+2)/2.

use crate::error::{Error, Result};
use crate::odf::grid::SphereGrid;

/// Number of basis functions for even order `l_max`.
pub fn basis_size(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 2) / 2
}

/// Inverse of [`basis_size`] for supported orders; `None` when `k` does not
/// correspond to an even order <= 8.
pub fn order_for_size(k: usize) -> Option<usize> {
    [0usize, 2, 4, 6, 8]
        .into_iter()
        .find(|&l| basis_size(l) == k)
}

/// Associated Legendre P_l^m(x) for 0 <= m <= l, Condon-Shortley phase
/// included, via the standard recurrences.
fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    debug_assert!(m <= l);
    // P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2.0 * ll as f64 - 1.0) * pmmp1 - (ll + m - 1) as f64 * pmm)
            / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

fn normalization(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0; // (l-m)! / (l+m)!
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2.0 * l as f64 + 1.0) / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// One real SH value. `m < 0` pairs with cos(|m| phi), `m > 0` with
/// sin(m phi); both carry the sqrt(2) factor that keeps the basis
/// orthonormal.
fn real_sh(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let x = theta.cos();
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => normalization(l, 0) * assoc_legendre(l, 0, x),
        std::cmp::Ordering::Less => {
            let ma = (-m) as usize;
            std::f64::consts::SQRT_2
                * normalization(l, ma)
                * assoc_legendre(l, ma, x)
                * (ma as f64 * phi).cos()
        }
        std::cmp::Ordering::Greater => {
            let ma = m as usize;
            std::f64::consts::SQRT_2
                * normalization(l, ma)
                * assoc_legendre(l, ma, x)
                * (ma as f64 * phi).sin()
        }
    }
}

/// Evaluate all K basis functions at a unit direction.
pub fn sh_row(l_max: usize, dir: [f64; 3]) -> Vec<f64> {
    let theta = dir[2].clamp(-1.0, 1.0).acos();
    let phi = dir[1].atan2(dir[0]);
    let mut row = Vec::with_capacity(basis_size(l_max));
    for l in (0..=l_max).step_by(2) {
        for m in -(l as i64)..=(l as i64) {
            row.push(real_sh(l, m, theta, phi));
        }
    }
    row
}

/// Even-order real SH basis tabulated on a [`SphereGrid`].
#[derive(Debug, Clone)]
pub struct ShBasis {
    order: usize,
    k: usize,
    n_dirs: usize,
    /// Row-major N x K evaluation table.
    table: Vec<f64>,
}

impl ShBasis {
    /// Tabulates the basis of even order `l_max` (<= 8) over `grid`.
    pub fn new(l_max: usize, grid: &SphereGrid) -> Result<Self> {
        if l_max % 2 != 0 || l_max > 8 {
            return Err(Error::InvalidParameter(format!(
                "SH order must be even and <= 8, got {l_max}"
            )));
        }
        let k = basis_size(l_max);
        let n = grid.len();
        let mut table = Vec::with_capacity(n * k);
        for &d in grid.directions() {
            table.extend_from_slice(&sh_row(l_max, d));
        }
        Ok(ShBasis {
            order: l_max,
            k,
            n_dirs: n,
            table,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions K.
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn n_dirs(&self) -> usize {
        self.n_dirs
    }

    /// Basis values at grid direction `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.k..(i + 1) * self.k]
    }

    /// psi(s_i) = sum_j c_j B_j(s_i) for every grid direction.
    pub fn eval(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.k {
            return Err(Error::BasisSizeMismatch {
                got: c.len(),
                expected: self.k,
            });
        }
        Ok((0..self.n_dirs)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(c.iter())
                    .map(|(b, ci)| b * ci)
                    .sum()
            })
            .collect())
    }

    /// Minimum of sum_j c_j B_j over the grid; cheap validity probe.
    pub fn min_value(&self, c: &[f64]) -> Result<f64> {
        if c.len() != self.k {
            return Err(Error::BasisSizeMismatch {
                got: c.len(),
                expected: self.k,
            });
        }
        let mut min = f64::INFINITY;
        for i in 0..self.n_dirs {
            let v: f64 = self
                .row(i)
                .iter()
                .zip(c.iter())
                .map(|(b, ci)| b * ci)
                .sum();
            if v < min {
                min = v;
            }
        }
        Ok(min)
    }
}
