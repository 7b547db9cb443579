//! The synthesis loss stack: least-squares adversarial terms, the threefold
//! cycle-consistency loss, the paired prior loss, anisotropy weighting and
//! the combined objective.
//!
//! Every diffusion-valued term operates on tangent-domain volumes; passing
//! raw manifold values is a contract violation and fails loudly. L1
//! reductions are means over voxels and channels, which keeps the lambda
//! weights independent of the grid resolution. Anisotropy weights multiply
//! the voxelwise L1 before reduction and carry no gradient (they come from
//! the target volume).

use crate::error::{Error, Result};
use crate::ops;
use crate::volume::{Domain, Volume};

/// Lambda hyperparameters of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cyc_x: f64,
    pub cyc_y: f64,
    pub prior_x: f64,
    pub prior_y: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cyc_x: 5.0,
            cyc_y: 0.25,
            prior_x: 10.0,
            prior_y: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cyc_x", self.cyc_x),
            ("cyc_y", self.cyc_y),
            ("prior_x", self.prior_x),
            ("prior_y", self.prior_y),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "loss weight {name} = {v} must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Discriminator objective, least-squares form:
/// mean((real - 1)^2)/2 + mean(fake^2)/2.
pub fn lsgan_d_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let real: f64 = real_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>()
        / real_scores.len() as f64;
    let fake: f64 =
        fake_scores.iter().map(|s| s * s).sum::<f64>() / fake_scores.len() as f64;
    Ok(0.5 * real + 0.5 * fake)
}

/// Generator-side adversarial objective: mean((fake - 1)^2)/2.
pub fn lsgan_g_loss(fake_scores: &[f64]) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(0.5
        * fake_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>()
        / fake_scores.len() as f64)
}

fn check_same_shape(a: &Volume, b: &Volume, what: &str) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

fn check_tangent(v: &Volume, what: &str) -> Result<()> {
    if v.channels() > 1 && v.domain() != Domain::Tangent {
        return Err(Error::InvalidParameter(format!(
            "{what} must be tangent-domain (log-mapped) diffusion"
        )));
    }
    Ok(())
}

/// Mean absolute difference over voxels and channels.
pub fn l1(a: &Volume, b: &Volume) -> Result<f64> {
    check_same_shape(a, b, "l1")?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / n)
}

/// Mean absolute difference with a per-voxel scalar weight map applied to
/// every channel.
pub fn l1_weighted(a: &Volume, b: &Volume, weight: &Volume) -> Result<f64> {
    check_same_shape(a, b, "l1_weighted")?;
    if weight.dims() != a.dims() || weight.channels() != 1 {
        return Err(Error::ShapeMismatch(
            "weight map must be a scalar volume on the same grid".into(),
        ));
    }
    let n_vox = a.n_voxels();
    let channels = a.channels();
    let mut acc = 0.0f64;
    for c in 0..channels {
        let plane = &a.data()[c * n_vox..(c + 1) * n_vox];
        let plane_b = &b.data()[c * n_vox..(c + 1) * n_vox];
        for ((x, y), w) in plane.iter().zip(plane_b).zip(weight.data()) {
            acc += *w as f64 * (*x as f64 - *y as f64).abs();
        }
    }
    Ok(acc / (n_vox * channels) as f64)
}

/// Threefold cycle-consistency loss.
///
/// Term 1 compares the structural volume with its reconstruction through
/// both generators; terms 2 and 3 compare the upsampled diffusion with its
/// high-resolution reconstruction and the original low-resolution diffusion
/// with the downsampled reconstruction. The two diffusion terms are weighted
/// voxelwise by the anisotropy of their respective targets.
#[allow(clippy::too_many_arguments)]
pub fn cycle_loss(
    x: &Volume,
    x_rec: &Volume,
    y_log_up: &Volume,
    y_rec_hr: &Volume,
    y_log: &Volume,
    y_rec_lr: &Volume,
    w: &LossWeights,
    aniso_hr: &Volume,
    aniso_lr: &Volume,
) -> Result<f64> {
    w.validate()?;
    for (v, what) in [
        (y_log_up, "cycle target (upsampled diffusion)"),
        (y_rec_hr, "cycle HR reconstruction"),
        (y_log, "cycle target (LR diffusion)"),
        (y_rec_lr, "cycle LR reconstruction"),
    ] {
        check_tangent(v, what)?;
    }
    let forward = w.cyc_x * l1(x_rec, x)?;
    let backward_hr = 0.5 * w.cyc_y * l1_weighted(y_rec_hr, y_log_up, aniso_hr)?;
    let backward_lr = 0.5 * w.cyc_y * l1_weighted(y_rec_lr, y_log, aniso_lr)?;
    Ok(forward + backward_hr + backward_lr)
}

/// Paired prior loss: generated diffusion against the upsampled real
/// diffusion of the same subject (anisotropy-weighted), and generated
/// structure against the real structural volume.
pub fn prior_loss(
    gen_y: &Volume,
    y_log_up_paired: &Volume,
    gen_x: &Volume,
    x_paired: &Volume,
    w: &LossWeights,
    aniso_map: &Volume,
) -> Result<f64> {
    w.validate()?;
    check_tangent(gen_y, "prior generated diffusion")?;
    check_tangent(y_log_up_paired, "prior diffusion target")?;
    let diffusion = w.prior_x * l1_weighted(gen_y, y_log_up_paired, aniso_map)?;
    let structure = w.prior_y * l1(gen_x, x_paired)?;
    Ok(diffusion + structure)
}

/// Per-voxel anisotropy (FA for tensors, GFA for ODFs) of a tangent-domain
/// diffusion volume: values are mapped back to the manifold first, then the
/// scalar is computed. Output lies in [0, 1].
pub fn anisotropy_weight(target_diffusion_log: &Volume) -> Result<Volume> {
    check_tangent(target_diffusion_log, "anisotropy target")?;
    let manifold = match target_diffusion_log.channels() {
        6 => ops::exp_tensor_volume(target_diffusion_log)?,
        k if crate::odf::order_for_size(k).is_some() && k > 1 => {
            ops::exp_odf_volume(target_diffusion_log)?
        }
        k => {
            return Err(Error::InvalidParameter(format!(
                "anisotropy weight on a {k}-channel volume"
            )))
        }
    };
    ops::anisotropy_map(&manifold)
}

/// All scalar pieces of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveParts {
    pub lsgan_g_x: f64,
    pub lsgan_g_y: f64,
    pub lsgan_d_x: f64,
    pub lsgan_d_y: f64,
    pub cycle: f64,
    pub prior: f64,
}

/// Composite objective report. The generators minimize `generator_total`;
/// the discriminators each minimize their own least-squares loss, reported
/// separately. `signed_composition` is the single signed scalar combining
/// all terms (adversarial terms negated), for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullObjective {
    pub parts: ObjectiveParts,
    pub generator_total: f64,
    pub signed_composition: f64,
}

/// Combines the loss terms; the breakdown sums to the totals exactly.
pub fn full_objective(parts: ObjectiveParts) -> FullObjective {
    let generator_total = parts.lsgan_g_x + parts.lsgan_g_y + parts.cycle + parts.prior;
    let signed_composition =
        -parts.lsgan_d_x - parts.lsgan_d_y + parts.cycle + parts.prior;
    FullObjective {
        parts,
        generator_total,
        signed_composition,
    }
}
