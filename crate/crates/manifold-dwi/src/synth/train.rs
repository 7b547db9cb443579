//! Desk-scale synthesis training: a generator pair and discriminator pair
//! over paired phantom patches, exercising the adversarial, cycle and prior
//! losses with every diffusion path routed through the manifold maps.
//!
//! The generated tangent field passes through exp and back through log
//! before any consumer (losses, the structural generator, the
//! discriminator's downsampler input), so gradients flow through the
//! spectral backward passes at every step and the exp'd intermediate is
//! guaranteed on-manifold. Training is single-threaded and deterministic per
//! seed; evaluation uses order-stable parallel maps, so traces are
//! bit-identical across thread counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{exp_id_backward, log_id_backward, SpectralContext, SpectralMap};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::odf::{self, ShBasis, SphereGrid};
use crate::ops::{self, UpsampleTarget};
use crate::spd::SymMat3;
use crate::synth::layers::{avg_pool2, avg_pool2_backward, AdamParams, Tensor4};
use crate::synth::nets::{Discriminator, Generator, OutputActivation};
use crate::synth::phantom::{DiffusionModel, Phantom};
use crate::volume::{Domain, Volume};

/// Toy-trainer settings. Optimizer defaults: Adam with learning rate 1e-4,
/// beta1 = 0.5, beta2 = 0.999.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Patches sampled per epoch (without replacement per epoch).
    pub patches_per_epoch: usize,
    /// Cubic patch edge at high resolution; must be divisible by 4.
    pub patch_size: usize,
    /// Generator width at the first level.
    pub features: usize,
    /// Hardtanh bound of the tensor tangent head.
    pub tangent_bound: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Ablation: skip the exp/log mapping, treating raw network output as
    /// diffusion values (the Euclidean baseline).
    pub euclidean_bypass: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 4,
            epochs: 40,
            patches_per_epoch: 256,
            patch_size: 8,
            features: 6,
            tangent_bound: 5.0,
            seed: 0,
            weights: LossWeights::default(),
            euclidean_bypass: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 <= b && b < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} outside [0, 1)")));
            }
        }
        if self.batch_size == 0 || self.patches_per_epoch == 0 {
            return Err(Error::InvalidParameter("empty batch or epoch".into()));
        }
        if self.patch_size < 8 || self.patch_size % 4 != 0 {
            return Err(Error::InvalidParameter(
                "patch size must be >= 8 and divisible by 4".into(),
            ));
        }
        if !(self.tangent_bound > 0.0) {
            return Err(Error::InvalidParameter("tangent bound must be positive".into()));
        }
        self.weights.validate()
    }
}

/// One trace row: loss terms plus the evaluation metrics of the generated
/// full volume. Row 0 reports the randomly initialized generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_x: f64,
    pub d_y: f64,
    pub adv_x: f64,
    pub adv_y: f64,
    pub cycle: f64,
    pub prior: f64,
    pub generator_total: f64,
    pub fa_mse_02: f64,
    pub fa_mse_05: f64,
    pub cosine_02: f64,
    pub cosine_05: f64,
    pub geodesic_02: f64,
    pub invalid_voxels: usize,
}

pub const TRACE_HEADER: &str = "epoch,d_x,d_y,adv_x,adv_y,cycle,prior,generator_total,\
fa_mse_02,fa_mse_05,cosine_02,cosine_05,geodesic_02,invalid_voxels";

pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}\n",
            r.epoch,
            r.d_x,
            r.d_y,
            r.adv_x,
            r.adv_y,
            r.cycle,
            r.prior,
            r.generator_total,
            r.fa_mse_02,
            r.fa_mse_05,
            r.cosine_02,
            r.cosine_05,
            r.geodesic_02,
            r.invalid_voxels,
        ));
    }
    out
}

/// Evaluation metrics of a generated volume against the phantom truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalMetrics {
    pub fa_mse_02: f64,
    pub fa_mse_05: f64,
    pub cosine_02: f64,
    pub cosine_05: f64,
    pub geodesic_02: f64,
    pub invalid_voxels: usize,
}

pub struct TrainOutput {
    pub gen_y: Generator,
    pub gen_x: Generator,
    pub trace: Vec<EpochRecord>,
}

/// Per-voxel exp-then-log round trip with cached contexts for the backward
/// chain. The mapped output equals the input on-manifold; the point is that
/// gradients and validity guarantees route through the spectral layers.
enum MapContext {
    Tensor(Vec<(SpectralContext, SpectralContext)>),
    Odf(Vec<(Vec<f64>, Vec<f64>)>),
    Bypass,
}

fn composite_forward(
    raw: &Tensor4,
    model: DiffusionModel,
    bypass: bool,
) -> Result<(Tensor4, MapContext)> {
    if bypass {
        return Ok((raw.clone(), MapContext::Bypass));
    }
    let spatial = raw.spatial();
    let mut out = raw.clone();
    match model {
        DiffusionModel::Tensor => {
            let mut ctxs = Vec::with_capacity(spatial);
            for v in 0..spatial {
                let m = SymMat3::new(
                    raw.data[v],
                    raw.data[spatial + v],
                    raw.data[2 * spatial + v],
                    raw.data[3 * spatial + v],
                    raw.data[4 * spatial + v],
                    raw.data[5 * spatial + v],
                );
                let (p, exp_ctx) = SpectralContext::forward(SpectralMap::Exp, &m)?;
                let (l, log_ctx) = SpectralContext::forward(SpectralMap::Log, &p)?;
                let a = l.to_array();
                for c in 0..6 {
                    out.data[c * spatial + v] = a[c];
                }
                ctxs.push((exp_ctx, log_ctx));
            }
            Ok((out, MapContext::Tensor(ctxs)))
        }
        DiffusionModel::Odf => {
            let k = raw.c;
            let mut ctxs = Vec::with_capacity(spatial);
            for vx in 0..spatial {
                let mut v: Vec<f64> = (0..k).map(|c| raw.data[c * spatial + vx]).collect();
                v[0] = 0.0;
                let c_pt = odf::sphere_exp(&v)?;
                let l = odf::sphere_log(&c_pt)?;
                for c in 0..k {
                    out.data[c * spatial + vx] = l[c];
                }
                ctxs.push((v, c_pt));
            }
            Ok((out, MapContext::Odf(ctxs)))
        }
    }
}

fn composite_backward(ctx: &MapContext, upstream: &Tensor4) -> Result<Tensor4> {
    match ctx {
        MapContext::Bypass => Ok(upstream.clone()),
        MapContext::Tensor(ctxs) => {
            let spatial = upstream.spatial();
            let mut out = upstream.clone();
            for (vx, (exp_ctx, log_ctx)) in ctxs.iter().enumerate() {
                // Channel gradients -> full-matrix convention (halved
                // off-diagonals), through both spectral backwards, back to
                // channel gradients (doubled off-diagonals).
                let g = SymMat3::new(
                    upstream.data[vx],
                    0.5 * upstream.data[spatial + vx],
                    0.5 * upstream.data[2 * spatial + vx],
                    upstream.data[3 * spatial + vx],
                    0.5 * upstream.data[4 * spatial + vx],
                    upstream.data[5 * spatial + vx],
                );
                let mid = log_id_backward(log_ctx, &g)?;
                let gin = exp_id_backward(exp_ctx, &mid)?;
                let a = gin.to_array();
                for (c, &factor) in [1.0, 2.0, 2.0, 1.0, 2.0, 1.0].iter().enumerate() {
                    out.data[c * spatial + vx] = factor * a[c];
                }
            }
            Ok(out)
        }
        MapContext::Odf(ctxs) => {
            let spatial = upstream.spatial();
            let k = upstream.c;
            let mut out = upstream.clone();
            for (vx, (v, c_pt)) in ctxs.iter().enumerate() {
                let up: Vec<f64> = (0..k).map(|c| upstream.data[c * spatial + vx]).collect();
                let mid = odf::sphere_log_backward(c_pt, &up);
                let gin = odf::sphere_exp_backward(v, &mid);
                for c in 0..k {
                    out.data[c * spatial + vx] = gin[c];
                }
            }
            Ok(out)
        }
    }
}

fn volume_patch(vol: &Volume, origin: [usize; 3], size: usize) -> Tensor4 {
    let mut t = Tensor4::zeros(vol.channels(), size, size, size);
    for c in 0..vol.channels() {
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    let ti = t.idx(c, z, y, x);
                    t.data[ti] =
                        vol.get(origin[0] + x, origin[1] + y, origin[2] + z, c) as f64;
                }
            }
        }
    }
    t
}

/// Mean L1 value and its gradient (optionally weighted by a scalar map
/// broadcast over channels), scaled by `lambda`.
fn l1_grad(
    pred: &Tensor4,
    target: &Tensor4,
    weight: Option<&Tensor4>,
    lambda: f64,
) -> (f64, Tensor4) {
    debug_assert!(pred.same_shape(target));
    let n = pred.data.len() as f64;
    let spatial = pred.spatial();
    let mut grad = Tensor4::zeros(pred.c, pred.d, pred.h, pred.w);
    let mut loss = 0.0;
    for c in 0..pred.c {
        for v in 0..spatial {
            let i = c * spatial + v;
            let w = weight.map_or(1.0, |w| w.data[v]);
            let diff = pred.data[i] - target.data[i];
            loss += w * diff.abs();
            grad.data[i] = lambda * w * diff.signum() / n;
        }
    }
    (lambda * loss / n, grad)
}

fn add_assign(into: &mut Tensor4, from: &Tensor4) {
    for (a, b) in into.data.iter_mut().zip(&from.data) {
        *a += b;
    }
}

struct Batches {
    origins: Vec<[usize; 3]>,
}

/// Runs the generated tangent field over the full structural volume and
/// maps it to the manifold: exp for tensors, sphere exp for ODFs, identity
/// for the Euclidean-bypass ablation.
pub fn generate_volume(
    gen_y: &Generator,
    t1_normalized: &Volume,
    model: DiffusionModel,
    bypass: bool,
) -> Result<Volume> {
    let size = 8.min(t1_normalized.dims()[0]);
    let (patches, index) = ops::extract_patches(t1_normalized, size, size)?;
    let mut out_patches = Vec::with_capacity(patches.len());
    for (patch, origin) in patches.iter().zip(&index.origins) {
        let x = volume_patch(t1_normalized, *origin, size);
        let (raw, _) = gen_y.forward(&x)?;
        let (mapped, _) = composite_forward(&raw, model, bypass)?;
        let mut p = patch.like(gen_y.cout, Domain::Tangent);
        let spatial = mapped.spatial();
        for c in 0..gen_y.cout {
            for v in 0..spatial {
                p.data_mut()[c * spatial + v] = mapped.data[c * spatial + v] as f32;
            }
        }
        out_patches.push(p);
    }
    let mut index = index;
    index.channels = gen_y.cout;
    let tangent = ops::reassemble_patches(&index, &out_patches)?;
    if bypass {
        // Raw output posed directly as manifold values.
        let mut v = tangent;
        v.set_domain(Domain::Manifold);
        return Ok(v);
    }
    match model {
        DiffusionModel::Tensor => ops::exp_tensor_volume(&tangent),
        DiffusionModel::Odf => ops::exp_odf_volume(&tangent),
    }
}

/// Metrics of a generated volume against the phantom ground truth.
pub fn evaluate(
    gen_y: &Generator,
    phantom: &Phantom,
    bypass: bool,
    odf_ctx: Option<(&SphereGrid, &ShBasis)>,
) -> Result<EvalMetrics> {
    let t1n = ops::minmax_normalize(&phantom.t1)?;
    let generated = generate_volume(gen_y, &t1n, phantom.spec.model, bypass)?;
    metrics_of(&generated, phantom, odf_ctx)
}

fn metrics_of(
    generated: &Volume,
    phantom: &Phantom,
    odf_ctx: Option<(&SphereGrid, &ShBasis)>,
) -> Result<EvalMetrics> {
    let truth = &phantom.diffusion;
    let cos = |thr: f64| -> Result<f64> {
        match crate::metrics::field_similarity(generated, truth, thr, odf_ctx) {
            Ok(s) => Ok(s.mean),
            // No comparable voxels (e.g. a degenerate generator): worst case.
            Err(Error::EmptyMask) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let basis = odf_ctx.map(|(_, b)| b);
    Ok(EvalMetrics {
        fa_mse_02: crate::metrics::fa_mse(generated, truth, 0.2)?,
        fa_mse_05: crate::metrics::fa_mse(generated, truth, 0.5)?,
        cosine_02: cos(0.2)?,
        cosine_05: cos(0.5)?,
        geodesic_02: crate::metrics::mean_geodesic(generated, truth, 0.2)?,
        invalid_voxels: ops::audit_validity(generated, basis)?.invalid,
    })
}

/// Trains the toy generator/discriminator pairs on one phantom.
///
/// Alternating 1:1 updates: each batch first steps both discriminators on
/// fresh generator outputs, then steps both generators against the updated
/// discriminators. Aborts with the partial trace when any loss goes
/// non-finite.
pub fn train_toy(phantom: &Phantom, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let model = phantom.spec.model;
    let channels = phantom.diffusion.channels();
    let dims = phantom.t1.dims();
    if dims.iter().any(|&d| d % 2 != 0 || d < cfg.patch_size) {
        return Err(Error::InvalidParameter(
            "phantom dims must be even and at least one patch".into(),
        ));
    }

    // Ground-truth pipeline: log -> downsample (acquisition stand-in) ->
    // upsample; anisotropy weights from the targets at each resolution.
    let t1n = ops::minmax_normalize(&phantom.t1)?;
    let y_log_hr = match model {
        DiffusionModel::Tensor => ops::log_tensor_volume(&phantom.diffusion, false)?,
        DiffusionModel::Odf => ops::log_odf_volume(&phantom.diffusion, false)?,
    };
    let y_log_lr = ops::downsample_avg(&y_log_hr, 2)?;
    let y_log_up = ops::upsample_log_trilinear(&y_log_lr, UpsampleTarget::Dims(dims))?;
    let aniso_hr = losses::anisotropy_weight(&y_log_up)?;
    let aniso_lr = losses::anisotropy_weight(&y_log_lr)?;

    let odf_eval_ctx = match model {
        DiffusionModel::Odf => {
            let grid = SphereGrid::icosphere(3);
            let basis = ShBasis::new(4, &grid)?;
            Some((grid, basis))
        }
        DiffusionModel::Tensor => None,
    };

    // Even-origin overlapping patches so HR patches align with LR voxels.
    let stride = cfg.patch_size / 2;
    let (_, index) = ops::extract_patches(&t1n, cfg.patch_size, stride)?;
    let origins: Vec<[usize; 3]> = index
        .origins
        .into_iter()
        .filter(|o| o.iter().all(|v| v % 2 == 0))
        .collect();
    if origins.is_empty() {
        return Err(Error::InvalidParameter("no aligned patches".into()));
    }
    let batches = Batches { origins };

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen_activation = match model {
        DiffusionModel::Tensor => OutputActivation::Hardtanh {
            bound: cfg.tangent_bound,
        },
        DiffusionModel::Odf => OutputActivation::ScaledTanh {
            max_norm: odf::ORTHANT_RADIUS * 0.99,
        },
    };
    let mut gen_y = Generator::new(1, channels, cfg.features, gen_activation, &mut init_rng);
    let mut gen_x = Generator::new(
        channels,
        1,
        cfg.features,
        OutputActivation::Sigmoid,
        &mut init_rng,
    );
    let mut d_y = Discriminator::new(channels, cfg.features, &mut init_rng);
    let mut d_x = Discriminator::new(1, cfg.features, &mut init_rng);

    let adam = AdamParams {
        lr: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let mut t_gen = 0usize;
    let mut t_disc = 0usize;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b9));

    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let eval_ctx = odf_eval_ctx.as_ref().map(|(g, b)| (g, b));
    let m0 = evaluate(&gen_y, phantom, cfg.euclidean_bypass, eval_ctx)?;
    trace.push(EpochRecord {
        epoch: 0,
        d_x: f64::NAN,
        d_y: f64::NAN,
        adv_x: f64::NAN,
        adv_y: f64::NAN,
        cycle: f64::NAN,
        prior: f64::NAN,
        generator_total: f64::NAN,
        fa_mse_02: m0.fa_mse_02,
        fa_mse_05: m0.fa_mse_05,
        cosine_02: m0.cosine_02,
        cosine_05: m0.cosine_05,
        geodesic_02: m0.geodesic_02,
        invalid_voxels: m0.invalid_voxels,
    });

    for epoch in 1..=cfg.epochs {
        let mut order = batches.origins.clone();
        order.shuffle(&mut shuffle_rng);
        order.truncate(cfg.patches_per_epoch);

        let mut ep = [0.0f64; 6]; // d_x, d_y, adv_x, adv_y, cycle, prior
        let mut n_batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            // Per-patch forward state reused across both phases.
            struct PatchState {
                x: Tensor4,
                ylh: Tensor4,
                yll: Tensor4,
                w_hr: Tensor4,
                w_lr: Tensor4,
                s_raw_cache: crate::synth::nets::GenCache,
                s: Tensor4,
                s_ctx: MapContext,
                xfake_cache: crate::synth::nets::GenCache,
                x_fake: Tensor4,
                f_s: Tensor4,
            }
            let mut states = Vec::with_capacity(chunk.len());
            for &origin in chunk {
                let lr_origin = [origin[0] / 2, origin[1] / 2, origin[2] / 2];
                let x = volume_patch(&t1n, origin, cfg.patch_size);
                let ylh = volume_patch(&y_log_up, origin, cfg.patch_size);
                let yll = volume_patch(&y_log_lr, lr_origin, cfg.patch_size / 2);
                let w_hr = volume_patch(&aniso_hr, origin, cfg.patch_size);
                let w_lr = volume_patch(&aniso_lr, lr_origin, cfg.patch_size / 2);
                let (s_raw, s_raw_cache) = gen_y.forward(&x)?;
                let (s, s_ctx) = composite_forward(&s_raw, model, cfg.euclidean_bypass)?;
                let (x_fake, xfake_cache) = gen_x.forward(&ylh)?;
                let f_s = avg_pool2(&s);
                states.push(PatchState {
                    x,
                    ylh,
                    yll,
                    w_hr,
                    w_lr,
                    s_raw_cache,
                    s,
                    s_ctx,
                    xfake_cache,
                    x_fake,
                    f_s,
                });
            }

            // Discriminator phase: real toward 1, generated toward 0.
            t_disc += 1;
            let mut d_y_loss = 0.0;
            let mut d_x_loss = 0.0;
            for st in &states {
                let (r, rc) = d_y.forward(&st.yll)?;
                let (f, fc) = d_y.forward(&st.f_s)?;
                d_y_loss += 0.5 * ((r - 1.0) * (r - 1.0) + f * f);
                d_y.backward(&rc, r - 1.0);
                d_y.backward(&fc, f);

                let (r, rc) = d_x.forward(&st.x)?;
                let (f, fc) = d_x.forward(&st.x_fake)?;
                d_x_loss += 0.5 * ((r - 1.0) * (r - 1.0) + f * f);
                d_x.backward(&rc, r - 1.0);
                d_x.backward(&fc, f);
            }
            let scale = 1.0 / chunk.len() as f64;
            d_y.adam_step(&adam, t_disc, scale);
            d_x.adam_step(&adam, t_disc, scale);
            d_y_loss *= scale;
            d_x_loss *= scale;

            // Generator phase against the updated discriminators.
            t_gen += 1;
            let mut adv_y_loss = 0.0;
            let mut adv_x_loss = 0.0;
            let mut cycle_loss = 0.0;
            let mut prior_loss = 0.0;
            for st in &states {
                // Gradient accumulator on the mapped tangent field s.
                let mut g_s = Tensor4::zeros(st.s.c, st.s.d, st.s.h, st.s.w);

                // Adversarial (Y): through downsampling into D_Y.
                let (score, dc) = d_y.forward(&st.f_s)?;
                adv_y_loss += 0.5 * (score - 1.0) * (score - 1.0);
                let g_fs = d_y.backward(&dc, score - 1.0);
                add_assign(&mut g_s, &avg_pool2_backward(&g_fs));

                // Prior (diffusion side), anisotropy-weighted.
                let (l, g) = l1_grad(&st.s, &st.ylh, Some(&st.w_hr), cfg.weights.prior_x);
                prior_loss += l;
                add_assign(&mut g_s, &g);

                // Forward cycle: x -> s -> x_rec.
                let (x_rec, xrec_cache) = gen_x.forward(&st.s)?;
                let (l, g_xrec) = l1_grad(&x_rec, &st.x, None, cfg.weights.cyc_x);
                cycle_loss += l;
                add_assign(&mut g_s, &gen_x.backward(&xrec_cache, &g_xrec)?);

                // Backward chain into G_Y through the manifold maps.
                let g_s_raw = composite_backward(&st.s_ctx, &g_s)?;
                gen_y.backward(&st.s_raw_cache, &g_s_raw)?;

                // Backward cycle: ylh -> x_fake -> s2 (-> downsampled).
                let (s2_raw, s2_cache) = gen_y.forward(&st.x_fake)?;
                let (s2, s2_ctx) = composite_forward(&s2_raw, model, cfg.euclidean_bypass)?;
                let mut g_s2 = Tensor4::zeros(s2.c, s2.d, s2.h, s2.w);
                let (l, g) = l1_grad(&s2, &st.ylh, Some(&st.w_hr), 0.5 * cfg.weights.cyc_y);
                cycle_loss += l;
                add_assign(&mut g_s2, &g);
                let f_s2 = avg_pool2(&s2);
                let (l, g_lr) = l1_grad(&f_s2, &st.yll, Some(&st.w_lr), 0.5 * cfg.weights.cyc_y);
                cycle_loss += l;
                add_assign(&mut g_s2, &avg_pool2_backward(&g_lr));
                let g_s2_raw = composite_backward(&s2_ctx, &g_s2)?;
                let mut g_xfake = gen_y.backward(&s2_cache, &g_s2_raw)?;

                // Adversarial (X) and structural prior into G_X.
                let (score, dc) = d_x.forward(&st.x_fake)?;
                adv_x_loss += 0.5 * (score - 1.0) * (score - 1.0);
                add_assign(&mut g_xfake, &d_x.backward(&dc, score - 1.0));
                let (l, g) = l1_grad(&st.x_fake, &st.x, None, cfg.weights.prior_y);
                prior_loss += l;
                add_assign(&mut g_xfake, &g);
                gen_x.backward(&st.xfake_cache, &g_xfake)?;
            }
            gen_y.adam_step(&adam, t_gen, scale);
            gen_x.adam_step(&adam, t_gen, scale);
            // Generator-phase backwards also touched discriminator grads.
            d_y.zero_grad();
            d_x.zero_grad();

            adv_y_loss *= scale;
            adv_x_loss *= scale;
            cycle_loss *= scale;
            prior_loss *= scale;
            let total = d_x_loss + d_y_loss + adv_x_loss + adv_y_loss + cycle_loss + prior_loss;
            if !total.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step: t_gen,
                    trace_csv: trace_csv(&trace),
                });
            }
            ep[0] += d_x_loss;
            ep[1] += d_y_loss;
            ep[2] += adv_x_loss;
            ep[3] += adv_y_loss;
            ep[4] += cycle_loss;
            ep[5] += prior_loss;
            n_batches += 1;
        }

        let inv = 1.0 / n_batches.max(1) as f64;
        let m = evaluate(&gen_y, phantom, cfg.euclidean_bypass, eval_ctx)?;
        let parts = losses::ObjectiveParts {
            lsgan_g_x: ep[2] * inv,
            lsgan_g_y: ep[3] * inv,
            lsgan_d_x: ep[0] * inv,
            lsgan_d_y: ep[1] * inv,
            cycle: ep[4] * inv,
            prior: ep[5] * inv,
        };
        let full = losses::full_objective(parts);
        trace.push(EpochRecord {
            epoch,
            d_x: parts.lsgan_d_x,
            d_y: parts.lsgan_d_y,
            adv_x: parts.lsgan_g_x,
            adv_y: parts.lsgan_g_y,
            cycle: parts.cycle,
            prior: parts.prior,
            generator_total: full.generator_total,
            fa_mse_02: m.fa_mse_02,
            fa_mse_05: m.fa_mse_05,
            cosine_02: m.cosine_02,
            cosine_05: m.cosine_05,
            geodesic_02: m.geodesic_02,
            invalid_voxels: m.invalid_voxels,
        });
    }

    Ok(TrainOutput {
        gen_y,
        gen_x,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::phantom::{phantom_gen, Geometry, PhantomSpec};

    fn small_phantom() -> Phantom {
        phantom_gen(&PhantomSpec {
            geometry: Geometry::StraightBundle,
            dims: [16, 16, 16],
            noise: 0.01,
            seed: 1,
            model: DiffusionModel::Tensor,
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            patches_per_epoch: 8,
            batch_size: 2,
            features: 4,
            ..Default::default()
        }
    }

    #[test]
    fn composite_is_identity_with_valid_gradients() {
        let mut raw = Tensor4::zeros(6, 2, 2, 2);
        for (i, v) in raw.data.iter_mut().enumerate() {
            *v = ((i as f64) * 0.7).sin() * 0.8;
        }
        let (mapped, ctx) = composite_forward(&raw, DiffusionModel::Tensor, false).unwrap();
        for (a, b) in mapped.data.iter().zip(&raw.data) {
            assert!((a - b).abs() < 1e-9, "composite must be the identity");
        }
        let mut up = Tensor4::zeros(6, 2, 2, 2);
        for (i, v) in up.data.iter_mut().enumerate() {
            *v = ((i as f64) * 1.3).cos();
        }
        let g = composite_backward(&ctx, &up).unwrap();
        for (a, b) in g.data.iter().zip(&up.data) {
            assert!((a - b).abs() < 1e-6, "composite gradient passes through");
        }
    }

    #[test]
    fn zero_epochs_reports_initial_metrics_only() {
        let ph = small_phantom();
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_cfg()
        };
        let out = train_toy(&ph, &cfg).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].epoch, 0);
        let again = evaluate(&out.gen_y, &ph, false, None).unwrap();
        assert_eq!(out.trace[0].cosine_05, again.cosine_05);
        assert_eq!(out.trace[0].fa_mse_05, again.fa_mse_05);
    }

    #[test]
    fn short_training_is_deterministic_and_valid() {
        let ph = small_phantom();
        let cfg = tiny_cfg();
        let a = train_toy(&ph, &cfg).unwrap();
        let b = train_toy(&ph, &cfg).unwrap();
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
        for row in &a.trace {
            assert_eq!(row.invalid_voxels, 0, "manifold guarantee violated");
        }
    }

    #[test]
    fn bypass_ablation_produces_invalid_voxels_at_init() {
        let ph = small_phantom();
        let cfg = TrainConfig {
            epochs: 0,
            euclidean_bypass: true,
            ..tiny_cfg()
        };
        let out = train_toy(&ph, &cfg).unwrap();
        assert!(
            out.trace[0].invalid_voxels > 0,
            "raw network output should not be SPD everywhere"
        );
    }

    #[test]
    fn losses_decrease_on_short_run() {
        let ph = small_phantom();
        let cfg = TrainConfig {
            epochs: 4,
            patches_per_epoch: 24,
            ..tiny_cfg()
        };
        let out = train_toy(&ph, &cfg).unwrap();
        let first = &out.trace[1];
        let last = out.trace.last().unwrap();
        assert!(
            last.prior < first.prior,
            "prior loss should shrink: {} -> {}",
            first.prior,
            last.prior
        );
    }

    #[test]
    fn odf_training_smoke() {
        let ph = phantom_gen(&PhantomSpec {
            geometry: Geometry::StraightBundle,
            dims: [8, 8, 8],
            noise: 0.0,
            seed: 2,
            model: DiffusionModel::Odf,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            patches_per_epoch: 2,
            batch_size: 1,
            features: 4,
            ..Default::default()
        };
        let out = train_toy(&ph, &cfg).unwrap();
        for row in &out.trace {
            assert_eq!(row.invalid_voxels, 0, "{row:?}");
        }
    }
}
