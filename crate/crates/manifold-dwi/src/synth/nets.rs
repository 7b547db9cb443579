//! The toy generator/discriminator pair.
//!
//! The generator is a three-level encoder-decoder (conv + leaky ReLU with
//! factor-2 pooling/upsampling) and a 1x1x1 head whose final activation
//! bounds the tangent-domain output: hardtanh for tensor targets, scaled
//! tanh (inside the orthant radius) for ODF targets, sigmoid for the
//! structural direction. The discriminator is a small conv stack over LR
//! patches ending in a scalar score.

use rand::Rng;

use crate::error::{Error, Result};
use crate::synth::layers::*;

/// Final activation of a generator head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    /// clamp(-bound, bound): tensor tangent channels.
    Hardtanh { bound: f64 },
    /// tanh scaled so the full tangent vector stays below `max_norm`
    /// (channel 0 is projected to zero by the manifold map).
    ScaledTanh { max_norm: f64 },
    /// [0, 1] structural intensities.
    Sigmoid,
}

/// Three-level encoder-decoder.
#[derive(Debug, Clone)]
pub struct Generator {
    pub cin: usize,
    pub cout: usize,
    enc1: Conv3,
    enc2: Conv3,
    bottleneck: Conv3,
    dec2: Conv3,
    dec1: Conv3,
    head: Conv3,
    pub activation: OutputActivation,
}

/// Activations cached by one forward call; each call owns its cache so a
/// network can run on several inputs before its backward passes.
pub struct GenCache {
    x: Tensor4,
    e1_pre: Tensor4,
    e1: Tensor4,
    p1: Tensor4,
    e2_pre: Tensor4,
    e2: Tensor4,
    p2: Tensor4,
    b_pre: Tensor4,
    b: Tensor4,
    u2: Tensor4,
    d2_pre: Tensor4,
    d2: Tensor4,
    u1: Tensor4,
    d1_pre: Tensor4,
    d1: Tensor4,
    head_pre: Tensor4,
    out: Tensor4,
}

impl Generator {
    /// `features` is the width of the first level; deeper levels double it.
    pub fn new(
        cin: usize,
        cout: usize,
        features: usize,
        activation: OutputActivation,
        rng: &mut impl Rng,
    ) -> Generator {
        let f = features;
        Generator {
            cin,
            cout,
            enc1: Conv3::new(cin, f, 3, rng),
            enc2: Conv3::new(f, 2 * f, 3, rng),
            bottleneck: Conv3::new(2 * f, 4 * f, 3, rng),
            dec2: Conv3::new(4 * f, 2 * f, 3, rng),
            dec1: Conv3::new(2 * f, f, 3, rng),
            head: Conv3::new(f, cout, 1, rng),
            activation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.enc1.n_params()
            + self.enc2.n_params()
            + self.bottleneck.n_params()
            + self.dec2.n_params()
            + self.dec1.n_params()
            + self.head.n_params()
    }

    /// Input spatial dims must be divisible by 4 (two pooling levels).
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, GenCache)> {
        if x.c != self.cin {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} channels, got {}",
                self.cin, x.c
            )));
        }
        if x.d % 4 != 0 || x.h % 4 != 0 || x.w % 4 != 0 {
            return Err(Error::ShapeMismatch(
                "generator input dims must be divisible by 4".into(),
            ));
        }
        let e1_pre = self.enc1.forward(x);
        let mut e1 = e1_pre.clone();
        leaky_relu(&mut e1);
        let p1 = avg_pool2(&e1);
        let e2_pre = self.enc2.forward(&p1);
        let mut e2 = e2_pre.clone();
        leaky_relu(&mut e2);
        let p2 = avg_pool2(&e2);
        let b_pre = self.bottleneck.forward(&p2);
        let mut b = b_pre.clone();
        leaky_relu(&mut b);
        let u2 = upsample2(&b);
        let d2_pre = self.dec2.forward(&u2);
        let mut d2 = d2_pre.clone();
        leaky_relu(&mut d2);
        let u1 = upsample2(&d2);
        let d1_pre = self.dec1.forward(&u1);
        let mut d1 = d1_pre.clone();
        leaky_relu(&mut d1);
        let head_pre = self.head.forward(&d1);
        let mut out = head_pre.clone();
        match self.activation {
            OutputActivation::Hardtanh { bound } => hardtanh(&mut out, bound),
            OutputActivation::ScaledTanh { max_norm } => {
                tanh(&mut out);
                let scale = max_norm / ((out.c.max(2) - 1) as f64).sqrt();
                for v in &mut out.data {
                    *v *= scale;
                }
            }
            OutputActivation::Sigmoid => sigmoid(&mut out),
        }
        let cache = GenCache {
            x: x.clone(),
            e1_pre,
            e1,
            p1,
            e2_pre,
            e2,
            p2,
            b_pre,
            b,
            u2,
            d2_pre,
            d2,
            u1,
            d1_pre,
            d1,
            head_pre,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients, returns the input gradient.
    pub fn backward(&mut self, cache: &GenCache, grad_out: &Tensor4) -> Result<Tensor4> {
        if !grad_out.same_shape(&cache.out) {
            return Err(Error::ShapeMismatch("generator upstream shape".into()));
        }
        let mut g = grad_out.clone();
        match self.activation {
            OutputActivation::Hardtanh { bound } => {
                hardtanh_backward(&cache.head_pre, bound, &mut g)
            }
            OutputActivation::ScaledTanh { max_norm } => {
                let scale = max_norm / ((cache.out.c.max(2) - 1) as f64).sqrt();
                // out = tanh(pre) * scale
                let mut post = cache.head_pre.clone();
                tanh(&mut post);
                for v in &mut g.data {
                    *v *= scale;
                }
                tanh_backward(&post, &mut g);
            }
            OutputActivation::Sigmoid => sigmoid_backward(&cache.out, &mut g),
        }
        let g = self.head.backward(&cache.d1, &g);
        let mut g = g;
        leaky_relu_backward(&cache.d1_pre, &mut g);
        let g = self.dec1.backward(&cache.u1, &g);
        let g = upsample2_backward(&g);
        let mut g = g;
        leaky_relu_backward(&cache.d2_pre, &mut g);
        let g = self.dec2.backward(&cache.u2, &g);
        let g = upsample2_backward(&g);
        let mut g = g;
        leaky_relu_backward(&cache.b_pre, &mut g);
        let g = self.bottleneck.backward(&cache.p2, &g);
        let g = avg_pool2_backward(&g);
        let mut g = g;
        leaky_relu_backward(&cache.e2_pre, &mut g);
        let g = self.enc2.backward(&cache.p1, &g);
        let g = avg_pool2_backward(&g);
        let mut g = g;
        leaky_relu_backward(&cache.e1_pre, &mut g);
        Ok(self.enc1.backward(&cache.x, &g))
    }

    pub fn adam_step(&mut self, adam: &AdamParams, t: usize, grad_scale: f64) {
        for conv in [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.bottleneck,
            &mut self.dec2,
            &mut self.dec1,
            &mut self.head,
        ] {
            for p in conv.params_mut() {
                adam.step(p, t, grad_scale);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for conv in [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.bottleneck,
            &mut self.dec2,
            &mut self.dec1,
            &mut self.head,
        ] {
            for p in conv.params_mut() {
                p.zero_grad();
            }
        }
    }
}

/// Conv stack to a scalar realness score.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cin: usize,
    conv1: Conv3,
    conv2: Conv3,
    dense: Dense,
}

pub struct DiscCache {
    x: Tensor4,
    c1_pre: Tensor4,
    c1: Tensor4,
    p1: Tensor4,
    c2_pre: Tensor4,
    c2: Tensor4,
    pooled: Vec<f64>,
    spatial: usize,
}

impl Discriminator {
    pub fn new(cin: usize, features: usize, rng: &mut impl Rng) -> Discriminator {
        Discriminator {
            cin,
            conv1: Conv3::new(cin, features, 3, rng),
            conv2: Conv3::new(features, 2 * features, 3, rng),
            dense: Dense::new(2 * features, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(f64, DiscCache)> {
        if x.c != self.cin {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} channels, got {}",
                self.cin, x.c
            )));
        }
        if x.d % 2 != 0 || x.h % 2 != 0 || x.w % 2 != 0 {
            return Err(Error::ShapeMismatch(
                "discriminator input dims must be even".into(),
            ));
        }
        let c1_pre = self.conv1.forward(x);
        let mut c1 = c1_pre.clone();
        leaky_relu(&mut c1);
        let p1 = avg_pool2(&c1);
        let c2_pre = self.conv2.forward(&p1);
        let mut c2 = c2_pre.clone();
        leaky_relu(&mut c2);
        // Global average per channel.
        let spatial = c2.spatial();
        let pooled: Vec<f64> = (0..c2.c)
            .map(|c| {
                c2.data[c * spatial..(c + 1) * spatial].iter().sum::<f64>() / spatial as f64
            })
            .collect();
        let score = self.dense.forward(&pooled)[0];
        Ok((
            score,
            DiscCache {
                x: x.clone(),
                c1_pre,
                c1,
                p1,
                c2_pre,
                c2,
                pooled,
                spatial,
            },
        ))
    }

    /// Backward from a scalar score gradient; accumulates parameter
    /// gradients and returns the input gradient (used to train generators
    /// through the discriminator without touching its parameters via
    /// [`Discriminator::zero_grad`] afterwards).
    pub fn backward(&mut self, cache: &DiscCache, grad_score: f64) -> Tensor4 {
        let g_pooled = self.dense.backward(&cache.pooled, &[grad_score]);
        let mut g = Tensor4::zeros(cache.c2.c, cache.c2.d, cache.c2.h, cache.c2.w);
        for c in 0..cache.c2.c {
            let gv = g_pooled[c] / cache.spatial as f64;
            for v in &mut g.data[c * cache.spatial..(c + 1) * cache.spatial] {
                *v = gv;
            }
        }
        leaky_relu_backward(&cache.c2_pre, &mut g);
        let g = self.conv2.backward(&cache.p1, &g);
        let g = avg_pool2_backward(&g);
        let mut g = g;
        leaky_relu_backward(&cache.c1_pre, &mut g);
        self.conv1.backward(&cache.x, &g)
    }

    pub fn adam_step(&mut self, adam: &AdamParams, t: usize, grad_scale: f64) {
        for p in self.conv1.params_mut() {
            adam.step(p, t, grad_scale);
        }
        for p in self.conv2.params_mut() {
            adam.step(p, t, grad_scale);
        }
        adam.step(&mut self.dense.weight, t, grad_scale);
        adam.step(&mut self.dense.bias, t, grad_scale);
    }

    pub fn zero_grad(&mut self) {
        for p in self.conv1.params_mut() {
            p.zero_grad();
        }
        for p in self.conv2.params_mut() {
            p.zero_grad();
        }
        self.dense.weight.zero_grad();
        self.dense.bias.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_shapes_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let gen = Generator::new(
            1,
            6,
            6,
            OutputActivation::Hardtanh { bound: 5.0 },
            &mut rng,
        );
        assert!(gen.n_params() > 10_000, "{} params", gen.n_params());
        let mut x = Tensor4::zeros(1, 8, 8, 8);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let (out, _) = gen.forward(&x).unwrap();
        assert_eq!((out.c, out.d, out.h, out.w), (6, 8, 8, 8));
        assert!(out.data.iter().all(|v| v.abs() <= 5.0 && v.is_finite()));
    }

    #[test]
    fn scaled_tanh_respects_norm_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let gen = Generator::new(
            1,
            15,
            4,
            OutputActivation::ScaledTanh { max_norm: 1.5 },
            &mut rng,
        );
        let mut x = Tensor4::zeros(1, 4, 4, 4);
        for v in &mut x.data {
            *v = 100.0; // saturate
        }
        let (out, _) = gen.forward(&x).unwrap();
        for vx in 0..out.spatial() {
            let norm: f64 = (1..15)
                .map(|c| out.data[c * out.spatial() + vx].powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(norm < 1.5, "tangent norm {norm}");
        }
    }

    #[test]
    fn generator_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let mut gen = Generator::new(
            1,
            2,
            2,
            OutputActivation::Hardtanh { bound: 5.0 },
            &mut rng,
        );
        let mut x = Tensor4::zeros(1, 4, 4, 4);
        for v in &mut x.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let w: Vec<f64> = (0..2 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |gen: &Generator, x: &Tensor4| -> f64 {
            let (out, _) = gen.forward(x).unwrap();
            out.data.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (out, cache) = gen.forward(&x).unwrap();
        let mut grad_out = Tensor4::zeros(2, 4, 4, 4);
        grad_out.data.copy_from_slice(&w);
        let gx = gen.backward(&cache, &grad_out).unwrap();
        assert_eq!(out.data.len(), w.len());

        let h = 1e-6;
        for idx in [0usize, 13, 37, 63] {
            let mut hi = x.clone();
            hi.data[idx] += h;
            let mut lo = x.clone();
            lo.data[idx] -= h;
            let fd = (loss(&gen, &hi) - loss(&gen, &lo)) / (2.0 * h);
            assert!(
                (gx.data[idx] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "input grad {} vs fd {}",
                gx.data[idx],
                fd
            );
        }
    }

    #[test]
    fn discriminator_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let mut d = Discriminator::new(6, 4, &mut rng);
        let mut x = Tensor4::zeros(6, 4, 4, 4);
        for v in &mut x.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (_, cache) = d.forward(&x).unwrap();
        let gx = d.backward(&cache, 1.0);
        let h = 1e-6;
        for idx in [0usize, 99, 250] {
            let mut hi = x.clone();
            hi.data[idx] += h;
            let mut lo = x.clone();
            lo.data[idx] -= h;
            let fd = (d.forward(&hi).unwrap().0 - d.forward(&lo).unwrap().0) / (2.0 * h);
            assert!(
                (gx.data[idx] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "{} vs {}",
                gx.data[idx],
                fd
            );
        }
    }

    #[test]
    fn deterministic_initialization() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(85);
            Generator::new(1, 6, 4, OutputActivation::Sigmoid, &mut rng)
        };
        let a = mk();
        let b = mk();
        let x = Tensor4::zeros(1, 4, 4, 4);
        assert_eq!(a.forward(&x).unwrap().0, b.forward(&x).unwrap().0);
    }
}
