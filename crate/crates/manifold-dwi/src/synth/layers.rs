//! Minimal dense-tensor layers with hand-written backward passes: 3D
//! convolution, average pooling, nearest-neighbor upsampling, pointwise
//! nonlinearities and an Adam optimizer. Everything is f64 and
//! single-threaded for determinism.

use rand::Rng;

/// Channel-major dense 4D tensor: data[((c*d + z)*h + y)*w + x].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(c: usize, d: usize, h: usize, w: usize) -> Tensor4 {
        Tensor4 {
            c,
            d,
            h,
            w,
            data: vec![0.0; c * d * h * w],
        }
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.c == other.c && self.d == other.d && self.h == other.h && self.w == other.w
    }

    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, z: usize, y: usize, x: usize) -> usize {
        ((c * self.d + z) * self.h + y) * self.w + x
    }
}

/// A learnable parameter block with its gradient and Adam state.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ParamTensor {
    pub fn new(len: usize) -> ParamTensor {
        ParamTensor {
            w: vec![0.0; len],
            g: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng, scale: f64) {
        for w in &mut self.w {
            *w = rng.gen_range(-scale..scale);
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.g {
            *g = 0.0;
        }
    }
}

/// Adam hyperparameters plus the shared step counter.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    /// One update on a parameter block; `grad_scale` folds in the 1/batch
    /// averaging. Gradients are cleared afterwards.
    pub fn step(&self, p: &mut ParamTensor, t: usize, grad_scale: f64) {
        let t = t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..p.w.len() {
            let g = p.g[i] * grad_scale;
            p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
            p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            p.w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            p.g[i] = 0.0;
        }
    }
}

/// 3D convolution, stride 1, odd kernel, zero padding (same-size output).
#[derive(Debug, Clone)]
pub struct Conv3 {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Conv3 {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Conv3 {
        assert!(k % 2 == 1, "kernel must be odd");
        let mut weight = ParamTensor::new(cout * cin * k * k * k);
        let scale = (1.0 / (cin * k * k * k) as f64).sqrt();
        weight.init_uniform(rng, scale);
        Conv3 {
            cin,
            cout,
            k,
            weight,
            bias: ParamTensor::new(cout),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        debug_assert_eq!(x.c, self.cin);
        let mut out = Tensor4::zeros(self.cout, x.d, x.h, x.w);
        let k = self.k as isize;
        let r = k / 2;
        for co in 0..self.cout {
            let b = self.bias.w[co];
            for z in 0..x.d as isize {
                for y in 0..x.h as isize {
                    for xx in 0..x.w as isize {
                        let mut acc = b;
                        for ci in 0..self.cin {
                            for dz in -r..=r {
                                let sz = z + dz;
                                if sz < 0 || sz >= x.d as isize {
                                    continue;
                                }
                                for dy in -r..=r {
                                    let sy = y + dy;
                                    if sy < 0 || sy >= x.h as isize {
                                        continue;
                                    }
                                    let wboff = ((co * self.cin + ci) * self.k
                                        + (dz + r) as usize)
                                        * self.k
                                        + (dy + r) as usize;
                                    for dx in -r..=r {
                                        let sx = xx + dx;
                                        if sx < 0 || sx >= x.w as isize {
                                            continue;
                                        }
                                        acc += self.weight.w[wboff * self.k + (dx + r) as usize]
                                            * x.data[x.idx(
                                                ci,
                                                sz as usize,
                                                sy as usize,
                                                sx as usize,
                                            )];
                                    }
                                }
                            }
                        }
                        let oi = out.idx(co, z as usize, y as usize, xx as usize);
                        out.data[oi] = acc;
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
        debug_assert_eq!(grad_out.c, self.cout);
        let mut gx = Tensor4::zeros(x.c, x.d, x.h, x.w);
        let k = self.k as isize;
        let r = k / 2;
        for co in 0..self.cout {
            let mut gb = 0.0;
            for z in 0..x.d as isize {
                for y in 0..x.h as isize {
                    for xx in 0..x.w as isize {
                        let go =
                            grad_out.data[grad_out.idx(co, z as usize, y as usize, xx as usize)];
                        if go == 0.0 {
                            continue;
                        }
                        gb += go;
                        for ci in 0..self.cin {
                            for dz in -r..=r {
                                let sz = z + dz;
                                if sz < 0 || sz >= x.d as isize {
                                    continue;
                                }
                                for dy in -r..=r {
                                    let sy = y + dy;
                                    if sy < 0 || sy >= x.h as isize {
                                        continue;
                                    }
                                    let wboff = ((co * self.cin + ci) * self.k
                                        + (dz + r) as usize)
                                        * self.k
                                        + (dy + r) as usize;
                                    for dx in -r..=r {
                                        let sx = xx + dx;
                                        if sx < 0 || sx >= x.w as isize {
                                            continue;
                                        }
                                        let widx = wboff * self.k + (dx + r) as usize;
                                        let xidx =
                                            x.idx(ci, sz as usize, sy as usize, sx as usize);
                                        self.weight.g[widx] += go * x.data[xidx];
                                        gx.data[xidx] += go * self.weight.w[widx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.bias.g[co] += gb;
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut ParamTensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn n_params(&self) -> usize {
        self.weight.w.len() + self.bias.w.len()
    }
}

/// Dense layer on a flat vector.
#[derive(Debug, Clone)]
pub struct Dense {
    pub cin: usize,
    pub cout: usize,
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Dense {
        let mut weight = ParamTensor::new(cout * cin);
        weight.init_uniform(rng, (1.0 / cin as f64).sqrt());
        Dense {
            cin,
            cout,
            weight,
            bias: ParamTensor::new(cout),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cout)
            .map(|o| {
                self.bias.w[o]
                    + x.iter()
                        .zip(&self.weight.w[o * self.cin..(o + 1) * self.cin])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.cin];
        for o in 0..self.cout {
            let go = grad_out[o];
            self.bias.g[o] += go;
            for i in 0..self.cin {
                self.weight.g[o * self.cin + i] += go * x[i];
                gx[i] += go * self.weight.w[o * self.cin + i];
            }
        }
        gx
    }
}

/// Factor-2 average pooling.
pub fn avg_pool2(x: &Tensor4) -> Tensor4 {
    debug_assert!(x.d % 2 == 0 && x.h % 2 == 0 && x.w % 2 == 0);
    let mut out = Tensor4::zeros(x.c, x.d / 2, x.h / 2, x.w / 2);
    for c in 0..x.c {
        for z in 0..out.d {
            for y in 0..out.h {
                for xx in 0..out.w {
                    let mut acc = 0.0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                acc += x.data
                                    [x.idx(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx)];
                            }
                        }
                    }
                    let oi = out.idx(c, z, y, xx);
                    out.data[oi] = acc / 8.0;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor4) -> Tensor4 {
    let mut gx = Tensor4::zeros(grad_out.c, grad_out.d * 2, grad_out.h * 2, grad_out.w * 2);
    for c in 0..grad_out.c {
        for z in 0..grad_out.d {
            for y in 0..grad_out.h {
                for xx in 0..grad_out.w {
                    let g = grad_out.data[grad_out.idx(c, z, y, xx)] / 8.0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let gi = gx.idx(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx);
                                gx.data[gi] = g;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Factor-2 nearest-neighbor upsampling.
pub fn upsample2(x: &Tensor4) -> Tensor4 {
    let mut out = Tensor4::zeros(x.c, x.d * 2, x.h * 2, x.w * 2);
    for c in 0..x.c {
        for z in 0..out.d {
            for y in 0..out.h {
                for xx in 0..out.w {
                    let oi = out.idx(c, z, y, xx);
                    out.data[oi] = x.data[x.idx(c, z / 2, y / 2, xx / 2)];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor4) -> Tensor4 {
    let mut gx = Tensor4::zeros(grad_out.c, grad_out.d / 2, grad_out.h / 2, grad_out.w / 2);
    for c in 0..grad_out.c {
        for z in 0..grad_out.d {
            for y in 0..grad_out.h {
                for xx in 0..grad_out.w {
                    let gi = gx.idx(c, z / 2, y / 2, xx / 2);
                    gx.data[gi] += grad_out.data[grad_out.idx(c, z, y, xx)];
                }
            }
        }
    }
    gx
}

pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu(x: &mut Tensor4) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// `pre` is the pre-activation input of the forward pass.
pub fn leaky_relu_backward(pre: &Tensor4, grad: &mut Tensor4) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn hardtanh(x: &mut Tensor4, bound: f64) {
    for v in &mut x.data {
        *v = v.clamp(-bound, bound);
    }
}

pub fn hardtanh_backward(pre: &Tensor4, bound: f64, grad: &mut Tensor4) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= -bound || p >= bound {
            *g = 0.0;
        }
    }
}

pub fn tanh(x: &mut Tensor4) {
    for v in &mut x.data {
        *v = v.tanh();
    }
}

/// `post` is the tanh output.
pub fn tanh_backward(post: &Tensor4, grad: &mut Tensor4) {
    for (g, &o) in grad.data.iter_mut().zip(&post.data) {
        *g *= 1.0 - o * o;
    }
}

pub fn sigmoid(x: &mut Tensor4) {
    for v in &mut x.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

/// `post` is the sigmoid output.
pub fn sigmoid_backward(post: &Tensor4, grad: &mut Tensor4) {
    for (g, &o) in grad.data.iter_mut().zip(&post.data) {
        *g *= o * (1.0 - o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut impl Rng, c: usize, d: usize, h: usize, w: usize) -> Tensor4 {
        let mut t = Tensor4::zeros(c, d, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut conv = Conv3::new(2, 3, 3, &mut rng);
        let x = random_tensor(&mut rng, 2, 4, 4, 4);
        let w: Vec<f64> = (0..3 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |conv: &Conv3, x: &Tensor4| -> f64 {
            conv.forward(x)
                .data
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut grad_out = Tensor4::zeros(3, 4, 4, 4);
        grad_out.data.copy_from_slice(&w);
        let gx = conv.backward(&x, &grad_out);

        let h = 1e-6;
        // Input gradient on a few entries.
        for idx in [0usize, 17, 63, 100] {
            let mut lo = x.clone();
            let mut hi = x.clone();
            lo.data[idx] -= h;
            hi.data[idx] += h;
            let fd = (loss(&conv, &hi) - loss(&conv, &lo)) / (2.0 * h);
            assert!((gx.data[idx] - fd).abs() < 1e-6, "{} vs {}", gx.data[idx], fd);
        }
        // Weight gradient on a few entries.
        for widx in [0usize, 5, 40, conv.weight.w.len() - 1] {
            let mut c2 = conv.clone();
            c2.weight.w[widx] += h;
            let up = loss(&c2, &x);
            c2.weight.w[widx] -= 2.0 * h;
            let dn = loss(&c2, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (conv.weight.g[widx] - fd).abs() < 1e-6,
                "{} vs {}",
                conv.weight.g[widx],
                fd
            );
        }
        let fd_bias = {
            let mut c2 = conv.clone();
            c2.bias.w[1] += h;
            let up = loss(&c2, &x);
            c2.bias.w[1] -= 2.0 * h;
            (up - loss(&c2, &x)) / (2.0 * h)
        };
        assert!((conv.bias.g[1] - fd_bias).abs() < 1e-6);
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)> up to the shared 1/8.
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let x = random_tensor(&mut rng, 2, 4, 4, 4);
        let y = random_tensor(&mut rng, 2, 2, 2, 2);
        let lhs: f64 = avg_pool2(&x).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .data
            .iter()
            .zip(&avg_pool2_backward(&y).data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let lhs: f64 = upsample2(&y).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = y
            .data
            .iter()
            .zip(&upsample2_backward(&x).data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = ParamTensor::new(1);
        p.w[0] = 3.0;
        let adam = AdamParams {
            lr: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        };
        for t in 1..=200 {
            p.g[0] = 2.0 * p.w[0];
            adam.step(&mut p, t, 1.0);
        }
        assert!(p.w[0].abs() < 0.3, "{}", p.w[0]);
    }

    #[test]
    fn activations_backward_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let pre = random_tensor(&mut rng, 1, 2, 2, 2);
        let h = 1e-7;
        for idx in 0..8 {
            // tanh
            let mut up = pre.clone();
            up.data[idx] += h;
            let mut dn = pre.clone();
            dn.data[idx] -= h;
            let mut up_t = up.clone();
            tanh(&mut up_t);
            let mut dn_t = dn.clone();
            tanh(&mut dn_t);
            let fd = (up_t.data[idx] - dn_t.data[idx]) / (2.0 * h);
            let mut post = pre.clone();
            tanh(&mut post);
            let mut g = Tensor4::zeros(1, 2, 2, 2);
            g.data[idx] = 1.0;
            tanh_backward(&post, &mut g);
            assert!((g.data[idx] - fd).abs() < 1e-5);
        }
    }
}
