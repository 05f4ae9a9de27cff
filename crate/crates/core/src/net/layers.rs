//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! backward call must follow the matching forward call. Parameter gradients
//! accumulate until [`Param::zero_grad`].

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Callback over named trainable parameters.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;
/// Callback over named non-trainable state (batch-norm running statistics).
pub type BufferVisitor<'a> = dyn FnMut(&str, &mut Tensor) + 'a;

fn cached<'a>(cache: &'a Option<Tensor>, layer: &str) -> Result<&'a Tensor> {
    cache
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("{layer}: backward called before forward")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const DOWN: ConvGeom = ConvGeom {
        kernel: 4,
        stride: 2,
        pad: 1,
    };

    /// Spatial size on the small side for a big-side size.
    pub fn small(&self, big: usize) -> Result<usize> {
        let padded = big + 2 * self.pad;
        if padded < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "input size {big} is smaller than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Spatial size on the big side for a small-side size.
    pub fn big(&self, small: usize) -> Result<usize> {
        ((small - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.pad)
            .filter(|&b| b > 0)
            .ok_or_else(|| Error::ShapeMismatch(format!("transposed size for {small} is empty")))
    }

    /// Range of small-side columns `x` whose tap `kx` lands inside `[0, big)`.
    fn valid(&self, tap: usize, big: usize, small: usize) -> (usize, usize) {
        let off = tap as isize - self.pad as isize;
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(self.stride)
        };
        let last = big as isize - 1 - off;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last as usize / self.stride + 1).min(small);
        (lo.min(hi), hi)
    }
}

/// Shapes shared by the three convolution kernels. `big` is the high-resolution
/// side, `small` the low-resolution side; weights are `[small_c, big_c, k, k]`.
#[derive(Debug, Clone, Copy)]
struct ConvShape {
    n: usize,
    big_c: usize,
    big_h: usize,
    big_w: usize,
    small_c: usize,
    small_h: usize,
    small_w: usize,
    g: ConvGeom,
}

impl ConvShape {
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let k = self.g.kernel;
        for ky in 0..k {
            let (y_lo, y_hi) = self.g.valid(ky, self.big_h, self.small_h);
            for kx in 0..k {
                let (x_lo, x_hi) = self.g.valid(kx, self.big_w, self.small_w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in y_lo..y_hi {
                    let iy = y * self.g.stride + ky - self.g.pad;
                    f(ky, kx, y, iy, x_lo, x_hi);
                }
            }
        }
    }

    /// small[n, o, y, x] += Σ w[o, c, ky, kx] · big[n, c, y·s − p + ky, x·s − p + kx]
    fn gather(&self, big: &[f64], w: &[f64], small: &mut [f64]) {
        let k = self.g.kernel;
        let (s, p) = (self.g.stride, self.g.pad);
        let bplane = self.big_h * self.big_w;
        let splane = self.small_h * self.small_w;
        for n in 0..self.n {
            for o in 0..self.small_c {
                let out = &mut small[(n * self.small_c + o) * splane..][..splane];
                for c in 0..self.big_c {
                    let inp = &big[(n * self.big_c + c) * bplane..][..bplane];
                    let wk = &w[(o * self.big_c + c) * k * k..][..k * k];
                    self.for_each_tap(|ky, kx, y, iy, x_lo, x_hi| {
                        let wv = wk[ky * k + kx];
                        let row = &inp[iy * self.big_w..][..self.big_w];
                        let orow = &mut out[y * self.small_w..][..self.small_w];
                        for x in x_lo..x_hi {
                            orow[x] += wv * row[x * s + kx - p];
                        }
                    });
                }
            }
        }
    }

    /// Adjoint of `gather` with respect to `big`.
    fn scatter(&self, small: &[f64], w: &[f64], big: &mut [f64]) {
        let k = self.g.kernel;
        let (s, p) = (self.g.stride, self.g.pad);
        let bplane = self.big_h * self.big_w;
        let splane = self.small_h * self.small_w;
        for n in 0..self.n {
            for c in 0..self.big_c {
                let out = &mut big[(n * self.big_c + c) * bplane..][..bplane];
                for o in 0..self.small_c {
                    let g = &small[(n * self.small_c + o) * splane..][..splane];
                    let wk = &w[(o * self.big_c + c) * k * k..][..k * k];
                    self.for_each_tap(|ky, kx, y, iy, x_lo, x_hi| {
                        let wv = wk[ky * k + kx];
                        let grow = &g[y * self.small_w..][..self.small_w];
                        let orow = &mut out[iy * self.big_w..][..self.big_w];
                        for x in x_lo..x_hi {
                            orow[x * s + kx - p] += wv * grow[x];
                        }
                    });
                }
            }
        }
    }

    /// Adjoint of `gather` with respect to `w`.
    fn weight_grad(&self, big: &[f64], small: &[f64], gw: &mut [f64]) {
        let k = self.g.kernel;
        let (s, p) = (self.g.stride, self.g.pad);
        let bplane = self.big_h * self.big_w;
        let splane = self.small_h * self.small_w;
        for n in 0..self.n {
            for o in 0..self.small_c {
                let g = &small[(n * self.small_c + o) * splane..][..splane];
                for c in 0..self.big_c {
                    let inp = &big[(n * self.big_c + c) * bplane..][..bplane];
                    let gk = &mut gw[(o * self.big_c + c) * k * k..][..k * k];
                    self.for_each_tap(|ky, kx, y, iy, x_lo, x_hi| {
                        let row = &inp[iy * self.big_w..][..self.big_w];
                        let grow = &g[y * self.small_w..][..self.small_w];
                        let mut acc = 0.0;
                        for x in x_lo..x_hi {
                            acc += row[x * s + kx - p] * grow[x];
                        }
                        gk[ky * k + kx] += acc;
                    });
                }
            }
        }
    }
}

fn add_bias(t: &mut Tensor, bias: &[f64]) {
    let (n, c) = (t.shape[0], t.shape[1]);
    let plane = t.len() / (n * c).max(1);
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut t.data[(b * c + ch) * plane..][..plane] {
                *v += bv;
            }
        }
    }
}

fn bias_grad(g: &Tensor, gb: &mut [f64]) {
    let (n, c) = (g.shape[0], g.shape[1]);
    let plane = g.len() / (n * c).max(1);
    for b in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc += g.data[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
}

fn init_weight<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Param {
    Param::new(Tensor::randn(shape, 0.02, rng))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub geom: ConvGeom,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, geom: ConvGeom, rng: &mut R) -> Self {
        Self {
            weight: init_weight(&[out_c, in_c, geom.kernel, geom.kernel], rng),
            bias: Param::new(Tensor::zeros(&[out_c])),
            geom,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape[0]
    }

    fn shape_for(&self, input: &Tensor) -> Result<ConvShape> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok(ConvShape {
            n,
            big_c: c,
            big_h: h,
            big_w: w,
            small_c: self.out_channels(),
            small_h: self.geom.small(h)?,
            small_w: self.geom.small(w)?,
            g: self.geom,
        })
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let sh = self.shape_for(input)?;
        let mut out = Tensor::zeros(&[sh.n, sh.small_c, sh.small_h, sh.small_w]);
        sh.gather(&input.data, &self.weight.value.data, &mut out.data);
        add_bias(&mut out, &self.bias.value.data);
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let input = cached(&self.input, "conv")?;
        let sh = self.shape_for(input)?;
        grad.expect_shape(&[sh.n, sh.small_c, sh.small_h, sh.small_w], "conv gradient")?;
        let mut gin = Tensor::zeros_like(input);
        sh.scatter(&grad.data, &self.weight.value.data, &mut gin.data);
        sh.weight_grad(&input.data, &grad.data, &mut self.weight.grad.data);
        bias_grad(grad, &mut self.bias.grad.data);
        Ok(gin)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Transposed convolution; weights are `[in_c, out_c, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub geom: ConvGeom,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, geom: ConvGeom, rng: &mut R) -> Self {
        Self {
            weight: init_weight(&[in_c, out_c, geom.kernel, geom.kernel], rng),
            bias: Param::new(Tensor::zeros(&[out_c])),
            geom,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape[1]
    }

    fn shape_for(&self, input: &Tensor) -> Result<ConvShape> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "transposed conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok(ConvShape {
            n,
            big_c: self.out_channels(),
            big_h: self.geom.big(h)?,
            big_w: self.geom.big(w)?,
            small_c: c,
            small_h: h,
            small_w: w,
            g: self.geom,
        })
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let sh = self.shape_for(input)?;
        let mut out = Tensor::zeros(&[sh.n, sh.big_c, sh.big_h, sh.big_w]);
        sh.scatter(&input.data, &self.weight.value.data, &mut out.data);
        add_bias(&mut out, &self.bias.value.data);
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let input = cached(&self.input, "transposed conv")?;
        let sh = self.shape_for(input)?;
        grad.expect_shape(&[sh.n, sh.big_c, sh.big_h, sh.big_w], "transposed conv gradient")?;
        let mut gin = Tensor::zeros_like(input);
        sh.gather(&grad.data, &self.weight.value.data, &mut gin.data);
        sh.weight_grad(&grad.data, &input.data, &mut self.weight.grad.data);
        bias_grad(grad, &mut self.bias.grad.data);
        Ok(gin)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Per-channel batch normalization over `N·H·W`. With one batch item this is
/// instance normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let mut gamma = Tensor::randn(&[channels], 0.02, rng);
        gamma.data.iter_mut().for_each(|g| *g += 1.0);
        Self {
            gamma: Param::new(gamma),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.gamma.value.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm expects {} channels, got {c}",
                self.gamma.value.len()
            )));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut xhat = Tensor::zeros_like(input);
        let mut out = Tensor::zeros_like(input);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += input.data[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0;
                for b in 0..n {
                    for v in &input.data[(b * c + ch) * plane..][..plane] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / m;
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                let mm = self.momentum;
                self.running_mean.data[ch] = (1.0 - mm) * self.running_mean.data[ch] + mm * mean;
                self.running_var.data[ch] = (1.0 - mm) * self.running_var.data[ch] + mm * unbiased;
                (mean, var)
            } else {
                (self.running_mean.data[ch], self.running_var.data[ch])
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma.value.data[ch], self.beta.value.data[ch]);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for j in off..off + plane {
                    let xh = (input.data[j] - mean) * is;
                    xhat.data[j] = xh;
                    out.data[j] = g * xh + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            train,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("batch norm: backward called before forward".into()))?;
        grad.same_shape(&cache.xhat, "batch norm gradient")?;
        let (n, c, h, w) = grad.dims4()?;
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut gin = Tensor::zeros_like(grad);
        for ch in 0..c {
            let g = self.gamma.value.data[ch];
            let is = cache.inv_std[ch];
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for j in off..off + plane {
                    sum_dy += grad.data[j];
                    sum_dy_xhat += grad.data[j] * cache.xhat.data[j];
                }
            }
            self.gamma.grad.data[ch] += sum_dy_xhat;
            self.beta.grad.data[ch] += sum_dy;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for j in off..off + plane {
                    gin.data[j] = if cache.train {
                        g * is / m * (m * grad.data[j] - sum_dy - cache.xhat.data[j] * sum_dy_xhat)
                    } else {
                        g * is * grad.data[j]
                    };
                }
            }
        }
        Ok(gin)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor) {
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// Pointwise nonlinearity; caches its input and output.
#[derive(Debug, Clone)]
pub struct Act {
    pub kind: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        let out = match self.kind {
            Activation::Relu => input.map(|v| v.max(0.0)),
            Activation::LeakyRelu(a) => input.map(|v| if v > 0.0 { v } else { a * v }),
            Activation::Tanh => input.map(f64::tanh),
            Activation::Sigmoid => input.map(|v| 1.0 / (1.0 + (-v).exp())),
        };
        self.cache = Some((input.clone(), out.clone()));
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (input, out) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("activation: backward called before forward".into()))?;
        grad.same_shape(input, "activation gradient")?;
        let data = match self.kind {
            Activation::Relu => grad
                .data
                .iter()
                .zip(&input.data)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
            Activation::LeakyRelu(a) => grad
                .data
                .iter()
                .zip(&input.data)
                .map(|(g, &x)| if x > 0.0 { *g } else { a * g })
                .collect(),
            Activation::Tanh => grad
                .data
                .iter()
                .zip(&out.data)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
            Activation::Sigmoid => grad
                .data
                .iter()
                .zip(&out.data)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        Tensor::from_vec(&grad.shape, data)
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 − p)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, input: &Tensor, train: bool, rng: &mut R) -> Tensor {
        if !train || self.p == 0.0 {
            self.mask = Some(Tensor::full(&input.shape, 1.0));
            return input.clone();
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask = Tensor {
            shape: input.shape.clone(),
            data: (0..input.len())
                .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
                .collect(),
        };
        let out = input.zip_map(&mask, |a, b| a * b).expect("same shape");
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = cached(&self.mask, "dropout")?;
        grad.zip_map(mask, |g, m| g * m)
    }
}
