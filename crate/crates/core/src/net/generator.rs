//! U-Net generator with a pooled shape descriptor.
//!
//! Down blocks are indexed from the bottleneck outwards: `D_{L−1}` sees the
//! input image and `D_0` produces the 1×1 code. Up block `U_k` mirrors `D_k`
//! and, for `k ≥ 1`, takes the concatenation of `U_{k−1}`'s output with the
//! output of `D_k`. When the descriptor is injected at the input of `D_p`,
//! the concatenated `(f, d)` tensor also replaces the skip into `U_{p+1}`.

use rand::Rng;

use super::adam::Module;
use super::config::{NetConfig, PoolPosition};
use super::layers::{
    Act, Activation, BatchNorm2d, BufferVisitor, Conv2d, ConvGeom, ConvTranspose2d, Dropout, ParamVisitor,
};
use std::collections::HashMap;

use super::memory::{pool_routing, view_pool, ShapeMemory};
use super::tensor::{concat_channels, split_channels, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DROPOUT_RATE: f64 = 0.5;
/// Up blocks `U_0..U_{n−1}` carry dropout.
pub const DROPOUT_BLOCKS: usize = 3;

/// How the descriptor `d` for each batch item is formed.
pub enum Descriptor<'a> {
    /// Update the memory slot of each item with its feature, then pool.
    /// `keys[b]` is `(shape id, 1-based slot)` for batch item `b`.
    Memory {
        memory: &'a mut ShapeMemory,
        keys: &'a [(String, usize)],
    },
    /// `d = f`: the single-view baseline.
    SelfOnly,
}

#[derive(Debug, Clone)]
struct DownBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: Act,
}

impl DownBlock {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = self.conv.forward(x)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, train)?;
        }
        Ok(self.act.forward(&h))
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mut g = self.act.backward(g)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.backward(&g)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    act: Act,
    conv: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    dropout: Option<Dropout>,
    out_act: Option<Act>,
}

impl UpBlock {
    fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, train: bool, rng: &mut R) -> Result<Tensor> {
        let h = self.act.forward(x);
        let mut h = self.conv.forward(&h)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, train)?;
        }
        if let Some(d) = &mut self.dropout {
            h = d.forward(&h, train, rng);
        }
        if let Some(a) = &mut self.out_act {
            h = a.forward(&h);
        }
        Ok(h)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mut g = g.clone();
        if let Some(a) = &mut self.out_act {
            g = a.backward(&g)?;
        }
        if let Some(d) = &mut self.dropout {
            g = d.backward(&g)?;
        }
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        let g = self.conv.backward(&g)?;
        self.act.backward(&g)
    }
}

#[derive(Debug, Clone, Default)]
struct Cache {
    /// `(source item, pooled item, weight)`: the descriptor of the pooled item
    /// depends elementwise on the feature of the source item, which wrote a
    /// memory slot during the same pass. Older slot contents are constants.
    routes: Option<Vec<(usize, usize, Tensor)>>,
    descriptor: Option<Tensor>,
    feature: Option<Tensor>,
    skip_sizes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub config: NetConfig,
    down: Vec<DownBlock>,
    up: Vec<UpBlock>,
    fuse: Option<Conv2d>,
    cache: Cache,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let l = config.levels;
        let doubled = |k: usize| config.position == PoolPosition::Down(k);
        let mut down = Vec::with_capacity(l);
        for k in 0..l {
            let base_in = if k == l - 1 { 1 } else { config.down_out(k + 1) };
            let in_c = if doubled(k) { 2 * base_in } else { base_in };
            let out_c = config.down_out(k);
            down.push(DownBlock {
                conv: Conv2d::new(in_c, out_c, ConvGeom::DOWN, rng),
                bn: (k != 0 && k != l - 1).then(|| BatchNorm2d::new(out_c, rng)),
                act: Act::new(Activation::LeakyRelu(LEAKY_SLOPE)),
            });
        }
        let fuse = (config.position == PoolPosition::Code).then(|| {
            let c = config.down_out(0);
            Conv2d::new(
                2 * c,
                c,
                ConvGeom {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                },
                rng,
            )
        });
        let mut up = Vec::with_capacity(l);
        for k in 0..l {
            let out_c = if k == l - 1 { 1 } else { config.down_out(k + 1) };
            let in_c = if k == 0 {
                config.down_out(0)
            } else {
                let skip = config.down_out(k) * if doubled(k - 1) { 2 } else { 1 };
                config.down_out(k) + skip
            };
            let last = k == l - 1;
            up.push(UpBlock {
                act: Act::new(Activation::Relu),
                conv: ConvTranspose2d::new(in_c, out_c, ConvGeom::DOWN, rng),
                bn: (!last).then(|| BatchNorm2d::new(out_c, rng)),
                dropout: (config.dropout && k < DROPOUT_BLOCKS && !last).then(|| Dropout::new(DROPOUT_RATE)),
                out_act: last.then(|| Act::new(Activation::Tanh)),
            });
        }
        Ok(Self {
            config: config.clone(),
            down,
            up,
            fuse,
            cache: Cache::default(),
        })
    }

    /// Pooled descriptors from the most recent forward pass, `[N, C, h, w]`.
    pub fn last_descriptor(&self) -> Option<&Tensor> {
        self.cache.descriptor.as_ref()
    }

    /// View features from the most recent forward pass.
    pub fn last_feature(&self) -> Option<&Tensor> {
        self.cache.feature.as_ref()
    }

    fn inject(&mut self, f: &Tensor, desc: &mut Descriptor) -> Result<Tensor> {
        let (n, _, _, _) = f.dims4()?;
        let (d, routes) = match desc {
            Descriptor::SelfOnly => {
                let item_shape = [1, f.shape[1], f.shape[2], f.shape[3]];
                let routes = (0..n).map(|b| (b, b, Tensor::full(&item_shape, 1.0))).collect();
                (f.clone(), routes)
            }
            Descriptor::Memory { memory, keys } => {
                if keys.len() != n {
                    return Err(Error::CountMismatch {
                        expected: n,
                        actual: keys.len(),
                    });
                }
                if memory.views() != self.config.views {
                    return Err(Error::ShapeMismatch(format!(
                        "memory has {} slots, network expects {}",
                        memory.views(),
                        self.config.views
                    )));
                }
                let mut writer: HashMap<(&str, usize), usize> = HashMap::new();
                let mut ds = Vec::with_capacity(n);
                let mut routes = Vec::new();
                for (b, (shape, slot)) in keys.iter().enumerate() {
                    memory.update(shape, *slot, f.item(b)?)?;
                    writer.insert((shape.as_str(), slot - 1), b);
                    let slots = memory.slots(shape).ok_or(Error::EmptyMemory)?;
                    ds.push(view_pool(slots, self.config.pooling)?);
                    for (s, w) in pool_routing(slots, slot - 1, self.config.pooling)? {
                        if let Some(&src) = writer.get(&(shape.as_str(), s)) {
                            routes.push((src, b, w));
                        }
                    }
                }
                (Tensor::stack(&ds)?, routes)
            }
        };
        let out = concat_channels(&[f, &d])?;
        self.cache.feature = Some(f.clone());
        self.cache.descriptor = Some(d);
        self.cache.routes = Some(routes);
        Ok(out)
    }

    fn inject_backward(&self, g: &Tensor) -> Result<Tensor> {
        let routes = self
            .cache
            .routes
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("generator: backward called before forward".into()))?;
        let c = g.shape[1] / 2;
        let mut parts = split_channels(g, &[c, c])?;
        let gd = parts.pop().expect("two parts");
        let mut gf = parts.pop().expect("two parts");
        let len = gf.len() / gf.shape[0];
        for (src, dst, w) in routes {
            let to = &mut gf.data[src * len..][..len];
            let from = &gd.data[dst * len..][..len];
            for ((a, b), wv) in to.iter_mut().zip(from).zip(&w.data) {
                *a += b * wv;
            }
        }
        Ok(gf)
    }

    /// Completes a batch of `[N, 1, R, R]` depth images.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        desc: &mut Descriptor,
        train: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let r = self.config.resolution;
        if c != 1 || h != r || w != r {
            return Err(Error::ShapeMismatch(format!(
                "generator expects [N, 1, {r}, {r}], got [{n}, {c}, {h}, {w}]"
            )));
        }
        let l = self.config.levels;
        let pos = self.config.position;
        let mut skips: Vec<Option<Tensor>> = vec![None; l];
        let mut injected: Option<Tensor> = None;
        let mut hcur = x.clone();
        for k in (0..l).rev() {
            if pos == PoolPosition::Down(k) {
                let cat = self.inject(&hcur, desc)?;
                injected = Some(cat.clone());
                hcur = cat;
            }
            hcur = self.down[k].forward(&hcur, train)?;
            skips[k] = Some(hcur.clone());
        }
        if pos == PoolPosition::Code {
            let cat = self.inject(&hcur, desc)?;
            hcur = self.fuse.as_mut().expect("fuse conv").forward(&cat)?;
        }
        let mut u = self.up[0].forward(&hcur, train, rng)?;
        self.cache.skip_sizes.clear();
        for k in 1..l {
            let skip = if pos == PoolPosition::Down(k - 1) {
                injected.as_ref().expect("injected before use")
            } else {
                skips[k].as_ref().expect("skip recorded")
            };
            self.cache.skip_sizes.push((u.shape[1], skip.shape[1]));
            let cat = concat_channels(&[&u, skip])?;
            u = self.up[k].forward(&cat, train, rng)?;
        }
        u.check_finite("generator output")?;
        Ok(u)
    }

    /// Backpropagates `grad` of the last forward output, accumulating parameter
    /// gradients; returns the gradient with respect to the input image.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let l = self.config.levels;
        let pos = self.config.position;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; l];
        let mut injected_grad: Option<Tensor> = None;
        let mut g = grad.clone();
        for k in (1..l).rev() {
            let gin = self.up[k].backward(&g)?;
            let (a, b) = self.cache.skip_sizes[k - 1];
            let mut parts = split_channels(&gin, &[a, b])?;
            let gskip = parts.pop().expect("two parts");
            g = parts.pop().expect("two parts");
            if pos == PoolPosition::Down(k - 1) {
                injected_grad = Some(gskip);
            } else {
                skip_grads[k] = Some(gskip);
            }
        }
        g = self.up[0].backward(&g)?;
        if pos == PoolPosition::Code {
            g = self.fuse.as_mut().expect("fuse conv").backward(&g)?;
            g = self.inject_backward(&g)?;
        }
        for k in 0..l {
            if let Some(s) = &skip_grads[k] {
                g.add_assign(s)?;
            }
            g = self.down[k].backward(&g)?;
            if pos == PoolPosition::Down(k) {
                if let Some(s) = &injected_grad {
                    g.add_assign(s)?;
                }
                g = self.inject_backward(&g)?;
            }
        }
        Ok(g)
    }
}

impl Module for Generator {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        for (k, d) in self.down.iter_mut().enumerate() {
            d.conv.visit_params(&format!("g.down{k}.conv"), f);
            if let Some(bn) = &mut d.bn {
                bn.visit_params(&format!("g.down{k}.bn"), f);
            }
        }
        if let Some(c) = &mut self.fuse {
            c.visit_params("g.fuse", f);
        }
        for (k, u) in self.up.iter_mut().enumerate() {
            u.conv.visit_params(&format!("g.up{k}.conv"), f);
            if let Some(bn) = &mut u.bn {
                bn.visit_params(&format!("g.up{k}.bn"), f);
            }
        }
    }

    fn visit_buffers(&mut self, f: &mut BufferVisitor) {
        for (k, d) in self.down.iter_mut().enumerate() {
            if let Some(bn) = &mut d.bn {
                bn.visit_buffers(&format!("g.down{k}.bn"), f);
            }
        }
        for (k, u) in self.up.iter_mut().enumerate() {
            if let Some(bn) = &mut u.bn {
                bn.visit_buffers(&format!("g.up{k}.bn"), f);
            }
        }
    }
}
