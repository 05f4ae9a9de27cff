use rand::Rng;

use super::adam::Module;
use super::config::NetConfig;
use super::generator::LEAKY_SLOPE;
use super::layers::{Act, Activation, BatchNorm2d, BufferVisitor, Conv2d, ConvGeom, ParamVisitor};
use super::tensor::{concat_channels, split_channels, Tensor};
use crate::error::Result;

const PATCH: ConvGeom = ConvGeom {
    kernel: 4,
    stride: 1,
    pad: 1,
};

/// Three-layer patch classifier over the channel concatenation of the
/// condition `x` and a real or generated depth image `y`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    c1: Conv2d,
    a1: Act,
    c2: Conv2d,
    bn2: BatchNorm2d,
    a2: Act,
    c3: Conv2d,
    out: Act,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Self {
        let dc = config.disc_channels;
        Self {
            c1: Conv2d::new(2, dc, ConvGeom::DOWN, rng),
            a1: Act::new(Activation::LeakyRelu(LEAKY_SLOPE)),
            c2: Conv2d::new(dc, 2 * dc, ConvGeom::DOWN, rng),
            bn2: BatchNorm2d::new(2 * dc, rng),
            a2: Act::new(Activation::LeakyRelu(LEAKY_SLOPE)),
            c3: Conv2d::new(2 * dc, 1, PATCH, rng),
            out: Act::new(Activation::Sigmoid),
        }
    }

    /// Patch scores in `(0, 1)`, shape `[N, 1, R/4 − 1, R/4 − 1]`.
    pub fn forward(&mut self, x: &Tensor, y: &Tensor, train: bool) -> Result<Tensor> {
        x.same_shape(y, "discriminator inputs")?;
        let h = concat_channels(&[x, y])?;
        let h = self.a1.forward(&self.c1.forward(&h)?);
        let h = self.bn2.forward(&self.c2.forward(&h)?, train)?;
        let h = self.a2.forward(&h);
        let s = self.out.forward(&self.c3.forward(&h)?);
        s.check_finite("discriminator scores")?;
        Ok(s)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to `y` (the condition `x` is data and gets none).
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.out.backward(grad)?;
        let g = self.c3.backward(&g)?;
        let g = self.a2.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        let g = self.c2.backward(&g)?;
        let g = self.a1.backward(&g)?;
        let g = self.c1.backward(&g)?;
        Ok(split_channels(&g, &[1, 1])?.pop().expect("two parts"))
    }
}

impl Module for Discriminator {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        self.c1.visit_params("d.conv1", f);
        self.c2.visit_params("d.conv2", f);
        self.bn2.visit_params("d.bn2", f);
        self.c3.visit_params("d.conv3", f);
    }

    fn visit_buffers(&mut self, f: &mut BufferVisitor) {
        self.bn2.visit_buffers("d.bn2", f);
    }
}
