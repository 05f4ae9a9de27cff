//! Alternating discriminator/generator training and two-pass completion.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig, Module};
use super::config::{MemoryReset, NetConfig, TrainConfig};
use super::discriminator::Discriminator;
use super::generator::{Descriptor, Generator};
use super::loss::{bce, reconstruction, total_objective};
use super::memory::ShapeMemory;
use super::tensor::Tensor;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geometry::DepthMap;

/// Network outputs whose depth fraction falls below this are background.
pub const VALID_THRESHOLD: f64 = 1.0 / 12.0;

/// Depth map to a `[1, 1, H, W]` tensor in `[−1, 1]`: `2·fraction − 1` for
/// valid pixels, −1 for background.
pub fn encode_map(map: &DepthMap) -> Tensor {
    let data = map
        .depth
        .iter()
        .zip(&map.valid)
        .map(|(&d, &v)| {
            if v {
                2.0 * map.range.fraction(d).clamp(0.0, 1.0) - 1.0
            } else {
                -1.0
            }
        })
        .collect();
    Tensor {
        shape: vec![1, 1, map.height, map.width],
        data,
    }
}

/// Inverse of [`encode_map`] using the geometry of `like`.
pub fn decode_map(t: &Tensor, like: &DepthMap) -> Result<DepthMap> {
    t.expect_shape(&[1, 1, like.height, like.width], "decoded map")?;
    let mut out = DepthMap::empty(like.width, like.height, like.view_index, like.range);
    for (i, &v) in t.data.iter().enumerate() {
        let frac = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        if frac >= VALID_THRESHOLD {
            out.valid[i] = true;
            out.depth[i] = like.range.near + frac * like.range.span();
        }
    }
    Ok(out)
}

/// Encoded partial/complete view pairs of one shape.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub id: String,
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl TrainingShape {
    pub fn from_sample(sample: &Sample) -> Self {
        Self {
            id: sample.shape_id.clone(),
            inputs: sample.partial_maps.iter().map(encode_map).collect(),
            targets: sample.truth_maps.iter().map(encode_map).collect(),
        }
    }
}

/// One minibatch; `keys[b]` is `(shape id, 1-based view slot)`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub keys: Vec<(String, usize)>,
}

impl Batch {
    pub fn from_views(shape: &TrainingShape, views: &[usize]) -> Result<Self> {
        let pick = |src: &[Tensor]| -> Result<Tensor> {
            Tensor::stack(&views.iter().map(|&v| src[v].clone()).collect::<Vec<_>>())
        };
        Ok(Self {
            x: pick(&shape.inputs)?,
            y: pick(&shape.targets)?,
            keys: views.iter().map(|&v| (shape.id.clone(), v + 1)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_recon: f64,
    pub loss_g: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub memory: ShapeMemory,
    pub step: u64,
    pub epoch: u64,
    noise: ChaCha8Rng,
    order: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = stream(config.seed, 0);
        let generator = Generator::new(&config.net, &mut init)?;
        let discriminator = Discriminator::new(&config.net, &mut init);
        Ok(Self {
            config: config.clone(),
            generator,
            discriminator,
            adam_g: Adam::new(AdamConfig::new(config.lr_g, config.beta1, config.beta2)),
            adam_d: Adam::new(AdamConfig::new(config.lr_d, config.beta1, config.beta2)),
            memory: ShapeMemory::new(config.net.views),
            step: 0,
            epoch: 0,
            noise: stream(config.seed, 1),
            order: stream(config.seed, 2),
        })
    }

    /// One discriminator update on real and detached fake pairs, then one
    /// generator update on `adv + λ·recon`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let (n, _, _, _) = batch.x.dims4()?;
        if n == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        batch.x.same_shape(&batch.y, "batch targets")?;
        let cfg = &self.config;
        self.generator.zero_grad();
        let mut desc = if cfg.net.shape_memory {
            Descriptor::Memory {
                memory: &mut self.memory,
                keys: &batch.keys,
            }
        } else {
            Descriptor::SelfOnly
        };
        let fake = self.generator.forward(&batch.x, &mut desc, true, &mut self.noise)?;

        let mut metrics = StepMetrics::default();
        let mut grad_fake = Tensor::zeros_like(&fake);
        if cfg.adversarial {
            let d = &mut self.discriminator;
            d.zero_grad();
            let real_scores = d.forward(&batch.x, &batch.y, true)?;
            let (loss_real, g_real) = bce(&real_scores, true)?;
            d.backward(&g_real)?;
            let fake_scores = d.forward(&batch.x, &fake, true)?;
            let (loss_fake, g_fake) = bce(&fake_scores, false)?;
            d.backward(&g_fake)?;
            self.adam_d.step(d)?;
            metrics.loss_d = loss_real + loss_fake;

            let scores = d.forward(&batch.x, &fake, true)?;
            let (adv, g_adv) = bce(&scores, true)?;
            grad_fake = d.backward(&g_adv)?;
            d.zero_grad();
            metrics.loss_g_adv = adv;
        }
        let (recon, g_recon) = reconstruction(&fake, &batch.y, cfg.loss)?;
        for (g, r) in grad_fake.data.iter_mut().zip(&g_recon.data) {
            *g += cfg.lambda * r;
        }
        self.generator.backward(&grad_fake)?;
        self.adam_g.step(&mut self.generator)?;
        metrics.loss_recon = recon;
        metrics.loss_g = total_objective(metrics.loss_g_adv, recon, cfg.lambda);
        self.step += 1;
        Ok(metrics)
    }

    /// Batches for one epoch: shapes in a seeded random order, each shape's
    /// views in rig order, chunked by the configured batch size.
    pub fn epoch_batches(&mut self, shapes: &[TrainingShape]) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..shapes.len()).collect();
        order.shuffle(&mut self.order);
        let mut flat: Vec<(usize, usize)> = Vec::new();
        for &s in &order {
            let v = shapes[s].inputs.len();
            if v != self.config.net.views || shapes[s].targets.len() != v {
                return Err(Error::CountMismatch {
                    expected: self.config.net.views,
                    actual: v,
                });
            }
            flat.extend((0..v).map(|i| (s, i)));
        }
        flat.chunks(self.config.batch)
            .map(|chunk| {
                let mut xs = Vec::with_capacity(chunk.len());
                let mut ys = Vec::with_capacity(chunk.len());
                let mut keys = Vec::with_capacity(chunk.len());
                for &(s, i) in chunk {
                    xs.push(shapes[s].inputs[i].clone());
                    ys.push(shapes[s].targets[i].clone());
                    keys.push((shapes[s].id.clone(), i + 1));
                }
                Ok(Batch {
                    x: Tensor::stack(&xs)?,
                    y: Tensor::stack(&ys)?,
                    keys,
                })
            })
            .collect()
    }

    /// One pass over `shapes`; `on_step` sees every step's metrics.
    pub fn train_epoch(
        &mut self,
        shapes: &[TrainingShape],
        mut on_step: impl FnMut(u64, &StepMetrics),
    ) -> Result<StepMetrics> {
        if self.config.memory_reset == MemoryReset::Epoch {
            self.memory.clear();
        }
        let batches = self.epoch_batches(shapes)?;
        let mut mean = StepMetrics::default();
        for b in &batches {
            let m = self.train_step(b)?;
            on_step(self.step, &m);
            mean.loss_d += m.loss_d;
            mean.loss_g_adv += m.loss_g_adv;
            mean.loss_recon += m.loss_recon;
            mean.loss_g += m.loss_g;
        }
        let k = batches.len().max(1) as f64;
        mean.loss_d /= k;
        mean.loss_g_adv /= k;
        mean.loss_recon /= k;
        mean.loss_g /= k;
        self.epoch += 1;
        Ok(mean)
    }
}

/// Two-pass completion output.
#[derive(Debug, Clone)]
pub struct Completion {
    pub maps: Vec<DepthMap>,
    pub outputs: Vec<Tensor>,
    /// Pooled descriptor used in the final pass, one item per view.
    pub descriptor: Tensor,
    pub memory: ShapeMemory,
}

/// Completes the `V` partial views of one shape with batch-norm in
/// inference mode and no dropout. The first pass fills a fresh memory with
/// every view's feature; the following passes pool over all of them.
pub fn complete_views(generator: &mut Generator, inputs: &[Tensor], passes: usize) -> Result<(Vec<Tensor>, Tensor, ShapeMemory)> {
    let cfg: &NetConfig = &generator.config;
    let v = cfg.views;
    if inputs.len() != v {
        return Err(Error::CountMismatch {
            expected: v,
            actual: inputs.len(),
        });
    }
    let use_memory = cfg.shape_memory;
    let x = Tensor::stack(inputs)?;
    let keys: Vec<(String, usize)> = (1..=v).map(|i| ("shape".to_string(), i)).collect();
    let mut memory = ShapeMemory::new(v);
    // inference never draws from this
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut out = None;
    for _ in 0..passes.max(2) {
        let mut desc = if use_memory {
            Descriptor::Memory {
                memory: &mut memory,
                keys: &keys,
            }
        } else {
            Descriptor::SelfOnly
        };
        out = Some(generator.forward(&x, &mut desc, false, &mut unused)?);
    }
    let out = out.expect("at least one pass");
    let descriptor = generator
        .last_descriptor()
        .cloned()
        .ok_or_else(|| Error::InvalidParameter("generator recorded no descriptor".into()))?;
    let outputs = (0..v).map(|i| out.item(i)).collect::<Result<Vec<_>>>()?;
    Ok((outputs, descriptor, memory))
}

/// Completes the partial depth maps of one shape; output order matches input.
pub fn complete_shape(generator: &mut Generator, maps: &[DepthMap]) -> Result<Completion> {
    let inputs: Vec<Tensor> = maps.iter().map(encode_map).collect();
    let (outputs, descriptor, memory) = complete_views(generator, &inputs, 2)?;
    let maps = outputs
        .iter()
        .zip(maps)
        .map(|(t, like)| decode_map(t, like))
        .collect::<Result<Vec<_>>>()?;
    Ok(Completion {
        maps,
        outputs,
        descriptor,
        memory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DepthRange;
    use crate::net::gradcheck::{relative_error, STEP, TOLERANCE};
    use crate::net::loss::Reconstruction;
    use crate::net::memory::Pooling;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            net: NetConfig {
                resolution: 16,
                levels: 4,
                channels: vec![4, 8, 8, 8],
                disc_channels: 4,
                views: 3,
                ..NetConfig::default()
            },
            batch: 3,
            ..TrainConfig::default()
        }
    }

    fn toy_shapes(n: usize, res: usize, views: usize, seed: u64) -> Vec<TrainingShape> {
        let mut rng = stream(seed, 9);
        (0..n)
            .map(|s| {
                let targets: Vec<Tensor> = (0..views)
                    .map(|_| Tensor::uniform(&[1, 1, res, res], -0.5, 0.8, &mut rng))
                    .collect();
                let inputs = targets
                    .iter()
                    .map(|t| {
                        let mut x = t.clone();
                        for v in &mut x.data[..res * res / 2] {
                            *v = -1.0;
                        }
                        x
                    })
                    .collect();
                TrainingShape {
                    id: format!("shape{s}"),
                    inputs,
                    targets,
                }
            })
            .collect()
    }

    #[test]
    fn encoding_round_trips_valid_pixels() {
        let range = DepthRange { near: 0.4, far: 1.0 };
        let mut m = DepthMap::empty(4, 4, 1, range);
        m.set(1, 2, 0.7);
        m.set(3, 0, 0.5);
        let t = encode_map(&m);
        assert_eq!(t.data[m.offset(0, 0)], -1.0);
        assert!((t.data[m.offset(1, 2)] - 0.0).abs() < 1e-12);
        let back = decode_map(&t, &m).unwrap();
        assert_eq!(back.valid, m.valid);
        assert!((back.get(1, 2).unwrap() - 0.7).abs() < 1e-12);
        assert!((back.get(3, 0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = tiny_config();
        let shapes = toy_shapes(2, 16, 3, 1);
        let run = || {
            let mut st = TrainState::new(&cfg).unwrap();
            let mut log = Vec::new();
            for _ in 0..2 {
                st.train_epoch(&shapes, |_, m| log.push(*m)).unwrap();
            }
            let mut params = Vec::new();
            st.generator.visit_params(&mut |_, p| params.extend(p.value.data.clone()));
            st.discriminator.visit_params(&mut |_, p| params.extend(p.value.data.clone()));
            (params, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(la, lb);
        assert_eq!(la.len(), 4);
    }

    #[test]
    fn step_counters_advance() {
        let cfg = tiny_config();
        let shapes = toy_shapes(1, 16, 3, 2);
        let mut st = TrainState::new(&cfg).unwrap();
        let b = st.epoch_batches(&shapes).unwrap();
        assert_eq!(b.len(), 1);
        st.train_step(&b[0]).unwrap();
        st.train_step(&b[0]).unwrap();
        assert_eq!((st.step, st.adam_g.step, st.adam_d.step), (2, 2, 2));
        for (name, m) in &st.adam_g.moments {
            let mut shape = None;
            st.generator.visit_params(&mut |n, p| {
                if n == name {
                    shape = Some(p.value.shape.clone());
                }
            });
            assert_eq!(Some(m.m.shape.clone()), shape);
        }
    }

    /// With a frozen discriminator scoring 0.5 everywhere, the generator
    /// gradient is the adversarial part plus λ times an L1 part, and the L1
    /// part matches central differences.
    #[test]
    fn generator_gradient_decomposes_into_adversarial_and_l1() {
        let cfg = TrainConfig {
            net: NetConfig {
                dropout: false,
                ..tiny_config().net
            },
            ..tiny_config()
        };
        let mut st = TrainState::new(&cfg).unwrap();
        // a discriminator that outputs exactly 0.5: zero final conv
        st.discriminator.visit_params(&mut |name, p| {
            if name.starts_with("d.conv3") {
                p.value.data.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let shapes = toy_shapes(1, 16, 3, 3);
        let batch = Batch::from_views(&shapes[0], &[0, 1, 2]).unwrap();

        let grads = |st: &TrainState, adversarial: bool, lambda: f64| -> Vec<f64> {
            let mut g = st.generator.clone();
            let mut d = st.discriminator.clone();
            g.zero_grad();
            let mut mem = ShapeMemory::new(3);
            let mut rng = stream(0, 0);
            let fake = g
                .forward(&batch.x, &mut Descriptor::Memory { memory: &mut mem, keys: &batch.keys }, true, &mut rng)
                .unwrap();
            let mut gf = Tensor::zeros_like(&fake);
            if adversarial {
                let s = d.forward(&batch.x, &fake, true).unwrap();
                assert!(s.data.iter().all(|&v| (v - 0.5).abs() < 1e-15));
                let (_, gs) = bce(&s, true).unwrap();
                gf = d.backward(&gs).unwrap();
            }
            let (_, gr) = reconstruction(&fake, &batch.y, Reconstruction::L1).unwrap();
            for (a, b) in gf.data.iter_mut().zip(&gr.data) {
                *a += lambda * b;
            }
            g.backward(&gf).unwrap();
            let mut out = Vec::new();
            g.visit_params(&mut |_, p| out.extend(p.grad.data.clone()));
            out
        };
        let full = grads(&st, true, 1.0);
        let adv_only = grads(&st, true, 0.0);
        let l1_only = grads(&st, false, 1.0);
        for ((f, a), l) in full.iter().zip(&adv_only).zip(&l1_only) {
            assert!((f - (a + l)).abs() < 1e-10 * (1.0 + f.abs()));
        }

        // L1 component against central differences of the L1 loss
        let l1_at = |g: &Generator| -> f64 {
            let mut g = g.clone();
            let mut mem = ShapeMemory::new(3);
            let mut rng = stream(0, 0);
            let fake = g
                .forward(&batch.x, &mut Descriptor::Memory { memory: &mut mem, keys: &batch.keys }, true, &mut rng)
                .unwrap();
            reconstruction(&fake, &batch.y, Reconstruction::L1).unwrap().0
        };
        let mut names = Vec::new();
        st.generator.visit_params(&mut |n, p| names.push((n.to_string(), p.value.len())));
        let mut offset = 0;
        let mut checked = 0;
        for (name, len) in names {
            let j = len / 2;
            let analytic = l1_only[offset + j];
            let perturb = |g: &mut Generator, dv: f64| {
                g.visit_params(&mut |n, p| {
                    if n == name {
                        p.value.data[j] += dv;
                    }
                })
            };
            let mut g = st.generator.clone();
            perturb(&mut g, STEP);
            let plus = l1_at(&g);
            perturb(&mut g, -2.0 * STEP);
            let minus = l1_at(&g);
            let numeric = (plus - minus) / (2.0 * STEP);
            assert!(
                relative_error(analytic, numeric) < TOLERANCE,
                "{name}[{j}]: {analytic} vs {numeric}"
            );
            offset += len;
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn large_lambda_gradient_points_along_l1() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        let shapes = toy_shapes(1, 16, 3, 4);
        let batch = Batch::from_views(&shapes[0], &[0, 1, 2]).unwrap();
        let grad = |st: &TrainState, adversarial: bool| -> Vec<f64> {
            let mut g = st.generator.clone();
            let mut d = st.discriminator.clone();
            g.zero_grad();
            let mut mem = ShapeMemory::new(3);
            let mut rng = stream(5, 5);
            let fake = g
                .forward(&batch.x, &mut Descriptor::Memory { memory: &mut mem, keys: &batch.keys }, true, &mut rng)
                .unwrap();
            let mut gf = Tensor::zeros_like(&fake);
            if adversarial {
                let s = d.forward(&batch.x, &fake, true).unwrap();
                gf = d.backward(&bce(&s, true).unwrap().1).unwrap();
            }
            let (_, gr) = reconstruction(&fake, &batch.y, Reconstruction::L1).unwrap();
            for (a, b) in gf.data.iter_mut().zip(&gr.data) {
                *a += 50.0 * b;
            }
            g.backward(&gf).unwrap();
            let mut out = Vec::new();
            g.visit_params(&mut |_, p| out.extend(p.grad.data.clone()));
            out
        };
        // a few real steps so the discriminator is not at initialization
        for b in st.epoch_batches(&shapes).unwrap() {
            st.train_step(&b).unwrap();
        }
        let total = grad(&st, true);
        let pure = grad(&st, false);
        let dot: f64 = total.iter().zip(&pure).map(|(a, b)| a * b).sum();
        let na = total.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = pure.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cosine = dot / (na * nb);
        assert!(cosine > 0.98, "cosine {cosine}");
    }

    #[test]
    fn completion_uses_the_full_memory_and_is_stable() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        let shapes = toy_shapes(1, 16, 3, 5);
        for _ in 0..3 {
            st.train_epoch(&shapes, |_, _| {}).unwrap();
        }
        let (two, desc, mem) = complete_views(&mut st.generator, &shapes[0].inputs, 2).unwrap();
        let full = mem.descriptor("shape", Pooling::Max).unwrap();
        for i in 0..3 {
            assert_eq!(desc.item(i).unwrap(), full);
        }
        let (three, _, _) = complete_views(&mut st.generator, &shapes[0].inputs, 3).unwrap();
        assert_eq!(two, three);
        assert!(complete_views(&mut st.generator, &shapes[0].inputs[..2], 2).is_err());
    }

    #[test]
    fn single_view_baseline_trains() {
        let cfg = TrainConfig {
            net: NetConfig {
                shape_memory: false,
                ..tiny_config().net
            },
            ..tiny_config()
        };
        let mut st = TrainState::new(&cfg).unwrap();
        let shapes = toy_shapes(1, 16, 3, 6);
        let m = st.train_epoch(&shapes, |_, _| {}).unwrap();
        assert!(m.loss_recon.is_finite());
        assert!(st.memory.is_empty());
    }
}
