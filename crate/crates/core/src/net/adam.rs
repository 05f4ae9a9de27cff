use std::collections::BTreeMap;

use super::layers::{BufferVisitor, Param, ParamVisitor};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything exposing named parameters and buffers.
pub trait Module {
    fn visit_params(&mut self, f: &mut ParamVisitor);
    fn visit_buffers(&mut self, _f: &mut BufferVisitor) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with bias correction. Moments are keyed by parameter name and
/// created lazily on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter of `module` from its accumulated
    /// gradients. A non-finite gradient aborts before anything is changed.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let mut bad: Option<String> = None;
        module.visit_params(&mut |name, p| {
            if bad.is_none() {
                if let Err(e) = p.grad.check_finite(&format!("gradient of {name}")) {
                    bad = Some(e.to_string());
                }
            }
        });
        if let Some(msg) = bad {
            return Err(Error::NonFinite(msg));
        }
        self.step += 1;
        let t = self.step as i32;
        let cfg = self.config;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let moments = &mut self.moments;
        let mut mismatch: Option<Error> = None;
        module.visit_params(&mut |name, p: &mut Param| {
            let st = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: Tensor::zeros_like(&p.value),
                v: Tensor::zeros_like(&p.value),
            });
            if st.m.shape != p.value.shape {
                mismatch.get_or_insert(Error::ShapeMismatch(format!(
                    "adam moments for {name}: {:?} vs parameter {:?}",
                    st.m.shape, p.value.shape
                )));
                return;
            }
            for j in 0..p.value.len() {
                let g = p.grad.data[j];
                let m = cfg.beta1 * st.m.data[j] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * st.v.data[j] + (1.0 - cfg.beta2) * g * g;
                st.m.data[j] = m;
                st.v.data[j] = v;
                p.value.data[j] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
        });
        mismatch.map_or(Ok(()), Err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Single(Param);

    impl Module for Single {
        fn visit_params(&mut self, f: &mut ParamVisitor) {
            f("p", &mut self.0);
        }
    }

    fn single(values: &[f64]) -> Single {
        Single(Param::new(Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()))
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let lr = 6e-4;
        let mut m = single(&[1.0, -2.0, 0.5]);
        m.0.grad = Tensor::from_vec(&[3], vec![0.3, -4.0, 0.02]).unwrap();
        let before = m.0.value.clone();
        let mut adam = Adam::new(AdamConfig::new(lr, 0.5, 0.999));
        adam.step(&mut m).unwrap();
        for j in 0..3 {
            let delta = m.0.value.data[j] - before.data[j];
            let want = -lr * m.0.grad.data[j].signum();
            assert!((delta - want).abs() < 1e-6 * lr, "{delta} vs {want}");
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = single(&[1.0, 2.0]);
        let before = m.0.value.clone();
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.5, 0.999));
        adam.step(&mut m).unwrap();
        assert_eq!(m.0.value, before);
    }

    #[test]
    fn quadratic_bowl_decreases_monotonically() {
        // f(p) = Σ a_j (p_j − c_j)², gradient 2 a (p − c)
        let a = [1.0, 3.0, 0.5];
        let c = [0.2, -0.4, 1.0];
        let f = |p: &[f64]| (0..3).map(|j| a[j] * (p[j] - c[j]).powi(2)).sum::<f64>();
        let mut m = single(&[1.0, 1.0, -1.0]);
        let mut adam = Adam::new(AdamConfig::new(0.05, 0.5, 0.999));
        let mut last = f(&m.0.value.data);
        for _ in 0..5 {
            for j in 0..3 {
                m.0.grad.data[j] = 2.0 * a[j] * (m.0.value.data[j] - c[j]);
            }
            adam.step(&mut m).unwrap();
            let now = f(&m.0.value.data);
            assert!(now < last, "{now} >= {last}");
            last = now;
        }
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut m = single(&[1.0, 2.0]);
        m.0.grad.data[1] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.5, 0.999));
        let err = adam.step(&mut m).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref s) if s.contains("gradient of p")));
        assert_eq!(m.0.value.data, vec![1.0, 2.0]);
        assert_eq!(adam.step, 0);
    }
}
