use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major tensor. Image tensors are laid out `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::CountMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        self.expect_shape(&other.shape, what)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} of shape {:?} is {}",
                self.shape, self.data[i]
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, "elementwise op")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Batch item `n` of a rank-4 tensor, keeping a leading unit dimension.
    pub fn item(&self, n: usize) -> Result<Tensor> {
        let (nb, c, h, w) = self.dims4()?;
        if n >= nb {
            return Err(Error::IndexOutOfRange {
                index: n + 1,
                max: nb,
            });
        }
        let len = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[n * len..(n + 1) * len].to_vec())
    }

    /// Stacks `[1, C, H, W]` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::ShapeMismatch("cannot stack zero tensors".into()))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            t.expect_shape(&[1, c, h, w], "stack")?;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[items.len(), c, h, w], data)
    }
}

/// Channel-wise concatenation of rank-4 tensors with equal `N`, `H`, `W`.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::ShapeMismatch("cannot concatenate zero tensors".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat: {:?} does not match {:?}",
                p.shape, first.shape
            )));
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for p in parts {
            let len = p.shape[1] * plane;
            data.extend_from_slice(&p.data[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec(&[n, total, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = t.dims4()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch(format!(
            "split {sizes:?} does not sum to {c} channels"
        )));
    }
    let plane = h * w;
    let mut out: Vec<Vec<f64>> = sizes
        .iter()
        .map(|s| Vec::with_capacity(n * s * plane))
        .collect();
    for b in 0..n {
        let mut offset = b * c * plane;
        for (k, s) in sizes.iter().enumerate() {
            out[k].extend_from_slice(&t.data[offset..offset + s * plane]);
            offset += s * plane;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::from_vec(&[n, s, h, w], d))
        .collect()
}
