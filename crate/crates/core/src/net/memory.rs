use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::InvalidParameter(format!(
                "unknown pooling `{other}`; expected max or mean"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Mean => "mean",
        }
    }
}

/// Elementwise max (or mean) over the occupied slots. Empty slots are skipped.
pub fn view_pool(slots: &[Option<Tensor>], pooling: Pooling) -> Result<Tensor> {
    let mut occupied = slots.iter().flatten();
    let first = occupied.next().ok_or(Error::EmptyMemory)?;
    let mut out = first.clone();
    let mut count = 1.0;
    for s in occupied {
        s.same_shape(first, "view pooling")?;
        match pooling {
            Pooling::Max => {
                for (o, &v) in out.data.iter_mut().zip(&s.data) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            Pooling::Mean => {
                for (o, &v) in out.data.iter_mut().zip(&s.data) {
                    *o += v;
                }
            }
        }
        count += 1.0;
    }
    if pooling == Pooling::Mean {
        out.data.iter_mut().for_each(|v| *v /= count);
    }
    Ok(out)
}

/// Partial derivatives of the pooled descriptor with respect to each
/// occupied slot, as `(slot index, elementwise weight)` pairs. For max
/// pooling every element is owned by one slot: `live` when it attains the
/// maximum, otherwise the lowest-indexed slot that does.
pub fn pool_routing(slots: &[Option<Tensor>], live: usize, pooling: Pooling) -> Result<Vec<(usize, Tensor)>> {
    let pooled = view_pool(slots, pooling)?;
    let occupied: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_some()).collect();
    match pooling {
        Pooling::Mean => {
            let w = 1.0 / occupied.len() as f64;
            Ok(occupied
                .into_iter()
                .map(|i| (i, Tensor::full(&pooled.shape, w)))
                .collect())
        }
        Pooling::Max => {
            let mut weights: Vec<Tensor> = occupied.iter().map(|_| Tensor::zeros_like(&pooled)).collect();
            let live_pos = occupied.iter().position(|&i| i == live);
            for j in 0..pooled.len() {
                let best = pooled.data[j];
                let owner = live_pos
                    .filter(|&p| slots[occupied[p]].as_ref().expect("occupied").data[j] == best)
                    .or_else(|| {
                        occupied
                            .iter()
                            .position(|&i| slots[i].as_ref().expect("occupied").data[j] == best)
                    })
                    .expect("maximum is attained");
                weights[owner].data[j] = 1.0;
            }
            Ok(occupied.into_iter().zip(weights).collect())
        }
    }
}

/// Per-shape table of the most recent view feature for each view slot.
#[derive(Debug, Clone, Default)]
pub struct ShapeMemory {
    views: usize,
    shapes: BTreeMap<String, Vec<Option<Tensor>>>,
}

impl ShapeMemory {
    pub fn new(views: usize) -> Self {
        Self {
            views,
            shapes: BTreeMap::new(),
        }
    }

    pub fn views(&self) -> usize {
        self.views
    }

    /// Replaces slot `slot` (1-based) of `shape_id` with `feature`.
    pub fn update(&mut self, shape_id: &str, slot: usize, feature: Tensor) -> Result<()> {
        if slot == 0 || slot > self.views {
            return Err(Error::IndexOutOfRange {
                index: slot,
                max: self.views,
            });
        }
        let views = self.views;
        let slots = self
            .shapes
            .entry(shape_id.to_string())
            .or_insert_with(|| vec![None; views]);
        slots[slot - 1] = Some(feature);
        Ok(())
    }

    pub fn slots(&self, shape_id: &str) -> Option<&[Option<Tensor>]> {
        self.shapes.get(shape_id).map(Vec::as_slice)
    }

    pub fn slot(&self, shape_id: &str, slot: usize) -> Option<&Tensor> {
        self.slots(shape_id)?.get(slot.checked_sub(1)?)?.as_ref()
    }

    pub fn occupied(&self, shape_id: &str) -> usize {
        self.slots(shape_id).map_or(0, |s| s.iter().flatten().count())
    }

    pub fn descriptor(&self, shape_id: &str, pooling: Pooling) -> Result<Tensor> {
        view_pool(self.slots(shape_id).ok_or(Error::EmptyMemory)?, pooling)
    }

    pub fn clear(&mut self) {
        self.shapes.clear();
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}
