//! Evaluation measures: symmetric Chamfer distance between clouds and the
//! average per-pixel L1 distance between depth maps, plus the exact k-d tree
//! both the metrics and the outlier filter query.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, PointCloud, Vec3};

const LEAF_SIZE: usize = 8;

/// Static k-d tree over a point set. Queries are exact; ties on distance
/// resolve to the point inserted first.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    ids: Vec<usize>,
    axes: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        Self::split(points, &mut order, 0, &mut axes);
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            ids: order,
            axes,
        }
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::build(&cloud.points)
    }

    fn split(points: &[Vec3], order: &mut [usize], offset: usize, axes: &mut [u8]) {
        if order.len() <= LEAF_SIZE {
            return;
        }
        let (lo, hi) = order.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), &i| (lo.inf(&points[i]), hi.sup(&points[i])),
        );
        let axis = (hi - lo).imax();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        axes[offset + mid] = axis as u8;
        let (left, rest) = order.split_at_mut(mid);
        Self::split(points, left, offset, axes);
        Self::split(points, &mut rest[1..], offset + mid + 1, axes);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Insertion index and distance of the nearest stored point.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        self.nearest_slot(query).map(|(slot, d)| (self.ids[slot], d))
    }

    fn nearest_slot(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX, 0);
        self.nearest_in(query, 0, self.points.len(), &mut best);
        Some((best.2, best.0.sqrt()))
    }

    fn nearest_in(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (f64, usize, usize)) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                let d2 = (q - self.points[i]).norm_squared();
                if d2 < best.0 || (d2 == best.0 && self.ids[i] < best.1) {
                    *best = (d2, self.ids[i], i);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = self.axes[mid] as usize;
        let pivot = &self.points[mid];
        let d2 = (q - pivot).norm_squared();
        if d2 < best.0 || (d2 == best.0 && self.ids[mid] < best.1) {
            *best = (d2, self.ids[mid], mid);
        }
        let diff = q[axis] - pivot[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if diff * diff <= best.0 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// Number of stored points within `radius` of `query` (inclusive),
    /// skipping the point with insertion index `exclude`.
    pub fn count_within(&self, query: &Vec3, radius: f64, exclude: Option<usize>) -> usize {
        let mut count = 0;
        self.visit_within(query, radius * radius, 0, self.points.len(), &mut |id| {
            if Some(id) != exclude {
                count += 1;
            }
        });
        count
    }

    /// Insertion indices of stored points within `radius`, in ascending order.
    pub fn within(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_within(query, radius * radius, 0, self.points.len(), &mut |id| out.push(id));
        out.sort_unstable();
        out
    }

    fn visit_within(&self, q: &Vec3, r2: f64, lo: usize, hi: usize, f: &mut dyn FnMut(usize)) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                if (q - self.points[i]).norm_squared() <= r2 {
                    f(self.ids[i]);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = self.axes[mid] as usize;
        let pivot = &self.points[mid];
        if (q - pivot).norm_squared() <= r2 {
            f(self.ids[mid]);
        }
        let diff = q[axis] - pivot[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.visit_within(q, r2, lo, mid, f);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.visit_within(q, r2, mid + 1, hi, f);
        }
    }
}

/// Exact nearest neighbor: `(point, distance)`.
pub fn nearest(query: &Vec3, index: &SpatialIndex) -> Result<(Vec3, f64)> {
    let (slot, dist) = index.nearest_slot(query).ok_or(Error::EmptyCloud)?;
    Ok((index.points[slot], dist))
}

fn mean_nearest(from: &PointCloud, to: &SpatialIndex) -> f64 {
    let dists: Vec<f64> = from
        .points
        .par_iter()
        .map(|p| to.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .collect();
    // sequential sum keeps the result independent of the thread count
    dists.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance: the average of the two directed mean
/// closest-point distances (unsquared).
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ix = SpatialIndex::from_cloud(x);
    let iy = SpatialIndex::from_cloud(y);
    Ok(0.5 * (mean_nearest(x, &iy) + mean_nearest(y, &ix)))
}

/// Pixel value in 8-bit depth units: `255 · (d − near) / (far − near)`
/// for valid pixels, 0 for background. Not rounded.
pub fn depth_code8(map: &DepthMap, i: usize) -> f64 {
    if map.valid[i] {
        255.0 * map.range.fraction(map.depth[i])
    } else {
        0.0
    }
}

/// Mean absolute difference over all pixels, in 8-bit depth units.
pub fn avg_l1(pred: &DepthMap, truth: &DepthMap) -> Result<f64> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::ShapeMismatch(format!(
            "depth maps {}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let n = pred.depth.len();
    let total: f64 = (0..n)
        .map(|i| (depth_code8(pred, i) - depth_code8(truth, i)).abs())
        .sum();
    Ok(total / n as f64)
}

/// Mean of [`avg_l1`] over aligned map lists.
pub fn mean_avg_l1(pred: &[DepthMap], truth: &[DepthMap]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::CountMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        sum += avg_l1(p, t)?;
    }
    Ok(sum / pred.len() as f64)
}
