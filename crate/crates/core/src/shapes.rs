//! Synthetic point-cloud shapes used by tests, examples and toy datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{PointCloud, Vec3};

/// `n` points on a sphere of `radius` via the golden-angle spiral.
pub fn fibonacci_sphere(n: usize, radius: f64) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let theta = golden * i as f64;
            Vec3::new(r * theta.cos(), r * theta.sin(), z) * radius
        })
        .collect()
}

/// Regular grid of points on the surface of an axis-aligned box with the
/// given half extents, with roughly `per_unit` samples per unit length.
pub fn box_surface(half: Vec3, per_unit: f64) -> PointCloud {
    let mut pts = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let nu = ((2.0 * half[u] * per_unit).ceil() as usize).max(1);
        let nv = ((2.0 * half[v] * per_unit).ceil() as usize).max(1);
        for side in [-1.0, 1.0] {
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Vec3::zeros();
                    p[axis] = side * half[axis];
                    p[u] = -half[u] + 2.0 * half[u] * (i as f64 + 0.5) / nu as f64;
                    p[v] = -half[v] + 2.0 * half[v] * (j as f64 + 0.5) / nv as f64;
                    pts.push(p);
                }
            }
        }
    }
    PointCloud::new(pts)
}

/// Rectangular cut-out on one box face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub axis: usize,
    pub side: f64,
    pub center: (f64, f64),
    pub half: (f64, f64),
}

/// Parameters of one member of the box-with-holes family.
#[derive(Debug, Clone, PartialEq)]
pub struct HoledBox {
    pub half: Vec3,
    pub holes: Vec<Hole>,
}

impl HoledBox {
    /// Random box with two to four holes on distinct faces.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = Vec3::new(
            rng.random_range(0.5..1.0),
            rng.random_range(0.5..1.0),
            rng.random_range(0.5..1.0),
        );
        let mut faces: Vec<(usize, f64)> = (0..3)
            .flat_map(|a| [(a, -1.0), (a, 1.0)])
            .collect();
        let count = rng.random_range(2..=4);
        let mut holes = Vec::with_capacity(count);
        for _ in 0..count {
            let (axis, side) = faces.swap_remove(rng.random_range(0..faces.len()));
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let hu = half[u] * rng.random_range(0.25..0.5);
            let hv = half[v] * rng.random_range(0.25..0.5);
            let cu = rng.random_range(-(half[u] - hu)..(half[u] - hu));
            let cv = rng.random_range(-(half[v] - hv)..(half[v] - hv));
            holes.push(Hole {
                axis,
                side,
                center: (cu, cv),
                half: (hu, hv),
            });
        }
        Self { half, holes }
    }

    fn in_hole(&self, p: &Vec3) -> bool {
        self.holes.iter().any(|h| {
            let (u, v) = ((h.axis + 1) % 3, (h.axis + 2) % 3);
            (p[h.axis] - h.side * self.half[h.axis]).abs() < 1e-12
                && (p[u] - h.center.0).abs() < h.half.0
                && (p[v] - h.center.1).abs() < h.half.1
        })
    }

    pub fn sample(&self, per_unit: f64) -> PointCloud {
        box_surface(self.half, per_unit)
            .points
            .into_iter()
            .filter(|p| !self.in_hole(p))
            .collect()
    }
}
