//! Chamfer distance between two point-cloud files, or between a sphere and
//! a jittered copy when no files are given.
//!
//! cargo run --example chamfer_eval -- [pred.xyz gt.xyz]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvcn::io::read_cloud;
use mvcn::metrics::chamfer;
use mvcn::shapes::fibonacci_sphere;
use mvcn::{PointCloud, Vec3};

fn main() -> mvcn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pred, gt) = if args.len() == 2 {
        (read_cloud(Path::new(&args[0]))?, read_cloud(Path::new(&args[1]))?)
    } else {
        let gt = fibonacci_sphere(5000, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred: PointCloud = gt
            .iter()
            .map(|p| p + Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)))
            .collect();
        (pred, gt)
    };
    println!("cd {:.6}", chamfer(&pred, &gt)?);
    Ok(())
}
