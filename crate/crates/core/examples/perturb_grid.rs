//! Partial scans of one shape under the noise / subsampling / occlusion grid,
//! with the Chamfer distance of each partial to the full shape.
//!
//! cargo run --example perturb_grid

use mvcn::dataset::{make_perturbed_partial, PerturbParams};
use mvcn::geometry::{build_rig, normalize_shape};
use mvcn::metrics::chamfer;
use mvcn::shapes::HoledBox;

fn main() -> mvcn::Result<()> {
    let rig = build_rig(0.4, 64, 8)?;
    let (shape, _) = normalize_shape(&HoledBox::random(3).sample(80.0))?;
    for eta in [0.0, 0.01] {
        for mu in [1.0, 0.5] {
            for occ in [0.0, 0.1] {
                let p = PerturbParams {
                    eta,
                    mu,
                    occlusion_fraction: occ,
                };
                let partial = make_perturbed_partial(&shape, &rig, &p, 3)?;
                println!(
                    "eta {eta:<4} mu {mu:<3} occ {occ:<3}: {:5} points, cd {:.5}",
                    partial.len(),
                    chamfer(&partial, &shape)?
                );
            }
        }
    }
    Ok(())
}
