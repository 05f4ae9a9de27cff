//! Renders a dense sphere at 256², fuses the views back and compares the
//! result with the source cloud.
//!
//! cargo run --release --example fuse_sphere

use mvcn::fusion::{fuse, union_cloud, FusionParams};
use mvcn::geometry::{build_rig, render_rig};
use mvcn::metrics::chamfer;
use mvcn::shapes::fibonacci_sphere;

fn main() -> mvcn::Result<()> {
    let rig = build_rig(0.4, 256, 8)?;
    let sphere = fibonacci_sphere(60_000, 0.1);
    let maps = render_rig(&sphere, &rig);
    let union = union_cloud(&maps, &rig)?;
    let fused = fuse(&maps, &rig, &FusionParams::for_rig(&rig))?;
    println!("pixel footprint {:.6}", rig.pixel_footprint());
    println!("union {} points, cd {:.6}", union.len(), chamfer(&union, &sphere)?);
    println!("fused {} points, cd {:.6}", fused.len(), chamfer(&fused, &sphere)?);
    Ok(())
}
