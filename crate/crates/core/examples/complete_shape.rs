//! Trains briefly on a few shapes, then completes a held-out partial scan and
//! fuses the completed views into a point cloud.
//!
//! cargo run --release --example complete_shape -- [epochs]

use mvcn::dataset::make_sample;
use mvcn::fusion::{fuse, union_cloud, FusionParams};
use mvcn::geometry::build_rig;
use mvcn::metrics::{chamfer, mean_avg_l1};
use mvcn::net::{complete_shape, TrainConfig, TrainState, TrainingShape};
use mvcn::shapes::HoledBox;

fn main() -> mvcn::Result<()> {
    let epochs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let rig = build_rig(0.4, 32, 8)?;
    let samples = (0..5)
        .map(|i| make_sample(&format!("s{i}"), &HoledBox::random(i).sample(60.0), &rig, i))
        .collect::<mvcn::Result<Vec<_>>>()?;
    let train: Vec<TrainingShape> = samples[..4].iter().map(TrainingShape::from_sample).collect();
    let mut state = TrainState::new(&TrainConfig::default())?;
    for e in 0..epochs {
        let m = state.train_epoch(&train, |_, _| {})?;
        println!("epoch {e}: loss_L1 {:.4}", m.loss_recon);
    }
    let held = &samples[4];
    let done = complete_shape(&mut state.generator, &held.partial_maps)?;
    println!("partial avg_l1 {:.3}", mean_avg_l1(&held.partial_maps, &held.truth_maps)?);
    println!("completed avg_l1 {:.3}", mean_avg_l1(&done.maps, &held.truth_maps)?);
    let truth = union_cloud(&held.truth_maps, &rig)?;
    let fused = fuse(&done.maps, &rig, &FusionParams::scaled_for(&rig))?;
    if fused.is_empty() {
        println!("fusion kept no points");
    } else {
        println!("fused {} points, cd to truth {:.5}", fused.len(), chamfer(&fused, &truth)?);
    }
    Ok(())
}
