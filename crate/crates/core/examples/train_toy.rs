//! Overfits the completion network on a single box-with-holes shape at 32²
//! and reports the per-view avg L1 of two-pass completion as training runs.
//!
//! cargo run --release --example train_toy -- [steps] [seed]

use std::time::Instant;

use mvcn::dataset::make_sample;
use mvcn::geometry::build_rig;
use mvcn::metrics::mean_avg_l1;
use mvcn::net::{complete_shape, TrainConfig, TrainState, TrainingShape};
use mvcn::shapes::HoledBox;

fn main() -> mvcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let rig = build_rig(0.4, 32, 8)?;
    let shape = HoledBox::random(seed).sample(60.0);
    let sample = make_sample("box", &shape, &rig, seed)?;
    let train = vec![TrainingShape::from_sample(&sample)];

    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&config)?;
    let eval = |state: &mut TrainState| -> mvcn::Result<f64> {
        let done = complete_shape(&mut state.generator, &sample.partial_maps)?;
        mean_avg_l1(&done.maps, &sample.truth_maps)
    };
    let start = eval(&mut state)?;
    let input_l1 = mean_avg_l1(&sample.partial_maps, &sample.truth_maps)?;
    println!("partial input avg_l1 {input_l1:.4}");
    println!("step 0 avg_l1 {start:.4}");
    let t0 = Instant::now();
    while state.step < steps {
        let m = state.train_epoch(&train, |_, _| {})?;
        if state.step % 25 == 0 {
            let now = eval(&mut state)?;
            println!(
                "step {} loss_d {:.4} adv {:.4} l1 {:.4} | avg_l1 {:.4} ({:.1}% of start) {:.1}s",
                state.step,
                m.loss_d,
                m.loss_g_adv,
                m.loss_recon,
                now,
                100.0 * now / start,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
