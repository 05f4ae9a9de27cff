//! Writes a small box-with-holes dataset: partial and ground-truth maps for
//! every shape of a generated manifest.
//!
//! cargo run --example dataset_gen -- [out_dir] [shapes]

use std::path::PathBuf;

use mvcn::dataset::{make_sample, shape_seed, write_sample, Manifest, ManifestEntry, Split, MANIFEST_FILE};
use mvcn::geometry::build_rig;
use mvcn::metrics::mean_avg_l1;
use mvcn::shapes::HoledBox;

fn main() -> mvcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy_data".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let rig = build_rig(0.4, 32, 8)?;
    let mut manifest = Manifest::default();
    for i in 0..n {
        let seed = shape_seed(0, i);
        let id = format!("box{i:03}");
        let sample = make_sample(&id, &HoledBox::random(seed).sample(60.0), &rig, seed)?;
        write_sample(&out, &sample)?;
        println!("{id}: partial avg_l1 {:.2}", mean_avg_l1(&sample.partial_maps, &sample.truth_maps)?);
        manifest.entries.push(ManifestEntry {
            split: if i * 5 < n * 4 { Split::Train } else { Split::Test },
            shape_id: id,
            cloud: None,
        });
    }
    manifest.write(&out.join(MANIFEST_FILE))
}
