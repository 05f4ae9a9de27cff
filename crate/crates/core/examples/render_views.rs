//! Renders a holed box from the eight cube-corner cameras and writes each
//! view as a 16-bit PGM.
//!
//! cargo run --example render_views -- [out_dir] [resolution]

use std::path::PathBuf;

use mvcn::geometry::{build_rig, normalize_shape, render_rig};
use mvcn::io::write_depth_map;
use mvcn::shapes::HoledBox;

fn main() -> mvcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "views".into()));
    let res: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let rig = build_rig(0.4, res, 8)?;
    let (shape, _) = normalize_shape(&HoledBox::random(7).sample(80.0))?;
    std::fs::create_dir_all(&out).map_err(|e| mvcn::Error::Io { path: out.clone(), source: e })?;
    for map in render_rig(&shape, &rig) {
        let path = out.join(format!("view_{}.pgm", map.view_index));
        write_depth_map(&path, &map)?;
        println!("{} {} valid pixels", path.display(), map.valid_count());
    }
    Ok(())
}
