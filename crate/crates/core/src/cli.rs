//! Command-line front end. Every command reads and writes plain files:
//! ASCII point clouds, 16-bit PGM depth maps and key-value configs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::dataset::{self, Manifest, PerturbParams, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionParams};
use crate::geometry::{normalize_shape, render_rig, CameraRig, DepthMap, NormalizationRecord, RigConfig};
use crate::io;
use crate::metrics;
use crate::net::checkpoint;
use crate::net::train::{StepMetrics, TrainState, TrainingShape};
use crate::net::{complete_shape, TrainConfig};
use crate::shapes::HoledBox;

pub const RIG_FILE: &str = "rig.txt";
pub const NORM_FILE: &str = "norm.txt";

#[derive(Debug, Parser)]
#[command(name = "mvcn", version, about = "Multi-view depth-map shape completion")]
pub struct Cli {
    /// Rig configuration file (cube_half_side, resolution, V, splat_size, fov_fill_ratio).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides a seed in a training config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel geometry work.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset directory from a manifest.
    GenData(GenDataArgs),
    /// Render a cloud into one PGM per rig view.
    Render(RenderArgs),
    /// Union of the back-projections of rendered views.
    Backproject(ViewsArgs),
    /// Voting fusion of rendered views.
    Fuse(FuseArgs),
    /// Train the completion network on a dataset directory.
    Train(TrainArgs),
    /// Complete a partial cloud with a trained checkpoint.
    Complete(CompleteArgs),
    /// Chamfer distance between clouds or avg L1 between view directories.
    Eval(EvalArgs),
    /// Apply noise, subsampling and occlusion to a cloud.
    Perturb(PerturbArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Lines of `<train|test> <shape_id> [<cloud file>]`; shapes without a
    /// cloud are drawn from the box-with-holes family.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Surface samples per unit length for synthesized shapes (default: max(60, resolution)).
    #[arg(long)]
    pub density: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ViewsArgs {
    /// Directory with `view_<i>.pgm` files and optionally `norm.txt`.
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub io: ViewsArgs,
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub min_neighbors: Option<usize>,
    #[arg(long)]
    pub depth_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration file.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV loss log (default: checkpoint path with `.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub partial: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Normalization to apply instead of fitting the partial cloud's own bounds.
    #[arg(long)]
    pub norm: Option<PathBuf>,
    /// Write the partial and completed depth maps here.
    #[arg(long)]
    pub emit_views: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory of predicted PGM maps, paired by file name with --gt-views.
    #[arg(long, requires = "gt_views")]
    pub pred_views: Option<PathBuf>,
    #[arg(long)]
    pub gt_views: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise standard deviation as a fraction of the rig depth range.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Probability of keeping each point.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Fraction of points removed around a random center.
    #[arg(long, default_value_t = 0.0)]
    pub occ: f64,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("ERROR USAGE: {}", first.trim_start_matches("error: "));
            return 64;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), e);
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidParameter("--threads must be at least 1".into()));
    }
    // the global pool can only be set once per process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, &rig_config(cli.config.as_deref())?, seed),
        Command::Render(a) => cmd_render(a, &rig_config(cli.config.as_deref())?.build()?),
        Command::Backproject(a) => cmd_backproject(a, &rig_config(cli.config.as_deref())?.build()?),
        Command::Fuse(a) => cmd_fuse(a, &rig_config(cli.config.as_deref())?.build()?),
        Command::Train(a) => cmd_train(a, cli.config.as_deref(), cli.seed),
        Command::Complete(a) => cmd_complete(a, cli.config.as_deref()),
        Command::Eval(a) => cmd_eval(a),
        Command::Perturb(a) => cmd_perturb(a, &rig_config(cli.config.as_deref())?.build()?, seed),
    }
}

fn rig_config(path: Option<&Path>) -> Result<RigConfig> {
    path.map_or_else(|| Ok(RigConfig::default()), RigConfig::read)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn view_file(index: usize) -> String {
    format!("view_{index}.pgm")
}

pub fn write_views(dir: &Path, maps: &[DepthMap]) -> Result<()> {
    create_dir(dir)?;
    for m in maps {
        io::write_depth_map(&dir.join(view_file(m.view_index)), m)?;
    }
    Ok(())
}

/// `view_<i>.pgm` for every rig camera, plus the normalization if present.
pub fn read_views(dir: &Path, rig: &CameraRig) -> Result<(Vec<DepthMap>, NormalizationRecord)> {
    let maps = rig
        .cameras
        .iter()
        .map(|c| io::read_depth_map(&dir.join(view_file(c.index)), Some(rig.range), c.index))
        .collect::<Result<Vec<_>>>()?;
    let norm_path = dir.join(NORM_FILE);
    let norm = if norm_path.exists() {
        io::read_normalization(&norm_path)?
    } else {
        warn!("{} not found; output stays in normalized coordinates", norm_path.display());
        NormalizationRecord::identity()
    };
    Ok((maps, norm))
}

pub fn cmd_gen_data(args: &GenDataArgs, rig_cfg: &RigConfig, seed: u64) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let rig = rig_cfg.build()?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let density = args.density.unwrap_or((rig.resolution as f64).max(60.0));
    create_dir(&args.out)?;
    for (pos, entry) in manifest.entries.iter().enumerate() {
        let shape_seed = dataset::shape_seed(seed, pos);
        let cloud = match &entry.cloud {
            Some(p) => io::read_cloud(&base.join(p))?,
            None => HoledBox::random(shape_seed).sample(density),
        };
        let sample = dataset::make_sample(&entry.shape_id, &cloud, &rig, shape_seed)?;
        dataset::write_sample(&args.out, &sample)?;
        info!("{} {}: {} points", entry.split, entry.shape_id, cloud.len());
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    write_text(&args.out.join(RIG_FILE), &rig_cfg.to_string())
}

pub fn cmd_render(args: &RenderArgs, rig: &CameraRig) -> Result<()> {
    let cloud = io::read_cloud(&args.cloud)?;
    let (normalized, norm) = normalize_shape(&cloud)?;
    let maps = render_rig(&normalized, rig);
    write_views(&args.out, &maps)?;
    io::write_normalization(&args.out.join(NORM_FILE), &norm)
}

pub fn cmd_backproject(args: &ViewsArgs, rig: &CameraRig) -> Result<()> {
    let (maps, norm) = read_views(&args.views, rig)?;
    let cloud = fusion::union_cloud(&maps, rig)?;
    io::write_cloud(&args.out, &norm.restore_cloud(&cloud))
}

pub fn cmd_fuse(args: &FuseArgs, rig: &CameraRig) -> Result<()> {
    let (maps, norm) = read_views(&args.io.views, rig)?;
    let mut params = FusionParams::scaled_for(rig);
    if let Some(t) = args.threshold {
        params.threshold = t;
    }
    if let Some(r) = args.radius {
        params.radius = r;
    }
    if let Some(k) = args.min_neighbors {
        params.min_neighbors = k;
    }
    if let Some(d) = args.depth_tol {
        params.depth_tol = d;
    }
    let cloud = fusion::fuse(&maps, rig, &params)?;
    if cloud.is_empty() {
        warn!("fusion removed every point");
    }
    io::write_cloud(&args.io.out, &norm.restore_cloud(&cloud))
}

/// Loads the training split of a dataset directory.
pub fn load_training_shapes(data: &Path, rig: &CameraRig, split: Split) -> Result<Vec<TrainingShape>> {
    let manifest = Manifest::read(&data.join(MANIFEST_FILE))?;
    manifest
        .ids(split)
        .map(|id| Ok(TrainingShape::from_sample(&dataset::read_sample(data, id, rig)?)))
        .collect()
}

fn dataset_rig(data: &Path, override_path: Option<&Path>) -> Result<RigConfig> {
    match override_path {
        Some(p) => RigConfig::read(p),
        None => {
            let p = data.join(RIG_FILE);
            if p.exists() {
                RigConfig::read(&p)
            } else {
                Ok(RigConfig::default())
            }
        }
    }
}

pub fn format_log_row(step: u64, m: &StepMetrics) -> String {
    format!("{step},{:.9},{:.9},{:.9}\n", m.loss_d, m.loss_g_adv, m.loss_recon)
}

pub const LOG_HEADER: &str = "step,loss_D,loss_G_adv,loss_L1\n";

pub fn cmd_train(args: &TrainArgs, rig_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut config = match &args.train_config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let rig_cfg = dataset_rig(&args.data, rig_path)?;
    if rig_cfg.resolution != config.net.resolution || rig_cfg.views != config.net.views {
        return Err(Error::InvalidParameter(format!(
            "dataset rig is {}² with {} views but the network expects {}² with {}",
            rig_cfg.resolution, rig_cfg.views, config.net.resolution, config.net.views
        )));
    }
    let rig = rig_cfg.build()?;
    let shapes = load_training_shapes(&args.data, &rig, Split::Train)?;
    if shapes.is_empty() {
        return Err(Error::InvalidParameter("dataset has no training shapes".into()));
    }
    let mut state = TrainState::new(&config)?;
    let mut log = String::from(LOG_HEADER);
    for epoch in 0..config.epochs {
        let mean = state.train_epoch(&shapes, |step, m| log.push_str(&format_log_row(step, m)))?;
        info!(
            "epoch {epoch}: loss_D {:.4} loss_G_adv {:.4} loss_L1 {:.4}",
            mean.loss_d, mean.loss_g_adv, mean.loss_recon
        );
    }
    checkpoint::save(&args.out, &mut state)?;
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_text(&log_path, &log)
}

pub fn cmd_complete(args: &CompleteArgs, rig_path: Option<&Path>) -> Result<()> {
    let mut state = checkpoint::load(&args.checkpoint)?;
    let net = &state.config.net;
    let rig_cfg = match rig_path {
        Some(p) => RigConfig::read(p)?,
        None => RigConfig {
            resolution: net.resolution,
            views: net.views,
            ..RigConfig::default()
        },
    };
    if rig_cfg.resolution != net.resolution || rig_cfg.views != net.views {
        return Err(Error::InvalidParameter(format!(
            "rig is {}² with {} views but the checkpoint expects {}² with {}",
            rig_cfg.resolution, rig_cfg.views, net.resolution, net.views
        )));
    }
    let rig = rig_cfg.build()?;
    let partial = io::read_cloud(&args.partial)?;
    let (normalized, norm) = match &args.norm {
        Some(p) => {
            let norm = io::read_normalization(p)?;
            (partial.iter().map(|q| norm.apply(q)).collect(), norm)
        }
        None => normalize_shape(&partial)?,
    };
    let maps = render_rig(&normalized, &rig);
    let done = complete_shape(&mut state.generator, &maps)?;
    if let Some(dir) = &args.emit_views {
        create_dir(dir)?;
        for (p, c) in maps.iter().zip(&done.maps) {
            io::write_depth_map(&dir.join(format!("partial_{}.pgm", p.view_index)), p)?;
            io::write_depth_map(&dir.join(format!("completed_{}.pgm", c.view_index)), c)?;
        }
        io::write_normalization(&dir.join(NORM_FILE), &norm)?;
    }
    let cloud = fusion::fuse(&done.maps, &rig, &FusionParams::scaled_for(&rig))?;
    if cloud.is_empty() {
        warn!("fusion removed every completed point");
    }
    io::write_cloud(&args.out, &norm.restore_cloud(&cloud))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut any = false;
    if let (Some(pred), Some(gt)) = (&args.pred, &args.gt) {
        let cd = metrics::chamfer(&io::read_cloud(pred)?, &io::read_cloud(gt)?)?;
        println!("cd {cd:.6}");
        any = true;
    }
    if let (Some(pred), Some(gt)) = (&args.pred_views, &args.gt_views) {
        let mut names: Vec<String> = fs::read_dir(gt)
            .map_err(|e| Error::io(gt, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".pgm"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::InvalidParameter(format!("no .pgm files in {}", gt.display())));
        }
        let mut total = 0.0;
        for name in &names {
            let t = io::read_depth_map(&gt.join(name), None, 0)?;
            let p = io::read_depth_map(&pred.join(name), Some(t.range), t.view_index)?;
            let l1 = metrics::avg_l1(&p, &t)?;
            println!("{name} avg_l1 {l1:.6}");
            total += l1;
        }
        println!("avg_l1 {:.6}", total / names.len() as f64);
        any = true;
    }
    if !any {
        return Err(Error::InvalidParameter(
            "give --pred/--gt clouds or --pred-views/--gt-views directories".into(),
        ));
    }
    Ok(())
}

pub fn cmd_perturb(args: &PerturbArgs, rig: &CameraRig, seed: u64) -> Result<()> {
    let params = PerturbParams {
        eta: args.eta,
        mu: args.mu,
        occlusion_fraction: args.occ,
    };
    params.validate()?;
    if params.is_identity() {
        // keep the input bytes exactly
        let bytes = fs::read(&args.cloud).map_err(|e| Error::io(&args.cloud, e))?;
        io::parse_cloud(&String::from_utf8_lossy(&bytes), &args.cloud.display().to_string())?;
        return fs::write(&args.out, bytes).map_err(|e| Error::io(&args.out, e));
    }
    let cloud = io::read_cloud(&args.cloud)?;
    let out = dataset::perturb_cloud(&cloud, &params, rig.range.span(), seed);
    io::write_cloud(&args.out, &out)
}
