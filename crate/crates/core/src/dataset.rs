//! Training and evaluation pairs.
//!
//! A partial cloud is the back-projection of a single depth render from a
//! random viewpoint. Both the partial and the ground-truth cloud are then
//! rendered through the rig, giving one (partial, truth) map pair per view.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_shape, render, render_rig, Camera, CameraRig, DepthMap, NormalizationRecord,
    PointCloud, Vec3,
};
use crate::io;

/// Attempts beyond the first before `make_partial` gives up.
pub const MAX_PARTIAL_RETRIES: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub shape_id: String,
    pub partial_maps: Vec<DepthMap>,
    pub truth_maps: Vec<DepthMap>,
    pub normalization: NormalizationRecord,
    pub rng_seed: u64,
}

/// Input perturbations: depth noise, random subsampling, coherent occlusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbParams {
    /// Noise standard deviation as a fraction of the depth range.
    pub eta: f64,
    /// Probability of keeping each point.
    pub mu: f64,
    /// Fraction of points removed around a random seed point.
    pub occlusion_fraction: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            eta: 0.0,
            mu: 1.0,
            occlusion_fraction: 0.0,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta {} must be >= 0", self.eta)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::InvalidParameter(format!("mu {} outside (0, 1]", self.mu)));
        }
        if !(self.occlusion_fraction >= 0.0 && self.occlusion_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "occlusion fraction {} outside [0, 1)",
                self.occlusion_fraction
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.eta == 0.0 && self.mu == 1.0 && self.occlusion_fraction == 0.0
    }
}

/// Camera at the rig distance looking at the origin from a direction drawn
/// uniformly over the sphere, with the rig's intrinsics.
pub fn random_view_camera(rig: &CameraRig, rng: &mut impl Rng) -> Result<Camera> {
    let dir = loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(v) = v.try_normalize(1e-9) {
            break v;
        }
    };
    let up = if dir.z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
    Camera::look_at(
        dir * rig.distance(),
        Vec3::zeros(),
        up,
        rig.focal(),
        rig.resolution,
        rig.range,
        0,
    )
}

fn partial_attempts<F>(gt_cloud: &PointCloud, seed: u64, mut attempt: F) -> Result<PointCloud>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<PointCloud>,
{
    if gt_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    for k in 0..=MAX_PARTIAL_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
        let partial = attempt(&mut rng)?;
        if !partial.is_empty() {
            return Ok(partial);
        }
        log::debug!("partial view for seed {} was empty, retrying", seed.wrapping_add(k));
    }
    Err(Error::EmptyPartial(MAX_PARTIAL_RETRIES as usize + 1))
}

/// Back-projection of one depth render from a random viewpoint.
pub fn make_partial(gt_cloud: &PointCloud, rig: &CameraRig, seed: u64) -> Result<PointCloud> {
    partial_attempts(gt_cloud, seed, |rng| {
        let cam = random_view_camera(rig, rng)?;
        let map = render(gt_cloud, &cam, rig.splat_size);
        Ok(PointCloud::new(map.back_project(&cam)))
    })
}

/// Partial scan with perturbations applied in acquisition order: depth noise
/// on the random-view render, then subsampling and occlusion of the
/// back-projected points.
pub fn make_perturbed_partial(
    gt_cloud: &PointCloud,
    rig: &CameraRig,
    params: &PerturbParams,
    seed: u64,
) -> Result<PointCloud> {
    params.validate()?;
    partial_attempts(gt_cloud, seed, |rng| {
        let cam = random_view_camera(rig, rng)?;
        let map = render(gt_cloud, &cam, rig.splat_size);
        let noisy = perturb_map(&map, params.eta, rng.random());
        let cloud = PointCloud::new(noisy.back_project(&cam));
        let no_noise = PerturbParams { eta: 0.0, ..*params };
        Ok(perturb_cloud(&cloud, &no_noise, rig.range.span(), rng.random()))
    })
}

pub fn make_sample(shape_id: &str, gt_cloud: &PointCloud, rig: &CameraRig, seed: u64) -> Result<Sample> {
    let (normalized, normalization) = normalize_shape(gt_cloud)?;
    let partial = make_partial(&normalized, rig, seed)?;
    Ok(Sample {
        shape_id: shape_id.to_string(),
        partial_maps: render_rig(&partial, rig),
        truth_maps: render_rig(&normalized, rig),
        normalization,
        rng_seed: seed,
    })
}

/// Adds `N(0, (eta · (far − near))²)` to every valid depth, clamped to the range.
pub fn perturb_map(map: &DepthMap, eta: f64, seed: u64) -> DepthMap {
    let mut out = map.clone();
    if eta == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, eta * map.range.span()).expect("finite sigma");
    for (d, v) in out.depth.iter_mut().zip(&out.valid) {
        if *v {
            *d = map.range.clamp(*d + noise.sample(&mut rng));
        }
    }
    out
}

/// Point-cloud perturbation: isotropic noise with standard deviation
/// `eta · depth_span`, Bernoulli(`mu`) subsampling, then removal of the
/// `round(fraction · n)` points nearest a randomly chosen point.
pub fn perturb_cloud(cloud: &PointCloud, params: &PerturbParams, depth_span: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points.clone();
    if params.eta > 0.0 {
        let noise = Normal::new(0.0, params.eta * depth_span).expect("finite sigma");
        for p in &mut points {
            for c in p.iter_mut() {
                *c += noise.sample(&mut rng);
            }
        }
    }
    if params.mu < 1.0 {
        points.retain(|_| rng.random_bool(params.mu));
    }
    let remove = (params.occlusion_fraction * points.len() as f64).round() as usize;
    if remove > 0 && !points.is_empty() {
        points = occlude(&points, remove, rng.random_range(0..points.len()));
    }
    PointCloud::new(points)
}

/// Drops the `count` points nearest `points[seed_index]` (ties by index),
/// keeping the original order of the survivors.
pub fn occlude(points: &[Vec3], count: usize, seed_index: usize) -> Vec<Vec3> {
    let center = points[seed_index];
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        (points[a] - center)
            .norm_squared()
            .total_cmp(&(points[b] - center).norm_squared())
            .then(a.cmp(&b))
    });
    let mut removed = vec![false; points.len()];
    for &i in order.iter().take(count) {
        removed[i] = true;
    }
    points
        .iter()
        .zip(removed)
        .filter_map(|(p, r)| (!r).then_some(*p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// `<split> <shape_id> [<cloud path>]` per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub shape_id: String,
    pub cloud: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(err("expected `<split> <shape_id> [<cloud>]`".into()));
            }
            let split = fields[0].parse().map_err(err)?;
            let shape_id = fields[1].to_string();
            if shape_id.contains(['/', '\\']) || shape_id == "." || shape_id == ".." {
                return Err(err(format!("invalid shape id `{shape_id}`")));
            }
            entries.push(ManifestEntry {
                split,
                shape_id,
                cloud: fields.get(2).map(PathBuf::from),
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!("{} {}\n", e.split, e.shape_id));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.shape_id.as_str())
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `root/<shape_id>/{partial_<i>,truth_<i>}.pgm`, `norm.txt` and
/// `seed.txt`. `<i>` is the canonical camera number.
pub fn write_sample(root: &Path, sample: &Sample) -> Result<()> {
    let dir = root.join(&sample.shape_id);
    create_dir(&dir)?;
    for (p, t) in sample.partial_maps.iter().zip(&sample.truth_maps) {
        io::write_depth_map(&dir.join(format!("partial_{}.pgm", p.view_index)), p)?;
        io::write_depth_map(&dir.join(format!("truth_{}.pgm", t.view_index)), t)?;
    }
    io::write_normalization(&dir.join("norm.txt"), &sample.normalization)?;
    let seed_path = dir.join("seed.txt");
    fs::write(&seed_path, format!("{}\n", sample.rng_seed)).map_err(|e| Error::io(&seed_path, e))
}

pub fn read_sample(root: &Path, shape_id: &str, rig: &CameraRig) -> Result<Sample> {
    let dir = root.join(shape_id);
    let mut partial_maps = Vec::with_capacity(rig.views());
    let mut truth_maps = Vec::with_capacity(rig.views());
    for cam in &rig.cameras {
        for (prefix, out) in [("partial", &mut partial_maps), ("truth", &mut truth_maps)] {
            let map = io::read_depth_map(
                &dir.join(format!("{prefix}_{}.pgm", cam.index)),
                Some(rig.range),
                cam.index,
            )?;
            if map.width != cam.width || map.height != cam.height {
                return Err(Error::ShapeMismatch(format!(
                    "{shape_id}: {prefix} map {}x{} does not match rig resolution {}",
                    map.width, map.height, cam.width
                )));
            }
            out.push(map);
        }
    }
    let normalization = io::read_normalization(&dir.join("norm.txt"))?;
    let seed_path = dir.join("seed.txt");
    let seed_text = fs::read_to_string(&seed_path).map_err(|e| Error::io(&seed_path, e))?;
    let rng_seed = seed_text.trim().parse().map_err(|_| Error::Parse {
        path: seed_path.display().to_string(),
        line: 1,
        message: "invalid seed".into(),
    })?;
    Ok(Sample {
        shape_id: shape_id.to_string(),
        partial_maps,
        truth_maps,
        normalization,
        rng_seed,
    })
}

/// Per-shape seed derived from a run seed and the shape's manifest position.
pub fn shape_seed(run_seed: u64, position: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(position as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_rig;
    use crate::metrics::SpatialIndex;
    use crate::shapes::{box_surface, fibonacci_sphere};
    use sha2::{Digest, Sha256};

    fn rig() -> CameraRig {
        build_rig(0.4, 64, 8).unwrap()
    }

    #[test]
    fn partial_is_deterministic_and_front_facing() {
        let rig = build_rig(0.4, 128, 8).unwrap();
        let sphere = fibonacci_sphere(40_000, 0.1);
        let a = make_partial(&sphere, &rig, 17).unwrap();
        let b = make_partial(&sphere, &rig, 17).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cam = random_view_camera(&rig, &mut rng).unwrap();
        let eye = cam.center();
        // oracle: ground-truth points whose normal faces the camera
        let facing = sphere.iter().filter(|p| p.dot(&(eye - **p)) > 0.0).count();
        assert!((facing as f64) / (sphere.len() as f64) <= 0.55);
        // coverage of the surface by the partial stays on the facing side
        let index = SpatialIndex::from_cloud(&a);
        let covered = sphere
            .iter()
            .filter(|p| index.nearest(p).unwrap().1 < 2.0 * rig.pixel_footprint())
            .count();
        assert!((covered as f64) / (sphere.len() as f64) <= 0.55, "{covered}");
        for p in a.iter() {
            assert!(p.dot(&(eye - p)) > -2.0 * rig.pixel_footprint());
        }
    }

    #[test]
    fn partial_errors() {
        assert!(matches!(
            make_partial(&PointCloud::default(), &rig(), 0),
            Err(Error::EmptyCloud)
        ));
        // a point outside every random frustum never renders
        let far = PointCloud::new(vec![Vec3::new(50.0, 0.0, 0.0)]);
        assert!(matches!(make_partial(&far, &rig(), 0), Err(Error::EmptyPartial(9))));
    }

    #[test]
    fn sample_structure_and_partiality() {
        let rig = rig();
        let sphere = fibonacci_sphere(20_000, 1.0);
        let s = make_sample("sphere", &sphere, &rig, 3).unwrap();
        assert_eq!(s.partial_maps.len(), 8);
        assert_eq!(s.truth_maps.len(), 8);
        for (p, t) in s.partial_maps.iter().zip(&s.truth_maps) {
            assert_eq!(p.view_index, t.view_index);
            assert!(p.valid_count() <= t.valid_count());
        }
    }

    #[test]
    fn cube_sample_checksum_is_locked() {
        let rig = build_rig(0.4, 32, 8).unwrap();
        let cube = box_surface(Vec3::new(1.0, 1.0, 1.0), 40.0);
        let s = make_sample("cube", &cube, &rig, 42).unwrap();
        let mut hasher = Sha256::new();
        for m in s.partial_maps.iter().chain(&s.truth_maps) {
            for q in io::quantize_map(m) {
                hasher.update(q.to_le_bytes());
            }
        }
        let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(digest, GOLDEN_CUBE_DIGEST);
    }

    const GOLDEN_CUBE_DIGEST: &str = "24e6e06f2a3663f0ca80fc4d20edb24c6675dcc4b19f43a94ad24ed1d4345132";

    #[test]
    fn perturb_identity() {
        let cloud = fibonacci_sphere(300, 0.1);
        let id = PerturbParams::default();
        assert!(id.is_identity());
        assert_eq!(perturb_cloud(&cloud, &id, 0.6, 9), cloud);
        let rig = rig();
        let map = render(&cloud, &rig.cameras[0], 1);
        assert_eq!(perturb_map(&map, 0.0, 1), map);
    }

    #[test]
    fn subsample_binomial_bound() {
        let cloud = fibonacci_sphere(10_000, 0.1);
        let p = PerturbParams { mu: 0.5, ..Default::default() };
        let n = perturb_cloud(&cloud, &p, 0.6, 123).len();
        assert!((4700..=5300).contains(&n), "{n}");
    }

    #[test]
    fn occlusion_removes_connected_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud: PointCloud = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let p = PerturbParams { occlusion_fraction: 0.1, ..Default::default() };
        let out = perturb_cloud(&cloud, &p, 0.6, 77);
        assert_eq!(out.len(), 900);
        let kept: std::collections::HashSet<[u64; 3]> = out
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        let removed: Vec<Vec3> = cloud
            .iter()
            .filter(|p| !kept.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]))
            .copied()
            .collect();
        assert_eq!(removed.len(), 100);
        // connectivity under the symmetric 8-NN graph of the removed set
        let k = 8;
        let mut adj = vec![Vec::new(); removed.len()];
        for i in 0..removed.len() {
            let mut d: Vec<(f64, usize)> = (0..removed.len())
                .filter(|&j| j != i)
                .map(|j| ((removed[i] - removed[j]).norm(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, j) in d.iter().take(k) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; removed.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn map_noise_clamps_and_is_seeded() {
        let rig = rig();
        let map = render(&fibonacci_sphere(3000, 0.1), &rig.cameras[0], 1);
        let a = perturb_map(&map, 0.5, 3);
        assert_eq!(a, perturb_map(&map, 0.5, 3));
        assert_ne!(a, map);
        assert_eq!(a.valid, map.valid);
        for (d, v) in a.depth.iter().zip(&a.valid) {
            if *v {
                assert!(*d >= map.range.near && *d <= map.range.far);
            } else {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn perturb_params_validation() {
        assert!(PerturbParams { eta: -0.1, ..Default::default() }.validate().is_err());
        assert!(PerturbParams { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(PerturbParams { occlusion_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(PerturbParams { eta: 0.01, mu: 0.5, occlusion_fraction: 0.1 }.validate().is_ok());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let rig = build_rig(0.4, 32, 8).unwrap();
        let s = make_sample("box_01", &box_surface(Vec3::new(1.0, 0.5, 0.7), 30.0), &rig, 5).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_sample(tmp.path(), &s).unwrap();
        let back = read_sample(tmp.path(), "box_01", &rig).unwrap();
        assert_eq!(back.rng_seed, 5);
        assert_eq!(back.normalization, s.normalization);
        for (a, b) in back.partial_maps.iter().zip(&s.partial_maps) {
            assert_eq!(*a, io::quantized_copy(b));
        }
        let m = Manifest::parse("train a\ntest b x.xyz\n# c\n", "m").unwrap();
        assert_eq!(m.ids(Split::Train).collect::<Vec<_>>(), vec!["a"]);
        assert_eq!(m.entries[1].cloud.as_deref(), Some(Path::new("x.xyz")));
        assert!(Manifest::parse("dev a\n", "m").is_err());
        assert!(Manifest::parse("train ../a\n", "m").is_err());
    }
}
