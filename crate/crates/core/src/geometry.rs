//! Shape normalization, the cube camera rig, pinhole projection and
//! z-buffered point rendering.
//!
//! Camera frames follow the usual computer-vision convention: `x` right,
//! `y` down, `z` forward. Continuous pixel coordinates put the center of
//! pixel `(col, row)` at `(col + 0.5, row + 0.5)`; the principal point is
//! the image center.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub type Vec3 = Vector3<f64>;

/// Radius of the sphere every normalized shape fits into.
pub const SHAPE_RADIUS: f64 = 0.2;

/// Near/far margin around the shape sphere, as a multiple of [`SHAPE_RADIUS`].
const DEPTH_MARGIN: f64 = 1.5;

/// Canonical cube-vertex ordering of rig cameras: top ring, then bottom ring.
/// Entry `k` is the sign pattern of camera number `k + 1`.
pub const CUBE_VERTICES: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
];

/// Camera numbers (1-based) used for each supported view count.
pub fn view_subset(views: usize) -> Result<&'static [usize]> {
    match views {
        3 => Ok(&[1, 3, 5]),
        5 => Ok(&[1, 3, 5, 6, 8]),
        8 => Ok(&[1, 2, 3, 4, 5, 6, 7, 8]),
        v => Err(Error::InvalidRig(format!(
            "unsupported view count {v}; expected 3, 5 or 8"
        ))),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec3> {
        self.points.iter()
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

impl FromIterator<Vec3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Vec3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Maps original coordinates into the normalized frame and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub center: Vec3,
    pub scale_factor: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale_factor: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale_factor
    }

    pub fn restore(&self, p: &Vec3) -> Vec3 {
        p * self.scale_factor + self.center
    }

    pub fn restore_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.iter().map(|p| self.restore(p)).collect()
    }
}

/// Centers the cloud at its bounding-box midpoint and divides by
/// `max axis extent / SHAPE_RADIUS`, so the longest axis spans `SHAPE_RADIUS`
/// and every point lies inside the origin sphere of that radius.
pub fn normalize_shape(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord)> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    if !cloud.is_finite() {
        return Err(Error::NonFinite("point cloud".into()));
    }
    let extent = hi - lo;
    let max_len = extent.max();
    if max_len <= 0.0 {
        return Err(Error::DegenerateExtent);
    }
    let record = NormalizationRecord {
        center: (lo + hi) * 0.5,
        scale_factor: max_len / SHAPE_RADIUS,
    };
    let normalized = cloud.iter().map(|p| record.apply(p)).collect();
    Ok((normalized, record))
}

/// Depth interval covered by the 16-bit and 8-bit encodings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub fn span(&self) -> f64 {
        self.far - self.near
    }

    /// Linear position of `depth` in `[near, far]`, not clamped.
    pub fn fraction(&self, depth: f64) -> f64 {
        (depth - self.near) / self.span()
    }

    pub fn clamp(&self, depth: f64) -> f64 {
        depth.clamp(self.near, self.far)
    }
}

/// Position of a point in continuous pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    /// Canonical camera number, 1-based.
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub range: DepthRange,
}

impl Camera {
    /// Camera at `center` looking at `target`. The image `y` axis is the
    /// negative of `up` projected onto the image plane.
    pub fn look_at(
        center: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        resolution: usize,
        range: DepthRange,
        index: usize,
    ) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidRig("camera center coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::InvalidRig("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let half = resolution as f64 / 2.0;
        let intrinsics = Matrix3::new(focal, 0.0, half, 0.0, focal, half, 0.0, 0.0, 1.0);
        Ok(Self {
            intrinsics,
            rotation,
            translation: -(rotation * center),
            index,
            width: resolution,
            height: resolution,
            range,
        })
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn view_direction(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)])
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.intrinsics[(0, 2)], self.intrinsics[(1, 2)])
    }

    pub fn to_camera_frame(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    pub fn project(&self, point: &Vec3) -> Result<Pixel> {
        let pc = self.to_camera_frame(point);
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera(pc.z));
        }
        let (fx, fy) = self.focal();
        let (cx, cy) = self.principal_point();
        Ok(Pixel {
            x: fx * pc.x / pc.z + cx,
            y: fy * pc.y / pc.z + cy,
            depth: pc.z,
        })
    }

    /// Inverse perspective map: `P = R⁻¹ (d · K⁻¹ [x, y, 1]ᵀ − t)`.
    pub fn back_project(&self, pixel: Pixel) -> Result<Vec3> {
        if !(pixel.depth > 0.0) {
            return Err(Error::NonPositiveDepth(pixel.depth));
        }
        let (fx, fy) = self.focal();
        let (cx, cy) = self.principal_point();
        let pc = Vec3::new(
            (pixel.x - cx) / fx * pixel.depth,
            (pixel.y - cy) / fy * pixel.depth,
            pixel.depth,
        );
        Ok(self.rotation.transpose() * (pc - self.translation))
    }

    /// Pixel `(col, row)` containing the continuous position, if inside the image.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = x.floor();
        let row = y.floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }
}

/// Plain-text rig configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig {
    pub cube_half_side: f64,
    pub resolution: usize,
    pub views: usize,
    pub splat_size: usize,
    pub fov_fill_ratio: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cube_half_side: 0.4,
            resolution: 256,
            views: 8,
            splat_size: 1,
            fov_fill_ratio: 0.8,
        }
    }
}

impl RigConfig {
    const KEYS: &'static [&'static str] =
        &["cube_half_side", "resolution", "V", "splat_size", "fov_fill_ratio"];

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(Self::KEYS)?;
        let d = Self::default();
        Ok(Self {
            cube_half_side: kv.get_or("cube_half_side", d.cube_half_side)?,
            resolution: kv.get_or("resolution", d.resolution)?,
            views: kv.get_or("V", d.views)?,
            splat_size: kv.get_or("splat_size", d.splat_size)?,
            fov_fill_ratio: kv.get_or("fov_fill_ratio", d.fov_fill_ratio)?,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text, "<rig>")?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    pub fn build(&self) -> Result<CameraRig> {
        if self.splat_size == 0 {
            return Err(Error::InvalidRig("splat_size must be at least 1".into()));
        }
        let mut rig = build_rig_with_fill(
            self.cube_half_side,
            self.resolution,
            self.views,
            self.fov_fill_ratio,
        )?;
        rig.splat_size = self.splat_size;
        Ok(rig)
    }
}

impl fmt::Display for RigConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cube_half_side = {}", self.cube_half_side)?;
        writeln!(f, "resolution = {}", self.resolution)?;
        writeln!(f, "V = {}", self.views)?;
        writeln!(f, "splat_size = {}", self.splat_size)?;
        writeln!(f, "fov_fill_ratio = {}", self.fov_fill_ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub cube_half_side: f64,
    pub resolution: usize,
    pub splat_size: usize,
    pub range: DepthRange,
}

impl CameraRig {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    /// Distance from every camera center to the origin.
    pub fn distance(&self) -> f64 {
        self.cube_half_side * 3f64.sqrt()
    }

    /// World-space width of one pixel at the rig distance.
    pub fn pixel_footprint(&self) -> f64 {
        self.distance() / self.cameras[0].focal().0
    }

    /// Position (0-based) of the camera with canonical number `index`.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.cameras.iter().position(|c| c.index == index)
    }

    pub fn focal(&self) -> f64 {
        self.cameras[0].focal().0
    }
}

/// Focal length at which a sphere of `radius` seen from `distance` spans
/// `fill` of an image `resolution` pixels high.
pub fn focal_for_fill(distance: f64, radius: f64, resolution: usize, fill: f64) -> f64 {
    let half_angle = (radius / distance).asin();
    fill * resolution as f64 / 2.0 / half_angle.tan()
}

pub fn build_rig(cube_half_side: f64, resolution: usize, views: usize) -> Result<CameraRig> {
    build_rig_with_fill(cube_half_side, resolution, views, RigConfig::default().fov_fill_ratio)
}

pub fn build_rig_with_fill(
    cube_half_side: f64,
    resolution: usize,
    views: usize,
    fill: f64,
) -> Result<CameraRig> {
    if !(cube_half_side > SHAPE_RADIUS) {
        return Err(Error::InvalidRig(format!(
            "cube_half_side {cube_half_side} must exceed the shape radius {SHAPE_RADIUS}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidRig("resolution must be positive".into()));
    }
    if !(fill > 0.0 && fill < 1.0) {
        return Err(Error::InvalidRig(format!("fov_fill_ratio {fill} outside (0, 1)")));
    }
    let subset = view_subset(views)?;
    let distance = cube_half_side * 3f64.sqrt();
    let focal = focal_for_fill(distance, SHAPE_RADIUS, resolution, fill);
    let range = DepthRange {
        near: distance - DEPTH_MARGIN * SHAPE_RADIUS,
        far: distance + DEPTH_MARGIN * SHAPE_RADIUS,
    };
    let cameras = subset
        .iter()
        .map(|&index| {
            let [sx, sy, sz] = CUBE_VERTICES[index - 1];
            let center = Vec3::new(sx, sy, sz) * cube_half_side;
            Camera::look_at(
                center,
                Vec3::zeros(),
                Vec3::z(),
                focal,
                resolution,
                range,
                index,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraRig {
        cameras,
        cube_half_side,
        resolution,
        splat_size: 1,
        range,
    })
}

/// Per-view depth image. Invalid pixels carry depth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub view_index: usize,
    pub range: DepthRange,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize, view_index: usize, range: DepthRange) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
            view_index,
            range,
        }
    }

    pub fn for_camera(camera: &Camera) -> Self {
        Self::empty(camera.width, camera.height, camera.index, camera.range)
    }

    #[inline]
    pub fn offset(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let i = self.offset(col, row);
        self.valid[i].then_some(self.depth[i])
    }

    pub fn set(&mut self, col: usize, row: usize, depth: f64) {
        let i = self.offset(col, row);
        self.depth[i] = depth;
        self.valid[i] = true;
    }

    pub fn clear(&mut self, col: usize, row: usize) {
        let i = self.offset(col, row);
        self.depth[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterates `(col, row, depth)` over valid pixels in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.depth.len())
            .filter(|&i| self.valid[i])
            .map(|i| (i % self.width, i / self.width, self.depth[i]))
    }

    /// Back-projects every valid pixel center through `camera`.
    pub fn back_project(&self, camera: &Camera) -> Vec<Vec3> {
        self.valid_pixels()
            .filter_map(|(col, row, depth)| {
                camera
                    .back_project(Pixel {
                        x: col as f64 + 0.5,
                        y: row as f64 + 0.5,
                        depth,
                    })
                    .ok()
            })
            .collect()
    }
}

/// Z-buffer rendering: each point covers a `splat` × `splat` square of
/// pixels around its projection, and the nearest depth wins per pixel.
pub fn render(cloud: &PointCloud, camera: &Camera, splat: usize) -> DepthMap {
    let mut map = DepthMap::for_camera(camera);
    let splat = splat.max(1);
    let back = (splat as f64 - 1.0) / 2.0;
    let (w, h) = (camera.width as i64, camera.height as i64);
    for p in cloud.iter() {
        let Ok(px) = camera.project(p) else { continue };
        let col0 = (px.x - back).floor() as i64;
        let row0 = (px.y - back).floor() as i64;
        for row in row0.max(0)..(row0 + splat as i64).min(h) {
            for col in col0.max(0)..(col0 + splat as i64).min(w) {
                let i = row as usize * camera.width + col as usize;
                if !map.valid[i] || px.depth < map.depth[i] {
                    map.depth[i] = px.depth;
                    map.valid[i] = true;
                }
            }
        }
    }
    map
}

/// Renders one map per rig camera, in rig order.
pub fn render_rig(cloud: &PointCloud, rig: &CameraRig) -> Vec<DepthMap> {
    rig.cameras
        .iter()
        .map(|cam| render(cloud, cam, rig.splat_size))
        .collect()
}
