//! Multi-view fusion: back-project every view, keep points confirmed by
//! enough other views, then drop sparse outliers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, DepthMap, PointCloud, Vec3};
use crate::metrics::SpatialIndex;

/// Back-projected pixel with its cross-view vote count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotedPoint {
    pub position: Vec3,
    /// Rig position (0-based) of the view the point came from.
    pub source_view: usize,
    pub votes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub threshold: usize,
    pub radius: f64,
    pub min_neighbors: usize,
    /// Allowed amount by which a point may sit in front of another view's
    /// stored surface and still count as lying on it.
    pub depth_tol: f64,
}

/// Reference resolution for the default outlier radius.
pub const REFERENCE_RESOLUTION: usize = 256;

impl FusionParams {
    pub const DEFAULT_THRESHOLD: usize = 7;
    pub const DEFAULT_RADIUS: f64 = 0.006;
    pub const DEFAULT_MIN_NEIGHBORS: usize = 6;

    /// Defaults with the depth tolerance derived from `rig`.
    pub fn for_rig(rig: &CameraRig) -> Self {
        Self {
            threshold: Self::DEFAULT_THRESHOLD.min(rig.views()),
            radius: Self::DEFAULT_RADIUS,
            min_neighbors: Self::DEFAULT_MIN_NEIGHBORS,
            depth_tol: default_depth_tol(rig),
        }
    }

    /// Like [`FusionParams::for_rig`], with the outlier radius scaled from
    /// the 256-pixel reference to the rig's resolution so it keeps covering
    /// the same number of pixel footprints.
    pub fn scaled_for(rig: &CameraRig) -> Self {
        let mut p = Self::for_rig(rig);
        p.radius *= REFERENCE_RESOLUTION as f64 / rig.resolution as f64;
        p
    }
}

/// Two pixel footprints at the rig distance.
pub fn default_depth_tol(rig: &CameraRig) -> f64 {
    2.0 * rig.pixel_footprint()
}

fn check_alignment(maps: &[DepthMap], rig: &CameraRig) -> Result<()> {
    if maps.len() != rig.views() {
        return Err(Error::CountMismatch {
            expected: rig.views(),
            actual: maps.len(),
        });
    }
    for (map, cam) in maps.iter().zip(&rig.cameras) {
        if map.view_index != cam.index {
            return Err(Error::ShapeMismatch(format!(
                "map for view {} where rig expects view {}",
                map.view_index, cam.index
            )));
        }
        if map.width != cam.width || map.height != cam.height {
            return Err(Error::ShapeMismatch(format!(
                "map {}x{} for a {}x{} camera",
                map.width, map.height, cam.width, cam.height
            )));
        }
    }
    Ok(())
}

/// One point per valid pixel of every map, each starting with one vote.
pub fn backproject_all(maps: &[DepthMap], rig: &CameraRig) -> Result<Vec<VotedPoint>> {
    check_alignment(maps, rig)?;
    Ok(maps
        .iter()
        .zip(&rig.cameras)
        .enumerate()
        .flat_map(|(view, (map, cam))| {
            map.back_project(cam).into_iter().map(move |position| VotedPoint {
                position,
                source_view: view,
                votes: 1,
            })
        })
        .collect())
}

/// Counts the views (including its own) that confirm `point`.
///
/// Another view confirms a point when the point projects onto one of its
/// valid pixels (nearest-pixel rounding) and does not lie in front of the
/// stored surface by more than `depth_tol`.
pub fn count_votes(point: &VotedPoint, maps: &[DepthMap], rig: &CameraRig, depth_tol: f64) -> usize {
    let mut votes = 1;
    for (view, (map, cam)) in maps.iter().zip(&rig.cameras).enumerate() {
        if view == point.source_view {
            continue;
        }
        let Ok(px) = cam.project(&point.position) else { continue };
        let Some((col, row)) = cam.pixel_of(px.x, px.y) else { continue };
        if let Some(stored) = map.get(col, row) {
            if px.depth >= stored - depth_tol {
                votes += 1;
            }
        }
    }
    votes
}

/// Keeps the points with at least `threshold` votes.
pub fn vote_filter(
    points: &[VotedPoint],
    maps: &[DepthMap],
    rig: &CameraRig,
    threshold: usize,
    depth_tol: f64,
) -> Result<PointCloud> {
    check_alignment(maps, rig)?;
    if threshold == 0 || threshold > rig.views() {
        return Err(Error::InvalidParameter(format!(
            "vote threshold {threshold} outside 1..={}",
            rig.views()
        )));
    }
    let kept: Vec<Option<Vec3>> = points
        .par_iter()
        .map(|p| (count_votes(p, maps, rig, depth_tol) >= threshold).then_some(p.position))
        .collect();
    Ok(kept.into_iter().flatten().collect())
}

/// Keeps exactly the points with at least `min_neighbors` other points
/// within `radius` (inclusive).
pub fn radius_outlier_removal(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
    }
    let index = SpatialIndex::from_cloud(cloud);
    let keep: Vec<bool> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| index.count_within(p, radius, Some(i)) >= min_neighbors)
        .collect();
    Ok(cloud
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect())
}

/// Back-projection, voting and outlier removal in sequence.
pub fn fuse(maps: &[DepthMap], rig: &CameraRig, params: &FusionParams) -> Result<PointCloud> {
    let points = backproject_all(maps, rig)?;
    let voted = vote_filter(&points, maps, rig, params.threshold, params.depth_tol)?;
    if voted.is_empty() {
        return Ok(voted);
    }
    radius_outlier_removal(&voted, params.radius, params.min_neighbors)
}

/// Union of all back-projections without any filtering.
pub fn union_cloud(maps: &[DepthMap], rig: &CameraRig) -> Result<PointCloud> {
    Ok(backproject_all(maps, rig)?.into_iter().map(|p| p.position).collect())
}
