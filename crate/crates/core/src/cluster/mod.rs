//! Erroneous-pixel selection and recursive elliptical clustering.
//!
//! Pixels are kept when the ground truth changes between neighbouring
//! frames and the render misses it badly. The survivors are grouped by a
//! spatial DBSCAN pass, then each group is refined with a spatial-color
//! DBSCAN pass and an ellipse fit. Groups that fill their ellipse poorly
//! are split in two with k-means and refined again.

pub mod dbscan;
pub mod ellipse;
pub mod kmeans;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{l1_distance, mean_channel_error, RgbImage, ScalarImage};
use crate::types::Vec2;

pub use dbscan::{dbscan, group_labels, Label};
pub use ellipse::fit_ellipse;
pub use kmeans::kmeans_split;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("cluster of {size} points is too small, need {need}")]
    TooSmall { size: usize, need: usize },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("cluster is degenerate (collinear pixel centers)")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPixel {
    pub x: usize,
    pub y: usize,
    /// Mean over channels of `|render - gt|`.
    pub rgb_error: f64,
    pub gt_color: [f64; 3],
}

impl ErrorPixel {
    pub fn xy(&self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEllipse {
    pub center: Vec2,
    /// `(major, minor)` with `major >= minor > 0`.
    pub semi_axes: Vec2,
    /// Direction of the major axis, in `[0, pi)`.
    pub angle: f64,
    pub representative_color: [f64; 3],
    pub members: Vec<[usize; 2]>,
}

impl ErrorEllipse {
    pub fn major_axis(&self) -> Vec2 {
        Vec2::new(self.angle.cos(), self.angle.sin())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// tau_D: minimum ground-truth change for a pixel to count as dynamic.
    pub dynamicity_threshold: f64,
    /// tau_a: minimum mean-channel error.
    pub abs_error_threshold: f64,
    /// tau_r: fraction of the dynamic pixels, ranked by error, that is kept.
    pub top_fraction: f64,
    pub eps: f64,
    pub min_pts: usize,
    /// Pixels per unit of color in the spatial-color metric.
    pub color_scale: f64,
    pub fill_threshold: f64,
    pub min_cluster_size: usize,
    pub max_depth: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            dynamicity_threshold: 0.05,
            abs_error_threshold: 0.05,
            top_fraction: 0.5,
            eps: 2.0,
            min_pts: 4,
            color_scale: 50.0,
            fill_threshold: 0.8,
            min_cluster_size: 8,
            max_depth: 12,
        }
    }
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<(), ClusterError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(ClusterError::DimensionMismatch(a.width, a.height, b.width, b.height))
    }
}

/// Per-pixel L1 change of the ground truth against its neighbouring frames.
/// A missing neighbour (sequence boundary) contributes nothing.
pub fn compute_dynamicity(
    prev: Option<&RgbImage>,
    curr: &RgbImage,
    next: Option<&RgbImage>,
) -> Result<ScalarImage, ClusterError> {
    for other in prev.iter().chain(next.iter()) {
        check_dims(curr, other)?;
    }
    let data = (0..curr.len())
        .map(|i| {
            let before = prev.map_or(0.0, |p| l1_distance(&curr.data[i], &p.data[i]));
            let after = next.map_or(0.0, |n| l1_distance(&n.data[i], &curr.data[i]));
            before.max(after)
        })
        .collect();
    Ok(ScalarImage::from_vec(curr.width, curr.height, data))
}

/// Pixels that are dynamic, have error above `tau_a`, and rank within the
/// top `tau_r` of the dynamic pixels by error. The rank cut is nearest-rank
/// on the descending sort, so pixels tied with the cut value are all kept.
/// Output is in raster order.
pub fn select_error_pixels(
    render: &RgbImage,
    gt: &RgbImage,
    dynamicity: &ScalarImage,
    tau_d: f64,
    tau_a: f64,
    tau_r: f64,
) -> Result<Vec<ErrorPixel>, ClusterError> {
    check_dims(render, gt)?;
    if !render.same_size(dynamicity) {
        return Err(ClusterError::DimensionMismatch(render.width, render.height, dynamicity.width, dynamicity.height));
    }
    if !(tau_r > 0.0 && tau_r <= 1.0) {
        return Err(ClusterError::InvalidParameter("tau_r must lie in (0, 1]"));
    }
    let dynamic: Vec<(usize, f64)> = (0..render.len())
        .filter(|&i| dynamicity.data[i] > tau_d)
        .map(|i| (i, mean_channel_error(&render.data[i], &gt.data[i])))
        .collect();
    if dynamic.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<f64> = dynamic.iter().map(|&(_, e)| e).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let rank = ((tau_r * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let cut = sorted[rank - 1];
    Ok(dynamic
        .into_iter()
        .filter(|&(_, e)| e >= cut && e > tau_a)
        .map(|(i, e)| ErrorPixel {
            x: i % render.width,
            y: i / render.width,
            rgb_error: e,
            gt_color: gt.data[i],
        })
        .collect())
}

/// DBSCAN over `(x, y, s*r, s*g, s*b)` using the ground-truth colors.
/// Returns clusters as index lists into `pixels`; noise is dropped.
pub fn spatial_color_cluster(
    pixels: &[ErrorPixel],
    eps: f64,
    min_pts: usize,
    color_scale: f64,
) -> Result<Vec<Vec<usize>>, ClusterError> {
    let points: Vec<[f64; 5]> = pixels
        .iter()
        .map(|p| {
            let c = p.gt_color;
            [p.x as f64, p.y as f64, color_scale * c[0], color_scale * c[1], color_scale * c[2]]
        })
        .collect();
    Ok(group_labels(&dbscan(&points, eps, min_pts)?))
}

fn spatial_cluster(pixels: &[ErrorPixel], eps: f64, min_pts: usize) -> Result<Vec<Vec<usize>>, ClusterError> {
    let points: Vec<[f64; 2]> = pixels.iter().map(ErrorPixel::xy).collect();
    Ok(group_labels(&dbscan(&points, eps, min_pts)?))
}

fn pick(pixels: &[ErrorPixel], idx: &[usize]) -> Vec<ErrorPixel> {
    idx.iter().map(|&i| pixels[i].clone()).collect()
}

fn refine(pixels: Vec<ErrorPixel>, depth: usize, cfg: &ClusterConfig, out: &mut Vec<ErrorEllipse>) {
    if pixels.len() < cfg.min_cluster_size {
        return;
    }
    let groups = match spatial_color_cluster(&pixels, cfg.eps, cfg.min_pts, cfg.color_scale) {
        Ok(g) => g,
        Err(_) => return,
    };
    for group in groups {
        if group.len() < cfg.min_cluster_size {
            continue;
        }
        let members = pick(&pixels, &group);
        match fit_ellipse(&members) {
            Ok((ellipse, fill)) if fill >= cfg.fill_threshold => out.push(ellipse),
            Ok(_) if depth < cfg.max_depth => {
                let xy: Vec<[f64; 2]> = members.iter().map(ErrorPixel::xy).collect();
                if let Ok((a, b)) = kmeans_split(&xy) {
                    refine(pick(&members, &a), depth + 1, cfg, out);
                    refine(pick(&members, &b), depth + 1, cfg, out);
                }
            }
            _ => {}
        }
    }
}

/// Clusters erroneous pixels into ellipses that each pass the fill-ratio
/// test. Initial spatial clusters are refined in parallel; the output order
/// follows the initial cluster order and is independent of thread count.
pub fn cluster_errors(pixels: &[ErrorPixel], cfg: &ClusterConfig) -> Result<Vec<ErrorEllipse>, ClusterError> {
    if pixels.is_empty() {
        return Ok(Vec::new());
    }
    let initial = spatial_cluster(pixels, cfg.eps, cfg.min_pts)?;
    let nested: Vec<Vec<ErrorEllipse>> = initial
        .par_iter()
        .map(|group| {
            let mut out = Vec::new();
            refine(pick(pixels, group), 0, cfg, &mut out);
            out
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}
