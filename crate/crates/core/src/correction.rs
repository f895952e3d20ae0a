//! Cross-view error diagnosis and error-correcting splat edits.
//!
//! Each error ellipse found in a main view is checked against a second
//! camera at the same frame. Depth samples around the ellipse center are
//! lifted to 3D and looked up in the comparison view's ground truth. If the
//! two views agree on the color, the surface is in place but its color is
//! missing, and a thin disk splat is added. If they disagree, something in
//! front is hiding the true surface, and the splat nearest the lifted
//! point is split in two.

use nalgebra::{Rotation3, UnitQuaternion};
use rayon::prelude::*;
use thiserror::Error;

use crate::cluster::{
    cluster_errors, compute_dynamicity, select_error_pixels, ClusterConfig, ClusterError, ErrorEllipse,
};
use crate::image::{linf_distance, Image, RgbImage};
use crate::render::{backproject_pixel, project_point, render, RenderError, RenderOutput, DEPTH_VALID_ALPHA};
use crate::temporal::{group_transform, splat_world_pose, GroupTransform, TemporalError};
use crate::types::{Camera, Scene, Splat, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrectionError {
    #[error("kernel size must be odd and at least 1, got {0}")]
    InvalidKernel(usize),
    #[error("scene has no splats")]
    EmptyScene,
    #[error("main and comparison cameras are identical")]
    SameCamera,
    #[error("frame {t} outside scene range [0, {last}]")]
    FrameOutOfRange { t: usize, last: usize },
    #[error("image size {got:?} does not match camera size {expected:?}")]
    ImageSize { got: (usize, usize), expected: (usize, usize) },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionConfig {
    pub cluster: ClusterConfig,
    /// Color agreement threshold (max-channel difference).
    pub delta_rgb: f64,
    /// Side of the square depth-sampling window.
    pub kernel_n: usize,
    /// Relative depth tolerance for comparison-view visibility.
    pub depth_tolerance: f64,
    /// Children of a split have their scale divided by this.
    pub split_scale_divisor: f64,
    /// Thickness of an added disk relative to its minor world semi-axis.
    pub thin_axis_factor: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            delta_rgb: 0.1,
            kernel_n: 3,
            depth_tolerance: 0.02,
            split_scale_divisor: 1.6,
            thin_axis_factor: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub pixel: [usize; 2],
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    InvalidDepth,
    NotVisibleInComparison,
    OutOfComparisonFrame,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::InvalidDepth => "invalid-depth",
            SkipReason::NotVisibleInComparison => "not-visible-in-comparison",
            SkipReason::OutOfComparisonFrame => "out-of-comparison-frame",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ErrorDiagnosis {
    /// Both views agree on the color: the surface exists but lacks it.
    LackingSplat { best_point: Vec3, min_color_diff: f64 },
    /// The views disagree: a foreground splat hides the true surface.
    /// `anchor` is the lifted depth sample closest to the ellipse center.
    Occlusion { anchor: Vec3, min_color_diff: f64 },
    Skipped(SkipReason),
}

impl ErrorDiagnosis {
    pub fn min_color_diff(&self) -> Option<f64> {
        match self {
            ErrorDiagnosis::LackingSplat { min_color_diff, .. } | ErrorDiagnosis::Occlusion { min_color_diff, .. } => {
                Some(*min_color_diff)
            }
            ErrorDiagnosis::Skipped(_) => None,
        }
    }
}

/// A camera with its ground-truth image at the frame being corrected.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub camera: &'a Camera,
    pub gt: &'a RgbImage,
}

fn round_pixel(p: &Vec2) -> (i64, i64) {
    (p.x.round() as i64, p.y.round() as i64)
}

/// Valid depths in the `kernel_n`² window around `center`, clipped to the
/// image, in raster order.
pub fn sample_depths(
    depth: &Image<Option<f64>>,
    center: &Vec2,
    kernel_n: usize,
) -> Result<Vec<DepthSample>, CorrectionError> {
    if kernel_n == 0 || kernel_n.is_multiple_of(2) {
        return Err(CorrectionError::InvalidKernel(kernel_n));
    }
    let r = (kernel_n / 2) as i64;
    let (cx, cy) = round_pixel(center);
    let mut out = Vec::new();
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x < 0 || y < 0 || x as usize >= depth.width || y as usize >= depth.height {
                continue;
            }
            if let Some(d) = *depth.get(x as usize, y as usize) {
                out.push(DepthSample { pixel: [x as usize, y as usize], depth: d });
            }
        }
    }
    Ok(out)
}

/// Where a lifted depth sample lands in the comparison view.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Landing {
    Outside,
    Hidden,
    Visible { point: Vec3, color_diff: f64 },
}

fn land(point: Vec3, c_main: &[f64; 3], comp: &View<'_>, comp_render: &RenderOutput, tolerance: f64) -> Landing {
    let Ok((uv, z)) = project_point(&point, comp.camera) else {
        return Landing::Outside;
    };
    let (x, y) = round_pixel(&uv);
    if !comp.camera.contains_pixel(x, y) || x as usize >= comp_render.width() || y as usize >= comp_render.height() {
        return Landing::Outside;
    }
    let (x, y) = (x as usize, y as usize);
    let alpha = *comp_render.alpha.get(x, y);
    let visible = alpha >= DEPTH_VALID_ALPHA
        && comp_render.depth_at(x, y).is_some_and(|d| (d - z).abs() <= tolerance * z);
    if !visible {
        return Landing::Hidden;
    }
    Landing::Visible { point, color_diff: linf_distance(c_main, comp.gt.get(x, y)) }
}

/// Diagnoses one ellipse by comparing the main view's ground-truth color at
/// the ellipse center with the comparison view's ground truth at each
/// visible lifted depth sample.
pub fn classify_error(
    ellipse: &ErrorEllipse,
    main: &View<'_>,
    comp: &View<'_>,
    samples: &[DepthSample],
    comp_render: &RenderOutput,
    cfg: &CorrectionConfig,
) -> ErrorDiagnosis {
    if samples.is_empty() {
        return ErrorDiagnosis::Skipped(SkipReason::InvalidDepth);
    }
    let (cx, cy) = round_pixel(&ellipse.center);
    if !main.camera.contains_pixel(cx, cy) {
        return ErrorDiagnosis::Skipped(SkipReason::InvalidDepth);
    }
    let c_main = *main.gt.get(cx as usize, cy as usize);

    let lifted: Vec<(Vec3, f64)> = samples
        .iter()
        .filter_map(|s| {
            let pixel = Vec2::new(s.pixel[0] as f64, s.pixel[1] as f64);
            let p = backproject_pixel(&pixel, s.depth, main.camera).ok()?;
            Some((p, (pixel - ellipse.center).norm_squared()))
        })
        .collect();
    if lifted.is_empty() {
        return ErrorDiagnosis::Skipped(SkipReason::InvalidDepth);
    }

    let mut any_inside = false;
    let mut best: Option<(Vec3, f64)> = None;
    for &(p, _) in &lifted {
        match land(p, &c_main, comp, comp_render, cfg.depth_tolerance) {
            Landing::Outside => {}
            Landing::Hidden => any_inside = true,
            Landing::Visible { point, color_diff } => {
                any_inside = true;
                if best.is_none_or(|(_, d)| color_diff < d) {
                    best = Some((point, color_diff));
                }
            }
        }
    }
    let Some((best_point, min_color_diff)) = best else {
        return ErrorDiagnosis::Skipped(if any_inside {
            SkipReason::NotVisibleInComparison
        } else {
            SkipReason::OutOfComparisonFrame
        });
    };
    if min_color_diff < cfg.delta_rgb {
        ErrorDiagnosis::LackingSplat { best_point, min_color_diff }
    } else {
        let anchor = lifted
            .iter()
            .fold((lifted[0].0, f64::MAX), |acc, &(p, d)| if d < acc.1 { (p, d) } else { acc })
            .0;
        ErrorDiagnosis::Occlusion { anchor, min_color_diff }
    }
}

/// Index of the splat whose world center at `t` is nearest `point`
/// (lowest index on ties).
pub fn nearest_splat(scene: &Scene, point: &Vec3, t: f64) -> Result<usize, CorrectionError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, splat) in scene.splats.iter().enumerate() {
        let group = scene
            .groups
            .get(splat.group_id)
            .ok_or(RenderError::DanglingGroup { splat: i, group: splat.group_id })?;
        let d = (splat_world_pose(splat, group, t)?.position - point).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(CorrectionError::EmptyScene)
}

fn transform_at(scene: &Scene, group_id: usize, t: f64) -> Result<GroupTransform, CorrectionError> {
    let group = &scene.groups[group_id];
    Ok(if group.is_static { GroupTransform::identity() } else { group_transform(group, t)? })
}

/// World-space semi-axis vectors of an ellipse lifted to camera depth `z`.
pub fn world_ellipse_axes(ellipse: &ErrorEllipse, z: f64, camera: &Camera) -> Result<(Vec3, Vec3), CorrectionError> {
    let major = ellipse.major_axis();
    let minor = Vec2::new(-major.y, major.x);
    let c = backproject_pixel(&ellipse.center, z, camera)?;
    let a = backproject_pixel(&(ellipse.center + major * ellipse.semi_axes.x), z, camera)? - c;
    let b = backproject_pixel(&(ellipse.center + minor * ellipse.semi_axes.y), z, camera)? - c;
    Ok((a, b))
}

/// Adds a thin disk splat at `point` covering `ellipse`, attached to the
/// group of the nearest existing splat. Returns the new splat's index.
#[allow(clippy::too_many_arguments)]
pub fn backproject_add(
    scene: &mut Scene,
    ellipse: &ErrorEllipse,
    point: &Vec3,
    min_color_diff: f64,
    camera: &Camera,
    t: usize,
    cfg: &CorrectionConfig,
) -> Result<usize, CorrectionError> {
    let tf = t as f64;
    let group_id = scene.splats[nearest_splat(scene, point, tf)?].group_id;
    let transform = transform_at(scene, group_id, tf)?;

    let (_, z) = project_point(point, camera).map_err(|_| RenderError::NonPositiveDepth(camera.world_to_camera(point).z))?;
    let (a, b) = world_ellipse_axes(ellipse, z, camera)?;
    let (a_w, b_w) = (a.norm(), b.norm());
    let e1 = a / a_w;
    let e2 = (b - e1 * b.dot(&e1)).normalize();
    let e3 = e1.cross(&e2);
    let world_rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_basis_unchecked(&[e1, e2, e3]));
    let relative_rot = transform.rotation.inverse() * world_rot;

    let c = ellipse.representative_color;
    let mut splat = Splat::new(
        transform.inverse_apply_point(point),
        *relative_rot.quaternion(),
        Vec3::new(a_w, b_w, cfg.thin_axis_factor * a_w.min(b_w)),
        1.0 - min_color_diff,
        Vec3::new(c[0], c[1], c[2]),
    );
    let half_interval = 0.5 * f64::from(scene.groups[group_id].keyframe_interval);
    splat.group_id = group_id;
    splat.is_dynamic = true;
    splat.opacity_center = [tf, tf];
    splat.opacity_variance = [half_interval, half_interval];
    scene.splats.push(splat);
    Ok(scene.splats.len() - 1)
}

/// Indices touched by a foreground split: the parent slot now holds the
/// first child and the second child is appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndices {
    pub parent: usize,
    pub children: [usize; 2],
}

/// Splits the splat nearest `anchor` at time `t` into two smaller children
/// offset along its major axis by half its major standard deviation.
pub fn foreground_split(
    scene: &mut Scene,
    anchor: &Vec3,
    t: usize,
    cfg: &CorrectionConfig,
) -> Result<SplitIndices, CorrectionError> {
    let target = nearest_splat(scene, anchor, t as f64)?;
    let parent = scene.splats[target].clone();
    let (axis, sigma) = parent.scale.iter().enumerate().fold((0, f64::MIN), |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc });
    let dir = UnitQuaternion::new_normalize(parent.rotation) * Vec3::ith(axis, 1.0);
    let offset = dir * (0.5 * sigma);

    let mut first = parent.clone();
    first.position = parent.position + offset;
    first.scale = parent.scale / cfg.split_scale_divisor;
    let mut second = first.clone();
    second.position = parent.position - offset;

    scene.splats[target] = first;
    scene.splats.push(second);
    Ok(SplitIndices { parent: target, children: [target, scene.splats.len() - 1] })
}

/// Camera (other than `main`) whose optical axis is most parallel to the
/// main camera's; lowest index on ties.
pub fn select_comparison_view(cameras: &[Camera], main: usize) -> Option<usize> {
    let axis = cameras.get(main)?.optical_axis();
    cameras
        .iter()
        .enumerate()
        .filter(|&(i, c)| i != main && *c != cameras[main])
        .fold(None, |best: Option<(usize, f64)>, (i, c)| {
            let cos = c.optical_axis().dot(&axis);
            if best.is_none_or(|(_, b)| cos > b) { Some((i, cos)) } else { best }
        })
        .map(|(i, _)| i)
}

/// Main-view inputs for a pass: ground truth at `t` and its neighbours.
#[derive(Debug, Clone, Copy)]
pub struct MainView<'a> {
    pub camera: &'a Camera,
    pub gt_prev: Option<&'a RgbImage>,
    pub gt: &'a RgbImage,
    pub gt_next: Option<&'a RgbImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Added { splat: usize },
    Split(SplitIndices),
    Skipped(SkipReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseOutcome {
    pub ellipse: ErrorEllipse,
    pub diagnosis: ErrorDiagnosis,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipCounts {
    pub invalid_depth: usize,
    pub not_visible_in_comparison: usize,
    pub out_of_comparison_frame: usize,
}

impl SkipCounts {
    fn record(&mut self, reason: SkipReason) {
        match reason {
            SkipReason::InvalidDepth => self.invalid_depth += 1,
            SkipReason::NotVisibleInComparison => self.not_visible_in_comparison += 1,
            SkipReason::OutOfComparisonFrame => self.out_of_comparison_frame += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.invalid_depth + self.not_visible_in_comparison + self.out_of_comparison_frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub frame: usize,
    pub error_pixels: usize,
    pub outcomes: Vec<EllipseOutcome>,
    pub added: usize,
    pub split: usize,
    pub skipped: SkipCounts,
    /// Main-view mean absolute error before and after the pass.
    pub l1_before: f64,
    pub l1_after: f64,
}

fn check_image(img: &RgbImage, camera: &Camera) -> Result<(), CorrectionError> {
    if img.width == camera.width && img.height == camera.height {
        Ok(())
    } else {
        Err(CorrectionError::ImageSize { got: (img.width, img.height), expected: (camera.width, camera.height) })
    }
}

/// Orders ellipses by member count (descending), then center raster order.
pub fn processing_order(ellipses: &mut [ErrorEllipse]) {
    ellipses.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then(a.center.y.total_cmp(&b.center.y))
            .then(a.center.x.total_cmp(&b.center.x))
    });
}

/// One round of error-correcting splat addition for frame `t` of the main
/// view. Group membership of existing splats is left untouched: additions
/// join existing groups and splits stay in their parent's group.
pub fn correction_pass(
    scene: &mut Scene,
    main: &MainView<'_>,
    comp: &View<'_>,
    t: usize,
    cfg: &CorrectionConfig,
) -> Result<CorrectionReport, CorrectionError> {
    if main.camera == comp.camera {
        return Err(CorrectionError::SameCamera);
    }
    if t >= scene.num_frames {
        return Err(CorrectionError::FrameOutOfRange { t, last: scene.num_frames.saturating_sub(1) });
    }
    check_image(main.gt, main.camera)?;
    check_image(comp.gt, comp.camera)?;
    let tf = t as f64;

    let before = render(scene, main.camera, tf)?;
    let l1_before = before.rgb.mean_abs_diff(main.gt);
    let dynamicity = compute_dynamicity(main.gt_prev, main.gt, main.gt_next)?;
    let cc = &cfg.cluster;
    let pixels = select_error_pixels(
        &before.rgb,
        main.gt,
        &dynamicity,
        cc.dynamicity_threshold,
        cc.abs_error_threshold,
        cc.top_fraction,
    )?;
    let mut ellipses = cluster_errors(&pixels, cc)?;
    processing_order(&mut ellipses);

    let comp_render = render(scene, comp.camera, tf)?;
    let main_view = View { camera: main.camera, gt: main.gt };
    let diagnoses: Vec<ErrorDiagnosis> = ellipses
        .par_iter()
        .map(|e| -> Result<ErrorDiagnosis, CorrectionError> {
            let samples = sample_depths(&before.depth, &e.center, cfg.kernel_n)?;
            Ok(classify_error(e, &main_view, comp, &samples, &comp_render, cfg))
        })
        .collect::<Result<_, _>>()?;

    let mut report = CorrectionReport {
        frame: t,
        error_pixels: pixels.len(),
        outcomes: Vec::with_capacity(ellipses.len()),
        added: 0,
        split: 0,
        skipped: SkipCounts::default(),
        l1_before,
        l1_after: l1_before,
    };
    for (ellipse, diagnosis) in ellipses.into_iter().zip(diagnoses) {
        let action = match &diagnosis {
            ErrorDiagnosis::LackingSplat { best_point, min_color_diff } => {
                debug_assert!(matches!(
                    land(*best_point, main.gt.get(ellipse.center.x.round() as usize, ellipse.center.y.round() as usize), comp, &comp_render, cfg.depth_tolerance),
                    Landing::Visible { .. }
                ));
                report.added += 1;
                Action::Added {
                    splat: backproject_add(scene, &ellipse, best_point, *min_color_diff, main.camera, t, cfg)?,
                }
            }
            ErrorDiagnosis::Occlusion { anchor, .. } => {
                report.split += 1;
                Action::Split(foreground_split(scene, anchor, t, cfg)?)
            }
            ErrorDiagnosis::Skipped(reason) => {
                report.skipped.record(*reason);
                Action::Skipped(*reason)
            }
        };
        report.outcomes.push(EllipseOutcome { ellipse, diagnosis, action });
    }
    if report.added + report.split > 0 {
        report.l1_after = render(scene, main.camera, tf)?.rgb.mean_abs_diff(main.gt);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::image::ScalarImage;
    use crate::types::{identity_quat, Group, Mat3};

    fn axis_camera(w: usize, h: usize) -> Camera {
        Camera { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0, rotation: Mat3::identity(), translation: Vec3::zeros(), width: w, height: h }
    }

    fn shifted_camera(dx: f64) -> Camera {
        // camera center at (dx, 0, 0), same orientation
        Camera { translation: Vec3::new(-dx, 0.0, 0.0), ..axis_camera(101, 101) }
    }

    fn ellipse_at(x: f64, y: f64, axes: (f64, f64), color: [f64; 3]) -> ErrorEllipse {
        ErrorEllipse {
            center: Vec2::new(x, y),
            semi_axes: Vec2::new(axes.0, axes.1),
            angle: 0.0,
            representative_color: color,
            members: vec![[x as usize, y as usize]],
        }
    }

    /// Comparison render of a fronto-parallel wall at depth `z`.
    fn wall_render(w: usize, h: usize, z: f64) -> RenderOutput {
        RenderOutput {
            rgb: RgbImage::black(w, h),
            depth: Image::filled(w, h, Some(z)),
            alpha: ScalarImage::filled(w, h, 0.99),
        }
    }

    #[test]
    fn sample_depths_examples() {
        let mut depth: Image<Option<f64>> = Image::filled(5, 5, None);
        *depth.get_mut(2, 2) = Some(3.0);
        let s = sample_depths(&depth, &Vec2::new(2.2, 1.9), 1).unwrap();
        assert_eq!(s, vec![DepthSample { pixel: [2, 2], depth: 3.0 }]);

        let full: Image<Option<f64>> = Image::filled(5, 5, Some(1.0));
        assert_eq!(sample_depths(&full, &Vec2::new(0.0, 0.0), 3).unwrap().len(), 4);
        assert_eq!(sample_depths(&full, &Vec2::new(2.0, 2.0), 3).unwrap().len(), 9);
        assert_eq!(sample_depths(&full, &Vec2::new(2.0, 2.0), 5).unwrap().len(), 25);

        let empty: Image<Option<f64>> = Image::filled(5, 5, None);
        assert!(sample_depths(&empty, &Vec2::new(2.0, 2.0), 3).unwrap().is_empty());
        assert_eq!(sample_depths(&full, &Vec2::zeros(), 2), Err(CorrectionError::InvalidKernel(2)));
        assert_eq!(sample_depths(&full, &Vec2::zeros(), 0), Err(CorrectionError::InvalidKernel(0)));
    }

    fn classify_with(main_color: [f64; 3], comp_color: [f64; 3], delta_rgb: f64) -> ErrorDiagnosis {
        let main_cam = axis_camera(101, 101);
        let comp_cam = shifted_camera(0.5);
        let main_gt = RgbImage::filled(101, 101, main_color);
        let comp_gt = RgbImage::filled(101, 101, comp_color);
        let samples = vec![DepthSample { pixel: [50, 50], depth: 4.0 }, DepthSample { pixel: [51, 50], depth: 4.0 }];
        classify_error(
            &ellipse_at(50.0, 50.0, (3.0, 2.0), main_color),
            &View { camera: &main_cam, gt: &main_gt },
            &View { camera: &comp_cam, gt: &comp_gt },
            &samples,
            &wall_render(101, 101, 4.0),
            &CorrectionConfig { delta_rgb, ..CorrectionConfig::default() },
        )
    }

    #[test]
    fn agreeing_colors_mean_lacking_splat() {
        match classify_with([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.1) {
            ErrorDiagnosis::LackingSplat { best_point, min_color_diff } => {
                assert_eq!(min_color_diff, 0.0);
                assert_relative_eq!(best_point, Vec3::new(0.0, 0.0, 4.0), epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn disagreeing_colors_mean_occlusion() {
        match classify_with([1.0, 1.0, 0.0], [0.0, 1.0, 0.0], 0.1) {
            ErrorDiagnosis::Occlusion { anchor, min_color_diff } => {
                assert_eq!(min_color_diff, 1.0);
                assert_relative_eq!(anchor, Vec3::new(0.0, 0.0, 4.0), epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        // exactly at the threshold is not agreement
        assert!(matches!(classify_with([0.5; 3], [0.75, 0.5, 0.5], 0.25), ErrorDiagnosis::Occlusion { .. }));
        assert!(matches!(classify_with([0.5; 3], [0.75, 0.5, 0.5], 0.2500001), ErrorDiagnosis::LackingSplat { .. }));
    }

    #[test]
    fn best_sample_minimizes_color_difference() {
        let main_cam = axis_camera(101, 101);
        let comp_cam = shifted_camera(0.5);
        let main_gt = RgbImage::filled(101, 101, [0.2, 0.2, 0.2]);
        let mut comp_gt = RgbImage::filled(101, 101, [0.9, 0.9, 0.9]);
        // sample at main pixel (52, 50), depth 4, lands at comp x = 52 - 12.5
        let (uv, _) = project_point(&backproject_pixel(&Vec2::new(52.0, 50.0), 4.0, &main_cam).unwrap(), &comp_cam).unwrap();
        *comp_gt.get_mut(uv.x.round() as usize, 50) = [0.25, 0.2, 0.2];
        let samples: Vec<DepthSample> = (48..=52).map(|x| DepthSample { pixel: [x, 50], depth: 4.0 }).collect();
        let d = classify_error(
            &ellipse_at(50.0, 50.0, (3.0, 2.0), [0.2; 3]),
            &View { camera: &main_cam, gt: &main_gt },
            &View { camera: &comp_cam, gt: &comp_gt },
            &samples,
            &wall_render(101, 101, 4.0),
            &CorrectionConfig::default(),
        );
        match d {
            ErrorDiagnosis::LackingSplat { best_point, min_color_diff } => {
                assert_relative_eq!(min_color_diff, 0.05, epsilon = 1e-12);
                assert_relative_eq!(best_point, Vec3::new(0.08, 0.0, 4.0), epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skip_reasons() {
        let main_cam = axis_camera(101, 101);
        let gt = RgbImage::filled(101, 101, [0.5; 3]);
        let e = ellipse_at(50.0, 50.0, (3.0, 2.0), [0.5; 3]);
        let cfg = CorrectionConfig::default();
        let main = View { camera: &main_cam, gt: &gt };
        let samples = vec![DepthSample { pixel: [50, 50], depth: 4.0 }];

        let comp_cam = shifted_camera(0.5);
        let comp = View { camera: &comp_cam, gt: &gt };
        assert_eq!(
            classify_error(&e, &main, &comp, &[], &wall_render(101, 101, 4.0), &cfg),
            ErrorDiagnosis::Skipped(SkipReason::InvalidDepth)
        );

        // comparison camera looking away: the point is behind it
        let behind = Camera { rotation: Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)), ..axis_camera(101, 101) };
        let comp_behind = View { camera: &behind, gt: &gt };
        assert_eq!(
            classify_error(&e, &main, &comp_behind, &samples, &wall_render(101, 101, 4.0), &cfg),
            ErrorDiagnosis::Skipped(SkipReason::OutOfComparisonFrame)
        );

        // far sideways shift pushes the projection outside the image
        let side = shifted_camera(10.0);
        let comp_side = View { camera: &side, gt: &gt };
        assert_eq!(
            classify_error(&e, &main, &comp_side, &samples, &wall_render(101, 101, 4.0), &cfg),
            ErrorDiagnosis::Skipped(SkipReason::OutOfComparisonFrame)
        );

        // comparison render sees something much closer: hidden
        assert_eq!(
            classify_error(&e, &main, &comp, &samples, &wall_render(101, 101, 2.0), &cfg),
            ErrorDiagnosis::Skipped(SkipReason::NotVisibleInComparison)
        );
        // inside the 2% depth tolerance: visible
        assert!(matches!(
            classify_error(&e, &main, &comp, &samples, &wall_render(101, 101, 4.07), &cfg),
            ErrorDiagnosis::LackingSplat { .. }
        ));
        // low alpha: hidden
        let mut faint = wall_render(101, 101, 4.0);
        faint.alpha = ScalarImage::filled(101, 101, 0.4);
        assert_eq!(
            classify_error(&e, &main, &comp, &samples, &faint, &cfg),
            ErrorDiagnosis::Skipped(SkipReason::NotVisibleInComparison)
        );
    }

    fn one_splat_scene(position: Vec3) -> Scene {
        let mut scene = Scene::new(5);
        scene.splats.push(Splat::new(position, identity_quat(), Vec3::new(0.1, 0.1, 0.1), 0.8, Vec3::new(0.0, 1.0, 0.0)));
        scene
    }

    #[test]
    fn world_axes_follow_similar_triangles() {
        let cam = axis_camera(101, 101);
        let (a, b) = world_ellipse_axes(&ellipse_at(50.0, 50.0, (10.0, 5.0), [0.0; 3]), 2.0, &cam).unwrap();
        assert_relative_eq!(a.norm(), 0.2, epsilon = 1e-12);
        assert_relative_eq!(b.norm(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn added_disk_matches_ellipse() {
        let cam = axis_camera(101, 101);
        let mut scene = one_splat_scene(Vec3::new(0.0, 0.0, 2.5));
        let mut e = ellipse_at(50.0, 50.0, (10.0, 5.0), [0.1, 0.2, 0.9]);
        e.angle = std::f64::consts::FRAC_PI_2;
        let point = Vec3::new(0.0, 0.0, 2.0);
        let idx = backproject_add(&mut scene, &e, &point, 0.1, &cam, 3, &CorrectionConfig::default()).unwrap();
        assert_eq!(idx, 1);
        let s = &scene.splats[idx];
        assert_relative_eq!(s.opacity, 0.9, epsilon = 1e-12);
        assert_relative_eq!(s.scale, Vec3::new(0.2, 0.1, 0.001), epsilon = 1e-12);
        assert_eq!(s.color, Vec3::new(0.1, 0.2, 0.9));
        assert_eq!(s.group_id, 0);
        assert!(s.is_dynamic);
        assert_eq!(s.opacity_center, [3.0, 3.0]);
        assert_eq!(s.opacity_variance, [5.0, 5.0]);
        assert_eq!(s.position, point);
        assert_eq!(s.displacement, Vec3::zeros());
        // first axis along image y (world y here), thin axis along the view ray
        let r = UnitQuaternion::new_normalize(s.rotation);
        assert_relative_eq!((r * Vec3::x()).y.abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!((r * Vec3::z()).z.abs(), 1.0, epsilon = 1e-12);
        let det = r.to_rotation_matrix().matrix().determinant();
        assert_relative_eq!(det, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn added_splat_joins_nearest_group_in_its_frame() {
        let cam = axis_camera(101, 101);
        let mut scene = one_splat_scene(Vec3::new(0.0, 0.0, 9.0));
        let rot = *UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 0.5).quaternion();
        scene.groups.push(Group::keyframed(
            vec![Vec3::new(0.1, 0.0, 2.0), Vec3::new(0.3, 0.0, 2.0)],
            vec![rot, rot],
            4,
        ));
        let mut member = Splat::new(Vec3::zeros(), identity_quat(), Vec3::new(0.1, 0.1, 0.1), 0.8, Vec3::zeros());
        member.group_id = 1;
        scene.splats.push(member);

        let point = Vec3::new(0.25, 0.05, 2.0);
        let e = ellipse_at(50.0, 50.0, (4.0, 3.0), [1.0, 0.0, 0.0]);
        let idx = backproject_add(&mut scene, &e, &point, 0.0, &cam, 2, &CorrectionConfig::default()).unwrap();
        let s = &scene.splats[idx];
        assert_eq!(s.group_id, 1);
        assert_eq!(s.opacity_variance, [2.0, 2.0]);
        let pose = splat_world_pose(s, &scene.groups[1], 2.0).unwrap();
        assert_relative_eq!(pose.position, point, epsilon = 1e-12);
        // world orientation still faces the camera
        let r = UnitQuaternion::new_normalize(pose.rotation);
        assert_relative_eq!((r * Vec3::z()).z.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn add_into_empty_scene_fails() {
        let cam = axis_camera(101, 101);
        let mut scene = Scene::new(3);
        let e = ellipse_at(50.0, 50.0, (4.0, 3.0), [1.0, 0.0, 0.0]);
        assert_eq!(
            backproject_add(&mut scene, &e, &Vec3::new(0.0, 0.0, 2.0), 0.0, &cam, 0, &CorrectionConfig::default()),
            Err(CorrectionError::EmptyScene)
        );
    }

    #[test]
    fn split_halves_scale_and_straddles_parent() {
        let mut scene = one_splat_scene(Vec3::new(1.0, 2.0, 3.0));
        let rot = *UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2).quaternion();
        scene.splats[0].scale = Vec3::new(2.0, 1.0, 1.0);
        scene.splats[0].rotation = rot;
        let parent = scene.splats[0].clone();
        let idx = foreground_split(&mut scene, &Vec3::new(1.0, 2.0, 3.0), 0, &CorrectionConfig::default()).unwrap();
        assert_eq!(idx, SplitIndices { parent: 0, children: [0, 1] });
        assert_eq!(scene.splats.len(), 2);
        let (a, b) = (&scene.splats[0], &scene.splats[1]);
        assert_relative_eq!(a.scale, Vec3::new(1.25, 0.625, 0.625), epsilon = 1e-12);
        assert_relative_eq!((a.position + b.position) / 2.0, parent.position, epsilon = 1e-12);
        assert_relative_eq!((a.position - b.position).norm(), 2.0, epsilon = 1e-12);
        // major axis x rotated onto world y
        assert_relative_eq!((a.position - b.position).normalize().y.abs(), 1.0, epsilon = 1e-12);
        for c in [a, b] {
            assert_eq!(c.rotation, parent.rotation);
            assert_eq!(c.color, parent.color);
            assert_eq!(c.opacity, parent.opacity);
            assert_eq!(c.group_id, parent.group_id);
            assert_eq!(c.opacity_center, parent.opacity_center);
        }
    }

    #[test]
    fn split_targets_nearest_splat() {
        let mut scene = one_splat_scene(Vec3::new(0.0, 0.0, 3.0));
        scene.splats.push(Splat::new(Vec3::new(0.0, 0.0, 1.0), identity_quat(), Vec3::new(0.3, 0.1, 0.1), 1.0, Vec3::x()));
        let idx = foreground_split(&mut scene, &Vec3::new(0.0, 0.0, 1.2), 0, &CorrectionConfig::default()).unwrap();
        assert_eq!(idx.parent, 1);
        assert_eq!(scene.splats.len(), 3);
        assert_eq!(scene.splats[0].position, Vec3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn comparison_view_is_most_parallel() {
        let target = Vec3::new(0.0, 0.0, 5.0);
        let up = Vec3::new(0.0, -1.0, 0.0);
        let cams: Vec<Camera> = [0.0, 3.0, 0.5, -1.0]
            .iter()
            .map(|&x| Camera::look_at(Vec3::new(x, 0.0, 0.0), target, up, 100.0, 64, 64))
            .collect();
        assert_eq!(select_comparison_view(&cams, 0), Some(2));
        assert_eq!(select_comparison_view(&cams, 1), Some(2));
        assert_eq!(select_comparison_view(&cams[..1], 0), None);
    }

    #[test]
    fn pass_on_perfect_render_changes_nothing() {
        let main_cam = axis_camera(101, 101);
        let comp_cam = shifted_camera(0.3);
        let mut scene = one_splat_scene(Vec3::new(0.0, 0.0, 3.0));
        let gt = render(&scene, &main_cam, 1.0).unwrap().rgb;
        let comp_gt = render(&scene, &comp_cam, 1.0).unwrap().rgb;
        let before = scene.clone();
        let report = correction_pass(
            &mut scene,
            &MainView { camera: &main_cam, gt_prev: Some(&RgbImage::black(101, 101)), gt: &gt, gt_next: None },
            &View { camera: &comp_cam, gt: &comp_gt },
            1,
            &CorrectionConfig::default(),
        )
        .unwrap();
        assert_eq!(scene, before);
        assert!(report.outcomes.is_empty());
        assert_eq!(report.l1_before, 0.0);
        assert_eq!(report.l1_after, 0.0);
    }

    #[test]
    fn pass_rejects_same_camera_and_bad_frame() {
        let cam = axis_camera(101, 101);
        let gt = RgbImage::black(101, 101);
        let mut scene = one_splat_scene(Vec3::new(0.0, 0.0, 3.0));
        let main = MainView { camera: &cam, gt_prev: None, gt: &gt, gt_next: None };
        let cfg = CorrectionConfig::default();
        assert_eq!(
            correction_pass(&mut scene, &main, &View { camera: &cam, gt: &gt }, 0, &cfg),
            Err(CorrectionError::SameCamera)
        );
        let other = shifted_camera(0.3);
        assert!(matches!(
            correction_pass(&mut scene, &main, &View { camera: &other, gt: &gt }, 9, &cfg),
            Err(CorrectionError::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn processing_order_is_size_then_raster() {
        let mut es = vec![
            ellipse_at(5.0, 5.0, (2.0, 1.0), [0.0; 3]),
            ellipse_at(1.0, 5.0, (2.0, 1.0), [0.0; 3]),
            ellipse_at(9.0, 1.0, (2.0, 1.0), [0.0; 3]),
        ];
        es[0].members = vec![[0, 0]; 3];
        processing_order(&mut es);
        let centers: Vec<(f64, f64)> = es.iter().map(|e| (e.center.x, e.center.y)).collect();
        assert_eq!(centers, vec![(5.0, 5.0), (9.0, 1.0), (1.0, 5.0)]);
    }
}
