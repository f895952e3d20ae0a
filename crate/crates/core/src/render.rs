//! Deterministic CPU forward rasterizer.
//!
//! Splats are projected with the local affine approximation of the pinhole
//! model (`cov2d = J W Σ Wᵀ Jᵀ`), sorted front to back once per frame and
//! alpha-blended per pixel. Alongside color the renderer produces the
//! accumulated alpha and the alpha-blended depth `Σ Tᵢαᵢzᵢ / Σ Tᵢαᵢ`.

use nalgebra::{Matrix2, Matrix2x3, UnitQuaternion};
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{Image, RgbImage, ScalarImage};
use crate::temporal::{effective_opacity, splat_world_pose, TemporalError};
use crate::types::{Camera, Mat3, Quat, Scene, Vec2, Vec3};

/// Per-splat alpha never exceeds this.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Added to every projected covariance, in pixels².
pub const COV2D_REGULARIZATION: f64 = 0.3;
/// Accumulated alpha needed for a pixel's depth to count as valid.
pub const DEPTH_VALID_ALPHA: f64 = 0.5;
pub const NEAR_PLANE: f64 = 1e-3;
/// Half-extent of the per-splat evaluation window, in standard deviations.
pub const WINDOW_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("frame {t} outside scene range [0, {last}]")]
    TimeOutOfRange { t: f64, last: f64 },
    #[error("splat {splat} references missing group {group}")]
    DanglingGroup { splat: usize, group: usize },
    #[error("splat {splat}: {source}")]
    Temporal { splat: usize, source: TemporalError },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("point is behind the camera")]
pub struct BehindCamera;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    /// Alpha-blended camera-space depth; `None` where accumulated alpha is
    /// below [`DEPTH_VALID_ALPHA`].
    pub depth: Image<Option<f64>>,
    pub alpha: ScalarImage,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        *self.depth.get(x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: Vec2,
    pub cov2d: Matrix2<f64>,
    pub camera_depth: f64,
    pub color: Vec3,
    pub effective_opacity: f64,
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn build_covariance(rotation: &Quat, scale: &Vec3) -> Mat3 {
    let r = UnitQuaternion::new_normalize(*rotation).to_rotation_matrix().into_inner();
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    r * s2 * r.transpose()
}

/// Projects a world-space Gaussian; `None` when its center is not in front
/// of the near plane.
pub fn project_splat(
    mean: &Vec3,
    covariance: &Mat3,
    color: Vec3,
    opacity: f64,
    camera: &Camera,
) -> Option<ProjectedSplat> {
    let pc = camera.world_to_camera(mean);
    if pc.z <= NEAR_PLANE {
        return None;
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let jacobian = Matrix2x3::new(
        camera.fx / z, 0.0, -camera.fx * x / (z * z),
        0.0, camera.fy / z, -camera.fy * y / (z * z),
    );
    let jw = jacobian * camera.rotation;
    let mut cov2d = jw * covariance * jw.transpose();
    cov2d[(0, 0)] += COV2D_REGULARIZATION;
    cov2d[(1, 1)] += COV2D_REGULARIZATION;
    // symmetrize away round-off
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Some(ProjectedSplat {
        mean2d: Vec2::new(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy),
        cov2d,
        camera_depth: z,
        color,
        effective_opacity: opacity,
    })
}

/// Pixel coordinates and camera depth of a world point.
pub fn project_point(p: &Vec3, camera: &Camera) -> Result<(Vec2, f64), BehindCamera> {
    let pc = camera.world_to_camera(p);
    if pc.z <= NEAR_PLANE {
        return Err(BehindCamera);
    }
    Ok((Vec2::new(camera.fx * pc.x / pc.z + camera.cx, camera.fy * pc.y / pc.z + camera.cy), pc.z))
}

/// World point seen at `pixel` with camera depth `depth`.
pub fn backproject_pixel(pixel: &Vec2, depth: f64, camera: &Camera) -> Result<Vec3, RenderError> {
    if !(depth > 0.0) {
        return Err(RenderError::NonPositiveDepth(depth));
    }
    let pc = Vec3::new(
        (pixel.x - camera.cx) / camera.fx * depth,
        (pixel.y - camera.cy) / camera.fy * depth,
        depth,
    );
    Ok(camera.camera_to_world(&pc))
}

/// Projects every splat at time `t` and returns `(splat index, projection)`
/// sorted front to back. Equal depths keep index order.
pub fn project_scene(
    scene: &Scene,
    camera: &Camera,
    t: f64,
) -> Result<Vec<(usize, ProjectedSplat)>, RenderError> {
    let last = scene.last_frame();
    if !(0.0..=last).contains(&t) {
        return Err(RenderError::TimeOutOfRange { t, last });
    }
    let mut projected = Vec::with_capacity(scene.splats.len());
    for (i, splat) in scene.splats.iter().enumerate() {
        let group = scene
            .groups
            .get(splat.group_id)
            .ok_or(RenderError::DanglingGroup { splat: i, group: splat.group_id })?;
        let pose = splat_world_pose(splat, group, t)
            .map_err(|source| RenderError::Temporal { splat: i, source })?;
        let cov = build_covariance(&pose.rotation, &splat.scale);
        let opacity = effective_opacity(splat, t);
        if let Some(p) = project_splat(&pose.position, &cov, splat.color, opacity, camera) {
            projected.push((i, p));
        }
    }
    // stable sort keeps index order among equal depths
    projected.sort_by(|a, b| a.1.camera_depth.total_cmp(&b.1.camera_depth));
    Ok(projected)
}

struct Footprint {
    mean: Vec2,
    conic: Matrix2<f64>,
    x0: usize,
    x1: usize,
    color: [f64; 3],
    opacity: f64,
    depth: f64,
}

fn footprint(p: &ProjectedSplat, width: usize, height: usize) -> Option<(Footprint, usize, usize)> {
    let conic = p.cov2d.try_inverse()?;
    let hx = WINDOW_SIGMAS * p.cov2d[(0, 0)].sqrt();
    let hy = WINDOW_SIGMAS * p.cov2d[(1, 1)].sqrt();
    let lo_x = (p.mean2d.x - hx).ceil().max(0.0);
    let hi_x = (p.mean2d.x + hx).floor().min(width as f64 - 1.0);
    let lo_y = (p.mean2d.y - hy).ceil().max(0.0);
    let hi_y = (p.mean2d.y + hy).floor().min(height as f64 - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return None;
    }
    let fp = Footprint {
        mean: p.mean2d,
        conic,
        x0: lo_x as usize,
        x1: hi_x as usize,
        color: [p.color.x, p.color.y, p.color.z],
        opacity: p.effective_opacity,
        depth: p.camera_depth,
    };
    Some((fp, lo_y as usize, hi_y as usize))
}

/// Alpha-blends already sorted projections into a `width × height` image.
pub fn rasterize(sorted: &[ProjectedSplat], width: usize, height: usize) -> RenderOutput {
    let mut footprints = Vec::new();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); height];
    for p in sorted {
        if p.effective_opacity < MIN_ALPHA {
            continue;
        }
        if let Some((fp, y0, y1)) = footprint(p, width, height) {
            let id = footprints.len();
            footprints.push(fp);
            for row in &mut rows[y0..=y1] {
                row.push(id);
            }
        }
    }

    let shaded: Vec<Vec<Shaded>> = rows
        .par_iter()
        .enumerate()
        .map(|(y, ids)| shade_row(&footprints, ids, y, width))
        .collect();

    let mut rgb = Vec::with_capacity(width * height);
    let mut depth = Vec::with_capacity(width * height);
    let mut alpha = Vec::with_capacity(width * height);
    for (c, d, a) in shaded.into_iter().flatten() {
        rgb.push(c);
        depth.push(d);
        alpha.push(a);
    }
    RenderOutput {
        rgb: Image::from_vec(width, height, rgb),
        depth: Image::from_vec(width, height, depth),
        alpha: Image::from_vec(width, height, alpha),
    }
}

/// Color, blended depth and accumulated alpha of one pixel.
type Shaded = ([f64; 3], Option<f64>, f64);

fn shade_row(
    footprints: &[Footprint],
    ids: &[usize],
    y: usize,
    width: usize,
) -> Vec<Shaded> {
    let mut color = vec![[0.0; 3]; width];
    let mut weighted_depth = vec![0.0; width];
    let mut transmittance = vec![1.0; width];
    for &id in ids {
        let fp = &footprints[id];
        let dy = y as f64 - fp.mean.y;
        for x in fp.x0..=fp.x1 {
            let dx = x as f64 - fp.mean.x;
            let power = -0.5
                * (fp.conic[(0, 0)] * dx * dx
                    + 2.0 * fp.conic[(0, 1)] * dx * dy
                    + fp.conic[(1, 1)] * dy * dy);
            let a = (fp.opacity * power.exp()).min(ALPHA_CLAMP);
            if a < MIN_ALPHA {
                continue;
            }
            let w = transmittance[x] * a;
            for (acc, c) in color[x].iter_mut().zip(&fp.color) {
                *acc += w * c;
            }
            weighted_depth[x] += w * fp.depth;
            transmittance[x] *= 1.0 - a;
        }
    }
    (0..width)
        .map(|x| {
            let acc = 1.0 - transmittance[x];
            let depth = (acc >= DEPTH_VALID_ALPHA).then(|| weighted_depth[x] / acc);
            (color[x], depth, acc)
        })
        .collect()
}

/// Renders `scene` from `camera` at frame time `t`. Background is black.
pub fn render(scene: &Scene, camera: &Camera, t: f64) -> Result<RenderOutput, RenderError> {
    let sorted: Vec<ProjectedSplat> =
        project_scene(scene, camera, t)?.into_iter().map(|(_, p)| p).collect();
    Ok(rasterize(&sorted, camera.width, camera.height))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    use super::*;
    use crate::types::{identity_quat, Splat};

    pub(crate) fn axis_camera(width: usize, height: usize) -> Camera {
        Camera {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width,
            height,
        }
    }

    fn splat_at(z: f64, sigma: f64, opacity: f64, color: Vec3) -> Splat {
        Splat::new(Vec3::new(0.0, 0.0, z), identity_quat(), Vec3::repeat(sigma), opacity, color)
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(build_covariance(&identity_quat(), &Vec3::repeat(1.0)), Mat3::identity());
        assert_eq!(
            build_covariance(&identity_quat(), &Vec3::new(2.0, 1.0, 1.0)),
            Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))
        );
        let q = *UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).quaternion();
        assert_relative_eq!(
            build_covariance(&q, &Vec3::new(2.0, 1.0, 1.0)),
            Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn projection_examples() {
        let cam = axis_camera(101, 101);
        let p = project_splat(&Vec3::new(0.0, 0.0, 2.0), &Mat3::identity(), Vec3::zeros(), 1.0, &cam).unwrap();
        assert_eq!(p.mean2d, Vec2::new(50.0, 50.0));
        let p = project_splat(&Vec3::new(0.0, 0.0, 1.0), &Mat3::identity(), Vec3::zeros(), 1.0, &cam).unwrap();
        assert_relative_eq!(p.cov2d, Matrix2::new(1e4 + 0.3, 0.0, 0.0, 1e4 + 0.3), epsilon = 1e-9);
        assert!(project_splat(&Vec3::new(0.0, 0.0, -1.0), &Mat3::identity(), Vec3::zeros(), 1.0, &cam).is_none());
    }

    #[test]
    fn point_projection_examples() {
        let cam = axis_camera(101, 101);
        assert_eq!(project_point(&Vec3::new(0.0, 0.0, 2.0), &cam), Ok((Vec2::new(50.0, 50.0), 2.0)));
        assert_eq!(project_point(&Vec3::new(0.5, 0.0, 1.0), &cam), Ok((Vec2::new(100.0, 50.0), 1.0)));
        assert_eq!(project_point(&Vec3::new(0.0, 0.0, -1.0), &cam), Err(BehindCamera));
        assert_eq!(backproject_pixel(&Vec2::new(50.0, 50.0), 2.0, &cam).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(backproject_pixel(&Vec2::new(100.0, 50.0), 1.0, &cam).unwrap(), Vec3::new(0.5, 0.0, 1.0));
        assert_eq!(backproject_pixel(&Vec2::new(1.0, 1.0), 0.0, &cam), Err(RenderError::NonPositiveDepth(0.0)));
    }

    #[test]
    fn empty_scene_is_black() {
        let out = render(&Scene::new(1), &axis_camera(20, 10), 0.0).unwrap();
        assert!(out.rgb.data.iter().all(|c| *c == [0.0; 3]));
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.depth.data.iter().all(|d| d.is_none()));
    }

    #[test]
    fn single_opaque_splat_center() {
        let mut scene = Scene::new(1);
        scene.splats.push(splat_at(2.0, 0.05, 1.0, Vec3::new(1.0, 0.0, 0.0)));
        let out = render(&scene, &axis_camera(101, 101), 0.0).unwrap();
        assert_relative_eq!(out.rgb.get(50, 50)[0], 0.99, epsilon = 1e-12);
        assert_eq!(out.rgb.get(50, 50)[1], 0.0);
        assert_relative_eq!(*out.alpha.get(50, 50), 0.99, epsilon = 1e-12);
        assert_relative_eq!(out.depth_at(50, 50).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_coaxial_splats_composite() {
        let mut scene = Scene::new(1);
        scene.splats.push(splat_at(2.0, 0.05, 0.5, Vec3::new(0.0, 0.0, 1.0)));
        scene.splats.push(splat_at(1.0, 0.05, 0.5, Vec3::new(1.0, 0.0, 0.0)));
        let out = render(&scene, &axis_camera(101, 101), 0.0).unwrap();
        let c = out.rgb.get(50, 50);
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(c[2], 0.25, epsilon = 1e-12);
        assert_relative_eq!(*out.alpha.get(50, 50), 0.75, epsilon = 1e-12);
        assert_relative_eq!(out.depth_at(50, 50).unwrap(), 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn opaque_front_splat_occludes() {
        let mut scene = Scene::new(1);
        scene.splats.push(splat_at(3.0, 0.2, 1.0, Vec3::new(0.0, 1.0, 0.0)));
        scene.splats.push(splat_at(1.0, 0.1, 1.0, Vec3::new(1.0, 0.0, 0.0)));
        let out = render(&scene, &axis_camera(101, 101), 0.0).unwrap();
        let c = out.rgb.get(50, 50);
        let near = [1.0, 0.0, 0.0];
        assert!((0..3).all(|k| (c[k] - near[k]).abs() <= 1.5e-2), "{c:?}");
    }

    #[test]
    fn equal_depth_ties_resolve_by_index_and_renders_repeat() {
        let mut scene = Scene::new(1);
        scene.splats.push(splat_at(2.0, 0.1, 0.6, Vec3::new(1.0, 0.0, 0.0)));
        scene.splats.push(splat_at(2.0, 0.1, 0.6, Vec3::new(0.0, 1.0, 0.0)));
        let cam = axis_camera(101, 101);
        let a = render(&scene, &cam, 0.0).unwrap();
        let c = a.rgb.get(50, 50);
        assert_relative_eq!(c[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.24, epsilon = 1e-12);
        assert_eq!(a, render(&scene, &cam, 0.0).unwrap());
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let scene = Scene::new(3);
        assert!(matches!(render(&scene, &axis_camera(4, 4), 3.0), Err(RenderError::TimeOutOfRange { .. })));
    }

    #[test]
    fn alpha_never_exceeds_one() {
        let mut scene = Scene::new(1);
        for k in 0..20 {
            let off = Vec3::new(0.01 * k as f64, -0.01 * k as f64, 1.0 + 0.05 * k as f64);
            scene.splats.push(Splat::new(off, identity_quat(), Vec3::repeat(0.1), 0.9, Vec3::repeat(1.0)));
        }
        let out = render(&scene, &axis_camera(101, 101), 0.0).unwrap();
        assert!(out.alpha.data.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(out.rgb.data.iter().all(|c| c.iter().all(|&v| v <= 1.0 + 1e-12)));
    }

    proptest! {
        #[test]
        fn backprojection_inverts_projection(
            u in 0.0..200.0f64, v in 0.0..150.0f64, depth in 0.01..50.0f64,
            yaw in -1.0..1.0f64, pitch in -1.0..1.0f64,
        ) {
            let eye = Vec3::new(3.0 * yaw, -2.0 * pitch, -5.0);
            let cam = Camera::look_at(eye, Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, -1.0, 0.0), 180.0, 200, 150);
            let p = backproject_pixel(&Vec2::new(u, v), depth, &cam).unwrap();
            let (px, z) = project_point(&p, &cam).unwrap();
            prop_assert!((px - Vec2::new(u, v)).norm() <= 1e-9);
            prop_assert!((z - depth).abs() <= 1e-9);
        }
    }
}
