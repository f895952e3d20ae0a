//! Seeded synthetic scenes with known ground truth.
//!
//! A scene is a thin textured surface of flat disks facing the cameras, an
//! opaque backing layer behind it, and optionally a few floaters in front.
//! Surface disks sit on a jittered grid so neighbouring disks always
//! overlap. Colors come in patches from a small palette, so a surface point
//! looks the same from every camera while motion still changes most pixels.
//!
//! The world is y-down; cameras sit on a horizontal arc at negative z
//! looking at the origin.

use std::f64::consts::PI;

use groupsplat_core::render::render;
use groupsplat_core::types::identity_quat;
use groupsplat_core::{Camera, Group, RgbImage, Scene, Splat, Vec3};
use nalgebra::UnitQuaternion;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Surface colors. The backing uses [`BACKING_COLOR`].
pub const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.7, 0.2],
    [0.2, 0.3, 0.9],
    [0.95, 0.85, 0.1],
    [0.9, 0.5, 0.1],
    [0.6, 0.2, 0.8],
];
pub const BACKING_COLOR: [f64; 3] = [0.15, 0.15, 0.15];

/// Camera distance from the scene center, in extents.
const CAMERA_DISTANCE: f64 = 2.5;
/// Backing depth behind the surface, in extents. Backing splats are large
/// and sorted by center depth, so the gap must exceed their footprint times
/// the sine of the steepest viewing angle or they jump ahead of the surface.
const BACKING_GAP: f64 = 0.2;
/// Surface cells per side of a uniformly colored patch. Neighbouring disks
/// overlap and composite in a view-dependent order, so a patch keeps the
/// surface color the same from every camera away from patch borders.
const COLOR_BLOCK: usize = 3;
/// Depth jitter of surface disks, in extents. Neighbouring disks overlap,
/// and a jitter larger than their spacing times the sine of the viewing
/// angle keeps their compositing order the same in every camera.
const SURFACE_DEPTH_JITTER: f64 = 0.02;
/// Per-frame translation, in extents.
const TRANSLATION_PER_FRAME: f64 = 0.025;
/// Per-frame rotation about the viewing axis, radians.
const ROTATION_PER_FRAME: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Static,
    RigidTranslation,
    RigidRotation,
    TwoGroup,
}

fn default_width() -> usize {
    128
}

fn default_height() -> usize {
    96
}

fn default_interval() -> u32 {
    4
}

/// Wider arcs give more parallax but let overlapping disks composite in a
/// visibly different order per view, which breaks cross-view color checks.
fn default_arc() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_splats: usize,
    pub motion: Motion,
    pub extent: f64,
    pub n_cameras: usize,
    pub n_frames: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    /// Splats floating in front of the surface.
    #[serde(default)]
    pub floaters: usize,
    #[serde(default = "default_interval")]
    pub keyframe_interval: u32,
    /// Half of the angular spread of the camera arc, in degrees.
    #[serde(default = "default_arc")]
    pub arc_half_angle_deg: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, n_splats: usize, motion: Motion) -> Self {
        Self {
            seed,
            n_splats,
            motion,
            extent: 2.0,
            n_cameras: 4,
            n_frames: 9,
            width: default_width(),
            height: default_height(),
            floaters: 0,
            keyframe_interval: default_interval(),
            arc_half_angle_deg: default_arc(),
        }
    }

    fn backing_side(&self) -> usize {
        ((self.n_splats as f64 / 8.0).sqrt().round() as usize).max(2)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |key: &str, msg: &str| Err(HarnessError::Config(format!("{key}: {msg}")));
        if self.n_cameras < 2 {
            return fail("n_cameras", "at least 2 cameras are needed");
        }
        if self.n_frames < 3 {
            return fail("n_frames", "at least 3 frames are needed");
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return fail("extent", "must be positive");
        }
        if self.width < 16 || self.height < 16 {
            return fail("width", "images must be at least 16x16");
        }
        if !(self.arc_half_angle_deg >= 0.0 && self.arc_half_angle_deg < 80.0) {
            return fail("arc_half_angle_deg", "must be in [0, 80)");
        }
        if self.keyframe_interval == 0 {
            return fail("keyframe_interval", "must be at least 1");
        }
        let side = self.backing_side();
        if self.n_splats < side * side + self.floaters + 1 || self.n_splats < 8 {
            return fail("n_splats", "too few splats for the backing, floaters and surface");
        }
        Ok(())
    }
}

/// What a generated splat represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Backing,
    Surface,
    Floater,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    /// `gt[view][frame]`.
    pub gt: Vec<Vec<RgbImage>>,
    /// Role of each splat, by index.
    pub roles: Vec<Role>,
    /// Planted motion blobs for the two-group motion (surface splat indices).
    pub blobs: Vec<Vec<usize>>,
}

/// Generator stream for a seed; degradation uses the next jump.
pub fn rng_for(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

fn about_z(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle)
}

fn disk(position: Vec3, angle: f64, sx: f64, sy: f64, opacity: f64, color: [f64; 3]) -> Splat {
    Splat::new(
        position,
        *about_z(angle).quaternion(),
        Vec3::new(sx, sy, 0.05 * sx.min(sy)),
        opacity,
        Vec3::new(color[0], color[1], color[2]),
    )
}

pub fn arc_cameras(spec: &SynthSpec) -> Vec<Camera> {
    let distance = CAMERA_DISTANCE * spec.extent;
    let half = spec.arc_half_angle_deg.to_radians();
    let focal = 0.75 * spec.width as f64 * distance / spec.extent;
    (0..spec.n_cameras)
        .map(|i| {
            let u = i as f64 / (spec.n_cameras - 1) as f64;
            let theta = -half + 2.0 * half * u;
            let eye = Vec3::new(distance * theta.sin(), 0.0, -distance * theta.cos());
            Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0), focal, spec.width, spec.height)
        })
        .collect()
}

fn keyframe_count(spec: &SynthSpec) -> usize {
    let span = (spec.n_frames - 1) as f64;
    ((span / f64::from(spec.keyframe_interval)).ceil() as usize + 1).max(2)
}

fn build_splats(spec: &SynthSpec, rng: &mut Xoshiro256StarStar) -> (Vec<Splat>, Vec<Role>, Vec<Vec<usize>>) {
    let e = spec.extent;
    let mut splats = Vec::with_capacity(spec.n_splats);
    let mut roles = Vec::with_capacity(spec.n_splats);

    let side = spec.backing_side();
    let pitch = 1.3 * e / side as f64;
    for j in 0..side {
        for i in 0..side {
            let p = Vec3::new(
                -0.65 * e + (i as f64 + 0.5) * pitch,
                -0.65 * e + (j as f64 + 0.5) * pitch,
                BACKING_GAP * e,
            );
            splats.push(disk(p, 0.0, 0.75 * pitch, 0.75 * pitch, 1.0, BACKING_COLOR));
            roles.push(Role::Backing);
        }
    }

    let n_surface = spec.n_splats - side * side - spec.floaters;
    // cells in the middle strip stay empty for the two-group motion
    let gap = if spec.motion == Motion::TwoGroup { 0.08 * e } else { -1.0 };
    let grid = |cols: usize| -> Vec<(usize, usize)> {
        let cell = e / cols as f64;
        (0..cols)
            .flat_map(|j| (0..cols).map(move |i| (i, j)))
            .filter(|&(i, _)| (-0.5 * e + (i as f64 + 0.5) * cell).abs() > gap)
            .collect()
    };
    let mut cols = (n_surface as f64).sqrt().ceil() as usize;
    while grid(cols).len() < n_surface {
        cols += 1;
    }
    let cell = e / cols as f64;
    let mut cells = grid(cols);
    cells.shuffle(rng);
    let blocks = cols.div_ceil(COLOR_BLOCK);
    let block_colors: Vec<[f64; 3]> =
        (0..blocks * blocks).map(|_| PALETTE[rng.random_range(0..PALETTE.len())]).collect();
    let mut blobs = vec![Vec::new(), Vec::new()];
    for &(i, j) in cells.iter().take(n_surface) {
        let cx = -0.5 * e + (i as f64 + rng.random_range(0.25..0.75)) * cell;
        let cy = -0.5 * e + (j as f64 + rng.random_range(0.25..0.75)) * cell;
        let z = rng.random_range(-SURFACE_DEPTH_JITTER..SURFACE_DEPTH_JITTER) * e;
        let sigma = 0.6 * cell;
        let aspect: f64 = rng.random_range(0.8..1.25);
        let angle = rng.random_range(0.0..PI);
        let opacity = rng.random_range(0.85..1.0);
        let color = block_colors[(j / COLOR_BLOCK) * blocks + i / COLOR_BLOCK];
        let mut s = disk(Vec3::new(cx, cy, z), angle, sigma * aspect, sigma / aspect, opacity, color);
        if spec.motion == Motion::TwoGroup {
            let v = TRANSLATION_PER_FRAME * e;
            let blob = usize::from(cx > 0.0);
            s.displacement = if blob == 0 { Vec3::new(v, 0.0, 0.0) } else { Vec3::new(0.0, v, 0.0) };
            blobs[blob].push(splats.len());
        }
        splats.push(s);
        roles.push(Role::Surface);
    }
    if spec.motion != Motion::TwoGroup {
        blobs.clear();
    }

    for _ in 0..spec.floaters {
        let p = Vec3::new(
            rng.random_range(-0.3..0.3) * e,
            rng.random_range(-0.3..0.3) * e,
            rng.random_range(-0.5..-0.25) * e,
        );
        let sigma = 0.6 * cell;
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        let angle = rng.random_range(0.0..PI);
        splats.push(disk(p, angle, sigma, sigma, 0.98, color));
        roles.push(Role::Floater);
    }
    (splats, roles, blobs)
}

fn motion_group(spec: &SynthSpec) -> Option<Group> {
    let k = keyframe_count(spec);
    let times: Vec<f64> = (0..k).map(|i| (i as u64 * u64::from(spec.keyframe_interval)) as f64).collect();
    match spec.motion {
        Motion::Static | Motion::TwoGroup => None,
        Motion::RigidTranslation => Some(Group::keyframed(
            times.iter().map(|&t| Vec3::new(TRANSLATION_PER_FRAME * spec.extent * t, 0.0, 0.0)).collect(),
            vec![identity_quat(); k],
            spec.keyframe_interval,
        )),
        Motion::RigidRotation => Some(Group::keyframed(
            vec![Vec3::zeros(); k],
            times.iter().map(|&t| *about_z(ROTATION_PER_FRAME * t).quaternion()).collect(),
            spec.keyframe_interval,
        )),
    }
}

/// Ground truth renders `gt[view][frame]`.
pub fn render_all(scene: &Scene, cameras: &[Camera]) -> Result<Vec<Vec<RgbImage>>, HarnessError> {
    let jobs: Vec<(usize, usize)> =
        (0..cameras.len()).flat_map(|v| (0..scene.num_frames).map(move |t| (v, t))).collect();
    let images: Vec<RgbImage> = jobs
        .par_iter()
        .map(|&(v, t)| Ok(render(scene, &cameras[v], t as f64)?.rgb))
        .collect::<Result<_, HarnessError>>()?;
    let mut it = images.into_iter();
    Ok((0..cameras.len()).map(|_| it.by_ref().take(scene.num_frames).collect()).collect())
}

pub fn gen_scene(spec: &SynthSpec) -> Result<SynthScene, HarnessError> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    let (splats, roles, blobs) = build_splats(spec, &mut rng);
    let mut scene = Scene::new(spec.n_frames);
    scene.splats = splats;
    if let Some(group) = motion_group(spec) {
        scene.groups.push(group);
        for s in &mut scene.splats {
            s.group_id = 1;
        }
    }
    let cameras = arc_cameras(spec);
    let gt = render_all(&scene, &cameras)?;
    Ok(SynthScene { scene, cameras, gt, roles, blobs })
}
