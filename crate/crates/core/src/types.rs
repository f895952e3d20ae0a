//! Scene data model and invariant checks.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, Vector2, Vector3};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// Hamilton quaternion. `Quaternion::new(w, x, y, z)`.
pub type Quat = Quaternion<f64>;

/// Tolerance on unit-norm and orthonormality checks.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Keyframe spacing used when a group has to be created from a static source.
pub const DEFAULT_KEYFRAME_INTERVAL: u32 = 10;

pub fn identity_quat() -> Quat {
    Quat::new(1.0, 0.0, 0.0, 0.0)
}

/// One anisotropic Gaussian primitive.
///
/// `position` and `rotation` are relative to the owning group's frame,
/// `displacement` is a world-frame velocity (scene units per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub position: Vec3,
    pub rotation: Quat,
    /// Per-axis standard deviations.
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub displacement: Vec3,
    /// Bounds of the full-opacity interval, in frames.
    pub opacity_center: [f64; 2],
    /// Fade-in / fade-out widths, in frames.
    pub opacity_variance: [f64; 2],
    pub group_id: usize,
    pub is_dynamic: bool,
}

impl Splat {
    /// A static splat in the global group with no displacement.
    pub fn new(position: Vec3, rotation: Quat, scale: Vec3, opacity: f64, color: Vec3) -> Self {
        Self {
            position,
            rotation,
            scale,
            opacity,
            color,
            displacement: Vec3::zeros(),
            opacity_center: [0.0, 0.0],
            opacity_variance: [1.0, 1.0],
            group_id: 0,
            is_dynamic: false,
        }
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }
}

/// A keyframed rigid trajectory shared by its member splats.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub keyframe_positions: Vec<Vec3>,
    pub keyframe_rotations: Vec<Quat>,
    /// Frames between consecutive keyframes.
    pub keyframe_interval: u32,
    pub is_static: bool,
}

impl Group {
    /// The global frame: identity transform at every time.
    pub fn global() -> Self {
        Self {
            keyframe_positions: Vec::new(),
            keyframe_rotations: Vec::new(),
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            is_static: true,
        }
    }

    pub fn keyframed(positions: Vec<Vec3>, rotations: Vec<Quat>, interval: u32) -> Self {
        Self {
            keyframe_positions: positions,
            keyframe_rotations: rotations,
            keyframe_interval: interval,
            is_static: false,
        }
    }

    pub fn num_keyframes(&self) -> usize {
        self.keyframe_positions.len()
    }

    /// Last time covered by the keyframes, `(K - 1) * I`.
    pub fn span(&self) -> f64 {
        self.num_keyframes().saturating_sub(1) as f64 * f64::from(self.keyframe_interval)
    }
}

/// Pinhole camera. Pixel `(u, v)` is sampled at its integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Mat3,
    /// Translation part of the world-to-camera transform.
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`, image y pointing along -`up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        }
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Viewing direction in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn center(&self) -> Vec3 {
        self.camera_to_world(&Vec3::zeros())
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

/// Splats plus their groups. Group 0 is the static global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub splats: Vec<Splat>,
    pub groups: Vec<Group>,
    pub num_frames: usize,
}

impl Scene {
    pub fn new(num_frames: usize) -> Self {
        Self {
            splats: Vec::new(),
            groups: vec![Group::global()],
            num_frames,
        }
    }

    pub fn last_frame(&self) -> f64 {
        self.num_frames.saturating_sub(1) as f64
    }

    pub fn members(&self, group_id: usize) -> impl Iterator<Item = usize> + '_ {
        self.splats
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.group_id == group_id)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Scene,
    Splat(usize),
    Group(usize),
    Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    RotationNotUnit { norm: f64 },
    ScaleNotPositive,
    OpacityOutOfRange,
    ColorOutOfRange,
    OpacityCenterOrder,
    OpacityVarianceNotPositive,
    NonFinite,
    DanglingGroup { group_id: usize },
    TooFewKeyframes { count: usize },
    KeyframeCountMismatch { positions: usize, rotations: usize },
    KeyframeRotationNotUnit { keyframe: usize, norm: f64 },
    ZeroKeyframeInterval,
    MissingGlobalGroup,
    GlobalGroupNotStatic,
    ExtraStaticGroup,
    NoFrames,
    RotationNotOrthonormal,
    EmptyImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: Subject,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Subject::Scene => write!(f, "scene: ")?,
            Subject::Splat(i) => write!(f, "splat {i}: ")?,
            Subject::Group(i) => write!(f, "group {i}: ")?,
            Subject::Camera => write!(f, "camera: ")?,
        }
        match &self.kind {
            ViolationKind::RotationNotUnit { norm } => write!(f, "rotation norm {norm} is not 1"),
            ViolationKind::ScaleNotPositive => write!(f, "scale components must be > 0"),
            ViolationKind::OpacityOutOfRange => write!(f, "opacity outside [0, 1]"),
            ViolationKind::ColorOutOfRange => write!(f, "color outside [0, 1]^3"),
            ViolationKind::OpacityCenterOrder => write!(f, "opacity_center[0] > opacity_center[1]"),
            ViolationKind::OpacityVarianceNotPositive => {
                write!(f, "opacity_variance components must be > 0")
            }
            ViolationKind::NonFinite => write!(f, "non-finite value"),
            ViolationKind::DanglingGroup { group_id } => {
                write!(f, "group_id {group_id} does not name a group")
            }
            ViolationKind::TooFewKeyframes { count } => {
                write!(f, "{count} keyframes, dynamic groups need at least 2")
            }
            ViolationKind::KeyframeCountMismatch { positions, rotations } => {
                write!(f, "{positions} keyframe positions but {rotations} rotations")
            }
            ViolationKind::KeyframeRotationNotUnit { keyframe, norm } => {
                write!(f, "keyframe {keyframe} rotation norm {norm} is not 1")
            }
            ViolationKind::ZeroKeyframeInterval => write!(f, "keyframe_interval must be positive"),
            ViolationKind::MissingGlobalGroup => write!(f, "no groups; group 0 must be static"),
            ViolationKind::GlobalGroupNotStatic => write!(f, "group 0 must be static"),
            ViolationKind::ExtraStaticGroup => write!(f, "only group 0 may be static"),
            ViolationKind::NoFrames => write!(f, "num_frames must be positive"),
            ViolationKind::RotationNotOrthonormal => {
                write!(f, "rotation is not orthonormal with determinant +1")
            }
            ViolationKind::EmptyImage => write!(f, "width and height must be positive"),
        }
    }
}

fn is_unit(q: &Quat) -> bool {
    (q.norm() - 1.0).abs() <= UNIT_TOLERANCE
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Lists every broken invariant of `scene`. Empty means valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject, kind| out.push(Violation { subject, kind });

    if scene.num_frames == 0 {
        push(Subject::Scene, ViolationKind::NoFrames);
    }
    match scene.groups.first() {
        None => push(Subject::Scene, ViolationKind::MissingGlobalGroup),
        Some(g) if !g.is_static => push(Subject::Group(0), ViolationKind::GlobalGroupNotStatic),
        Some(_) => {}
    }

    for (gi, g) in scene.groups.iter().enumerate() {
        let subject = Subject::Group(gi);
        if gi > 0 && g.is_static {
            push(subject, ViolationKind::ExtraStaticGroup);
        }
        if g.is_static {
            continue;
        }
        if g.keyframe_interval == 0 {
            push(subject, ViolationKind::ZeroKeyframeInterval);
        }
        let (np, nr) = (g.keyframe_positions.len(), g.keyframe_rotations.len());
        if np != nr {
            push(subject, ViolationKind::KeyframeCountMismatch { positions: np, rotations: nr });
        }
        if np.min(nr) < 2 {
            push(subject, ViolationKind::TooFewKeyframes { count: np.min(nr) });
        }
        if g.keyframe_positions.iter().any(|p| !all_finite(p.as_slice())) {
            push(subject, ViolationKind::NonFinite);
        }
        for (k, q) in g.keyframe_rotations.iter().enumerate() {
            if !is_unit(q) {
                push(subject, ViolationKind::KeyframeRotationNotUnit { keyframe: k, norm: q.norm() });
            }
        }
    }

    for (si, s) in scene.splats.iter().enumerate() {
        let subject = Subject::Splat(si);
        let finite = all_finite(s.position.as_slice())
            && all_finite(s.rotation.coords.as_slice())
            && all_finite(s.scale.as_slice())
            && all_finite(s.color.as_slice())
            && all_finite(s.displacement.as_slice())
            && all_finite(&s.opacity_center)
            && all_finite(&s.opacity_variance)
            && s.opacity.is_finite();
        if !finite {
            push(subject, ViolationKind::NonFinite);
        }
        if !is_unit(&s.rotation) {
            push(subject, ViolationKind::RotationNotUnit { norm: s.rotation.norm() });
        }
        if s.scale.iter().any(|&c| c <= 0.0) {
            push(subject, ViolationKind::ScaleNotPositive);
        }
        if !(0.0..=1.0).contains(&s.opacity) {
            push(subject, ViolationKind::OpacityOutOfRange);
        }
        if s.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            push(subject, ViolationKind::ColorOutOfRange);
        }
        if s.opacity_center[0] > s.opacity_center[1] {
            push(subject, ViolationKind::OpacityCenterOrder);
        }
        if s.opacity_variance.iter().any(|&v| v <= 0.0) {
            push(subject, ViolationKind::OpacityVarianceNotPositive);
        }
        if s.group_id >= scene.groups.len() {
            push(subject, ViolationKind::DanglingGroup { group_id: s.group_id });
        }
    }
    out
}

pub fn validate_camera(camera: &Camera) -> Vec<Violation> {
    let mut out = Vec::new();
    let r = &camera.rotation;
    let orthonormal = (r.transpose() * r - Mat3::identity()).abs().max() <= UNIT_TOLERANCE
        && (r.determinant() - 1.0).abs() <= UNIT_TOLERANCE;
    if !orthonormal {
        out.push(Violation { subject: Subject::Camera, kind: ViolationKind::RotationNotOrthonormal });
    }
    if camera.width == 0 || camera.height == 0 {
        out.push(Violation { subject: Subject::Camera, kind: ViolationKind::EmptyImage });
    }
    let finite = [camera.fx, camera.fy, camera.cx, camera.cy].iter().all(|v| v.is_finite())
        && all_finite(r.as_slice())
        && all_finite(camera.translation.as_slice());
    if !finite {
        out.push(Violation { subject: Subject::Camera, kind: ViolationKind::NonFinite });
    }
    out
}
