//! On-disk formats.
//!
//! JSON documents carry a `version` field. Floats are written by
//! `serde_json` in shortest round-trip form, so parsing a written file
//! recovers every finite value bit for bit. Quaternions are `[w, x, y, z]`.
//!
//! RGB images are binary PPM (`P6`, 8-bit): each linear channel value in
//! `[0, 1]` maps to `round(255 * v)` with no gamma curve. Float planes
//! (depth) are little-endian PFM (`Pf`, scale `-1`), rows stored bottom to
//! top as the format requires. Invalid depth is written as `0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use groupsplat_core::cluster::ErrorEllipse;
use groupsplat_core::{Camera, Group, Image, Mat3, Quat, RgbImage, Scene, Splat, Vec3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub keyframe_positions: Vec<[f64; 3]>,
    pub keyframe_rotations: Vec<[f64; 4]>,
    pub keyframe_interval: u32,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplatDoc {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub displacement: [f64; 3],
    pub opacity_center: [f64; 2],
    pub opacity_variance: [f64; 2],
    pub group_id: usize,
    pub is_dynamic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    pub version: u32,
    pub num_frames: usize,
    pub groups: Vec<GroupDoc>,
    pub splats: Vec<SplatDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// `[R | t]` row-major.
    pub world_to_camera: [f64; 12],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseDoc {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle: f64,
    pub representative_color: [f64; 3],
    pub member_count: usize,
}

fn v3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn q4(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn to_v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn to_q(a: [f64; 4]) -> Quat {
    Quat::new(a[0], a[1], a[2], a[3])
}

impl From<&Scene> for SceneDoc {
    fn from(scene: &Scene) -> Self {
        SceneDoc {
            version: FORMAT_VERSION,
            num_frames: scene.num_frames,
            groups: scene
                .groups
                .iter()
                .map(|g| GroupDoc {
                    keyframe_positions: g.keyframe_positions.iter().map(v3).collect(),
                    keyframe_rotations: g.keyframe_rotations.iter().map(q4).collect(),
                    keyframe_interval: g.keyframe_interval,
                    is_static: g.is_static,
                })
                .collect(),
            splats: scene
                .splats
                .iter()
                .map(|s| SplatDoc {
                    position: v3(&s.position),
                    rotation: q4(&s.rotation),
                    scale: v3(&s.scale),
                    opacity: s.opacity,
                    color: v3(&s.color),
                    displacement: v3(&s.displacement),
                    opacity_center: s.opacity_center,
                    opacity_variance: s.opacity_variance,
                    group_id: s.group_id,
                    is_dynamic: s.is_dynamic,
                })
                .collect(),
        }
    }
}

impl SceneDoc {
    /// Converts to a scene and checks its invariants.
    pub fn into_scene(self) -> Result<Scene, HarnessError> {
        if self.version != FORMAT_VERSION {
            return Err(HarnessError::Data(format!("unsupported scene version {}", self.version)));
        }
        let scene = Scene {
            num_frames: self.num_frames,
            groups: self
                .groups
                .into_iter()
                .map(|g| Group {
                    keyframe_positions: g.keyframe_positions.into_iter().map(to_v3).collect(),
                    keyframe_rotations: g.keyframe_rotations.into_iter().map(to_q).collect(),
                    keyframe_interval: g.keyframe_interval,
                    is_static: g.is_static,
                })
                .collect(),
            splats: self
                .splats
                .into_iter()
                .map(|s| Splat {
                    position: to_v3(s.position),
                    rotation: to_q(s.rotation),
                    scale: to_v3(s.scale),
                    opacity: s.opacity,
                    color: to_v3(s.color),
                    displacement: to_v3(s.displacement),
                    opacity_center: s.opacity_center,
                    opacity_variance: s.opacity_variance,
                    group_id: s.group_id,
                    is_dynamic: s.is_dynamic,
                })
                .collect(),
        };
        let violations = groupsplat_core::types::validate_scene(&scene);
        if let Some(v) = violations.first() {
            return Err(HarnessError::Data(format!("invalid scene: {v} ({} violation(s))", violations.len())));
        }
        Ok(scene)
    }
}

impl From<&Camera> for CameraDoc {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        let t = &c.translation;
        CameraDoc {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            ],
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraDoc {
    pub fn into_camera(self) -> Result<Camera, HarnessError> {
        let m = self.world_to_camera;
        let camera = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vec3::new(m[3], m[7], m[11]),
            width: self.width,
            height: self.height,
        };
        let violations = groupsplat_core::types::validate_camera(&camera);
        if let Some(v) = violations.first() {
            return Err(HarnessError::Data(format!("invalid camera: {v}")));
        }
        Ok(camera)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasDoc {
    pub version: u32,
    pub cameras: Vec<CameraDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsesDoc {
    pub version: u32,
    pub ellipses: Vec<EllipseDoc>,
}

impl From<&ErrorEllipse> for EllipseDoc {
    fn from(e: &ErrorEllipse) -> Self {
        EllipseDoc {
            center: [e.center.x, e.center.y],
            semi_axes: [e.semi_axes.x, e.semi_axes.y],
            angle: e.angle,
            representative_color: e.representative_color,
            member_count: e.members.len(),
        }
    }
}

pub fn ellipses_doc(ellipses: &[ErrorEllipse]) -> EllipsesDoc {
    EllipsesDoc { version: FORMAT_VERSION, ellipses: ellipses.iter().map(EllipseDoc::from).collect() }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, HarnessError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    write_bytes(path, to_json(value)?.as_bytes())
}

/// Parses JSON, reporting the path to the offending key on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, serde_path_to_error::Error<serde_json::Error>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
}

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
}

fn data_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    parse_json(&read_text(path)?)
        .map_err(|e| HarnessError::Data(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))
}

pub fn scene_to_json(scene: &Scene) -> Result<String, HarnessError> {
    to_json(&SceneDoc::from(scene))
}

pub fn scene_from_json(text: &str) -> Result<Scene, HarnessError> {
    parse_json::<SceneDoc>(text)
        .map_err(|e| HarnessError::Data(format!("scene: at `{}`: {}", e.path(), e.inner())))?
        .into_scene()
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), HarnessError> {
    write_json(path, &SceneDoc::from(scene))
}

pub fn read_scene(path: &Path) -> Result<Scene, HarnessError> {
    data_json::<SceneDoc>(path)?.into_scene()
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<(), HarnessError> {
    write_json(path, &CamerasDoc { version: FORMAT_VERSION, cameras: cameras.iter().map(CameraDoc::from).collect() })
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>, HarnessError> {
    let doc: CamerasDoc = data_json(path)?;
    if doc.version != FORMAT_VERSION {
        return Err(HarnessError::Data(format!("unsupported cameras version {}", doc.version)));
    }
    doc.cameras.into_iter().map(CameraDoc::into_camera).collect()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.len() * 3);
    for p in &img.data {
        out.extend(p.iter().map(|&c| quantize(c)));
    }
    out
}

/// Splits off `count` whitespace-separated header tokens; returns them and
/// the remaining bytes after the single whitespace byte that ends the header.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, &[u8]), HarnessError> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(HarnessError::Data("truncated image header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, bytes.get(i + 1..).unwrap_or(&[])))
}

fn parse_dim(s: &str) -> Result<usize, HarnessError> {
    s.parse().map_err(|_| HarnessError::Data(format!("bad image dimension `{s}`")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, HarnessError> {
    let (tok, body) = header_tokens(bytes, 4)?;
    if tok[0] != "P6" || tok[3] != "255" {
        return Err(HarnessError::Data("expected an 8-bit P6 image".into()));
    }
    let (w, h) = (parse_dim(&tok[1])?, parse_dim(&tok[2])?);
    if body.len() < w * h * 3 {
        return Err(HarnessError::Data("truncated PPM body".into()));
    }
    let data = body[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [f64::from(c[0]) / 255.0, f64::from(c[1]) / 255.0, f64::from(c[2]) / 255.0])
        .collect();
    Ok(Image::from_vec(w, h, data))
}

pub fn encode_pfm(img: &Image<f32>) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.len() * 4);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            out.extend_from_slice(&img.get(x, y).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image<f32>, HarnessError> {
    let (tok, body) = header_tokens(bytes, 4)?;
    if tok[0] != "Pf" {
        return Err(HarnessError::Data("expected a single-channel PFM".into()));
    }
    let scale: f64 = tok[3].parse().map_err(|_| HarnessError::Data("bad PFM scale".into()))?;
    if scale >= 0.0 {
        return Err(HarnessError::Data("only little-endian PFM is supported".into()));
    }
    let (w, h) = (parse_dim(&tok[1])?, parse_dim(&tok[2])?);
    if body.len() < w * h * 4 {
        return Err(HarnessError::Data("truncated PFM body".into()));
    }
    let mut img = Image::filled(w, h, 0.0f32);
    for (k, chunk) in body[..w * h * 4].chunks_exact(4).enumerate() {
        let (x, row) = (k % w, k / w);
        *img.get_mut(x, h - 1 - row) = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok(img)
}

pub fn depth_plane(depth: &Image<Option<f64>>) -> Image<f32> {
    Image::from_vec(depth.width, depth.height, depth.data.iter().map(|d| d.unwrap_or(0.0) as f32).collect())
}

pub fn frame_name(view: usize, frame: usize) -> String {
    format!("view{view}_frame{frame}")
}
