//! Graph-based dynamic grouping.
//!
//! Inside one group, splats whose displacement is large are linked when
//! their effective footprints overlap and their displacement directions
//! agree. Each connected component can then be split off into a new
//! keyframed group whose trajectory absorbs the shared motion.

use thiserror::Error;

use crate::image::RgbImage;
use crate::render::{render, RenderError};
use crate::temporal::{effective_opacity, splat_world_pose, TemporalError};
use crate::types::{Camera, Group, Scene, Splat, Vec3, DEFAULT_KEYFRAME_INTERVAL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("opacity threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("group {0} does not exist")]
    UnknownGroup(usize),
    #[error("component is empty")]
    EmptyComponent,
    #[error("splat {splat} is not a member of group {group}")]
    NotInGroup { splat: usize, group: usize },
    #[error("no views given for split timestamp selection")]
    NoViews,
    #[error("view {view} has {got} ground-truth frames, scene has {expected}")]
    FrameCountMismatch { view: usize, got: usize, expected: usize },
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingConfig {
    /// Minimum cosine similarity between displacement directions.
    pub tau_d: f64,
    /// Minimum `‖d‖` for a splat to enter the graph. `None` means three
    /// times the group's median displacement norm.
    pub displacement_cutoff: Option<f64>,
    /// Opacity level defining a splat's effective size.
    pub opacity_threshold: f64,
    /// Components smaller than this are left in place.
    pub min_component_size: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { tau_d: 0.9, displacement_cutoff: None, opacity_threshold: 0.05, min_component_size: 2 }
    }
}

/// Undirected graph over splat indices. Edges are stored once as `(i, j)`
/// with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisplacementGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl DisplacementGraph {
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }
}

/// Distance along the major axis at which the splat's opacity at `t`
/// drops to `opacity_threshold`.
pub fn effective_size(splat: &Splat, t: f64, opacity_threshold: f64) -> Result<f64, GroupingError> {
    if !(opacity_threshold > 0.0 && opacity_threshold < 1.0) {
        return Err(GroupingError::InvalidThreshold(opacity_threshold));
    }
    let o = effective_opacity(splat, t);
    if o <= opacity_threshold {
        return Ok(0.0);
    }
    Ok(splat.max_scale() * (2.0 * (o / opacity_threshold).ln()).sqrt())
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Three times the median displacement norm over the group's members.
pub fn default_displacement_cutoff(scene: &Scene, group_id: usize) -> f64 {
    3.0 * median(scene.members(group_id).map(|i| scene.splats[i].displacement.norm()).collect())
}

pub fn build_displacement_graph(
    scene: &Scene,
    group_id: usize,
    t: f64,
    config: &GroupingConfig,
) -> Result<DisplacementGraph, GroupingError> {
    let group = scene.groups.get(group_id).ok_or(GroupingError::UnknownGroup(group_id))?;
    let cutoff = config
        .displacement_cutoff
        .unwrap_or_else(|| default_displacement_cutoff(scene, group_id));

    struct Node {
        index: usize,
        position: Vec3,
        size: f64,
        direction: Vec3,
    }
    let mut nodes = Vec::new();
    for i in scene.members(group_id) {
        let s = &scene.splats[i];
        let norm = s.displacement.norm();
        // a zero vector has no direction to compare
        if norm < cutoff || norm == 0.0 {
            continue;
        }
        nodes.push(Node {
            index: i,
            position: splat_world_pose(s, group, t)?.position,
            size: effective_size(s, t, config.opacity_threshold)?,
            direction: s.displacement / norm,
        });
    }

    let mut edges = Vec::new();
    for (a, na) in nodes.iter().enumerate() {
        for nb in &nodes[a + 1..] {
            let close = (na.position - nb.position).norm() < na.size + nb.size;
            if close && na.direction.dot(&nb.direction) >= config.tau_d {
                edges.push((na.index, nb.index));
            }
        }
    }
    edges.sort_unstable();
    Ok(DisplacementGraph { nodes: nodes.iter().map(|n| n.index).collect(), edges })
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Maximal connected node sets, each sorted, ordered by smallest member.
pub fn connected_components(graph: &DisplacementGraph) -> Vec<Vec<usize>> {
    let mut nodes = graph.nodes.clone();
    nodes.sort_unstable();
    nodes.dedup();
    let slot = |n: usize| nodes.binary_search(&n).expect("edge endpoint is not a node");
    let mut uf = UnionFind::new(nodes.len());
    for &(a, b) in &graph.edges {
        uf.union(slot(a), slot(b));
    }
    let mut by_root: Vec<Option<usize>> = vec![None; nodes.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for (k, &n) in nodes.iter().enumerate() {
        let root = uf.find(k);
        match by_root[root] {
            Some(c) => components[c].push(n),
            None => {
                by_root[root] = Some(components.len());
                components.push(vec![n]);
            }
        }
    }
    components
}

/// One camera with its ground-truth image for every frame.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthView<'a> {
    pub camera: &'a Camera,
    pub frames: &'a [RgbImage],
}

/// Frame with the largest mean L1 error averaged over the views. Ties go
/// to the earlier frame.
pub fn select_split_timestamp(scene: &Scene, views: &[GroundTruthView<'_>]) -> Result<usize, GroupingError> {
    if views.is_empty() {
        return Err(GroupingError::NoViews);
    }
    for (v, view) in views.iter().enumerate() {
        if view.frames.len() != scene.num_frames {
            return Err(GroupingError::FrameCountMismatch {
                view: v,
                got: view.frames.len(),
                expected: scene.num_frames,
            });
        }
    }
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..scene.num_frames {
        let mut loss = 0.0;
        for view in views {
            let out = render(scene, view.camera, t as f64)?;
            loss += out.rgb.mean_abs_diff(&view.frames[t]);
        }
        loss /= views.len() as f64;
        if loss > best.1 {
            best = (t, loss);
        }
    }
    Ok(best.0)
}

/// Moves `component` out of `group_id` into a new keyframed group and
/// returns the new group's id.
///
/// The member with the largest displacement (lowest index on ties) becomes
/// the reference: the new group's keyframes are its world poses, every
/// member is re-expressed relative to it and loses the reference's
/// displacement. World poses at keyframe times are unchanged.
pub fn split_group(scene: &mut Scene, group_id: usize, component: &[usize]) -> Result<usize, GroupingError> {
    let source = scene.groups.get(group_id).ok_or(GroupingError::UnknownGroup(group_id))?.clone();
    if component.is_empty() {
        return Err(GroupingError::EmptyComponent);
    }
    for &i in component {
        if scene.splats.get(i).map(|s| s.group_id) != Some(group_id) {
            return Err(GroupingError::NotInGroup { splat: i, group: group_id });
        }
    }

    let mut rep = component[0];
    for &i in component {
        let (di, dr) = (scene.splats[i].displacement.norm(), scene.splats[rep].displacement.norm());
        if di > dr || (di == dr && i < rep) {
            rep = i;
        }
    }
    let reference = scene.splats[rep].clone();

    let interval = if source.is_static { DEFAULT_KEYFRAME_INTERVAL } else { source.keyframe_interval };
    let span = scene.last_frame();
    let keyframes = ((span / f64::from(interval)).ceil() as usize + 1).max(2);
    let mut positions = Vec::with_capacity(keyframes);
    let mut rotations = Vec::with_capacity(keyframes);
    for k in 0..keyframes {
        let t = (k as u64 * u64::from(interval)) as f64;
        let pose = splat_world_pose(&reference, &source, t)?;
        positions.push(pose.position);
        rotations.push(pose.rotation.normalize());
    }
    let new_id = scene.groups.len();
    scene.groups.push(Group::keyframed(positions, rotations, interval));

    let rep_rot = nalgebra::UnitQuaternion::new_normalize(reference.rotation);
    let full_span = [0.0, span];
    let fade = f64::from(interval);
    for &i in component {
        let s = &mut scene.splats[i];
        s.position = rep_rot.inverse_transform_vector(&(s.position - reference.position));
        s.rotation = rep_rot.inverse().quaternion() * s.rotation;
        s.displacement -= reference.displacement;
        s.group_id = new_id;
        if !s.is_dynamic {
            s.is_dynamic = true;
            s.opacity_center = full_span;
            s.opacity_variance = [fade, fade];
        }
    }
    Ok(new_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub timestamp: usize,
    pub source_group: usize,
    /// `(new group id, member splats)` per split component.
    pub new_groups: Vec<(usize, Vec<usize>)>,
}

/// One grouping pass over `group_id`: pick the worst frame, build the
/// graph there and split every large enough component.
pub fn group_split_pass(
    scene: &mut Scene,
    group_id: usize,
    views: &[GroundTruthView<'_>],
    config: &GroupingConfig,
) -> Result<SplitOutcome, GroupingError> {
    let timestamp = select_split_timestamp(scene, views)?;
    let graph = build_displacement_graph(scene, group_id, timestamp as f64, config)?;
    let mut new_groups = Vec::new();
    for component in connected_components(&graph) {
        if component.len() < config.min_component_size.max(1) {
            continue;
        }
        let id = split_group(scene, group_id, &component)?;
        new_groups.push((id, component));
    }
    Ok(SplitOutcome { timestamp, source_group: group_id, new_groups })
}
