//! Density-based clustering with a deterministic visit order.
//!
//! Points are visited in index order and clusters grow breadth-first from
//! the first unvisited core point, so a border point reachable from two
//! clusters joins the one discovered first.

use std::collections::VecDeque;

use super::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices within `eps` of `points[i]` (itself included), ascending.
fn region<const D: usize>(points: &[[f64; D]], i: usize, eps2: f64) -> Vec<usize> {
    (0..points.len()).filter(|&j| dist2(&points[i], &points[j]) <= eps2).collect()
}

/// Euclidean DBSCAN. A point is core when at least `min_pts` points,
/// itself included, lie within distance `eps`.
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Result<Vec<Label>, ClusterError> {
    if !(eps > 0.0) {
        return Err(ClusterError::InvalidParameter("eps must be positive"));
    }
    if min_pts == 0 {
        return Err(ClusterError::InvalidParameter("min_pts must be at least 1"));
    }
    let eps2 = eps * eps;
    let mut labels: Vec<Option<Label>> = vec![None; points.len()];
    let mut next_cluster = 0;
    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        let seeds = region(points, i, eps2);
        if seeds.len() < min_pts {
            labels[i] = Some(Label::Noise);
            continue;
        }
        let cluster = Label::Cluster(next_cluster);
        next_cluster += 1;
        labels[i] = Some(cluster);
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Some(Label::Cluster(_)) => continue,
                // already known to be non-core: becomes a border point
                Some(Label::Noise) => labels[j] = Some(cluster),
                None => {
                    labels[j] = Some(cluster);
                    let nb = region(points, j, eps2);
                    if nb.len() >= min_pts {
                        queue.extend(nb.into_iter().filter(|&k| !matches!(labels[k], Some(Label::Cluster(_)))));
                    }
                }
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect())
}

/// Groups point indices by cluster id, dropping noise.
pub fn group_labels(labels: &[Label]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if let Label::Cluster(c) = *label {
            if c >= groups.len() {
                groups.resize_with(c + 1, Vec::new);
            }
            groups[c].push(i);
        }
    }
    groups
}
