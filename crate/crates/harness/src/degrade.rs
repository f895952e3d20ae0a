//! Scene degradations that plant known reconstruction failures.

use groupsplat_core::temporal::splat_world_pose;
use groupsplat_core::{Scene, Vec3};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DegradeOp {
    /// Deletes `ceil(fraction * N)` splats drawn without replacement.
    RemoveFraction { fraction: f64 },
    /// Deletes splats whose world center at frame 0 lies in the box.
    RemoveRegion { min: [f64; 3], max: [f64; 3] },
    /// Multiplies one splat's scale.
    InflateOccluder { index: usize, factor: f64 },
    /// Adds isotropic Gaussian noise to every displacement.
    PerturbDisplacement { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub scene: Scene,
    /// Original indices of deleted splats, ascending.
    pub removed: Vec<usize>,
}

fn remove(scene: &Scene, mut removed: Vec<usize>) -> Degraded {
    removed.sort_unstable();
    let mut out = scene.clone();
    let mut k = 0;
    out.splats = scene
        .splats
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            if k < removed.len() && removed[k] == i {
                k += 1;
                false
            } else {
                true
            }
        })
        .map(|(_, s)| s.clone())
        .collect();
    Degraded { scene: out, removed }
}

pub fn degrade(scene: &Scene, op: &DegradeOp, rng: &mut Xoshiro256StarStar) -> Result<Degraded, HarnessError> {
    let n = scene.splats.len();
    match *op {
        DegradeOp::RemoveFraction { fraction } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(HarnessError::Config(format!("fraction {fraction} outside [0, 1]")));
            }
            let count = ((fraction * n as f64).ceil() as usize).min(n);
            Ok(remove(scene, sample(rng, n, count).into_vec()))
        }
        DegradeOp::RemoveRegion { min, max } => {
            let (lo, hi) = (Vec3::from(min), Vec3::from(max));
            let mut removed = Vec::new();
            for (i, s) in scene.splats.iter().enumerate() {
                let group = scene
                    .groups
                    .get(s.group_id)
                    .ok_or_else(|| HarnessError::Data(format!("splat {i} has no group {}", s.group_id)))?;
                let p = splat_world_pose(s, group, 0.0).map_err(|e| HarnessError::Data(e.to_string()))?.position;
                if (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]) {
                    removed.push(i);
                }
            }
            Ok(remove(scene, removed))
        }
        DegradeOp::InflateOccluder { index, factor } => {
            if index >= n {
                return Err(HarnessError::Data(format!("splat index {index} out of range (scene has {n})")));
            }
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(HarnessError::Config(format!("inflation factor {factor} must be positive")));
            }
            let mut out = scene.clone();
            out.splats[index].scale *= factor;
            Ok(Degraded { scene: out, removed: Vec::new() })
        }
        DegradeOp::PerturbDisplacement { sigma } => {
            let normal = Normal::new(0.0, sigma)
                .map_err(|_| HarnessError::Config(format!("noise sigma {sigma} must be non-negative")))?;
            let mut out = scene.clone();
            for s in &mut out.splats {
                s.displacement += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            }
            Ok(Degraded { scene: out, removed: Vec::new() })
        }
    }
}
