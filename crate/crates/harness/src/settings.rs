//! Threshold settings shared by config files and command-line flags.
//!
//! Every key has a default, so a config may list only what it changes.
//! Command-line flags carry the same names in kebab case and override
//! the config.

use clap::Args;
use groupsplat_core::cluster::ClusterConfig;
use groupsplat_core::correction::CorrectionConfig;
use groupsplat_core::grouping::GroupingConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSettings {
    pub dynamicity_threshold: f64,
    pub abs_error_threshold: f64,
    pub top_fraction: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub color_scale: f64,
    pub fill_threshold: f64,
    pub min_cluster_size: usize,
    pub max_depth: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        let c = ClusterConfig::default();
        Self {
            dynamicity_threshold: c.dynamicity_threshold,
            abs_error_threshold: c.abs_error_threshold,
            top_fraction: c.top_fraction,
            eps: c.eps,
            min_pts: c.min_pts,
            color_scale: c.color_scale,
            fill_threshold: c.fill_threshold,
            min_cluster_size: c.min_cluster_size,
            max_depth: c.max_depth,
        }
    }
}

impl ClusterSettings {
    pub fn to_core(&self) -> Result<ClusterConfig, HarnessError> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(HarnessError::Config("top_fraction must lie in (0, 1]".into()));
        }
        if !(self.eps > 0.0) || self.min_pts == 0 {
            return Err(HarnessError::Config("eps must be positive and min_pts at least 1".into()));
        }
        Ok(ClusterConfig {
            dynamicity_threshold: self.dynamicity_threshold,
            abs_error_threshold: self.abs_error_threshold,
            top_fraction: self.top_fraction,
            eps: self.eps,
            min_pts: self.min_pts,
            color_scale: self.color_scale,
            fill_threshold: self.fill_threshold,
            min_cluster_size: self.min_cluster_size,
            max_depth: self.max_depth,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSettings {
    pub delta_rgb: f64,
    pub kernel_n: usize,
    pub depth_tolerance: f64,
    pub split_scale_divisor: f64,
    pub thin_axis_factor: f64,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        let c = CorrectionConfig::default();
        Self {
            delta_rgb: c.delta_rgb,
            kernel_n: c.kernel_n,
            depth_tolerance: c.depth_tolerance,
            split_scale_divisor: c.split_scale_divisor,
            thin_axis_factor: c.thin_axis_factor,
        }
    }
}

impl CorrectionSettings {
    pub fn to_core(&self, cluster: &ClusterSettings) -> Result<CorrectionConfig, HarnessError> {
        if self.kernel_n.is_multiple_of(2) {
            return Err(HarnessError::Config("kernel_n must be odd".into()));
        }
        if !(self.split_scale_divisor > 0.0) {
            return Err(HarnessError::Config("split_scale_divisor must be positive".into()));
        }
        Ok(CorrectionConfig {
            cluster: cluster.to_core()?,
            delta_rgb: self.delta_rgb,
            kernel_n: self.kernel_n,
            depth_tolerance: self.depth_tolerance,
            split_scale_divisor: self.split_scale_divisor,
            thin_axis_factor: self.thin_axis_factor,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingSettings {
    pub tau_d: f64,
    /// Absent means three times the median displacement norm.
    pub displacement_cutoff: Option<f64>,
    pub opacity_threshold: f64,
    pub min_component_size: usize,
}

impl Default for GroupingSettings {
    fn default() -> Self {
        let g = GroupingConfig::default();
        Self {
            tau_d: g.tau_d,
            displacement_cutoff: g.displacement_cutoff,
            opacity_threshold: g.opacity_threshold,
            min_component_size: g.min_component_size,
        }
    }
}

impl GroupingSettings {
    pub fn to_core(&self) -> Result<GroupingConfig, HarnessError> {
        if !(self.opacity_threshold > 0.0 && self.opacity_threshold < 1.0) {
            return Err(HarnessError::Config("opacity_threshold must lie in (0, 1)".into()));
        }
        Ok(GroupingConfig {
            tau_d: self.tau_d,
            displacement_cutoff: self.displacement_cutoff,
            opacity_threshold: self.opacity_threshold,
            min_component_size: self.min_component_size,
        })
    }
}

/// Flag overrides for [`ClusterSettings`].
#[derive(Debug, Clone, Default, Args)]
pub struct ClusterFlags {
    #[arg(long)]
    pub dynamicity_threshold: Option<f64>,
    #[arg(long)]
    pub abs_error_threshold: Option<f64>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub color_scale: Option<f64>,
    #[arg(long)]
    pub fill_threshold: Option<f64>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

/// Flag overrides for [`CorrectionSettings`].
#[derive(Debug, Clone, Default, Args)]
pub struct CorrectionFlags {
    #[arg(long)]
    pub delta_rgb: Option<f64>,
    #[arg(long)]
    pub kernel_n: Option<usize>,
    #[arg(long)]
    pub depth_tolerance: Option<f64>,
    #[arg(long)]
    pub split_scale_divisor: Option<f64>,
    #[arg(long)]
    pub thin_axis_factor: Option<f64>,
}

/// Flag overrides for [`GroupingSettings`].
#[derive(Debug, Clone, Default, Args)]
pub struct GroupingFlags {
    #[arg(long)]
    pub tau_d: Option<f64>,
    #[arg(long)]
    pub displacement_cutoff: Option<f64>,
    #[arg(long)]
    pub opacity_threshold: Option<f64>,
    #[arg(long)]
    pub min_component_size: Option<usize>,
}

macro_rules! override_fields {
    ($target:expr, $flags:expr, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field { $target.$field = v; })*
    };
}

impl ClusterFlags {
    pub fn apply(&self, s: &mut ClusterSettings) {
        override_fields!(
            s, self, dynamicity_threshold, abs_error_threshold, top_fraction, eps, min_pts, color_scale,
            fill_threshold, min_cluster_size, max_depth
        );
    }
}

impl CorrectionFlags {
    pub fn apply(&self, s: &mut CorrectionSettings) {
        override_fields!(s, self, delta_rgb, kernel_n, depth_tolerance, split_scale_divisor, thin_axis_factor);
    }
}

impl GroupingFlags {
    pub fn apply(&self, s: &mut GroupingSettings) {
        override_fields!(s, self, tau_d, opacity_threshold, min_component_size);
        if let Some(c) = self.displacement_cutoff {
            s.displacement_cutoff = Some(c);
        }
    }
}
