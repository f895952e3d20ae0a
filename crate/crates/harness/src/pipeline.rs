//! End-to-end driver: generate, degrade, regroup, correct, evaluate.

use std::path::Path;
use std::time::Instant;

use groupsplat_core::correction::{correction_pass, select_comparison_view, CorrectionReport, MainView, View};
use groupsplat_core::grouping::{group_split_pass, GroundTruthView};
use groupsplat_core::metrics::{evaluate_sequence, MetricReport};
use groupsplat_core::render::render;
use groupsplat_core::{Camera, RgbImage, Scene};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade, DegradeOp};
use crate::io::{self, ellipses_doc, encode_pfm, encode_ppm, frame_name, write_bytes, write_json, FORMAT_VERSION};
use crate::settings::{ClusterSettings, CorrectionSettings, GroupingSettings};
use crate::synth::{gen_scene, render_all, Motion, SynthSpec};
use crate::HarnessError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionStage {
    /// Number of correction passes; `0` reports the degraded baseline only.
    pub passes: usize,
    /// Main views to cycle through. Defaults to every camera.
    pub views: Option<Vec<usize>>,
    /// Frames to cycle through. Defaults to every frame with two neighbours.
    pub frames: Option<Vec<usize>>,
    pub cluster: ClusterSettings,
    pub thresholds: CorrectionSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    /// Write PPM renders and PFM depth alongside the JSON artifacts.
    pub images: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { images: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthSpec,
    #[serde(default)]
    pub degrade: Vec<DegradeOp>,
    /// Present to run one regrouping pass over every non-empty group.
    #[serde(default)]
    pub group_split: Option<GroupingSettings>,
    #[serde(default)]
    pub correction: CorrectionStage,
    #[serde(default)]
    pub output: OutputSettings,
}

impl PipelineConfig {
    pub fn new(synth: SynthSpec) -> Self {
        Self {
            synth,
            degrade: Vec::new(),
            group_split: None,
            correction: CorrectionStage::default(),
            output: OutputSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        io::parse_json(text).map_err(|e| HarnessError::Config(format!("at `{}`: {}", e.path(), e.inner())))
    }

    /// `(main view, frame)` for every pass.
    pub fn schedule(&self) -> Result<Vec<(usize, usize)>, HarnessError> {
        let s = &self.synth;
        let views = self.correction.views.clone().unwrap_or_else(|| (0..s.n_cameras).collect());
        let frames = self.correction.frames.clone().unwrap_or_else(|| (1..s.n_frames.saturating_sub(1)).collect());
        if let Some(&v) = views.iter().find(|&&v| v >= s.n_cameras) {
            return Err(HarnessError::Config(format!("correction.views: no camera {v}")));
        }
        if let Some(&t) = frames.iter().find(|&&t| t >= s.n_frames) {
            return Err(HarnessError::Config(format!("correction.frames: no frame {t}")));
        }
        let passes = self.correction.passes;
        if passes > 0 && (views.is_empty() || frames.is_empty()) {
            return Err(HarnessError::Config("correction: empty view or frame list".into()));
        }
        Ok((0..passes).map(|p| (views[p % views.len()], frames[(p / views.len()) % frames.len()])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub dssim1: f64,
    pub dssim2: f64,
    pub tpsnr: f64,
}

impl ViewMetrics {
    fn new(view: usize, m: MetricReport) -> Self {
        Self { view, psnr: m.psnr, dssim1: m.dssim1, dssim2: m.dssim2, tpsnr: m.tpsnr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradeSummary {
    pub op: DegradeOp,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewGroup {
    pub group: usize,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub source_group: usize,
    pub timestamp: usize,
    pub new_groups: Vec<NewGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassSummary {
    pub pass: usize,
    pub main_view: usize,
    pub comparison_view: usize,
    pub frame: usize,
    pub error_pixels: usize,
    pub ellipses: usize,
    pub added: usize,
    pub split: usize,
    pub skipped_invalid_depth: usize,
    pub skipped_not_visible_in_comparison: usize,
    pub skipped_out_of_comparison_frame: usize,
    pub splats_before: usize,
    pub splats_after: usize,
    pub l1_before: f64,
    pub l1_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplatCounts {
    pub generated: usize,
    pub degraded: usize,
    pub regrouped_groups: usize,
    #[serde(rename = "final")]
    pub final_count: usize,
}

/// Everything in `report.json`. Wall-clock times live in [`Timings`] so
/// that the report is byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub version: u32,
    pub seed: u64,
    pub motion: Motion,
    pub splats: SplatCounts,
    pub degrade: Vec<DegradeSummary>,
    pub group_split: Vec<SplitSummary>,
    pub passes: Vec<PassSummary>,
    pub baseline: Vec<ViewMetrics>,
    /// Absent when no stage after degradation ran.
    #[serde(rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<Vec<ViewMetrics>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub stages: Vec<StageTime>,
}

impl Timings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T, HarnessError>) -> Result<T, HarnessError> {
        let start = Instant::now();
        let out = f()?;
        self.stages.push(StageTime { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub report: PipelineReport,
    pub timings: Timings,
    pub cameras: Vec<Camera>,
    pub gt_scene: Scene,
    pub gt: Vec<Vec<RgbImage>>,
    pub degraded_scene: Scene,
    pub final_scene: Scene,
    pub baseline_renders: Vec<Vec<RgbImage>>,
    pub final_renders: Option<Vec<Vec<RgbImage>>>,
    pub pass_reports: Vec<CorrectionReport>,
}

/// Per-view metrics of `renders[view][frame]` against `gt[view][frame]`.
pub fn evaluate_views(renders: &[Vec<RgbImage>], gt: &[Vec<RgbImage>]) -> Result<Vec<ViewMetrics>, HarnessError> {
    renders
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(v, (r, g))| Ok(ViewMetrics::new(v, evaluate_sequence(r, g)?)))
        .collect()
}

/// Generator for the degradation stream: the synthesis stream advanced by
/// one jump, so the two never overlap.
pub fn degrade_rng(seed: u64) -> Xoshiro256StarStar {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    rng.jump();
    rng
}

/// Runs one regrouping pass over every non-empty group present at start.
pub fn regroup(
    scene: &mut Scene,
    cameras: &[Camera],
    gt: &[Vec<RgbImage>],
    settings: &GroupingSettings,
) -> Result<Vec<SplitSummary>, HarnessError> {
    let cfg = settings.to_core()?;
    let views: Vec<GroundTruthView<'_>> =
        cameras.iter().zip(gt).map(|(camera, frames)| GroundTruthView { camera, frames }).collect();
    let mut out = Vec::new();
    for gid in 0..scene.groups.len() {
        if scene.members(gid).next().is_none() {
            continue;
        }
        let outcome = group_split_pass(scene, gid, &views, &cfg)?;
        out.push(SplitSummary {
            source_group: outcome.source_group,
            timestamp: outcome.timestamp,
            new_groups: outcome
                .new_groups
                .iter()
                .map(|(group, members)| NewGroup { group: *group, members: members.len() })
                .collect(),
        });
    }
    Ok(out)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, HarnessError> {
    let schedule = config.schedule()?;
    let correction_cfg = config.correction.thresholds.to_core(&config.correction.cluster)?;
    let mut timings = Timings::default();

    let synth = timings.time("synth", || gen_scene(&config.synth))?;
    let generated = synth.scene.splats.len();

    let mut rng = degrade_rng(config.synth.seed);
    let mut scene = synth.scene.clone();
    let mut degrade_summary = Vec::with_capacity(config.degrade.len());
    timings.time("degrade", || {
        for op in &config.degrade {
            let d = degrade(&scene, op, &mut rng)?;
            degrade_summary.push(DegradeSummary { op: op.clone(), removed: d.removed.len() });
            scene = d.scene;
        }
        Ok(())
    })?;
    let degraded_scene = scene.clone();

    let baseline_renders = timings.time("render_baseline", || render_all(&scene, &synth.cameras))?;
    let baseline = timings.time("metrics_baseline", || evaluate_views(&baseline_renders, &synth.gt))?;

    let mut group_split = Vec::new();
    if let Some(settings) = &config.group_split {
        group_split = timings.time("group_split", || regroup(&mut scene, &synth.cameras, &synth.gt, settings))?;
    }
    let regrouped_groups = group_split.iter().map(|s| s.new_groups.len()).sum();

    let mut passes = Vec::with_capacity(schedule.len());
    let mut pass_reports = Vec::with_capacity(schedule.len());
    timings.time("correction", || {
        for (p, &(main_view, frame)) in schedule.iter().enumerate() {
            let comparison_view = select_comparison_view(&synth.cameras, main_view)
                .ok_or_else(|| HarnessError::Config("correction needs at least two cameras".into()))?;
            let frames = &synth.gt[main_view];
            let main = MainView {
                camera: &synth.cameras[main_view],
                gt_prev: frame.checked_sub(1).map(|t| &frames[t]),
                gt: &frames[frame],
                gt_next: frames.get(frame + 1),
            };
            let comp = View { camera: &synth.cameras[comparison_view], gt: &synth.gt[comparison_view][frame] };
            let splats_before = scene.splats.len();
            let r = correction_pass(&mut scene, &main, &comp, frame, &correction_cfg)?;
            passes.push(PassSummary {
                pass: p,
                main_view,
                comparison_view,
                frame,
                error_pixels: r.error_pixels,
                ellipses: r.outcomes.len(),
                added: r.added,
                split: r.split,
                skipped_invalid_depth: r.skipped.invalid_depth,
                skipped_not_visible_in_comparison: r.skipped.not_visible_in_comparison,
                skipped_out_of_comparison_frame: r.skipped.out_of_comparison_frame,
                splats_before,
                splats_after: scene.splats.len(),
                l1_before: r.l1_before,
                l1_after: r.l1_after,
            });
            pass_reports.push(r);
        }
        Ok(())
    })?;

    let changed = config.group_split.is_some() || !schedule.is_empty();
    let (final_renders, final_metrics) = if changed {
        let renders = timings.time("render_final", || render_all(&scene, &synth.cameras))?;
        let metrics = timings.time("metrics_final", || evaluate_views(&renders, &synth.gt))?;
        (Some(renders), Some(metrics))
    } else {
        (None, None)
    };

    let report = PipelineReport {
        version: FORMAT_VERSION,
        seed: config.synth.seed,
        motion: config.synth.motion,
        splats: SplatCounts {
            generated,
            degraded: degraded_scene.splats.len(),
            regrouped_groups,
            final_count: scene.splats.len(),
        },
        degrade: degrade_summary,
        group_split,
        passes,
        baseline,
        final_metrics,
    };
    Ok(PipelineRun {
        config: config.clone(),
        report,
        timings,
        cameras: synth.cameras,
        gt_scene: synth.scene,
        gt: synth.gt,
        degraded_scene,
        final_scene: scene,
        baseline_renders,
        final_renders,
        pass_reports,
    })
}

fn write_images(dir: &Path, images: &[Vec<RgbImage>]) -> Result<(), HarnessError> {
    for (v, frames) in images.iter().enumerate() {
        for (t, img) in frames.iter().enumerate() {
            write_bytes(&dir.join(format!("{}.ppm", frame_name(v, t))), &encode_ppm(img))?;
        }
    }
    Ok(())
}

/// Writes every artifact of `run` under `dir`.
///
/// `report.json` and everything else except `timings.json` depend only on
/// the config.
pub fn write_artifacts(run: &PipelineRun, dir: &Path) -> Result<(), HarnessError> {
    write_json(&dir.join("config.json"), &run.config)?;
    write_json(&dir.join("report.json"), &run.report)?;
    write_json(&dir.join("timings.json"), &run.timings)?;
    io::write_cameras(&dir.join("cameras.json"), &run.cameras)?;
    io::write_scene(&dir.join("scene_gt.json"), &run.gt_scene)?;
    io::write_scene(&dir.join("scene_degraded.json"), &run.degraded_scene)?;
    io::write_scene(&dir.join("scene_final.json"), &run.final_scene)?;
    for (p, r) in run.pass_reports.iter().enumerate() {
        let ellipses: Vec<_> = r.outcomes.iter().map(|o| o.ellipse.clone()).collect();
        write_json(&dir.join("ellipses").join(format!("pass{p:03}.json")), &ellipses_doc(&ellipses))?;
    }
    if run.config.output.images {
        write_images(&dir.join("gt"), &run.gt)?;
        write_images(&dir.join("before"), &run.baseline_renders)?;
        if let Some(after) = &run.final_renders {
            write_images(&dir.join("after"), after)?;
        }
        for (v, camera) in run.cameras.iter().enumerate() {
            for t in 0..run.final_scene.num_frames {
                let out = render(&run.final_scene, camera, t as f64)?;
                write_bytes(
                    &dir.join("depth").join(format!("{}.pfm", frame_name(v, t))),
                    &encode_pfm(&io::depth_plane(&out.depth)),
                )?;
            }
        }
    }
    Ok(())
}
