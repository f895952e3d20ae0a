//! Command-line interface.
//!
//! Exit codes: `0` success, `2` bad configuration or arguments, `3` bad or
//! inconsistent data.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use groupsplat_core::cluster::{cluster_errors, compute_dynamicity, select_error_pixels};
use groupsplat_core::correction::{correction_pass, select_comparison_view, Action, MainView, View};
use groupsplat_core::render::render;
use groupsplat_core::{Camera, RgbImage, Scene};
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade, DegradeOp};
use crate::io::{self, encode_pfm, encode_ppm, frame_name, write_bytes, write_json};
use crate::pipeline::{degrade_rng, evaluate_views, regroup, run_pipeline, write_artifacts, PipelineConfig};
use crate::settings::{
    ClusterFlags, ClusterSettings, CorrectionFlags, CorrectionSettings, GroupingFlags, GroupingSettings,
};
use crate::synth::{gen_scene, render_all, Motion, SynthSpec};
use crate::HarnessError;

#[derive(Debug, Parser)]
#[command(name = "groupsplat", version, about = "Dynamic Gaussian splat correction on synthetic scenes")]
pub struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene, its cameras and ground-truth renders.
    Synth(SynthArgs),
    /// Apply degradation operators to a scene.
    Degrade(DegradeArgs),
    /// Render a scene to PPM color and PFM depth.
    Render(RenderArgs),
    /// Cluster the error pixels of one view and frame into ellipses.
    Cluster(ClusterArgs),
    /// Run correction passes on one main view.
    Correct(CorrectArgs),
    /// Run one regrouping pass over every non-empty group.
    GroupSplit(GroupSplitArgs),
    /// Evaluate PSNR, DSSIM and tPSNR per view.
    Metrics(MetricsArgs),
    /// Run the full pipeline from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthesis spec; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_splats: Option<usize>,
    #[arg(long, value_parser = parse_motion)]
    pub motion: Option<Motion>,
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub n_cameras: Option<usize>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub floaters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// JSON list of operators.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One operator as JSON, e.g. `{"op":"remove-fraction","fraction":0.05}`. Repeatable.
    #[arg(long = "op")]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output scene file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SceneInputs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub inputs: SceneInputs,
    /// Frame to render; all frames when absent.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Threshold file shared by `cluster`, `correct` and `group-split`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdsDoc {
    pub cluster: ClusterSettings,
    pub correction: CorrectionSettings,
    pub grouping: GroupingSettings,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub inputs: SceneInputs,
    /// Undegraded scene rendered as ground truth.
    #[arg(long)]
    pub gt_scene: PathBuf,
    #[arg(long)]
    pub view: usize,
    #[arg(long)]
    pub frame: usize,
    /// JSON thresholds file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ClusterFlags,
    /// Output ellipse file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub inputs: SceneInputs,
    #[arg(long)]
    pub gt_scene: PathBuf,
    #[arg(long)]
    pub view: usize,
    /// Comparison view; the most parallel camera when absent.
    #[arg(long)]
    pub comp_view: Option<usize>,
    #[arg(long)]
    pub frame: usize,
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[command(flatten)]
    pub correction: CorrectionFlags,
    /// Output scene file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON summary of each pass.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroupSplitArgs {
    #[command(flatten)]
    pub inputs: SceneInputs,
    #[arg(long)]
    pub gt_scene: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: GroupingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub inputs: SceneInputs,
    #[arg(long)]
    pub gt_scene: PathBuf,
    /// Optional JSON output; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory; nothing is written when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[command(flatten)]
    pub correction: CorrectionFlags,
}

fn parse_motion(s: &str) -> Result<Motion, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| "expected static, rigid-translation, rigid-rotation or two-group".to_string())
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    io::parse_json(&text).map_err(|e| HarnessError::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))
}

fn thresholds(path: &Option<PathBuf>) -> Result<ThresholdsDoc, HarnessError> {
    path.as_deref().map_or_else(|| Ok(ThresholdsDoc::default()), read_config)
}

fn load_inputs(inputs: &SceneInputs) -> Result<(Scene, Vec<Camera>), HarnessError> {
    Ok((io::read_scene(&inputs.scene)?, io::read_cameras(&inputs.cameras)?))
}

fn check_view(cameras: &[Camera], view: usize) -> Result<(), HarnessError> {
    if view < cameras.len() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("view {view} out of range ({} cameras)", cameras.len())))
    }
}

fn check_frame(scene: &Scene, frame: usize) -> Result<(), HarnessError> {
    if frame < scene.num_frames {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("frame {frame} out of range ({} frames)", scene.num_frames)))
    }
}

/// Ground truth for one view at `t - 1`, `t` and `t + 1`.
fn gt_window(gt_scene: &Scene, camera: &Camera, t: usize) -> Result<[Option<RgbImage>; 3], HarnessError> {
    let frame = |f: usize| -> Result<RgbImage, HarnessError> { Ok(render(gt_scene, camera, f as f64)?.rgb) };
    Ok([
        t.checked_sub(1).map(frame).transpose()?,
        Some(frame(t)?),
        if t + 1 < gt_scene.num_frames { Some(frame(t + 1)?) } else { None },
    ])
}

fn check_gt(scene: &Scene, gt_scene: &Scene) -> Result<(), HarnessError> {
    if scene.num_frames == gt_scene.num_frames {
        Ok(())
    } else {
        Err(HarnessError::Data(format!(
            "scene has {} frames but ground truth has {}",
            scene.num_frames, gt_scene.num_frames
        )))
    }
}

fn synth(args: &SynthArgs) -> Result<(), HarnessError> {
    let mut spec: SynthSpec = match &args.config {
        Some(p) => read_config(p)?,
        None => SynthSpec::new(0, 500, Motion::Static),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { spec.$f = v; })* };
    }
    set!(seed, n_splats, motion, extent, n_cameras, n_frames, width, height, floaters);
    let s = gen_scene(&spec)?;
    io::write_scene(&args.out.join("scene.json"), &s.scene)?;
    io::write_cameras(&args.out.join("cameras.json"), &s.cameras)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    for (v, frames) in s.gt.iter().enumerate() {
        for (t, img) in frames.iter().enumerate() {
            write_bytes(&args.out.join("gt").join(format!("{}.ppm", frame_name(v, t))), &encode_ppm(img))?;
        }
    }
    println!("synth: {} splats, {} cameras, {} frames", s.scene.splats.len(), s.cameras.len(), spec.n_frames);
    Ok(())
}

fn degrade_cmd(args: &DegradeArgs) -> Result<(), HarnessError> {
    let mut ops: Vec<DegradeOp> = match &args.config {
        Some(p) => read_config(p)?,
        None => Vec::new(),
    };
    for text in &args.ops {
        ops.push(io::parse_json(text).map_err(|e| HarnessError::Config(format!("--op: {}", e.inner())))?);
    }
    let mut scene = io::read_scene(&args.scene)?;
    let mut rng = degrade_rng(args.seed);
    for op in &ops {
        let d = degrade(&scene, op, &mut rng)?;
        println!("{}: removed {}", serde_json::to_string(op).unwrap_or_default(), d.removed.len());
        scene = d.scene;
    }
    io::write_scene(&args.out, &scene)
}

fn render_cmd(args: &RenderArgs) -> Result<(), HarnessError> {
    let (scene, cameras) = load_inputs(&args.inputs)?;
    let frames: Vec<usize> = match args.frame {
        Some(t) => {
            check_frame(&scene, t)?;
            vec![t]
        }
        None => (0..scene.num_frames).collect(),
    };
    for (v, camera) in cameras.iter().enumerate() {
        for &t in &frames {
            let out = render(&scene, camera, t as f64)?;
            let name = frame_name(v, t);
            write_bytes(&args.out.join(format!("{name}.ppm")), &encode_ppm(&out.rgb))?;
            write_bytes(&args.out.join(format!("{name}_depth.pfm")), &encode_pfm(&io::depth_plane(&out.depth)))?;
        }
    }
    Ok(())
}

fn cluster_cmd(args: &ClusterArgs) -> Result<(), HarnessError> {
    let mut doc = thresholds(&args.config)?;
    args.flags.apply(&mut doc.cluster);
    let cfg = doc.cluster.to_core()?;
    let (scene, cameras) = load_inputs(&args.inputs)?;
    let gt_scene = io::read_scene(&args.gt_scene)?;
    check_gt(&scene, &gt_scene)?;
    check_view(&cameras, args.view)?;
    check_frame(&scene, args.frame)?;
    let camera = &cameras[args.view];
    let [prev, gt, next] = gt_window(&gt_scene, camera, args.frame)?;
    let gt = gt.expect("center frame is always rendered");
    let rendered = render(&scene, camera, args.frame as f64)?;
    let dynamicity = compute_dynamicity(prev.as_ref(), &gt, next.as_ref())?;
    let pixels = select_error_pixels(
        &rendered.rgb,
        &gt,
        &dynamicity,
        cfg.dynamicity_threshold,
        cfg.abs_error_threshold,
        cfg.top_fraction,
    )?;
    let ellipses = cluster_errors(&pixels, &cfg)?;
    println!("cluster: {} error pixels, {} ellipses", pixels.len(), ellipses.len());
    write_json(&args.out, &io::ellipses_doc(&ellipses))
}

#[derive(Debug, Serialize)]
struct CorrectSummary {
    pass: usize,
    error_pixels: usize,
    ellipses: usize,
    added: Vec<usize>,
    split_parents: Vec<usize>,
    skipped: usize,
    l1_before: f64,
    l1_after: f64,
}

fn correct_cmd(args: &CorrectArgs) -> Result<(), HarnessError> {
    let mut doc = thresholds(&args.config)?;
    args.cluster.apply(&mut doc.cluster);
    args.correction.apply(&mut doc.correction);
    let cfg = doc.correction.to_core(&doc.cluster)?;
    let (mut scene, cameras) = load_inputs(&args.inputs)?;
    let gt_scene = io::read_scene(&args.gt_scene)?;
    check_gt(&scene, &gt_scene)?;
    check_view(&cameras, args.view)?;
    check_frame(&scene, args.frame)?;
    let comp_view = match args.comp_view {
        Some(c) => {
            check_view(&cameras, c)?;
            c
        }
        None => select_comparison_view(&cameras, args.view)
            .ok_or_else(|| HarnessError::Config("correction needs at least two cameras".into()))?,
    };
    if comp_view == args.view {
        return Err(HarnessError::Config("comparison view must differ from the main view".into()));
    }
    let [prev, gt, next] = gt_window(&gt_scene, &cameras[args.view], args.frame)?;
    let gt = gt.expect("center frame is always rendered");
    let comp_gt = render(&gt_scene, &cameras[comp_view], args.frame as f64)?.rgb;
    let main = MainView { camera: &cameras[args.view], gt_prev: prev.as_ref(), gt: &gt, gt_next: next.as_ref() };
    let comp = View { camera: &cameras[comp_view], gt: &comp_gt };

    let mut summaries = Vec::with_capacity(args.passes);
    for pass in 0..args.passes {
        let r = correction_pass(&mut scene, &main, &comp, args.frame, &cfg)?;
        let mut added = Vec::new();
        let mut split_parents = Vec::new();
        for o in &r.outcomes {
            match &o.action {
                Action::Added { splat } => added.push(*splat),
                Action::Split(s) => split_parents.push(s.parent),
                Action::Skipped(_) => {}
            }
        }
        println!(
            "pass {pass}: {} ellipses, {} added, {} split, {} skipped, L1 {:.6} -> {:.6}",
            r.outcomes.len(),
            r.added,
            r.split,
            r.skipped.total(),
            r.l1_before,
            r.l1_after
        );
        summaries.push(CorrectSummary {
            pass,
            error_pixels: r.error_pixels,
            ellipses: r.outcomes.len(),
            added,
            split_parents,
            skipped: r.skipped.total(),
            l1_before: r.l1_before,
            l1_after: r.l1_after,
        });
    }
    io::write_scene(&args.out, &scene)?;
    if let Some(p) = &args.report {
        write_json(p, &summaries)?;
    }
    Ok(())
}

fn group_split_cmd(args: &GroupSplitArgs) -> Result<(), HarnessError> {
    let mut doc = thresholds(&args.config)?;
    args.flags.apply(&mut doc.grouping);
    let (mut scene, cameras) = load_inputs(&args.inputs)?;
    let gt_scene = io::read_scene(&args.gt_scene)?;
    check_gt(&scene, &gt_scene)?;
    let gt = render_all(&gt_scene, &cameras)?;
    let summary = regroup(&mut scene, &cameras, &gt, &doc.grouping)?;
    for s in &summary {
        println!(
            "group {}: frame {}, {} new groups",
            s.source_group,
            s.timestamp,
            s.new_groups.len()
        );
    }
    io::write_scene(&args.out, &scene)
}

fn metrics_cmd(args: &MetricsArgs) -> Result<(), HarnessError> {
    let (scene, cameras) = load_inputs(&args.inputs)?;
    let gt_scene = io::read_scene(&args.gt_scene)?;
    check_gt(&scene, &gt_scene)?;
    let metrics = evaluate_views(&render_all(&scene, &cameras)?, &render_all(&gt_scene, &cameras)?)?;
    println!("view      psnr    dssim1    dssim2     tpsnr");
    for m in &metrics {
        println!("{:>4} {:>9.4} {:>9.6} {:>9.6} {:>9.4}", m.view, m.psnr, m.dssim1, m.dssim2, m.tpsnr);
    }
    if let Some(p) = &args.out {
        write_json(p, &metrics)?;
    }
    Ok(())
}

fn pipeline_cmd(args: &PipelineArgs) -> Result<(), HarnessError> {
    let mut cfg: PipelineConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    if let Some(passes) = args.passes {
        cfg.correction.passes = passes;
    }
    args.cluster.apply(&mut cfg.correction.cluster);
    args.correction.apply(&mut cfg.correction.thresholds);
    let run = run_pipeline(&cfg)?;
    let r = &run.report;
    println!("splats: {} generated, {} after degradation, {} final", r.splats.generated, r.splats.degraded, r.splats.final_count);
    for (i, b) in r.baseline.iter().enumerate() {
        match r.final_metrics.as_ref().map(|f| f[i]) {
            Some(f) => println!("view {}: PSNR {:.3} -> {:.3} dB", b.view, b.psnr, f.psnr),
            None => println!("view {}: PSNR {:.3} dB", b.view, b.psnr),
        }
    }
    if let Some(out) = &args.out {
        write_artifacts(&run, out)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), HarnessError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(HarnessError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Degrade(a) => degrade_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Correct(a) => correct_cmd(a),
        Command::GroupSplit(a) => group_split_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}
