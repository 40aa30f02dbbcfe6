//! Command-line surface.
//!
//! Directory layout shared by the subcommands: a trajectory file lists
//! `frame_id x y yaw`, and the scan of frame `id` lives at `<scans>/<id>.bin`
//! (little-endian f32 triples) or `<scans>/<id>.txt`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bev::{project_bev_counted, scores_to_pgm, voxel_downsample, AugmentRanges, BevConfig};
use crate::bundle::{load_bundle, save_bundle};
use crate::eval::{evaluate, EvalThresholds};
use crate::geometry::Pose2;
use crate::io::{read_cloud, read_text, read_trajectory, write_cloud, write_text, write_trajectory, CloudFormat, TrajectoryEntry};
use crate::landmarks::{init_landmarks, keyframe_select, LandmarkInitConfig, LandmarkSet};
use crate::localizer::{
    detect_peaks, format_result_record, parse_result_records, LocalizationResult, Localizer, LocalizerConfig,
    PeakThreshold,
};
use crate::model::{param_count, ModelConfig};
use crate::synth::{format_scene, generate_scene, generate_trajectory, sample_query_poses, simulate_scan, Preset, SensorSpec};
use crate::trainer::{derive_seed, initial_params, TrainConfig, TrainFrame, Trainer};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "bevloc", version, about = "Scene-landmark localization on LiDAR bird's-eye-view images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene, its reference trajectory and scans.
    Synth(SynthArgs),
    /// Project a point cloud to a BEV density image.
    Bev(BevArgs),
    /// Initialize the landmark set from a reference trajectory.
    InitLandmarks(InitArgs),
    /// Train the detector and the landmarks.
    Train(TrainArgs),
    /// Localize one scan or a batch of scans against a trained bundle.
    Localize(LocalizeArgs),
    /// Score localization results against ground truth.
    Eval(EvalArgs),
    /// Print the contents of a bundle.
    InspectBundle(InspectArgs),
    /// Run a bundle's heatmap branch on scans from another environment.
    DemoTransfer(TransferArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RasterArgs {
    /// Raster side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Meters per pixel.
    #[arg(long, default_value_t = 0.25)]
    pub pixel_size: f64,
    /// Voxel filter edge in meters.
    #[arg(long, default_value_t = 0.1)]
    pub voxel_size: f64,
}

impl RasterArgs {
    fn config(&self) -> Result<BevConfig> {
        let c = BevConfig {
            width_px: self.size,
            height_px: self.size,
            pixel_size: self.pixel_size,
            voxel_size: self.voxel_size,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Rooms,
    Campus,
    Pillars,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Rooms => Preset::Rooms,
            PresetArg::Campus => Preset::Campus,
            PresetArg::Pillars => Preset::Pillars,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    XyzText,
    XyzBin,
}

impl From<FormatArg> for CloudFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::XyzText => CloudFormat::XyzText,
            FormatArg::XyzBin => CloudFormat::XyzBin,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "rooms")]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference pose spacing in meters.
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    /// Range noise standard deviation in meters.
    #[arg(long, default_value_t = 0.02)]
    pub range_sigma: f64,
    /// Also write this many held-out query poses and scans.
    #[arg(long, default_value_t = 0)]
    pub queries: usize,
    /// Query distance to the reference trajectory, `MIN MAX` meters.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.0, 2.0])]
    pub query_offset: Vec<f64>,
    /// Query yaw offset from the nearest reference heading, ± degrees.
    #[arg(long, default_value_t = 180.0)]
    pub query_yaw_jitter: f64,
    /// Name of the query set: `<out>/<name>.txt` and `<out>/<name>/`.
    #[arg(long, default_value = "queries")]
    pub query_name: String,
}

#[derive(Debug, Args)]
pub struct BevArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Defaults to the file extension (`.bin` is binary).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub raster: RasterArgs,
    /// Write the density image as binary PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub d_p: usize,
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    /// Minimum keyframe separation in meters.
    #[arg(long, default_value_t = 0.5)]
    pub keyframe_spacing: f64,
    #[command(flatten)]
    pub raster: RasterArgs,
    #[arg(long)]
    pub out: PathBuf,
}


#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub scans: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Frames per SGD step; gradients are averaged over the batch.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub d_p: usize,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.5)]
    pub keyframe_spacing: f64,
    #[arg(long, default_value_t = 4e-4)]
    pub lr_initial: f64,
    #[arg(long, default_value_t = 4e-5)]
    pub lr_final: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.03)]
    pub val_fraction: f64,
    /// Train without augmentation; overrides the ranges below.
    #[arg(long)]
    pub no_augment: bool,
    /// Rotation augmentation, ± degrees; 180 is the full circle.
    #[arg(long, default_value_t = 180.0)]
    pub max_rotation: f64,
    /// Translation augmentation, ± fraction of the image side.
    #[arg(long, default_value_t = 0.25)]
    pub max_translation: f64,
    /// Scale augmentation range, `MIN MAX`.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.5, 1.5])]
    pub scale: Vec<f64>,
    #[arg(long)]
    pub freeze_landmarks: bool,
    #[command(flatten)]
    pub raster: RasterArgs,
    /// Per-epoch log and landmark displacement summary.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write a resumable checkpoint here after every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written with the same arguments.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizerArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub max_peaks: usize,
    #[arg(long, default_value_t = 3)]
    pub min_peak_distance: usize,
    /// Absolute raw-score threshold; by default peaks must reach
    /// `min + 0.1·(max − min)` of the heatmap.
    #[arg(long)]
    pub peak_threshold: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    pub inlier_threshold: f64,
    #[arg(long, default_value_t = 4)]
    pub min_inliers: usize,
    #[arg(long)]
    pub no_refine: bool,
}

impl LocalizerArgs {
    fn config(&self) -> Result<LocalizerConfig> {
        let cfg = LocalizerConfig {
            max_peaks: self.max_peaks,
            min_peak_distance: self.min_peak_distance,
            peak_threshold: match self.peak_threshold {
                Some(t) => PeakThreshold::Absolute(t),
                None => PeakThreshold::Relative(0.1),
            },
            ransac_iterations: self.iterations,
            inlier_threshold: self.inlier_threshold,
            min_inliers: self.min_inliers,
            refine: !self.no_refine,
            seed: self.seed,
            ..LocalizerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// A single scan; its file stem is the frame id.
    #[arg(long, conflicts_with_all = ["frames", "scans"])]
    pub cloud: Option<PathBuf>,
    /// Batch mode: frame ids are taken from this trajectory file.
    #[arg(long, requires = "scans")]
    pub frames: Option<PathBuf>,
    #[arg(long, requires = "frames")]
    pub scans: Option<PathBuf>,
    /// Result records; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub localizer: LocalizerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Ground-truth poses of the queries.
    #[arg(long)]
    pub gt: PathBuf,
    /// Reference trajectory used for the distance bins.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub te_max: f64,
    #[arg(long, default_value_t = 5.0)]
    pub re_max: f64,
    #[arg(long, default_value_t = 3.0)]
    pub bin_width: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Also write the landmark list.
    #[arg(long)]
    pub landmarks_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Directory of `.bin` / `.txt` scans.
    #[arg(long)]
    pub scans: PathBuf,
    /// Output directory for BEV and heatmap PGMs.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub localizer: LocalizerArgs,
}

/// Parses `argv` and runs the subcommand. Usage errors exit with status 2
/// from inside clap; everything else is returned.
pub fn run_from_args() -> Result<()> {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Bev(a) => bev(&a),
        Command::InitLandmarks(a) => init(&a),
        Command::Train(a) => train(&a),
        Command::Localize(a) => localize(&a),
        Command::Eval(a) => eval(&a),
        Command::InspectBundle(a) => inspect(&a),
        Command::DemoTransfer(a) => transfer(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `<dir>/<id>.bin`, falling back to `<dir>/<id>.txt`.
pub fn scan_path(dir: &Path, id: &str) -> Result<PathBuf> {
    for ext in ["bin", "txt"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Invalid(format!("no scan for frame `{id}` in {}", dir.display())))
}

fn read_scan(dir: &Path, id: &str) -> Result<crate::geometry::PointCloud> {
    let p = scan_path(dir, id)?;
    read_cloud(&p, CloudFormat::from_path(&p))
}

fn write_poses(
    pose_file: &Path,
    scans: &Path,
    prefix: &str,
    poses: &[Pose2],
    scene: &crate::synth::SceneSpec,
    sensor: &SensorSpec,
    seed: u64,
) -> Result<()> {
    create_dir(scans)?;
    let mut entries = Vec::with_capacity(poses.len());
    for (i, p) in poses.iter().enumerate() {
        let id = format!("{prefix}{i:04}");
        let cloud = simulate_scan(scene, p, sensor, derive_seed(seed, i as u64));
        write_cloud(&scans.join(format!("{id}.bin")), &cloud, CloudFormat::XyzBin)?;
        entries.push(TrajectoryEntry { frame_id: id, pose: *p });
    }
    write_trajectory(pose_file, &entries)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let sensor = SensorSpec {
        range_sigma: a.range_sigma,
        ..SensorSpec::default()
    };
    sensor.validate()?;
    let scene = generate_scene(a.seed, a.preset.into());
    let traj = generate_trajectory(&scene, a.spacing)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("scene.txt"), &format_scene(&scene))?;
    write_poses(&a.out.join("trajectory.txt"), &a.out.join("scans"), "ref_", &traj, &scene, &sensor, derive_seed(a.seed, 1))?;
    println!("scene: {} segments, {} pillars, {} corners", scene.segments.len(), scene.pillars.len(), scene.corners().len());
    println!("reference: {} poses", traj.len());
    if a.queries > 0 {
        let (lo, hi) = (a.query_offset[0], a.query_offset[1]);
        let queries = sample_query_poses(&scene, &traj, a.queries, lo, hi, a.query_yaw_jitter.to_radians(), derive_seed(a.seed, 2))?;
        let name = &a.query_name;
        write_poses(&a.out.join(format!("{name}.txt")), &a.out.join(name), &format!("{name}_"), &queries, &scene, &sensor, derive_seed(a.seed, 3))?;
        println!("{}: {} poses {lo}-{hi} m off the trajectory", a.query_name, queries.len());
    }
    Ok(())
}

fn bev(a: &BevArgs) -> Result<()> {
    let config = a.raster.config()?;
    let format = a.format.map(CloudFormat::from).unwrap_or_else(|| CloudFormat::from_path(&a.cloud));
    let cloud = read_cloud(&a.cloud, format)?;
    let voxels = voxel_downsample(&cloud, config.voxel_size).len();
    let (image, inside) = project_bev_counted(&cloud, &config);
    println!(
        "points={} voxels={} projected={} occupied_pixels={} max_count={}",
        cloud.len(),
        voxels,
        inside,
        image.occupied_pixels(),
        image.count.iter().max().copied().unwrap_or(0)
    );
    if let Some(p) = &a.pgm {
        std::fs::write(p, image.to_pgm()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn keyframes(entries: Vec<TrajectoryEntry>, spacing: f64) -> Vec<TrajectoryEntry> {
    let poses: Vec<Pose2> = entries.iter().map(|e| e.pose).collect();
    let keep = keyframe_select(&poses, spacing);
    keep.into_iter().map(|i| entries[i].clone()).collect()
}

fn init(a: &InitArgs) -> Result<()> {
    let bev = a.raster.config()?;
    let frames = keyframes(read_trajectory(&a.trajectory)?, a.keyframe_spacing);
    let poses: Vec<Pose2> = frames.iter().map(|e| e.pose).collect();
    let cfg = LandmarkInitConfig { d_p: a.d_p, rho_lm: a.rho };
    let set = init_landmarks(&poses, &bev, &cfg)?;
    write_text(&a.out, &set.to_text())?;
    println!(
        "keyframes={} l_patch={:.3} s_grid={:.3} landmarks={}",
        frames.len(),
        cfg.l_patch(&bev),
        cfg.s_grid(&bev),
        set.len()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let bev = a.raster.config()?;
    let entries = keyframes(read_trajectory(&a.trajectory)?, a.keyframe_spacing);
    let landmarks = LandmarkSet::parse_text(&read_text(&a.landmarks)?)?;
    if landmarks.is_empty() {
        return Err(Error::Invalid("landmark list is empty".into()));
    }
    let mut frames = Vec::with_capacity(entries.len());
    for e in &entries {
        let cloud = read_scan(&a.scans, &e.frame_id)?;
        frames.push(TrainFrame::from_scan(e.frame_id.clone(), e.pose, &cloud, &bev));
    }
    let mut cfg = TrainConfig::new(a.d_p, a.epochs, a.seed);
    cfg.batch_size = a.batch_size;
    cfg.lr_initial = a.lr_initial;
    cfg.lr_final = a.lr_final;
    cfg.momentum = a.momentum;
    cfg.val_fraction = a.val_fraction;
    cfg.freeze_landmarks = a.freeze_landmarks;
    cfg.augment = if a.no_augment {
        AugmentRanges::NONE
    } else {
        AugmentRanges {
            max_rotation: a.max_rotation.to_radians(),
            max_translation: a.max_translation,
            scale_min: a.scale[0],
            scale_max: a.scale[1],
        }
    };
    let model = ModelConfig {
        height: bev.height_px,
        width: bev.width_px,
        d_p: a.d_p,
        base_channels: a.base_channels,
        depth: a.depth,
        ..ModelConfig::desk(landmarks.len(), a.seed)
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            Trainer::resume(&frames, bev, cfg, &bytes)?
        }
        None => Trainer::new(&frames, bev, cfg, initial_params(&model, landmarks.coords.clone())?)?,
    };
    println!(
        "frames={} train={} val={} landmarks={} params={}",
        frames.len(),
        trainer.train_idx.len(),
        trainer.val_idx.len(),
        landmarks.len(),
        param_count(&trainer.state.params.config)?
    );
    let mut checkpoint_error = None;
    trainer.run(|log, t| {
        println!("{}", log.line());
        if let (Some(path), None) = (&a.checkpoint, &checkpoint_error) {
            if let Err(e) = t.checkpoint().and_then(|bytes| std::fs::write(path, bytes).map_err(|e| Error::io(path, e))) {
                checkpoint_error = Some(e);
            }
        }
    })?;
    if let Some(e) = checkpoint_error {
        return Err(e);
    }
    save_bundle(&a.out, &trainer.bundle()?)?;
    let report = trainer.report();
    if let Some(log) = &a.log {
        write_text(log, &report.log_text())?;
    }
    println!(
        "best_epoch={} landmark_mean_displacement={:.4} moved_fraction={:.3}",
        report.best_epoch.map_or("none".into(), |e| e.to_string()),
        report.mean_displacement,
        report.moved_fraction
    );
    Ok(())
}

fn localize(a: &LocalizeArgs) -> Result<()> {
    let cfg = a.localizer.config()?;
    let localizer = Localizer::new(load_bundle(&a.bundle)?)?;
    let mut out = String::new();
    match (&a.cloud, &a.frames, &a.scans) {
        (Some(path), _, _) => {
            let cloud = read_cloud(path, CloudFormat::from_path(path))?;
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("query");
            out.push_str(&format_result_record(id, &localizer.localize(&cloud, &cfg)?));
            out.push('\n');
        }
        (None, Some(frames), Some(scans)) => {
            for e in read_trajectory(frames)? {
                let r: LocalizationResult = localizer.localize(&read_scan(scans, &e.frame_id)?, &cfg)?;
                out.push_str(&format_result_record(&e.frame_id, &r));
                out.push('\n');
            }
        }
        _ => return Err(Error::config("give --cloud, or --frames with --scans")),
    }
    match &a.out {
        Some(p) => write_text(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let thresholds = EvalThresholds {
        te_max: a.te_max,
        re_max: a.re_max,
        bin_width: a.bin_width,
    };
    let results = parse_result_records(&read_text(&a.results)?, &a.results.display().to_string())?;
    let gt = read_trajectory(&a.gt)?;
    let reference: Vec<Pose2> = read_trajectory(&a.reference)?.into_iter().map(|e| e.pose).collect();
    let by_id: std::collections::HashMap<&str, Option<Pose2>> = results.iter().map(|r| (r.frame_id.as_str(), r.pose)).collect();
    if by_id.len() != results.len() {
        return Err(Error::Invalid("duplicate frame ids in the results".into()));
    }
    let mut estimates = Vec::with_capacity(gt.len());
    for e in &gt {
        let est = by_id
            .get(e.frame_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("no result for frame `{}`", e.frame_id)))?;
        estimates.push(*est);
    }
    if results.len() != gt.len() {
        return Err(Error::Invalid(format!("{} results for {} ground-truth frames", results.len(), gt.len())));
    }
    let poses: Vec<Pose2> = gt.iter().map(|e| e.pose).collect();
    let text = evaluate(&estimates, &poses, &reference, &thresholds)?.to_text(&thresholds);
    print!("{text}");
    match &a.out {
        Some(p) => write_text(p, &text),
        None => Ok(()),
    }
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let size = std::fs::metadata(&a.bundle).map_err(|e| Error::io(&a.bundle, e))?.len();
    let bundle = load_bundle(&a.bundle)?;
    let c = &bundle.params.config;
    let set = LandmarkSet::new(bundle.params.landmarks.clone());
    println!("bytes={size}");
    println!("input={}x{} d_p={} landmarks={} base_channels={} depth={}", c.width, c.height, c.d_p, c.num_landmarks, c.base_channels, c.depth);
    println!(
        "bev: pixel_size={} voxel_size={}",
        bundle.bev.pixel_size, bundle.bev.voxel_size
    );
    println!("param_count={}", param_count(c)?);
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &set.coords {
        lo = (lo.0.min(p.x), lo.1.min(p.y));
        hi = (hi.0.max(p.x), hi.1.max(p.y));
    }
    println!("landmark_bbox=[{:.3}, {:.3}]x[{:.3}, {:.3}]", lo.0, hi.0, lo.1, hi.1);
    match set.min_pairwise_distance() {
        Some(d) => println!("landmark_min_pairwise_distance={d:.4}"),
        None => println!("landmark_min_pairwise_distance=n/a"),
    }
    if let Some(p) = &a.landmarks_out {
        write_text(p, &set.to_text())?;
    }
    Ok(())
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let cfg = a.localizer.config()?;
    let localizer = Localizer::new(load_bundle(&a.bundle)?)?;
    let bev = localizer.bundle.bev;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.scans)
        .map_err(|e| Error::io(&a.scans, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin" | "txt")))
        .collect();
    paths.sort();
    create_dir(&a.out)?;
    for path in paths {
        let cloud = read_cloud(&path, CloudFormat::from_path(&path))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan").to_string();
        let (image, _) = project_bev_counted(&cloud, &bev);
        let out = localizer.forward(&cloud)?;
        let peaks = detect_peaks(&out.heatmap, out.width, out.height, &cfg);
        let on_points = peaks.iter().filter(|p| image.count[p.v * out.width + p.u] > 0).count();
        write_bytes(&a.out.join(format!("{id}_bev.pgm")), &image.to_pgm())?;
        write_bytes(&a.out.join(format!("{id}_heatmap.pgm")), &scores_to_pgm(&out.heatmap, out.width, out.height))?;
        println!("{id} peaks={} on_occupied={on_points}", peaks.len());
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
