//! The `bodyfuse` command line. Every command is also callable as a function.
//!
//! A data directory holds `config.txt` and one `sample_NNNNN/` directory per sample.
//! Prediction directories use the same per-sample layout, so `eval` can compare any
//! two of them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::body_model::{JointSet, Mesh};
use crate::dense_maps::ImageMaps;
use crate::ik::{curve_to_csv, train_ik_stage, MocapSet};
use crate::io::{self, RunConfig, Tensor};
use crate::pipeline::{
    evaluate, generate_samples, mean_metrics, predict_dense_maps, run_pipeline, Context, IkMethod, PipelineOutput, Sample,
    SampleMetrics,
};
use crate::{Error, Result, Vec3};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Parser)]
#[command(name = "bodyfuse", version, about = "Hybrid dense-map / model-based 3D body estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic samples with ground truth.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Index of the first sample.
        #[arg(long, default_value_t = 0)]
        start: u64,
    },
    /// Train the inpaint/refine net and GIK-Net.
    TrainIk {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate joints and mesh for one sample directory or every sample of a data directory.
    RunPipeline {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "gik")]
        ik: IkMethod,
        /// Use the occluded render as input.
        #[arg(long)]
        occluded: bool,
    },
    /// MPJPE, PA-MPJPE and MPVE per sample plus their mean.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a mesh as OBJ: a sample's vertices, or the template without `--sample`.
    ExportMesh {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print statistics of tensor files and optionally write PNG views.
    Inspect {
        /// A `.uvb` file or a directory of them; the atlas of `--config` when omitted.
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        png: Option<PathBuf>,
    },
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(report) => {
            if !report.is_empty() {
                print!("{report}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Run one command; the returned text is what the binary prints.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::GenData { config, out, count, start } => gen_data(&load_config(config.as_deref())?, &out, start, count),
        Command::TrainIk { config, data, out } => train_ik(&load_config(config.as_deref())?, &data, &out),
        Command::RunPipeline { ckpt, sample, out, ik, occluded } => run_pipeline_cmd(&ckpt, &sample, &out, ik, occluded),
        Command::Eval { pred, gt, out } => eval(&pred, &gt, &out),
        Command::ExportMesh { config, sample, out } => export_mesh(&load_config(config.as_deref())?, sample.as_deref(), &out),
        Command::Inspect { path, config, png } => inspect(path.as_deref(), &load_config(config.as_deref())?, png.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sample_dir_name(index: u64) -> String {
    format!("sample_{index:05}")
}

fn is_sample_dir(path: &Path) -> bool {
    path.join("joints.uvb").is_file()
}

/// Sample directories below `root` in name order, or `root` itself if it is one.
pub fn sample_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if is_sample_dir(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_sample_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("{} holds no sample directories", root.display())));
    }
    Ok(dirs)
}

fn dir_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| ".".to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn save_sample(sample: &Sample, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    io::pose_to_tensor(&sample.pose).save(dir.join("pose.uvb"))?;
    io::shape_to_tensor(&sample.shape).save(dir.join("shape.uvb"))?;
    io::camera_to_tensor(&sample.camera).save(dir.join("camera.uvb"))?;
    io::joints_to_tensor(&sample.joints).save(dir.join("joints.uvb"))?;
    io::points_to_tensor(&sample.mesh.vertices).save(dir.join("vertices.uvb"))?;
    io::image_maps_to_tensor(&sample.image).save(dir.join("image_maps.uvb"))?;
    io::image_maps_to_tensor(&sample.image_occluded).save(dir.join("image_maps_occluded.uvb"))?;
    io::rects_to_tensor(&sample.occluders).save(dir.join("occluders.uvb"))?;
    io::uv_maps_to_tensor(&sample.uv_gt).save(dir.join("uv_gt.uvb"))
}

pub fn save_output(out: &PipelineOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    io::joints_to_tensor(&out.joints).save(dir.join("joints.uvb"))?;
    io::points_to_tensor(&out.mesh.vertices).save(dir.join("vertices.uvb"))?;
    io::write_obj(&out.mesh, &dir.join("mesh.obj"))?;
    io::fused_to_tensor(&out.fused).save(dir.join("fused.uvb"))?;
    io::joints_to_tensor(&out.aggregation.j_initial).save(dir.join("j_initial.uvb"))?;
    io::joints_to_tensor(&out.j_refine).save(dir.join("j_refine.uvb"))?;
    io::pose_to_tensor(&out.pose).save(dir.join("pose.uvb"))?;
    io::shape_to_tensor(&out.shape).save(dir.join("shape.uvb"))?;
    io::points_to_tensor(&out.ik_mesh.vertices).save(dir.join("ik_vertices.uvb"))
}

pub fn gen_data(cfg: &RunConfig, out: &Path, start: u64, count: usize) -> Result<String> {
    let ctx = Context::new(cfg)?;
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    // bounded batches keep memory flat for large counts
    let batch = 256;
    let mut done = 0;
    while done < count {
        let n = batch.min(count - done);
        for s in generate_samples(&ctx, start + done as u64, n)? {
            save_sample(&s, &out.join(sample_dir_name(s.index)))?;
        }
        done += n;
        log::info!("generated {done}/{count} samples");
    }
    Ok(format!("wrote {count} samples to {}\n", out.display()))
}

/// Poses and shapes of a data directory, plus synthetic mocap if configured.
pub fn training_set(ctx: &Context, data: &Path) -> Result<MocapSet> {
    let mut set = MocapSet { poses: Vec::new(), shapes: Vec::new(), joints: Vec::new() };
    for dir in sample_dirs(data)? {
        let pose = io::pose_from_tensor(&Tensor::load(dir.join("pose.uvb"))?)?;
        let shape = io::shape_from_tensor(&Tensor::load(dir.join("shape.uvb"))?)?;
        set.joints.push(JointSet::all_visible(ctx.model.posed_lsp_joints(&pose, &shape)));
        set.poses.push(pose);
        set.shapes.push(shape);
    }
    let cfg = &ctx.config;
    if cfg.mocap_samples > 0 {
        let extra = MocapSet::synthesize(&ctx.model, cfg.mocap_samples, cfg.seed_mocap, &cfg.pose_limits()?, cfg.shape_sigma)?;
        set.poses.extend(extra.poses);
        set.shapes.extend(extra.shapes);
        set.joints.extend(extra.joints);
    }
    Ok(set)
}

pub fn train_ik(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String> {
    let ctx = Context::new(cfg)?;
    let set = training_set(&ctx, data)?;
    let trained = train_ik_stage(&ctx.model, &set, &cfg.train(), cfg.net_specs())?;
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    io::save_nets(&trained.nets, out)?;
    write_text(&out.join(LOSS_FILE), &curve_to_csv(&trained.curve))?;
    let last = trained.curve.last().expect("at least one epoch");
    Ok(format!("trained on {} samples, final loss {:.6}; checkpoint in {}\n", set.len(), last.total(), out.display()))
}

pub fn run_pipeline_cmd(ckpt: &Path, sample: &Path, out: &Path, method: IkMethod, occluded: bool) -> Result<String> {
    let cfg = RunConfig::load(&ckpt.join(CONFIG_FILE))?;
    let ctx = Context::new(&cfg)?;
    let nets = io::load_nets(ckpt)?;
    let dirs = sample_dirs(sample)?;
    let single = dirs.len() == 1 && dirs[0] == sample;
    let file = if occluded { "image_maps_occluded.uvb" } else { "image_maps.uvb" };
    let mut report = String::new();
    for dir in &dirs {
        let image: ImageMaps = io::image_maps_from_tensor(&Tensor::load(dir.join(file))?)?;
        let label = dir_label(dir);
        let predicted = predict_dense_maps(&ctx, &image, crc32fast::hash(label.as_bytes()) as u64)?;
        let result = run_pipeline(&ctx, &nets, &predicted, method)?;
        let target = if single { out.to_path_buf() } else { out.join(&label) };
        save_output(&result, &target)?;
        let counts = result.fused.source_counts();
        report.push_str(&format!(
            "{label}: {} visible parts, texels dmp {} ik {} blend {}, {} vertices filled\n",
            result.aggregation.j_initial.visible_count(),
            counts[0],
            counts[1],
            counts[2],
            result.filled.len()
        ));
    }
    Ok(report)
}

fn load_prediction(dir: &Path) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let joints = io::joints_from_tensor(&Tensor::load(dir.join("joints.uvb"))?)?;
    let vertices = io::points_from_tensor(&Tensor::load(dir.join("vertices.uvb"))?)?;
    Ok((joints.joints.to_vec(), vertices))
}

pub fn metrics_csv(rows: &[(String, SampleMetrics)]) -> String {
    let mut out = String::from("sample,mpjpe_mm,pa_mpjpe_mm,mpve_mm\n");
    let line = |name: &str, m: &SampleMetrics| format!("{name},{:.6},{:.6},{:.6}\n", m.mpjpe, m.pa_mpjpe, m.mpve);
    for (name, m) in rows {
        out.push_str(&line(name, m));
    }
    let metrics: Vec<SampleMetrics> = rows.iter().map(|r| r.1).collect();
    out.push_str(&line("mean", &mean_metrics(&metrics)));
    out
}

pub fn eval(pred: &Path, gt: &Path, out: &Path) -> Result<String> {
    let gt_dirs = sample_dirs(gt)?;
    let single = gt_dirs.len() == 1 && gt_dirs[0] == gt;
    let mut rows = Vec::with_capacity(gt_dirs.len());
    for dir in &gt_dirs {
        let label = dir_label(dir);
        let pred_dir = if single { pred.to_path_buf() } else { pred.join(&label) };
        let (pj, pv) = load_prediction(&pred_dir)?;
        let (gj, gv) = load_prediction(dir)?;
        rows.push((label, evaluate(&pj, &gj, &pv, &gv)?));
    }
    let csv = metrics_csv(&rows);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &csv)?;
    Ok(csv.lines().last().map(|l| format!("{l}\n")).unwrap_or_default())
}

pub fn export_mesh(cfg: &RunConfig, sample: Option<&Path>, out: &Path) -> Result<String> {
    let model = crate::body_model::BodyModel::build(&cfg.model_config())?;
    let mesh = match sample {
        None => model.template_mesh(),
        Some(dir) if dir.join("vertices.uvb").is_file() => {
            Mesh { vertices: io::points_from_tensor(&Tensor::load(dir.join("vertices.uvb"))?)?, faces: model.faces.clone() }
        }
        Some(dir) => {
            let pose = io::pose_from_tensor(&Tensor::load(dir.join("pose.uvb"))?)?;
            let shape = io::shape_from_tensor(&Tensor::load(dir.join("shape.uvb"))?)?;
            model.skin(&pose, &shape)
        }
    };
    if mesh.vertices.len() != model.num_vertices() {
        return Err(Error::dims(format!("{} vertices", model.num_vertices()), mesh.vertices.len()));
    }
    io::write_obj(&mesh, out)?;
    Ok(format!("{} vertices, {} faces -> {}\n", mesh.vertices.len(), mesh.faces.len(), out.display()))
}

fn tensor_summary(name: &str, t: &Tensor) -> String {
    let mut s = format!("{name}: {} {:?}", t.data.type_name(), t.dims);
    if let Ok(v) = t.as_f64() {
        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        if !finite.is_empty() {
            let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            s.push_str(&format!(" min {lo:.6} max {hi:.6} mean {mean:.6}"));
        }
        if finite.len() != v.len() {
            s.push_str(&format!(" non-finite {}", v.len() - finite.len()));
        }
    }
    s.push('\n');
    s
}

fn inspect_file(path: &Path, png: Option<&Path>) -> Result<String> {
    let t = Tensor::load(path)?;
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut report = tensor_summary(&stem, &t);
    if stem.starts_with("image_maps") {
        let maps = io::image_maps_from_tensor(&t)?;
        report.push_str(&format!("  foreground {:.4}\n", maps.foreground_fraction()));
        if let Some(dir) = png {
            io::write_mask_png(&maps.mask, &dir.join(format!("{stem}_mask.png")))?;
            io::write_indexed_png(&io::part_labels(&maps.part), &dir.join(format!("{stem}_parts.png")))?;
        }
    } else if stem == "fused" {
        let fused = io::fused_from_tensor(&t)?;
        let c = fused.source_counts();
        report.push_str(&format!("  texels dmp {} ik {} blend {} fill {}\n", c[0], c[1], c[2], c[3]));
        if let Some(dir) = png {
            io::write_indexed_png(&fused.source_codes(), &dir.join("fused_source.png"))?;
        }
    } else if stem.starts_with("uv_") {
        let maps = io::uv_maps_from_tensor(&t)?;
        report.push_str(&format!("  valid texels {}\n", maps.valid_count()));
        if let Some(dir) = png {
            io::write_mask_png(&maps.valid, &dir.join(format!("{stem}_valid.png")))?;
        }
    }
    Ok(report)
}

pub fn inspect(path: Option<&Path>, cfg: &RunConfig, png: Option<&Path>) -> Result<String> {
    if let Some(dir) = png {
        create_dir(dir)?;
    }
    match path {
        Some(p) if p.is_dir() => {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "uvb"))
                .collect();
            files.sort();
            files.iter().map(|f| inspect_file(f, png)).collect()
        }
        Some(p) => inspect_file(p, png),
        None => {
            let ctx = Context::new(cfg)?;
            let counts = ctx.seg.part_counts();
            let mut report = format!(
                "model: {} vertices, {} faces; atlas {}x{}, inside {:.4}\n",
                ctx.model.num_vertices(),
                ctx.model.faces.len(),
                ctx.atlas.height,
                ctx.atlas.width,
                ctx.atlas.inside_fraction()
            );
            for (k, name) in crate::body_model::LSP_NAMES.iter().enumerate() {
                report.push_str(&format!("  part {k:2} {name:<16} {} texels\n", counts[k]));
            }
            if let Some(dir) = png {
                io::write_indexed_png(&io::part_labels(&ctx.seg.assign), &dir.join("part_segmentation.png"))?;
            }
            Ok(report)
        }
    }
}
