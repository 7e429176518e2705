//! The `objfield` command-line tool: dataset generation, training,
//! rendering, decomposition, editing, evaluation and the editing service.

pub mod server;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use objfield::dataset::{corrupt_labels, generate_dataset, read_split, write_dataset, Split};
use objfield::evaluate::{evaluate_field, predict_view, EvalOptions};
use objfield::imageio::{depth_png, label_png, read_labels, rgb_png};
use objfield::manipulate::{render_manipulated_view, vote_map, ManipulationSpec};
use objfield::metrics::{average_precision, labels_to_codes};
use objfield::nn::{Checkpoint, ObjectTask, TrainConfig, Trainer};
use objfield::render::{render_view, RenderOptions};
use objfield::session::{LoadedField, Orbit};
use objfield::{AnalyticScene, Camera, Field};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "objfield", version, about = "Train, decompose and edit object radiance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a multi-view dataset of an analytic scene.
    Gen(GenArgs),
    /// Train a field on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Render a color image (and optionally masks and depth).
    Render(RenderArgs),
    /// Render object label images.
    Decompose(DecomposeArgs),
    /// Render a view with object edits applied.
    Manipulate(ManipulateArgs),
    /// Score predicted masks or a whole field.
    Eval(EvalArgs),
    /// Run the HTTP editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FieldSource {
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    pub ckpt: Option<PathBuf>,
    /// Analytic scene: a built-in name (`toy3`) or a scene JSON file.
    #[arg(long)]
    pub scene: Option<String>,
}

#[derive(Debug, Args)]
pub struct ViewArgs {
    /// Camera JSON file.
    #[arg(long, conflicts_with = "orbit")]
    pub camera: Option<PathBuf>,
    /// Orbit camera as `azimuth,elevation,radius` (degrees, metres).
    #[arg(long, value_parser = parse_orbit)]
    pub orbit: Option<Orbit>,
    /// Image size for orbit cameras.
    #[arg(long, default_value_t = 96)]
    pub res: u32,
    #[arg(long, default_value_t = 50.0)]
    pub fov: f64,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 64)]
    pub k_coarse: usize,
    #[arg(long, default_value_t = 64)]
    pub k_fine: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SamplingArgs {
    fn options(&self) -> RenderOptions {
        RenderOptions { k_coarse: self.k_coarse, k_fine: self.k_fine, jitter: true, seed: self.seed }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "toy3")]
    pub scene: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub train: usize,
    #[arg(long, default_value_t = 8)]
    pub test: usize,
    #[arg(long, default_value_t = 64)]
    pub res: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 3 x 64 network, 512 rays, 32 + 32 samples.
    Compact,
    /// 4 x 128 network, 1024 rays, 64 + 128 samples.
    Standard,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = Preset::Compact)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Disable the two empty-space losses.
    #[arg(long)]
    pub no_3d: bool,
    /// Corrupt this fraction of every training mask before training.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 250)]
    pub log_every: usize,
    /// Evaluate on the test split afterwards.
    #[arg(long)]
    pub eval: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub field: FieldSource,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the 16-bit label image.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write the 16-bit depth image (millimetres).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub field: FieldSource,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Label every camera of this dataset split instead of a single view.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output file, or output directory with `--data`.
    #[arg(long)]
    pub out: PathBuf,
    /// Apply one neighbour-voting pass to the labels.
    #[arg(long)]
    pub voted: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ManipulateArgs {
    #[command(flatten)]
    pub field: FieldSource,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Spec JSON file: one spec object or an array of specs.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Collision report path; defaults to `collisions.json` next to `--out`.
    #[arg(long)]
    pub collisions: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `mask_*.png` label images.
    #[arg(long, requires = "gt", conflicts_with_all = ["ckpt", "scene"])]
    pub pred: Option<PathBuf>,
    /// Directory of ground-truth `mask_*.png` label images.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Trained checkpoint to evaluate on `--data`.
    #[arg(long, requires = "data")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub scene: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// IoU thresholds for AP.
    #[arg(long, num_args = 1.., default_values_t = [0.5, 0.75, 0.9])]
    pub ap: Vec<f64>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

fn parse_orbit(s: &str) -> Result<Orbit, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, e, r] => Ok(Orbit { azimuth_deg: *a, elevation_deg: *e, radius: *r }),
        _ => Err("expected azimuth,elevation,radius".into()),
    }
}

/// Built-in scene by name, or a scene JSON file.
pub fn load_scene(name: &str) -> anyhow::Result<AnalyticScene> {
    if name == "toy3" {
        return Ok(AnalyticScene::toy3());
    }
    let text = std::fs::read_to_string(name).with_context(|| format!("reading scene {name}"))?;
    Ok(AnalyticScene::from_json(&text)?)
}

fn load_field(src: &FieldSource) -> anyhow::Result<LoadedField> {
    match (&src.ckpt, &src.scene) {
        (Some(p), _) => Ok(LoadedField::from_checkpoint(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)),
        (None, Some(s)) => Ok(LoadedField::Oracle(load_scene(s)?)),
        (None, None) => bail!("give --ckpt or --scene"),
    }
}

fn load_camera(view: &ViewArgs, field: &dyn Field) -> anyhow::Result<Camera> {
    match &view.camera {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing camera {}", p.display()))?)
        }
        None => Ok(view.orbit.unwrap_or_default().camera(&field.bounds(), view.fov, view.res)?),
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => bail!("split must be train or test, got {s}"),
    }
}

fn gen(a: &GenArgs) -> anyhow::Result<Value> {
    let scene = load_scene(&a.scene)?;
    let (train, test) = generate_dataset(&scene, a.train, a.test, a.res, a.seed)?;
    write_dataset(&a.out, &train, &test)?;
    Ok(json!({ "out": a.out, "objects": scene.object_ids(), "train": a.train, "test": a.test, "resolution": a.res }))
}

fn train(a: &TrainArgs) -> anyhow::Result<Value> {
    let data = read_split(&a.data, Split::Train)?;
    let h = data.h();
    let mut config = match a.preset {
        Preset::Compact => TrainConfig::compact(h, a.iterations),
        Preset::Standard => TrainConfig::standard(h, a.iterations),
    };
    config.seed = a.seed;
    if let Some(lr) = a.lr {
        config.lr_start = lr;
        config.lr_end = a.lr_end.unwrap_or(lr / 10.0);
    } else if let Some(end) = a.lr_end {
        config.lr_end = end;
    }
    let masks = match a.noise {
        Some(f) => corrupt_labels(&data.masks(), h, f, a.seed.wrapping_add(1))?,
        None => data.masks(),
    };
    let task = ObjectTask { masks, object_2d: config.losses.object_2d, object_3d: !a.no_3d };
    let mut trainer = Trainer::with_tasks(&data, config, vec![task])?;
    let start = std::time::Instant::now();
    while !trainer.is_done() {
        let e = trainer.step()?;
        if a.log_every > 0 && (e.iteration % a.log_every == 0 || e.iteration == 1) {
            log::info!(
                "iter {} lr {:.2e} psnr {:.2} obj2d {:.4} empty {:.4} obj3d {:.4}",
                e.iteration,
                e.lr,
                e.psnr,
                e.objects[0].object_2d,
                e.objects[0].empty_3d,
                e.objects[0].object_3d
            );
        }
    }
    let net = trainer.network(0);
    let last = trainer.log.entries.last().cloned();
    Checkpoint { network: net.clone(), iteration: trainer.iteration, seed: a.seed }.save(&a.out)?;
    let mut summary = json!({
        "checkpoint": a.out,
        "iterations": trainer.iteration,
        "seconds": start.elapsed().as_secs_f64(),
        "final_train_psnr": last.map(|e| e.psnr),
    });
    if a.eval {
        let test = read_split(&a.data, Split::Test)?;
        summary["eval"] = serde_json::to_value(evaluate_field(&net, &test, &EvalOptions::default())?)?;
    }
    Ok(summary)
}

fn render(a: &RenderArgs) -> anyhow::Result<Value> {
    let field = load_field(&a.field)?;
    let cam = load_camera(&a.view, &field)?;
    let opts = a.sampling.options();
    let out = render_view(&field, &cam, &opts)?;
    let (w, h) = (cam.width, cam.height);
    let color: Vec<_> = out.iter().map(|o| o.color).collect();
    write(&a.out, &rgb_png(&color, w, h)?)?;
    if let Some(p) = &a.mask {
        let labels: Vec<u16> = out.iter().map(|o| objfield::dataset::code_label(&o.code_hat)).collect();
        write(p, &label_png(&labels, w, h)?)?;
    }
    if let Some(p) = &a.depth {
        let depth: Vec<f64> = out.iter().map(|o| o.depth).collect();
        write(p, &depth_png(&depth, w, h)?)?;
    }
    Ok(json!({ "out": a.out, "width": w, "height": h }))
}

fn label_counts(labels: &[u16]) -> Value {
    let mut counts = std::collections::BTreeMap::new();
    for l in labels {
        *counts.entry(l.to_string()).or_insert(0usize) += 1;
    }
    json!(counts)
}

fn decompose_view(field: &LoadedField, cam: &Camera, opts: &RenderOptions, voted: bool) -> anyhow::Result<Vec<u16>> {
    let eval = EvalOptions { render: *opts, ..EvalOptions::default() };
    let (pred, _) = predict_view(field, cam, &eval)?;
    let labels = pred.labels();
    if !voted {
        return Ok(labels);
    }
    let h = field.num_objects();
    let slots: Vec<usize> = labels.iter().map(|l| if *l == 0 { h } else { *l as usize - 1 }).collect();
    Ok(vote_map(&slots, cam.width as usize, cam.height as usize)
        .into_iter()
        .map(|s| if s == h { 0 } else { (s + 1) as u16 })
        .collect())
}

fn decompose(a: &DecomposeArgs) -> anyhow::Result<Value> {
    let field = load_field(&a.field)?;
    let opts = a.sampling.options();
    match &a.data {
        Some(root) => {
            let split = read_split(root, parse_split(&a.split)?)?;
            std::fs::create_dir_all(&a.out)?;
            for (i, v) in split.views.iter().enumerate() {
                let labels = decompose_view(&field, &v.camera, &opts, a.voted)?;
                write(&a.out.join(format!("mask_{i:04}.png")), &label_png(&labels, v.camera.width, v.camera.height)?)?;
            }
            Ok(json!({ "out": a.out, "views": split.views.len() }))
        }
        None => {
            let cam = load_camera(&a.view, &field)?;
            let labels = decompose_view(&field, &cam, &opts, a.voted)?;
            write(&a.out, &label_png(&labels, cam.width, cam.height)?)?;
            Ok(json!({ "out": a.out, "pixels_per_label": label_counts(&labels) }))
        }
    }
}

/// One spec object or an array of them.
pub fn parse_specs(text: &str) -> anyhow::Result<Vec<ManipulationSpec>> {
    let v: Value = serde_json::from_str(text)?;
    Ok(match v {
        Value::Array(_) => serde_json::from_value(v)?,
        _ => vec![serde_json::from_value(v)?],
    })
}

fn manipulate(a: &ManipulateArgs) -> anyhow::Result<Value> {
    let field = load_field(&a.field)?;
    let cam = load_camera(&a.view, &field)?;
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let specs = parse_specs(&text).with_context(|| format!("parsing spec {}", a.spec.display()))?;
    let view = render_manipulated_view(&field, &cam, &specs, &a.sampling.options())?;
    write(&a.out, &rgb_png(&view.color, view.width, view.height)?)?;
    if let Some(p) = &a.mask {
        write(p, &label_png(&view.labels, view.width, view.height)?)?;
    }
    let collisions_path = a.collisions.clone().unwrap_or_else(|| a.out.with_file_name("collisions.json"));
    write(&collisions_path, serde_json::to_string_pretty(&view.collisions)?.as_bytes())?;
    Ok(json!({ "out": a.out, "collisions": view.collisions.len(), "collisions_file": collisions_path }))
}

fn mask_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("mask_") && n.ends_with(".png")))
        .collect();
    files.sort();
    Ok(files)
}

/// AP of the label images in `pred` against same-named images in `gt`.
pub fn eval_label_dirs(pred: &Path, gt: &Path, thresholds: &[f64]) -> anyhow::Result<Vec<(f64, f64)>> {
    let preds = mask_files(pred)?;
    if preds.is_empty() {
        bail!("no mask_*.png files in {}", pred.display());
    }
    let mut pred_labels = Vec::new();
    let mut gt_labels = Vec::new();
    for p in &preds {
        let g = gt.join(p.file_name().expect("file name"));
        let (pl, pw, ph) = read_labels(p)?;
        let (gl, gw, gh) = read_labels(&g).with_context(|| format!("reading {}", g.display()))?;
        if (pw, ph) != (gw, gh) {
            bail!("{} and {} differ in size", p.display(), g.display());
        }
        pred_labels.push(pl);
        gt_labels.push(gl);
    }
    let h = pred_labels.iter().chain(&gt_labels).flatten().copied().max().unwrap_or(0).max(1) as usize;
    let codes: Vec<_> = pred_labels.iter().map(|l| labels_to_codes(l, h)).collect();
    thresholds.iter().map(|t| Ok((*t, average_precision(&codes, &gt_labels, *t)?))).collect()
}

fn eval(a: &EvalArgs) -> anyhow::Result<Value> {
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let ap = eval_label_dirs(pred, gt, &a.ap)?;
        return Ok(json!({ "ap": ap }));
    }
    let data = a.data.as_ref().context("give --pred/--gt or --ckpt/--scene with --data")?;
    let src = FieldSource { ckpt: a.ckpt.clone(), scene: a.scene.clone() };
    let field = load_field(&src)?;
    let split = read_split(data, parse_split(&a.split)?)?;
    let opts = EvalOptions { render: a.sampling.options(), ap_thresholds: a.ap.clone(), ..EvalOptions::default() };
    let report = evaluate_field(&field, &split, &opts)?;
    Ok(json!({
        "psnr": report.psnr,
        "ssim": report.ssim,
        "ap": report.ap,
        "empty_space": report.empty_space,
        "empty_space_fraction": report.empty_space.fraction(),
    }))
}

fn print_human(v: &Value) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                println!("{k}: {v}");
            }
        }
        other => println!("{other}"),
    }
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let (summary, json_out) = match &cli.command {
        Command::Gen(a) => (gen(a)?, a.json),
        Command::Train(a) => (train(a)?, a.json),
        Command::Render(a) => (render(a)?, a.json),
        Command::Decompose(a) => (decompose(a)?, a.json),
        Command::Manipulate(a) => (manipulate(a)?, a.json),
        Command::Eval(a) => (eval(a)?, a.json),
        Command::Serve(a) => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(server::serve(&a.addr))?;
            return Ok(());
        }
    };
    if json_out {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print_human(&summary);
    }
    Ok(())
}
