use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stylefield::checks::{run_suite, Suite};
use stylefield::cubemap::{bake_appearance_cubemap, BakeView};
use stylefield::eval::{depth_from_tensor, mean_scores, score_sequence, write_report};
use stylefield::io::{self, f32t, load_camera_path, png, RenderSet, SceneDataset};
use stylefield::render::{render_image, ImageSource, RenderOptions};
use stylefield::scene::SceneModel;
use stylefield::stylizer::{pretrain_stylizer, reconstruction_mae, FeatureBank, PretrainConfig, StylizerNet, DEFAULT_BANK_SEED};
use stylefield::synth::{load_oracle, save_styles, synth_scene, synth_styles, SynthOptions, STYLE_SIZE};
use stylefield::train::{attach_ics, fit_scene, prepare_views, train_prompt, StageIConfig, StageIIConfig, StageIIScene, StyleTarget};
use stylefield::Tensor32;

const DEFAULT_SEED: u64 = 0;
const SUMMARY_FILE: &str = "summary.json";
const SOURCE_FILE: &str = "scene.txt";
const LOSS_FILE: &str = "loss.csv";
const ICS_DIR: &str = "ics";
/// Occlusion tolerance in density voxel edges.
const OCCLUSION_VOXELS: f64 = 2.0;
/// Grid resolution assumed when a render set does not record its voxel size.
const FALLBACK_GRID: f64 = 64.0;

#[derive(Parser)]
#[command(name = "stylefield", version, about = "Geometry-aware 3D scene stylization with visual prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with analytic ground truth.
    SynthScene {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 72)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate procedural style textures.
    SynthStyles {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 2D stylization network on a texture folder.
    PretrainStylizer {
        #[arg(long)]
        textures: PathBuf,
        #[arg(long, default_value_t = PretrainConfig::default().iterations)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage I: reconstruct a scene as density, UV mapping and appearance.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage II: train a visual prompt against frozen scenes and stylizer.
    Stylize {
        #[arg(long, value_delimiter = ',', required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        styles: PathBuf,
        #[arg(long)]
        stylizer: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a checkpoint along a camera path, optionally stylized.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, requires = "stylizer")]
        style: Option<PathBuf>,
        #[arg(long, requires = "style")]
        stylizer: Option<PathBuf>,
        #[arg(long, requires = "style")]
        prompt: Option<PathBuf>,
        #[arg(long)]
        camera_path: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warped consistency report over a rendered sequence.
    Eval {
        #[arg(long)]
        renders: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        pairs_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake the appearance network into a cubemap.
    BakeCubemap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 256)]
        face_res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit of a group of gradients.
    Gradcheck {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthScene { spec, seed, views, out } => {
            let scene = synth_scene(&spec, seed, views, &SynthOptions::default())?;
            scene.save(&out)?;
            println!("wrote {} views of `{spec}` to {}", views, out.display());
        }
        Command::SynthStyles { count, seed, out } => {
            save_styles(&out, &synth_styles(count, seed, STYLE_SIZE)?)?;
            println!("wrote {count} styles to {}", out.display());
        }
        Command::PretrainStylizer { textures, iters, seed, out } => pretrain(&textures, iters, seed, &out)?,
        Command::Fit { scene, config, out } => fit(&scene, config.as_deref(), &out)?,
        Command::Stylize { ckpts, styles, stylizer, config, out } => stylize(&ckpts, &styles, &stylizer, config.as_deref(), &out)?,
        Command::Render { ckpt, style, stylizer, prompt, camera_path, out } => {
            render(&ckpt, style.as_deref().zip(stylizer.as_deref()), prompt.as_deref(), &camera_path, &out)?
        }
        Command::Eval { renders, scene, pairs_seed, out } => eval(&renders, &scene, pairs_seed, &out)?,
        Command::BakeCubemap { ckpt, face_res, out } => {
            let model = SceneModel::<f32>::load(&ckpt)?;
            let cube = bake_appearance_cubemap(&model, face_res, BakeView::default())?;
            cube.save(&out)?;
            cube.save_png(out.with_extension("png"))?;
            println!("baked {face_res}x{face_res} faces to {}", out.display());
        }
        Command::Gradcheck { suite, seed } => {
            let suite: Suite = suite.parse()?;
            let outcomes = run_suite(suite, seed)?;
            for o in &outcomes {
                println!(
                    "{} {}: max rel err {:.3e} over {} coords ({} kinks skipped)",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.max_rel_err,
                    o.checked,
                    o.kinks
                );
            }
            ensure!(outcomes.iter().all(|o| o.passed), "gradient check failed");
        }
    }
    Ok(())
}

fn pretrain(textures: &Path, iters: usize, seed: u64, out: &Path) -> Result<()> {
    let tex = stylefield::synth::load_image_dir(textures)?;
    let cfg = PretrainConfig { iterations: iters, seed, ..PretrainConfig::default() };
    let mut rows = Vec::with_capacity(iters);
    let net = pretrain_stylizer::<f32>(&tex, &cfg, |r| {
        if r.iteration % 100 == 0 {
            eprintln!("iter {:>5}  reconstruction {:.4}  style {:.4}", r.iteration, r.reconstruction, r.style);
        }
        rows.push(r.clone());
    })?;
    net.save(out)?;
    io::write_csv(out.join(LOSS_FILE), &[], &rows)?;
    println!("reconstruction MAE {:.4}; stylizer written to {}", reconstruction_mae(&net, &tex)?, out.display());
    Ok(())
}

fn read_config<C: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<C> {
    match path {
        Some(p) => io::read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(C::default()),
    }
}

#[derive(Serialize)]
struct FitSummary {
    scene: String,
    config: StageIConfig,
    test_psnr: Option<f64>,
    diverged_at: Option<usize>,
    final_rec: Option<f64>,
    final_cycle: Option<f64>,
    voxel_size: f64,
    seconds: f64,
}

fn fit(scene: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: StageIConfig = read_config(config)?;
    let ds = SceneDataset::load(scene)?;
    let start = Instant::now();
    let res = fit_scene(&ds, &cfg, |r| {
        if r.iteration % 100 == 0 {
            eprintln!("iter {:>5}  rec {:.5}  cycle {:.5}", r.iteration, r.rec, r.cycle);
        }
    })?;
    res.model.save(out)?;
    io::write_csv(out.join(LOSS_FILE), &[], &res.curve)?;
    std::fs::write(out.join(SOURCE_FILE), scene.canonicalize().unwrap_or_else(|_| scene.to_path_buf()).display().to_string())?;
    let last = res.curve.last();
    io::write_json(
        out.join(SUMMARY_FILE),
        &FitSummary {
            scene: scene.display().to_string(),
            config: cfg,
            test_psnr: res.test_psnr,
            diverged_at: res.diverged,
            final_rec: last.map(|r| r.rec),
            final_cycle: last.map(|r| r.cycle),
            voxel_size: res.model.config.voxel_size(),
            seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    if let Some(it) = res.diverged {
        bail!("training diverged at iteration {it}; last finite parameters saved to {}", out.display());
    }
    match res.test_psnr {
        Some(p) => println!("held-out PSNR {p:.2} dB; checkpoint written to {}", out.display()),
        None => println!("checkpoint written to {}", out.display()),
    }
    Ok(())
}

/// Written next to a prompt file; `render` reads it to rebuild the pattern.
#[derive(Serialize, Deserialize)]
struct PromptSidecar {
    face_res: usize,
    noise_seed: u64,
    lambda_style: f64,
    shared: bool,
    scenes: Vec<String>,
    styles: Vec<String>,
    prompts: Vec<String>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32t"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .f32t style images in {}", dir.display());
    Ok(paths)
}

fn load_image(path: &Path) -> Result<Tensor32> {
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("png") => png::load_rgb(path)?,
        _ => f32t::load(path)?,
    })
}

/// Key identifying a stylized-target set: stylizer weights, style pixels and
/// the view extents.
fn ics_key(net: &StylizerNet<f32>, style: &Tensor32, extents: (usize, usize)) -> String {
    let mut h = Sha256::new();
    for (name, sum) in net.params.checksums() {
        h.update(name.as_bytes());
        h.update(sum);
    }
    h.update(f32t::encode(style));
    h.update(format!("{}x{}", extents.0, extents.1).as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn prompt_paths(out: &Path, count: usize) -> Vec<PathBuf> {
    if count == 1 {
        return vec![out.to_path_buf()];
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("prompt");
    (0..count).map(|k| out.with_file_name(format!("{stem}_{k}.f32t"))).collect()
}

fn stylize(ckpts: &[PathBuf], styles_dir: &Path, stylizer: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg: StageIIConfig = read_config(config)?;
    cfg.scenes = ckpts.iter().map(|p| p.display().to_string()).collect();
    let style_paths = image_files(styles_dir)?;
    cfg.styles = style_paths.iter().map(|p| p.display().to_string()).collect();
    cfg.validate()?;
    let styles: Vec<Tensor32> = style_paths.iter().map(|p| load_image(p)).collect::<Result<_>>()?;
    let net = StylizerNet::<f32>::load(stylizer)?;
    let models: Vec<SceneModel<f32>> = ckpts.iter().map(SceneModel::load).collect::<stylefield::Result<_>>()?;
    let mut scenes = Vec::with_capacity(models.len());
    for (ckpt, model) in ckpts.iter().zip(&models) {
        let source = std::fs::read_to_string(ckpt.join(SOURCE_FILE))
            .with_context(|| format!("{} does not record its source scene", ckpt.display()))?;
        let ds = SceneDataset::load(source.trim())?;
        let mut views = prepare_views(model, &ds, &ds.train(), &cfg)?;
        attach_cached_ics(&net, &mut views, &styles, &ckpt.join(ICS_DIR))?;
        eprintln!("{}: {} training views prepared", ckpt.display(), views.len());
        scenes.push(StageIIScene { model, views });
    }
    let targets: Vec<StyleTarget<f32>> =
        styles.iter().map(|s| StyleTarget::new(&net, s, cfg.face_res, cfg.seed)).collect::<stylefield::Result<_>>()?;
    let run = train_prompt(&cfg, &net, &scenes, &targets, |r| {
        if r.iteration % 100 == 0 {
            eprintln!("iter {:>5}  gas {:.4}  align {:.4}  style {:.4}", r.iteration, r.total, r.align, r.style_term);
        }
    })?;
    let count = if cfg.shared_prompt { 1 } else { styles.len() };
    let paths = prompt_paths(out, count);
    for (k, p) in paths.iter().enumerate() {
        f32t::save(p, run.prompt_for(k))?;
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("prompt");
    io::write_csv(out.with_file_name(format!("{stem}_gas.csv")), &[], &run.curve)?;
    io::write_json(
        out.with_extension("json"),
        &PromptSidecar {
            face_res: cfg.face_res,
            noise_seed: cfg.seed,
            lambda_style: cfg.lambda_style,
            shared: cfg.shared_prompt,
            scenes: cfg.scenes.clone(),
            styles: cfg.styles.clone(),
            prompts: paths.iter().map(|p| p.display().to_string()).collect(),
        },
    )?;
    let regime = if ckpts.len() == 1 { "scene-related" } else { "scene-agnostic" };
    println!("{regime} prompt(s) written: {}", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn attach_cached_ics(net: &StylizerNet<f32>, views: &mut [stylefield::train::PreparedView<f32>], styles: &[Tensor32], cache: &Path) -> Result<()> {
    let Some(first) = views.first() else { return Ok(()) };
    let extents = (first.width, first.height);
    let mut per_style = Vec::with_capacity(styles.len());
    for style in styles {
        let dir = cache.join(ics_key(net, style, extents));
        let files: Vec<PathBuf> = views.iter().map(|v| dir.join(format!("{:04}.f32t", v.frame))).collect();
        if files.iter().all(|f| f.exists()) {
            per_style.push(files.iter().map(f32t::load).collect::<stylefield::Result<Vec<Tensor32>>>()?);
            continue;
        }
        attach_ics(net, views, std::slice::from_ref(style))?;
        let fresh: Vec<Tensor32> = views.iter().map(|v| v.ics[0].clone()).collect();
        io::ensure_dir(&dir)?;
        for (f, t) in files.iter().zip(&fresh) {
            f32t::save(f, t)?;
        }
        per_style.push(fresh);
    }
    for (i, v) in views.iter_mut().enumerate() {
        v.ics = per_style.iter().map(|s| s[i].clone()).collect();
    }
    Ok(())
}

fn render(ckpt: &Path, styled: Option<(&Path, &Path)>, prompt: Option<&Path>, camera_path: &Path, out: &Path) -> Result<()> {
    let model = SceneModel::<f32>::load(ckpt)?;
    let cameras = load_camera_path(camera_path)?;
    let opts = RenderOptions::default();
    let cube = match styled {
        None => None,
        Some((style_path, stylizer)) => {
            let net = StylizerNet::<f32>::load(stylizer)?;
            let style = load_image(style_path)?;
            let (prompt, face_res, noise_seed) = match prompt {
                Some(p) => {
                    let t: Tensor32 = f32t::load(p)?;
                    ensure!(t.shape().len() == 3, "prompt {} must have rank 3", p.display());
                    let sidecar: Option<PromptSidecar> = sidecar_for(p).and_then(|s| io::read_json(s).ok());
                    let seed = sidecar.as_ref().map_or(DEFAULT_SEED, |s| s.noise_seed);
                    let face_res = t.shape()[2];
                    (Some(t), face_res, seed)
                }
                None => (None, StageIIConfig::default().face_res, DEFAULT_SEED),
            };
            let target = StyleTarget::new(&net, &style, face_res, noise_seed)?;
            Some(target.generator.cubemap(&net, prompt.as_ref())?)
        }
    };
    let mut images = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let source = cube.as_ref().map_or(ImageSource::Appearance, ImageSource::Cubemap);
        let r = render_image(&model, cam, source, &opts)?;
        images.push(r.rgb);
        depths.push(Some(r.depth));
        eprintln!("frame {i}/{}", cameras.len());
    }
    let set = RenderSet::new(cameras, images, depths, Some(model.config.voxel_size()), cube.is_some())?;
    set.save(out)?;
    println!("rendered {} frames to {}", set.info.frames, out.display());
    Ok(())
}

/// `prompt.f32t` and `prompt_k.f32t` both map to `prompt.json`.
fn sidecar_for(prompt: &Path) -> Option<PathBuf> {
    let direct = prompt.with_extension("json");
    if direct.exists() {
        return Some(direct);
    }
    let stem = prompt.file_stem()?.to_str()?;
    let base = stem.rsplit_once('_')?.0;
    Some(prompt.with_file_name(format!("{base}.json"))).filter(|p| p.exists())
}

fn eval(renders: &Path, scene: &Path, pairs_seed: u64, out: &Path) -> Result<()> {
    let set = RenderSet::load(renders)?;
    let depths: Vec<Vec<Option<f64>>> = match load_oracle(scene) {
        Ok(oracle) => set.cameras.iter().map(|c| oracle.depth_map(c)).collect(),
        Err(_) => set
            .depths
            .iter()
            .enumerate()
            .map(|(i, d)| d.as_ref().map(depth_from_tensor).with_context(|| format!("frame {i} has no depth and the scene has no oracle")))
            .collect::<Result<_>>()?,
    };
    let voxel = match set.info.voxel_size {
        Some(v) => v,
        None => {
            let ds = SceneDataset::load(scene)?;
            let e = ds.bbox().extent();
            e.iter().fold(0.0f64, |a, &b| a.max(b)) / (FALLBACK_GRID - 1.0)
        }
    };
    let bank = FeatureBank::<f32>::new(DEFAULT_BANK_SEED);
    let pairs = score_sequence(&bank, &set.images, &set.cameras, &depths, OCCLUSION_VOXELS * voxel, pairs_seed)?;
    write_report(out, &pairs)?;
    let m = mean_scores(&pairs);
    println!("E short {:.5}  long {:.5}  ({} pairs) written to {}", m.short, m.long, pairs.len(), out.display());
    Ok(())
}
