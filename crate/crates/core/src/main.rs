use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use scenesplat::bridge;
use scenesplat::cascade::{enhance_window, EnhanceSettings};
use scenesplat::diffusion::{
    build_schedule, train_toy_denoiser, AffineDenoiser, Denoiser, GaussianScoreDenoiser, LatentVideo, NoiseSource,
    OracleDenoiser, TrainOptions, ZeroDenoiser,
};
use scenesplat::io::tensor::{clip_to_tensor, tensor_to_frames};
use scenesplat::io::{read_cameras, read_png, read_ply, read_tensor, write_gray_png, write_ply, write_png, write_tensor, DType, PlyPrecision};
use scenesplat::optimize::{optimize_scene, write_loss_csv, OptimizeConfig};
use scenesplat::pipeline::{
    build_denoiser, codec_for, evaluate, init_scene_from_rgbd, make_trajectory, run_pipeline_with, window_indices,
    DenoiserContext, DenoiserSpec, RGBDInput, RunOptions, TrajectoryParams,
};
use scenesplat::render::{render_color, render_scale_map};
use scenesplat::types::{Camera, GaussianScene, ImageFrame, PipelineConfig, Trajectory, VideoClip, CONFIG_KEYS};

#[derive(Parser)]
#[command(name = "scenesplat", version, about = "Gaussian-splat scene reconstruction guided by momentum-constrained video diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; every key can also be overridden with --<key>.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a scene from an RGB image and a depth tensor.
    Init {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        rgbd: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// Camera JSON for the input view; a centred pinhole camera otherwise.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene along a camera file.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one window's enhancement and dump every intermediate.
    Enhance {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full windowed reconstruction.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the checkpoint directory if it holds a checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// PSNR/SSIM of a scene against held-out frames.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        /// Clip tensor, frames x height x width x 3.
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize a scene against a clip tensor.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Train the toy affine denoiser on a clip tensor.
    Toy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.25)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        pairs: usize,
    },
    /// Serve a denoiser over stdin/stdout frames.
    #[command(hide = true)]
    BridgeServe {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// zero, gaussian:<std>, oracle:<clip latent tensor> or trained:<path>.
        #[arg(long, default_value = "zero")]
        serve: String,
    },
}

fn with_override_flags(cmd: Command) -> Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    names.iter().fold(cmd, |cmd, name| {
        cmd.mut_subcommand(name, |sub| {
            CONFIG_KEYS.iter().fold(sub, |sub, key| {
                sub.arg(
                    Arg::new(*key)
                        // built once per process, so leaking the flag name is harmless
                        .long(&*Box::leak(key.replace('_', "-").into_boxed_str()))
                        .value_name("VALUE")
                        .help_heading("Config overrides")
                        .num_args(1),
                )
            })
        })
    })
}

fn overrides(matches: &ArgMatches) -> Vec<(&'static str, String)> {
    let Some((_, sub)) = matches.subcommand() else {
        return Vec::new();
    };
    CONFIG_KEYS
        .iter()
        .filter_map(|k| sub.get_one::<String>(k).map(|v| (*k, v.clone())))
        .collect()
}

/// Relative paths in a config file are taken relative to the file.
fn resolve_paths(cfg: &mut PipelineConfig, base: &Path) {
    let fix = |p: &str| -> String {
        let path = Path::new(p);
        if path.is_absolute() {
            p.to_string()
        } else {
            base.join(path).to_string_lossy().into_owned()
        }
    };
    for field in [
        &mut cfg.oracle_scene,
        &mut cfg.input_image,
        &mut cfg.input_depth,
        &mut cfg.input_camera,
        &mut cfg.trajectory_file,
        &mut cfg.checkpoint_dir,
    ] {
        if let Some(p) = field.as_mut() {
            *p = fix(p);
        }
    }
    cfg.output_dir = fix(&cfg.output_dir);
    if let Some(p) = cfg.denoiser.strip_prefix("trained:") {
        cfg.denoiser = format!("trained:{}", fix(p));
    }
}

fn load_config(args: &ConfigArgs, pairs: &[(&'static str, String)]) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = PipelineConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
            resolve_paths(&mut cfg, path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => PipelineConfig::default(),
    };
    if !pairs.is_empty() {
        cfg = cfg.with_overrides(pairs.iter().map(|(k, v)| (*k, v.as_str())))?;
    }
    Ok(cfg)
}

fn read_depth(path: &Path, w: usize, h: usize) -> Result<Vec<f64>> {
    let t = read_tensor(path)?;
    match t.dims[..] {
        [dh, dw] | [dh, dw, 1] if (dh, dw) == (h, w) => Ok(t.data),
        _ => bail!("depth tensor {} has dims {:?}, expected [{h}, {w}]", path.display(), t.dims),
    }
}

fn input_camera(camera: Option<&Path>, focal: Option<f64>, w: usize, h: usize) -> Result<Camera> {
    Ok(match camera {
        Some(p) => read_cameras(p)?
            .into_iter()
            .next()
            .with_context(|| format!("{} holds no camera", p.display()))?,
        None => Camera::looking_forward(w, h, focal.unwrap_or(w as f64))?,
    })
}

fn load_input(cfg: &PipelineConfig) -> Result<RGBDInput> {
    let image_path = cfg.input_image.as_deref().context("input_image is not set")?;
    let depth_path = cfg.input_depth.as_deref().context("input_depth is not set")?;
    let image = read_png(Path::new(image_path))?;
    let (w, h) = (image.width(), image.height());
    let depth = read_depth(Path::new(depth_path), w, h)?;
    let cam = input_camera(cfg.input_camera.as_deref().map(Path::new), cfg.input_focal, w, h)?;
    Ok(RGBDInput::new(image, depth, cam)?)
}

fn load_trajectory(cfg: &PipelineConfig, base: &Camera) -> Result<Trajectory> {
    let params = TrajectoryParams {
        step: cfg.trajectory_step,
        radius: cfg.trajectory_radius,
        angle_deg: cfg.trajectory_angle,
        file: cfg.trajectory_file.as_ref().map(PathBuf::from),
    };
    Ok(make_trajectory(cfg.trajectory.parse()?, base, &params, cfg.trajectory_count)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_run(cfg: &PipelineConfig, resume: bool) -> Result<()> {
    let input = load_input(cfg)?;
    let trajectory = load_trajectory(cfg, &input.camera)?;
    let codec = codec_for(cfg.latent_factor)?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    create_dir(&out_dir)?;
    let oracle_scene = match &cfg.oracle_scene {
        Some(p) => read_ply(Path::new(p))?,
        None => init_scene_from_rgbd(&input, cfg)?,
    };
    let spec: DenoiserSpec = cfg.denoiser.parse()?;
    let denoiser = build_denoiser(
        &spec,
        &DenoiserContext {
            input_image: &input.image,
            trajectory: &trajectory,
            codec: codec.as_ref(),
            oracle_scene: &oracle_scene,
            background: cfg.background,
            gaussian_std: cfg.gaussian_std,
            bridge_timeout: Duration::from_secs_f64(cfg.bridge_timeout),
        },
    )?;
    let checkpoint_dir = cfg
        .checkpoint_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.join("checkpoint"));
    let opts = RunOptions {
        checkpoint_dir: Some(checkpoint_dir.clone()),
        resume,
        stop_after: None,
    };
    let out = run_pipeline_with(&input, &trajectory, cfg, denoiser.as_ref(), codec.as_ref(), &opts)
        .with_context(|| format!("pipeline aborted; completed iterations are checkpointed in {}", checkpoint_dir.display()))?;
    write_ply(&out_dir.join("scene.ply"), &out.scene, PlyPrecision::Float)?;
    for (s, h) in out.histories.iter().enumerate() {
        write_loss_csv(&out_dir.join(format!("loss_iter_{s}.csv")), h)?;
    }
    let mut manifest = String::from("index,provenance\n");
    for (i, f) in out.store.iter() {
        manifest.push_str(&format!("{i},{}\n", f.provenance));
    }
    std::fs::write(out_dir.join("frames.csv"), manifest).context("writing frame manifest")?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string()).context("writing config copy")?;
    let renders = out_dir.join("renders");
    create_dir(&renders)?;
    for (k, cam) in trajectory.cameras().iter().enumerate() {
        write_png(&renders.join(format!("{:04}.png", k + 1)), &render_color(&out.scene, cam, cfg.background)?)?;
    }
    for (s, h) in out.histories.iter().enumerate() {
        if let Some(r) = h.last() {
            println!("iteration {s}: terminal loss {:.6} with {} gaussians", r.loss, r.num_gaussians);
        }
    }
    println!("wrote {}", out_dir.join("scene.ply").display());
    Ok(())
}

fn cmd_enhance(cfg: &PipelineConfig, scene_path: &Path, window: usize, out: &Path) -> Result<()> {
    let input = load_input(cfg)?;
    let trajectory = load_trajectory(cfg, &input.camera)?;
    let scene = read_ply(scene_path)?;
    let range = window_indices(window, cfg.window_len, cfg.overlap);
    let (first, last) = (*range.start(), *range.end());
    let cams = trajectory.slice(first, last)?;
    let codec = codec_for(cfg.latent_factor)?;
    let oracle_scene = match &cfg.oracle_scene {
        Some(p) => read_ply(Path::new(p))?,
        None => scene.clone(),
    };
    let denoiser = build_denoiser(
        &cfg.denoiser.parse()?,
        &DenoiserContext {
            input_image: &input.image,
            trajectory: &trajectory,
            codec: codec.as_ref(),
            oracle_scene: &oracle_scene,
            background: cfg.background,
            gaussian_std: cfg.gaussian_std,
            bridge_timeout: Duration::from_secs_f64(cfg.bridge_timeout),
        },
    )?;
    let s_max = cfg.s_max.unwrap_or_else(|| scene.scale_percentile(0.9));
    let schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max, cfg.deterministic)?;
    let n_well = if window == 0 { 0 } else { cfg.overlap };
    let w = enhance_window(
        &scene,
        &cams,
        first,
        &input.image,
        n_well,
        &EnhanceSettings::from_config(cfg, s_max),
        denoiser.as_ref(),
        codec.as_ref(),
        &schedule,
        &NoiseSource::new(cfg.seed).substream(&[0x57, window as u64]),
    )?;
    for (name, clip) in [
        ("rendered", &w.rendered),
        ("consistent", &w.consistent.clip),
        ("free", &w.free.clip),
        ("blended", &w.blended),
    ] {
        let dir = out.join(name);
        create_dir(&dir)?;
        write_tensor(&out.join(format!("{name}.sstf")), &clip_to_tensor(clip), DType::F32)?;
        for (f, idx) in clip.frames().iter().zip(clip.frame_indices()) {
            write_png(&dir.join(format!("{idx:04}.png")), f)?;
        }
    }
    let (sw, sh) = (cams.cameras()[0].width, cams.cameras()[0].height);
    let scale_dir = out.join("scale_map");
    create_dir(&scale_dir)?;
    for (k, m) in w.scale_maps.iter().enumerate() {
        write_png(&scale_dir.join(format!("{:04}.png", first + k)), &ImageFrame::new(sw, sh, m.values().to_vec())?)?;
    }
    let mu_dir = out.join("mu");
    create_dir(&mu_dir)?;
    for k in 0..w.mu.frames() {
        write_gray_png(&mu_dir.join(format!("{:04}.png", first + k)), sw, sh, w.mu.frame(k))?;
    }
    println!("window {window} [{first}, {last}] written to {}", out.display());
    Ok(())
}

fn served_denoiser(spec: &str) -> Result<Box<dyn Denoiser>> {
    if spec == "zero" {
        return Ok(Box::new(ZeroDenoiser));
    }
    if let Some(std) = spec.strip_prefix("gaussian:") {
        return Ok(Box::new(GaussianScoreDenoiser::new(vec![0.0], std.parse()?)?));
    }
    if let Some(path) = spec.strip_prefix("oracle:") {
        let t = read_tensor(Path::new(path))?;
        let [f, h, w, c] = t.dims[..] else {
            bail!("oracle targets need a frames x height x width x channels tensor, got {:?}", t.dims);
        };
        return Ok(Box::new(OracleDenoiser::new(&LatentVideo::new(h, w, c, 1, (0..f).collect(), t.data)?)));
    }
    if let Some(path) = spec.strip_prefix("trained:") {
        return Ok(Box::new(AffineDenoiser::load(Path::new(path))?));
    }
    bail!("unknown served denoiser {spec:?}")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = with_override_flags(<Cli as clap::CommandFactory>::command()).get_matches();
    let pairs = overrides(&matches);
    let cli = Cli::from_arg_matches(&matches)?;
    match cli.command {
        Cmd::Init {
            cfg,
            rgbd,
            depth,
            camera,
            out,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            let image = read_png(&rgbd)?;
            let (w, h) = (image.width(), image.height());
            let depth = read_depth(&depth, w, h)?;
            let cam = input_camera(camera.as_deref(), cfg.input_focal, w, h)?;
            let scene = init_scene_from_rgbd(&RGBDInput::new(image, depth, cam)?, &cfg)?;
            write_ply(&out, &scene, PlyPrecision::Float)?;
            println!("{} gaussians written to {}", scene.len(), out.display());
        }
        Cmd::Render {
            cfg,
            scene,
            cameras,
            out,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            let scene = read_ply(&scene)?;
            let cams = read_cameras(&cameras)?;
            create_dir(&out)?;
            let s_max = cfg.s_max.unwrap_or_else(|| scene.scale_percentile(0.9));
            let mut frames = Vec::new();
            for (k, cam) in cams.iter().enumerate() {
                let img = render_color(&scene, cam, cfg.background)?;
                write_png(&out.join(format!("{:04}.png", k + 1)), &img)?;
                let map = render_scale_map(&scene, cam, s_max)?;
                let gray: Vec<f64> = (0..cam.width * cam.height)
                    .map(|p| map.values()[3 * p..3 * p + 3].iter().cloned().fold(0.0, f64::max))
                    .collect();
                write_gray_png(&out.join(format!("scale_{:04}.png", k + 1)), cam.width, cam.height, &gray)?;
                frames.push(img);
            }
            let clip = VideoClip::sequential(frames)?;
            write_tensor(&out.join("frames.sstf"), &clip_to_tensor(&clip), DType::F32)?;
            log::info!("rendered {} frames of {} gaussians", cams.len(), scene.len());
        }
        Cmd::Enhance {
            cfg,
            scene,
            window,
            out,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            create_dir(&out)?;
            cmd_enhance(&cfg, &scene, window, &out)?;
        }
        Cmd::Run { cfg, resume } => {
            let cfg = load_config(&cfg, &pairs)?;
            cmd_run(&cfg, resume)?;
        }
        Cmd::Eval {
            cfg,
            scene,
            heldout,
            cameras,
            out,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            let scene = read_ply(&scene)?;
            let clip = VideoClip::sequential(tensor_to_frames(&read_tensor(&heldout)?)?)?;
            let cams = read_cameras(&cameras)?;
            let table = evaluate(&scene, &clip, &cams, cfg.background)?;
            match out {
                Some(p) => std::fs::write(&p, table.to_csv()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", table.to_csv()),
            }
        }
        Cmd::Fit {
            cfg,
            scene,
            frames,
            cameras,
            out,
            loss,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            let scene: GaussianScene = read_ply(&scene)?;
            let clip = VideoClip::sequential(tensor_to_frames(&read_tensor(&frames)?)?)?;
            let cams = read_cameras(&cameras)?;
            let (fit, history) = optimize_scene(&scene, &clip, &cams, &OptimizeConfig::from_pipeline(&cfg))?;
            write_ply(&out, &fit, PlyPrecision::Float)?;
            if let Some(p) = loss {
                write_loss_csv(&p, &history)?;
            }
            if let Some(r) = history.last() {
                println!("final loss {:.6} with {} gaussians", r.loss, r.num_gaussians);
            }
        }
        Cmd::Toy {
            cfg,
            clip,
            out,
            epochs,
            lr,
            pairs: draws,
        } => {
            let cfg = load_config(&cfg, &pairs)?;
            let clip = VideoClip::sequential(tensor_to_frames(&read_tensor(&clip)?)?)?;
            let codec = codec_for(cfg.latent_factor)?;
            let schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max, cfg.deterministic)?;
            let opts = TrainOptions {
                epochs,
                pairs_per_step: draws,
                learning_rate: lr,
                seed: cfg.seed,
            };
            let (model, history) = train_toy_denoiser(&codec.encode(&clip)?, &schedule, &opts)?;
            model.save(&out)?;
            if let (Some(a), Some(b)) = (history.first(), history.last()) {
                println!("training loss {a:.6} -> {b:.6} over {} epochs", history.len());
            }
        }
        Cmd::BridgeServe { cfg, serve } => {
            let cfg = load_config(&cfg, &pairs)?;
            let schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max, cfg.deterministic)?;
            let denoiser = served_denoiser(&serve)?;
            let counters = bridge::serve(
                denoiser.as_ref(),
                &schedule,
                &mut std::io::stdin().lock(),
                &mut std::io::stdout().lock(),
            )?;
            log::info!(
                "bridge served {} requests ({} responses, {} errors)",
                counters.requests,
                counters.responses,
                counters.errors
            );
        }
    }
    Ok(())
}
