use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::init::{init_scene_from_rgbd, RGBDInput};
use super::store::{FrameStore, Provenance};
use super::trajectory::{window_count, window_indices};
use crate::cascade::{enhance_window, EnhanceSettings};
use crate::diffusion::{build_schedule, derive_seed, Denoiser, LatentCodec, NoiseSource};
use crate::error::{Error, Result};
use crate::io::tensor::{frame_to_tensor, tensor_to_frame};
use crate::io::{read_cameras, read_ply, read_tensor, write_cameras, write_ply, write_tensor, DType, PlyPrecision};
use crate::optimize::{optimize_scene, write_loss_csv, LossRecord, OptimizeConfig};
use crate::types::{GaussianScene, PipelineConfig, Trajectory};

const STREAM_WINDOW: u64 = 0x57;
const STREAM_OPTIMIZE: u64 = 0x4f;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Written after every completed iteration.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir` if one exists.
    pub resume: bool,
    /// Stop after this many completed iterations.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub scene: GaussianScene,
    pub store: FrameStore,
    /// One optimizer history per completed iteration.
    pub histories: Vec<Vec<LossRecord>>,
    pub windows: Vec<RangeInclusive<usize>>,
    /// Scale-map normalization used throughout the run.
    pub s_max: f64,
}

impl PipelineOutput {
    pub fn completed(&self) -> usize {
        self.histories.len()
    }
}

/// Windowed enhance-then-refine reconstruction along `trajectory`.
///
/// The input view is frame 0; trajectory camera `i` is frame `i`.
pub fn run_pipeline(
    input: &RGBDInput,
    trajectory: &Trajectory,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
) -> Result<PipelineOutput> {
    run_pipeline_with(input, trajectory, cfg, denoiser, codec, &RunOptions::default())
}

pub fn run_pipeline_with(
    input: &RGBDInput,
    trajectory: &Trajectory,
    cfg: &PipelineConfig,
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    opts: &RunOptions,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    input.validate()?;
    let (big_n, small_n) = (cfg.window_len, cfg.overlap);
    let m = trajectory.len();
    let iterations = window_count(m, big_n, small_n)?;
    let covered = *window_indices(iterations - 1, big_n, small_n).end();
    if covered < m {
        log::warn!("trajectory frames {}..={m} lie beyond the last full window and are ignored", covered + 1);
    }
    let windows: Vec<_> = (0..iterations).map(|s| window_indices(s, big_n, small_n)).collect();

    let resumed = match (&opts.checkpoint_dir, opts.resume) {
        (Some(dir), true) if dir.join(MANIFEST).exists() => Some(load_checkpoint(dir, cfg)?),
        _ => None,
    };
    let mut state = match resumed {
        Some(state) => {
            log::info!("resuming after iteration {}", state.histories.len());
            state
        }
        None => {
            let scene = init_scene_from_rgbd(input, cfg)?;
            let s_max = cfg.s_max.unwrap_or_else(|| scene.scale_percentile(0.9));
            RunState {
                store: FrameStore::new(input.image.clone(), input.camera.clone())?,
                scene,
                s_max,
                histories: Vec::new(),
            }
        }
    };

    let schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max, cfg.deterministic)?;
    let settings = EnhanceSettings::from_config(cfg, state.s_max);
    let base_noise = NoiseSource::new(cfg.seed);
    let last = opts.stop_after.map_or(iterations, |k| k.min(iterations));

    for (s, window) in windows.iter().enumerate().take(last).skip(state.histories.len()) {
        let (first, end) = (*window.start(), *window.end());
        let cams = trajectory.slice(first, end)?;
        let n_well = if s == 0 { 0 } else { small_n };
        log::info!("iteration {s}: window [{first}, {end}], {} gaussians", state.scene.len());
        let out = enhance_window(
            &state.scene,
            &cams,
            first,
            &input.image,
            n_well,
            &settings,
            denoiser,
            codec,
            &schedule,
            &base_noise.substream(&[STREAM_WINDOW, s as u64]),
        )
        .inspect_err(|e| log::error!("iteration {s} failed during enhancement: {e}"))?;

        if s > 0 {
            for i in first..first + small_n {
                state.store.remove(i)?;
            }
        }
        for (k, frame) in out.blended.into_frames().into_iter().enumerate() {
            state
                .store
                .insert(first + k, frame, cams.cameras()[k].clone(), Provenance::Generated(s))?;
        }

        let (clip, supervision_cams) = state.store.supervision()?;
        let opt_cfg = OptimizeConfig {
            seed: derive_seed(cfg.seed, &[STREAM_OPTIMIZE, s as u64]),
            ..OptimizeConfig::from_pipeline(cfg)
        };
        let (scene, history) = optimize_scene(&state.scene, &clip, &supervision_cams, &opt_cfg)
            .inspect_err(|e| log::error!("iteration {s} failed during optimization: {e}"))?;
        if let Some(r) = history.last() {
            log::info!("iteration {s}: terminal loss {:.6}, {} gaussians", r.loss, r.num_gaussians);
        }
        state.scene = scene;
        state.histories.push(history);
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(dir, cfg, &state)?;
        }
    }

    Ok(PipelineOutput {
        scene: state.scene,
        store: state.store,
        histories: state.histories,
        windows,
        s_max: state.s_max,
    })
}

struct RunState {
    scene: GaussianScene,
    store: FrameStore,
    s_max: f64,
    histories: Vec<Vec<LossRecord>>,
}

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: String,
    completed: usize,
    s_max: f64,
    frames: Vec<(usize, String)>,
}

/// The configuration with output locations blanked, for resume compatibility checks.
fn fingerprint(cfg: &PipelineConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = String::new();
    c.checkpoint_dir = None;
    c.to_toml_string()
}

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:05}.sstf"))
}

fn save_checkpoint(dir: &Path, cfg: &PipelineConfig, state: &RunState) -> Result<()> {
    std::fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_ply(&dir.join("scene.ply"), &state.scene, PlyPrecision::Double)?;
    let mut cams = Vec::new();
    let mut frames = Vec::new();
    for (i, f) in state.store.iter() {
        write_tensor(&frame_path(dir, i), &frame_to_tensor(&f.image), DType::F64)?;
        cams.push(f.camera.clone());
        frames.push((i, f.provenance.to_string()));
    }
    write_cameras(&dir.join("cameras.json"), &cams)?;
    for (s, h) in state.histories.iter().enumerate() {
        write_loss_csv(&dir.join(format!("loss_{s}.csv")), h)?;
    }
    let manifest = Manifest {
        config: fingerprint(cfg),
        completed: state.histories.len(),
        s_max: state.s_max,
        frames,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    // written last, so a present manifest implies a complete checkpoint
    std::fs::write(dir.join(MANIFEST), text).map_err(|e| Error::io("writing checkpoint manifest", e))
}

fn load_checkpoint(dir: &Path, cfg: &PipelineConfig) -> Result<RunState> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if manifest.config != fingerprint(cfg) {
        return Err(Error::Config(format!(
            "checkpoint in {} was written with a different configuration",
            dir.display()
        )));
    }
    let cams = read_cameras(&dir.join("cameras.json"))?;
    if cams.len() != manifest.frames.len() || manifest.frames.first().map(|f| f.0) != Some(0) {
        return Err(Error::parse(path.display().to_string(), "frame list does not match cameras"));
    }
    let mut store = None;
    for ((index, tag), cam) in manifest.frames.iter().zip(cams) {
        let image = tensor_to_frame(&read_tensor(&frame_path(dir, *index))?)?;
        match store.as_mut() {
            None => store = Some(FrameStore::new(image, cam)?),
            Some(st) => st.insert(*index, image, cam, tag.parse()?)?,
        }
    }
    let histories = (0..manifest.completed)
        .map(|s| read_loss_csv(&dir.join(format!("loss_{s}.csv"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunState {
        scene: read_ply(&dir.join("scene.ply"))?,
        store: store.expect("frame 0 present"),
        s_max: manifest.s_max,
        histories,
    })
}

/// Reads a loss history written by [`write_loss_csv`].
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        let loc = || format!("{}:{}", path.display(), line_no + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 6 fields, got {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(loc(), e.to_string()));
        let real = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(loc(), e.to_string()));
        out.push(LossRecord {
            step: int(f[0])?,
            frame_index: int(f[1])?,
            loss: real(f[2])?,
            l1: real(f[3])?,
            ssim_term: real(f[4])?,
            num_gaussians: int(f[5])?,
        });
    }
    Ok(out)
}
