//! The `generate` workflow: backgrounds, traffic, rendering, enhancement and
//! annotation for every configured camera view.

mod config;
pub mod demo;

pub use config::{
    CameraConfig, EnhancementConfig, EnhancementMode, LightingConfig, PipelineConfig, RandomizationConfig,
    SimulationConfig,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{annotate_frame, write_manifest, Annotation, DatasetManifest, GenerationMeta, ImageRecord};
use crate::background::{load_library, sample_backgrounds, BackgroundEntry, SamplingPlan};
use crate::enhance::{self, composite, extract_crops, harmonize_crop, CropSet, EnhanceError};
use crate::geometry::io::{read_intrinsics, read_landmarks, read_pose};
use crate::geometry::{solve_pnp, CameraIntrinsics, CameraPose, SolveOptions};
use crate::imagebuf::ImageBuffer;
use crate::render::{load_mesh_with_meta, read_meta, render_scene, Lighting, Mesh, ModelMeta, VehicleInstance};
use crate::rng;
use crate::traffic::{
    collision_filter, randomize_poses, simulate, FrameScene, LaneNetwork, RandomizationParams, SimParams, VehicleType,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Invalid configuration or inputs, detected before any output is written.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Stage(String),
}

impl PipelineError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Vehicle models keyed by file stem.
pub struct ModelLibrary {
    pub models: BTreeMap<String, (Arc<Mesh>, VehicleType)>,
}

impl ModelLibrary {
    /// Loads every `*.obj` in `dir`, using `<stem>.json` sidecars when present.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| PipelineError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
            .collect();
        paths.sort();
        let mut models = BTreeMap::new();
        for p in paths {
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            let side = ModelMeta::sidecar_path(&p);
            let meta = if side.exists() { read_meta(&side) } else { Ok(ModelMeta::default()) }
                .map_err(|e| PipelineError::Config(format!("model {id}: {e}")))?;
            let mesh = load_mesh_with_meta(&p, &meta).map_err(|e| PipelineError::Config(format!("model {id}: {e}")))?;
            let scale = meta.length_m / mesh.length();
            let kind = VehicleType { model_id: id.clone(), length: meta.length_m, width: mesh.width() * scale };
            models.insert(id, (Arc::new(mesh), kind));
        }
        if models.is_empty() {
            return Err(PipelineError::Config(format!("no .obj models in {}", dir.display())));
        }
        Ok(Self { models })
    }

    pub fn vehicle_types(&self) -> Vec<VehicleType> {
        self.models.values().map(|(_, k)| k.clone()).collect()
    }
}

struct View {
    id: String,
    k: CameraIntrinsics,
    pose: CameraPose,
    library: Vec<BackgroundEntry>,
    /// Library index of the background used by each frame.
    assignment: Vec<usize>,
}

/// Everything `generate` needs, loaded and checked up front.
struct Prepared {
    config: PipelineConfig,
    mode: EnhancementMode,
    network: LaneNetwork,
    flows: crate::traffic::Flows,
    models: ModelLibrary,
    views: Vec<View>,
    lighting: Lighting,
}

fn prepare(config: &PipelineConfig) -> Result<Prepared, PipelineError> {
    config.validate()?;
    let mode = config.enhancement_mode()?;
    let cfg_err = |m: String| PipelineError::Config(m);
    let net_text = std::fs::read_to_string(&config.network).map_err(|e| cfg_err(e.to_string()))?;
    let network = LaneNetwork::from_json(&net_text).map_err(|e| cfg_err(e.to_string()))?;
    let mut flows: crate::traffic::Flows = network.routes.iter().map(|r| (r.id.clone(), r.flow_veh_per_s)).collect();
    for (route, rate) in &config.flows {
        if network.route(route).is_none() {
            return Err(cfg_err(format!("flow for unknown route {route:?}")));
        }
        flows.insert(route.clone(), *rate);
    }
    let models = ModelLibrary::load(&config.model_dir)?;

    let mut views = Vec::with_capacity(config.cameras.len());
    for cam in &config.cameras {
        let ctx = |m: String| cfg_err(format!("camera {}: {m}", cam.id));
        let k = read_intrinsics(&cam.intrinsics).map_err(|e| ctx(e.to_string()))?;
        let pose = match (&cam.pose, &cam.landmarks) {
            (Some(p), _) => read_pose(p).map_err(|e| ctx(e.to_string()))?,
            (None, Some(l)) => {
                let file = read_landmarks(l).map_err(|e| ctx(e.to_string()))?;
                let corrs = file.correspondences(&k).map_err(|e| ctx(e.to_string()))?;
                let sol = solve_pnp(&k, &corrs, &SolveOptions::default()).map_err(|e| ctx(e.to_string()))?;
                log::info!("camera {}: pose from {} landmarks, rms {:.4} px", cam.id, corrs.len(), sol.rms_error);
                sol.pose
            }
            (None, None) => unreachable!("validated"),
        };
        let library = load_library(&cam.backgrounds).map_err(|e| ctx(e.to_string()))?;
        if library.is_empty() {
            return Err(ctx("background library is empty".into()));
        }
        if let Some(e) = library.iter().find(|e| e.image.dims() != (k.width, k.height)) {
            return Err(ctx(format!(
                "background {} is {:?}, intrinsics say {}x{}",
                e.path.display(),
                e.image.dims(),
                k.width,
                k.height
            )));
        }
        let assignment = assign_backgrounds(config, cam, &library).map_err(ctx)?;
        views.push(View { id: cam.id.clone(), k, pose, library, assignment });
    }
    let lighting = match &config.lighting {
        Some(l) => Lighting { sun_dir: Vector3::from(l.sun_dir).normalize(), ambient: l.ambient },
        None => Lighting::default(),
    };
    Ok(Prepared { config: config.clone(), mode, network, flows, models, views, lighting })
}

fn assign_backgrounds(
    config: &PipelineConfig,
    cam: &CameraConfig,
    library: &[BackgroundEntry],
) -> Result<Vec<usize>, String> {
    let n = config.images_per_view;
    if cam.sampling.is_empty() {
        return Ok((0..n)
            .map(|i| {
                let mut r = rng::stream(config.seed, &[cam.id.as_str().into(), (i as u64).into(), "background".into()]);
                r.random_range(0..library.len())
            })
            .collect());
    }
    let mut plan = SamplingPlan::new();
    for (cond, count) in &cam.sampling {
        plan.insert(config::parse_condition(cond)?, *count);
    }
    let seed = rng::derive_u64(config.seed, &[cam.id.as_str().into(), "background-plan".into()]);
    let picked = sample_backgrounds(library, &plan, seed).map_err(|e| e.to_string())?;
    Ok(picked.iter().map(|p| library.iter().position(|e| std::ptr::eq(e, *p)).unwrap()).collect())
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Replace an existing output directory.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub output_dir: PathBuf,
    pub images: usize,
    pub annotations: usize,
}

/// Removes the staging directory unless disarmed.
struct StagingGuard(Option<PathBuf>);

impl Drop for StagingGuard {
    fn drop(&mut self) {
        if let Some(p) = self.0.take() {
            let _ = std::fs::remove_dir_all(p);
        }
    }
}

struct FrameOutput {
    record: ImageRecord,
    annotations: Vec<Annotation>,
    crops: Option<CropSet>,
}

/// Runs the full pipeline. Output is written to a staging directory next to
/// `output_dir` and moved into place only on success.
pub fn generate(config: &PipelineConfig, config_bytes: &[u8], opts: &GenerateOptions) -> Result<GenerateSummary, PipelineError> {
    let prep = prepare(config)?;
    let out = &config.output_dir;
    if out.exists() && !opts.force {
        return Err(PipelineError::Config(format!("{} exists (use --force to replace it)", out.display())));
    }
    let name = out.file_name().ok_or_else(|| PipelineError::Config("output_dir has no final component".into()))?;
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    let staging = parent.join(format!(".{}.staging", name.to_string_lossy()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    let mut guard = StagingGuard(Some(staging.clone()));

    let mut manifest = DatasetManifest::new(GenerationMeta {
        seed: config.seed,
        tool_version: crate::VERSION.to_string(),
        config_hash: hex::encode(Sha256::digest(config_bytes)),
    });
    for view in &prep.views {
        let frames = run_view(&prep, view, &staging)?;
        for f in frames {
            manifest.annotations.insert(f.record.id.clone(), f.annotations);
            manifest.images.push(f.record);
        }
    }
    if let EnhancementMode::External { exchange, .. } = &prep.mode {
        let d = staging.join(exchange);
        std::fs::remove_dir_all(&d).map_err(|e| PipelineError::io(&d, e))?;
    }
    let mp = staging.join("manifest.json");
    write_manifest(&manifest, &mp).map_err(|e| PipelineError::Stage(e.to_string()))?;

    if out.exists() {
        std::fs::remove_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    }
    std::fs::rename(&staging, out).map_err(|e| PipelineError::io(out, e))?;
    guard.0 = None;
    Ok(GenerateSummary { output_dir: out.clone(), images: manifest.images.len(), annotations: manifest.annotation_count() })
}

fn run_view(prep: &Prepared, view: &View, staging: &Path) -> Result<Vec<FrameOutput>, PipelineError> {
    let cfg = &prep.config;
    let sim = &cfg.simulation;
    let n = cfg.images_per_view;
    let duration = (sim.warmup_s + sim.frame_interval_s * (n - 1) as f64).max(sim.dt);
    let params = SimParams { dt: sim.dt, idm: sim.idm, vehicle_types: prep.models.vehicle_types() };
    let traffic_seed = rng::derive_u64(cfg.seed, &[view.id.as_str().into(), "traffic".into()]);
    let scenes = simulate(&prep.network, &prep.flows, duration, traffic_seed, &params)
        .map_err(|e| PipelineError::Stage(format!("camera {}: {e}", view.id)))?;
    let dir = staging.join("images").join(&view.id);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;

    let frames: Vec<FrameOutput> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = sim.warmup_s + sim.frame_interval_s * i as f64;
            let idx = ((t / sim.dt).round() as usize).min(scenes.len() - 1);
            let out = render_frame(prep, view, &scenes[idx], i, &dir);
            if let Ok(f) = &out {
                log::info!("camera {} frame {}/{}: {} labels", view.id, i + 1, n, f.annotations.len());
            }
            out
        })
        .collect::<Result<_, _>>()?;

    match &prep.mode {
        EnhancementMode::External { exchange, command } => external_pass(view, frames, &staging.join(exchange), command, &dir),
        _ => Ok(frames),
    }
}

fn frame_name(i: usize) -> String {
    format!("{i:04}")
}

fn render_frame(prep: &Prepared, view: &View, scene: &FrameScene, i: usize, dir: &Path) -> Result<FrameOutput, PipelineError> {
    let cfg = &prep.config;
    let stage = |m: String| PipelineError::Stage(format!("camera {} frame {i}: {m}", view.id));
    let frame_seed = rng::derive_u64(cfg.seed, &[view.id.as_str().into(), (i as u64).into()]);
    let rp = RandomizationParams {
        pos_variance: cfg.randomization.pos_variance,
        heading_range: cfg.randomization.heading_range_deg.to_radians(),
    };
    let scene = collision_filter(&randomize_poses(scene, &rp, frame_seed));
    let instances: Vec<VehicleInstance> = scene
        .vehicles
        .iter()
        .map(|v| VehicleInstance::place(v, prep.models.models[&v.model_id].0.clone()))
        .collect();
    let bg = &view.library[view.assignment[i]];
    let render = render_scene(&bg.image, &instances, &view.k, &view.pose, &prep.lighting).map_err(|e| stage(e.to_string()))?;
    let annotations =
        annotate_frame(&render, &instances, &view.k, &view.pose, cfg.min_visible).map_err(|e| stage(e.to_string()))?;

    let mut crops = None;
    let image = match prep.mode {
        EnhancementMode::Off => render.image.clone(),
        EnhancementMode::Baseline => {
            let mut set = extract_crops(&render, cfg.enhancement.padding);
            for c in &mut set.crops {
                match harmonize_crop(c, &bg.image, cfg.enhancement.ring_width) {
                    Ok(h) => *c = h,
                    Err(EnhanceError::EmptyRing(id)) => log::warn!("vehicle {id} fills its crop; left unharmonized"),
                    Err(e) => return Err(stage(e.to_string())),
                }
            }
            composite(&render.image, &set).map_err(|e| stage(e.to_string()))?
        }
        EnhancementMode::External { .. } => {
            crops = Some(extract_crops(&render, cfg.enhancement.padding));
            render.image.clone()
        }
    };
    let path = dir.join(format!("{}.png", frame_name(i)));
    image.save_png(&path).map_err(|e| PipelineError::io(&path, e))?;
    let record = ImageRecord {
        id: format!("{}-{}", view.id, frame_name(i)),
        path: format!("images/{}/{}.png", view.id, frame_name(i)),
        width: view.k.width,
        height: view.k.height,
        camera_id: view.id.clone(),
        condition: bg.condition,
        source_background: bg.path.to_string_lossy().replace('\\', "/"),
    };
    Ok(FrameOutput { record, annotations, crops })
}

/// Hands the crops of a view to the external translator and composites the
/// returned crops over the rendered frames.
fn external_pass(
    view: &View,
    mut frames: Vec<FrameOutput>,
    exchange_root: &Path,
    command: &[String],
    image_dir: &Path,
) -> Result<Vec<FrameOutput>, PipelineError> {
    let exchange = exchange_root.join(&view.id);
    std::fs::create_dir_all(&exchange).map_err(|e| PipelineError::io(&exchange, e))?;
    let batch: Vec<(String, CropSet)> =
        frames.iter_mut().enumerate().map(|(i, f)| (frame_name(i), f.crops.take().expect("external mode"))).collect();
    let stage = |m: String| PipelineError::Stage(format!("camera {}: {m}", view.id));
    enhance::export_for_translation(&batch, &exchange).map_err(|e| stage(e.to_string()))?;
    log::info!("camera {}: running {:?} on {}", view.id, command[0], exchange.display());
    let status = Command::new(&command[0])
        .args(&command[1..])
        .arg(&exchange)
        .status()
        .map_err(|e| stage(format!("cannot run {:?}: {e}", command[0])))?;
    if !status.success() {
        return Err(stage(format!("{:?} exited with {status}", command[0])));
    }
    let translated = enhance::import_translated(&exchange).map_err(|e| stage(e.to_string()))?;
    let expected: Vec<&String> = batch.iter().map(|(id, _)| id).collect();
    if translated.iter().map(|(id, _)| id).collect::<Vec<_>>() != expected {
        return Err(stage("translator changed the frame list".into()));
    }
    translated.par_iter().try_for_each(|(fid, set)| {
        let path = image_dir.join(format!("{fid}.png"));
        let img = ImageBuffer::load_png(&path).map_err(|e| PipelineError::io(&path, e))?;
        let out = composite(&img, set).map_err(|e| stage(e.to_string()))?;
        out.save_png(&path).map_err(|e| PipelineError::io(&path, e))
    })?;
    Ok(frames)
}

/// Reads, resolves and validates a TOML configuration file. Returns the
/// config and its raw bytes (for hashing).
pub fn load_config(path: &Path) -> Result<(PipelineConfig, Vec<u8>), PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let mut config = PipelineConfig::from_toml(text)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    config.resolve_paths(base);
    Ok((config, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(PipelineError::Config(_))));
        let text = r#"
            output_dir = "out"
            model_dir = "models"
            network = "net.json"
            images_per_view = 0
            cameras = []
        "#;
        let c = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 0);
        assert!(matches!(c.validate(), Err(PipelineError::Config(m)) if m.contains("images_per_view")));
    }

    #[test]
    fn enhancement_modes() {
        let mut c = PipelineConfig::from_toml(
            "output_dir = \"o\"\nmodel_dir = \"m\"\nnetwork = \"n\"\ncameras = []\n[enhancement]\nmode = \"external:xchg\"\n",
        )
        .unwrap();
        assert!(c.enhancement_mode().is_err());
        c.enhancement.external_command = vec!["true".into()];
        assert_eq!(
            c.enhancement_mode().unwrap(),
            EnhancementMode::External { exchange: "xchg".into(), command: vec!["true".into()] }
        );
        c.enhancement.mode = "fancy".into();
        assert!(c.enhancement_mode().is_err());
    }

    #[test]
    fn missing_model_dir_fails_before_output() {
        let dir = tempfile::tempdir().unwrap();
        demo::write_demo(dir.path(), &demo::DemoOptions::small()).unwrap();
        let (mut config, bytes) = load_config(&dir.path().join("config.toml")).unwrap();
        config.model_dir = dir.path().join("nope");
        let err = generate(&config, &bytes, &GenerateOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
        assert!(!config.output_dir.exists());
    }

    #[test]
    fn small_generate_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        demo::write_demo(dir.path(), &demo::DemoOptions::small()).unwrap();
        let (mut config, bytes) = load_config(&dir.path().join("config.toml")).unwrap();
        let a = generate(&config, &bytes, &GenerateOptions::default()).unwrap();
        assert!(a.annotations > 0, "{a:?}");
        let first = std::fs::read(a.output_dir.join("manifest.json")).unwrap();
        // existing output without force is refused
        assert!(matches!(generate(&config, &bytes, &GenerateOptions::default()), Err(PipelineError::Config(_))));
        config.output_dir = dir.path().join("again");
        let b = generate(&config, &bytes, &GenerateOptions::default()).unwrap();
        assert_eq!(std::fs::read(b.output_dir.join("manifest.json")).unwrap(), first);
    }
}
