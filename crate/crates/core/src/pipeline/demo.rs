//! Self-contained demo inputs: box-car models, a four-way intersection,
//! calibrated cameras with landmark files, synthetic background plates and a
//! `generate` configuration.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::seq::SliceRandom;

use super::PipelineError;
use crate::background::{write_library_index, Lighting as LightTag, LibraryRecord, Weather};
use crate::geometry::io::{write_json, LandmarkEntry, LandmarkFile, WorldCoord, LANDMARK_SCHEMA};
use crate::geometry::{project_point, CameraIntrinsics, CameraPose};
use crate::imagebuf::ImageBuffer;
use crate::render::{Axis, ModelMeta};
use crate::rng;
use crate::traffic::{LaneRecord, NetworkFile, RouteRecord};

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub width: u32,
    pub height: u32,
    pub cameras: usize,
    pub images_per_view: usize,
    pub backgrounds_per_camera: usize,
    pub seed: u64,
    /// Value for `[enhancement] mode`.
    pub enhancement: String,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            width: 720,
            height: 480,
            cameras: 4,
            images_per_view: 10,
            backgrounds_per_camera: 4,
            seed: 0,
            enhancement: "baseline".into(),
        }
    }
}

impl DemoOptions {
    /// A quick variant for tests.
    pub fn small() -> Self {
        Self { width: 240, height: 160, cameras: 2, images_per_view: 2, backgrounds_per_camera: 2, ..Self::default() }
    }
}

/// `(name, length, width, body height, cabin height, cabin length, color, y-up file)`
const MODELS: [(&str, f64, f64, f64, f64, f64, [u8; 3], bool); 4] = [
    ("sedan", 4.6, 1.8, 0.8, 0.6, 2.4, [178, 34, 34], false),
    ("suv", 4.8, 1.95, 1.0, 0.75, 2.8, [40, 70, 140], false),
    ("hatchback", 3.9, 1.75, 0.8, 0.65, 2.0, [220, 220, 215], false),
    ("van", 5.2, 2.0, 2.0, 0.0, 0.0, [235, 190, 40], true),
];

fn push_box(obj: &mut String, base: &mut usize, lo: [f64; 3], hi: [f64; 3], y_up: bool) {
    for i in 0..8 {
        let x = if i & 1 == 0 { lo[0] } else { hi[0] };
        let y = if i & 2 == 0 { lo[1] } else { hi[1] };
        let z = if i & 4 == 0 { lo[2] } else { hi[2] };
        if y_up {
            // forward +x, up +y, left is then -z
            writeln!(obj, "v {x} {z} {}", -y).unwrap();
        } else {
            writeln!(obj, "v {x} {y} {z}").unwrap();
        }
    }
    const QUADS: [[usize; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    for q in QUADS {
        let v = q.map(|i| *base + i + 1);
        writeln!(obj, "f {} {} {} {}", v[0], v[1], v[2], v[3]).unwrap();
    }
    *base += 8;
}

fn model_obj(l: f64, w: f64, body: f64, cabin: f64, cabin_len: f64, y_up: bool) -> String {
    let mut obj = String::from("# procedural box car\n");
    let mut base = 0;
    let (hl, hw) = (l / 2.0, w / 2.0);
    push_box(&mut obj, &mut base, [-hl, -hw, 0.0], [hl, hw, body], y_up);
    if cabin > 0.0 {
        let (c0, c1) = (-hl + 0.35 * (l - cabin_len), -hl + 0.35 * (l - cabin_len) + cabin_len);
        push_box(&mut obj, &mut base, [c0, -hw + 0.1, body], [c1, hw - 0.1, body + cabin], y_up);
    }
    obj
}

fn lane(id: &str, from: [f64; 2], to: [f64; 2]) -> LaneRecord {
    LaneRecord { id: id.into(), polyline: vec![from, to], width: 3.5, speed_limit: 13.9 }
}

/// Four-way intersection of two two-lane roads, one straight route per lane.
pub fn demo_network() -> NetworkFile {
    const R: f64 = 120.0;
    const O: f64 = 1.75;
    let lanes = vec![
        lane("eb", [-R, -O], [R, -O]),
        lane("wb", [R, O], [-R, O]),
        lane("nb", [O, -R], [O, R]),
        lane("sb", [-O, R], [-O, -R]),
    ];
    let routes = lanes
        .iter()
        .map(|l| RouteRecord { id: l.id.clone(), lanes: vec![l.id.clone()], flow_veh_per_s: 0.3 })
        .collect();
    NetworkFile { lanes, routes }
}

fn demo_camera(i: usize, n: usize, width: u32, height: u32) -> (CameraIntrinsics, CameraPose) {
    let f = 0.85 * width as f64;
    let k = CameraIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height).unwrap();
    let phi = std::f64::consts::TAU * i as f64 / n as f64 + 0.5;
    let eye = Vector3::new(28.0 * phi.cos(), 28.0 * phi.sin(), 8.0 + i as f64 % 2.0);
    let target = Vector3::new(-4.0 * phi.cos(), -4.0 * phi.sin(), 0.0);
    (k, CameraPose::look_at(&eye, &target, &Vector3::z()).unwrap())
}

fn demo_landmarks(k: &CameraIntrinsics, pose: &CameraPose, seed: u64, cam: &str) -> LandmarkFile {
    let mut cands = Vec::new();
    for gx in -6..=6 {
        for gy in -6..=6 {
            cands.push(Vector3::new(gx as f64 * 5.0 + 0.5, gy as f64 * 5.0 - 0.5, 0.0));
        }
    }
    for (x, y) in [(6.0, 6.0), (-6.0, 6.0), (6.0, -6.0), (-6.0, -6.0)] {
        cands.push(Vector3::new(x, y, 4.5));
    }
    let mut r = rng::stream(seed, &["demo-landmarks".into(), cam.into()]);
    cands.shuffle(&mut r);
    let margin = 10.0;
    let inside = |p: &Vector2<f64>| {
        p.x > margin && p.y > margin && p.x < k.width as f64 - margin && p.y < k.height as f64 - margin
    };
    let landmarks = cands
        .iter()
        .filter_map(|w| project_point(k, pose, w).ok().filter(inside).map(|p| (w, p)))
        .take(10)
        .enumerate()
        .map(|(j, (w, p))| LandmarkEntry {
            name: format!("L{:02}", j + 1),
            world: WorldCoord::Enu([w.x, w.y, w.z]),
            pixel: [p.x, p.y],
        })
        .collect();
    LandmarkFile { schema: Some(LANDMARK_SCHEMA.into()), reference: None, landmarks }
}

fn on_road(g: &Vector2<f64>) -> bool {
    (g.y.abs() < 3.5 && g.x.abs() < 120.0) || (g.x.abs() < 3.5 && g.y.abs() < 120.0)
}

fn marking(g: &Vector2<f64>) -> bool {
    let dashed = |along: f64, across: f64| across.abs() < 0.08 && along.abs() > 8.0 && along.rem_euclid(6.0) < 3.0;
    let edge = |along: f64, across: f64| (across.abs() - 3.35).abs() < 0.08 && along.abs() > 3.5;
    dashed(g.x, g.y) || dashed(g.y, g.x) || edge(g.x, g.y) || edge(g.y, g.x)
}

/// Procedural road plate seen through the camera, brightness scaled by
/// `gain`, with per-pixel noise.
pub fn render_plate(k: &CameraIntrinsics, pose: &CameraPose, gain: f64, seed: u64, key: &str) -> ImageBuffer {
    let mut img = ImageBuffer::new(k.width, k.height);
    let rt = pose.rotation().transpose();
    let c = pose.center();
    let mut r = rng::stream(seed, &["demo-plate".into(), key.into()]);
    for v in 0..k.height {
        for u in 0..k.width {
            let n = k.normalize(&Vector2::new(u as f64 + 0.5, v as f64 + 0.5));
            let d = rt * Vector3::new(n.x, n.y, 1.0);
            let base: [f64; 3] = if d.z < -1e-6 {
                let t = -c.z / d.z;
                let g = Vector2::new(c.x + t * d.x, c.y + t * d.y);
                if on_road(&g) {
                    if marking(&g) { [225.0, 225.0, 215.0] } else { [88.0, 88.0, 94.0] }
                } else {
                    [72.0, 112.0, 58.0]
                }
            } else {
                let up = d.z.clamp(0.0, 1.0);
                [150.0 - 60.0 * up, 185.0 - 40.0 * up, 235.0]
            };
            let noise: f64 = r.random_range(-6.0..6.0);
            img.put(u, v, base.map(|b| (b * gain + noise).round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Writes the demo inputs into `dir` (created if needed) and returns the
/// path of the generated `config.toml`.
pub fn write_demo(dir: &Path, opts: &DemoOptions) -> Result<std::path::PathBuf, PipelineError> {
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| io(p, e));
    mkdir(dir)?;
    let models = dir.join("models");
    mkdir(&models)?;
    for (name, l, w, body, cabin, cabin_len, color, y_up) in MODELS {
        let obj = models.join(format!("{name}.obj"));
        std::fs::write(&obj, model_obj(l, w, body, cabin, cabin_len, y_up)).map_err(|e| io(&obj, e))?;
        let meta = ModelMeta {
            forward: Axis::PosX,
            up: if y_up { Axis::PosY } else { Axis::PosZ },
            length_m: l,
            base_color: color,
        };
        let side = ModelMeta::sidecar_path(&obj);
        write_json(&side, &meta).map_err(|e| io(&side, e))?;
    }
    let net = dir.join("network.json");
    write_json(&net, &demo_network()).map_err(|e| io(&net, e))?;

    let t0 = DateTime::parse_from_rfc3339("2022-08-01T09:00:00-04:00").unwrap();
    let conditions = [
        (Weather::Sunny, LightTag::Day, 1.0),
        (Weather::Cloudy, LightTag::Day, 0.85),
        (Weather::Sunny, LightTag::Day, 1.05),
        (Weather::Rain, LightTag::Twilight, 0.6),
    ];
    let mut cfg = format!(
        "seed = {}\noutput_dir = \"out\"\nimages_per_view = {}\nmodel_dir = \"models\"\nnetwork = \"network.json\"\n\n\
         [enhancement]\nmode = \"{}\"\n\n",
        opts.seed, opts.images_per_view, opts.enhancement
    );
    for c in 0..opts.cameras {
        let id = format!("cam{c}");
        let cdir = dir.join("cameras").join(&id);
        mkdir(&cdir)?;
        let (k, pose) = demo_camera(c, opts.cameras, opts.width, opts.height);
        write_json(&cdir.join("intrinsics.json"), &k).map_err(|e| io(&cdir, e))?;
        write_json(&cdir.join("landmarks.json"), &demo_landmarks(&k, &pose, opts.seed, &id)).map_err(|e| io(&cdir, e))?;

        let bdir = dir.join("backgrounds").join(&id);
        mkdir(&bdir)?;
        let mut records = Vec::new();
        for b in 0..opts.backgrounds_per_camera {
            let (weather, lighting, gain) = conditions[b % conditions.len()];
            let name = format!("plate_{b:02}.png");
            let plate = render_plate(&k, &pose, gain, opts.seed, &format!("{id}/{b}"));
            let p = bdir.join(&name);
            plate.save_png(&p).map_err(|e| io(&p, e))?;
            records.push(LibraryRecord { path: name, captured_at: t0 + Duration::hours(b as i64), weather, lighting });
        }
        let index = bdir.join("index.json");
        write_library_index(&index, &records).map_err(|e| io(&index, e))?;

        if c == 0 {
            write_frames(dir, &k, &pose, opts.seed)?;
        }
        write!(
            cfg,
            "[[cameras]]\nid = \"{id}\"\nintrinsics = \"cameras/{id}/intrinsics.json\"\n\
             landmarks = \"cameras/{id}/landmarks.json\"\nbackgrounds = \"backgrounds/{id}/index.json\"\n\n"
        )
        .unwrap();
    }
    let cp = dir.join("config.toml");
    std::fs::write(&cp, cfg).map_err(|e| io(&cp, e))?;
    Ok(cp)
}

/// Seven raw frames of the first camera with transient blobs, for the
/// `background` command.
fn write_frames(dir: &Path, k: &CameraIntrinsics, pose: &CameraPose, seed: u64) -> Result<(), PipelineError> {
    let fdir = dir.join("frames").join("cam0");
    std::fs::create_dir_all(&fdir).map_err(|e| io(&fdir, e))?;
    let plate = render_plate(k, pose, 1.0, seed, "frames");
    for f in 0..7 {
        let mut img = plate.clone();
        let mut r = rng::stream(seed, &["demo-frame".into(), (f as u64).into()]);
        for _ in 0..3 {
            let (w, h) = (k.width / 8, k.height / 10);
            let x0 = r.random_range(0..k.width - w);
            let y0 = r.random_range(0..k.height - h);
            let color = [r.random(), r.random(), r.random()];
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    img.put(x, y, color);
                }
            }
        }
        let p = fdir.join(format!("frame_{f:02}.png"));
        img.save_png(&p).map_err(|e| io(&p, e))?;
    }
    Ok(())
}
