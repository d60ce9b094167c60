use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadforge::annotate::{write_manifest, Annotation, DatasetManifest, GenerationMeta, ImageRecord};
use roadforge::background::{Condition, Lighting, Weather};
use roadforge::geometry::io::{PoseFile, POSE_SCHEMA};
use roadforge::localize::{write_detections, Detection};
use roadforge::ImageBuffer;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadforge")).args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn calibrate_writes_pose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pose.json");
    for landmarks in ["landmarks_enu.json", "landmarks_geodetic.json"] {
        let o = run(&[
            "calibrate",
            "--landmarks",
            p(&fixture(landmarks)),
            "--intrinsics",
            p(&fixture("intrinsics.json")),
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        let stdout = text(&o.stdout);
        assert!(stdout.contains("P10"));
        assert!(stdout.contains("rms"));
        let pose: PoseFile = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(pose.schema, POSE_SCHEMA);
        assert!(pose.rms_error.unwrap() < 1e-3);
        assert!((pose.translation[2] - 24.916742552066083).abs() < 1e-3);
    }
}

#[test]
fn calibrate_with_three_landmarks_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pose.json");
    let o = run(&[
        "calibrate",
        "--landmarks",
        p(&fixture("landmarks_3.json")),
        "--intrinsics",
        p(&fixture("intrinsics.json")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("degenerate"), "{}", text(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn calibrate_rejects_unknown_schema() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(fixture("landmarks_geodetic.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, src.replace("roadforge-landmarks/1", "roadforge-landmarks/9")).unwrap();
    let o = run(&[
        "calibrate",
        "--landmarks",
        p(&bad),
        "--intrinsics",
        p(&fixture("intrinsics.json")),
        "--out",
        p(&dir.path().join("pose.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("schema"));
}

fn annotation(id: u64, center: [f64; 2]) -> Annotation {
    Annotation {
        instance_id: id,
        bottom_box: [center[0] - 10.0, center[1] - 4.0, 20.0, 8.0],
        bottom_center: center,
        visible_fraction: 1.0,
        truncated: false,
        model_id: "sedan".into(),
        ground_position: [0.0, 0.0],
        heading: 0.0,
        length_m: 4.5,
        width_m: 1.8,
    }
}

fn write_fixture_manifest(dir: &Path) -> PathBuf {
    let mut m = DatasetManifest::new(GenerationMeta { seed: 0, tool_version: "test".into(), config_hash: "x".into() });
    m.images.push(ImageRecord {
        id: "cam0-0000".into(),
        path: "images/cam0/0000.png".into(),
        width: 720,
        height: 480,
        camera_id: "cam0".into(),
        condition: Condition { weather: Weather::Sunny, lighting: Lighting::Day },
        source_background: "bg.png".into(),
    });
    m.annotations.insert("cam0-0000".into(), vec![annotation(1, [100.0, 100.0]), annotation(2, [300.0, 200.0])]);
    let path = dir.join("manifest.json");
    write_manifest(&m, &path).unwrap();
    path
}

fn write_dets(path: &Path, dets: &[([f64; 2], f64, &str)]) {
    let dets: Vec<Detection> = dets
        .iter()
        .map(|(c, s, id)| Detection { image_id: id.to_string(), bottom_center: *c, score: *s, r#box: None })
        .collect();
    write_detections(std::fs::File::create(path).unwrap(), &dets).unwrap();
}

#[test]
fn evaluate_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fixture_manifest(dir.path());
    let dets = dir.path().join("dets.jsonl");
    let report = dir.path().join("report.json");
    let csv = dir.path().join("table.csv");

    write_dets(&dets, &[([100.0, 100.0], 0.9, "cam0-0000"), ([300.0, 200.0], 0.8, "cam0-0000")]);
    let o = run(&["evaluate", "--manifest", p(&manifest), "--detections", p(&dets), "--out", p(&report)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("mAP 100.0"));

    write_dets(&dets, &[([103.0, 100.0], 0.9, "cam0-0000"), ([300.0, 230.0], 0.8, "cam0-0000")]);
    let o = run(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--detections",
        p(&dets),
        "--out",
        p(&report),
        "--csv",
        p(&csv),
        "--label",
        "hand",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["schema"], "roadforge-eval/1");
    assert_eq!(v["report"]["ap_per_threshold"]["5"], 0.5);
    assert_eq!(v["report"]["ap50"], 1.0);
    let table = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("label,images,"));
    assert!(lines[1].starts_with("hand,1,"));
}

#[test]
fn evaluate_unknown_image_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fixture_manifest(dir.path());
    let dets = dir.path().join("dets.jsonl");
    write_dets(&dets, &[([100.0, 100.0], 0.9, "nope")]);
    let o = run(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--detections",
        p(&dets),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("nope"));
}

#[test]
fn background_of_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    let img = ImageBuffer::from_raw(8, 6, (0..8 * 6 * 3).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
    for i in 0..7 {
        img.save_png(&frames.join(format!("{i:02}.png"))).unwrap();
    }
    let out = dir.path().join("bg.png");
    let o = run(&["background", "--frames", p(&frames), "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(ImageBuffer::load_png(&out).unwrap(), img);

    ImageBuffer::new(4, 4).save_png(&frames.join("99.png")).unwrap();
    let o = run(&["background", "--frames", p(&frames), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("99.png"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["background", "--frames", p(&empty), "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn serve_on_busy_port_exits_2() {
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--port", &port]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("cannot bind"));
}

#[test]
fn demo_then_generate() {
    let dir = tempfile::tempdir().unwrap();
    let demo = dir.path().join("demo");
    let o = run(&[
        "demo",
        "--out",
        p(&demo),
        "--width",
        "240",
        "--height",
        "160",
        "--cameras",
        "1",
        "--images-per-view",
        "2",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let config = demo.join("config.toml");
    let out = dir.path().join("out");
    let o = run(&["generate", "--config", p(&config), "--out", p(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(out.join("manifest.json").is_file());

    // existing output needs --force
    let o = run(&["generate", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["generate", "--config", p(&config), "--out", p(&out), "--force"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
}

#[test]
fn generate_with_missing_model_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let demo = dir.path().join("demo");
    assert!(run(&["demo", "--out", p(&demo), "--width", "120", "--height", "80", "--cameras", "1", "--images-per-view", "1"])
        .status
        .success());
    let config = demo.join("config.toml");
    let text_cfg = std::fs::read_to_string(&config).unwrap();
    let broken = dir.path().join("broken.toml");
    let models = text_cfg.lines().find(|l| l.starts_with("model_dir")).expect("model_dir line").to_string();
    std::fs::write(&broken, text_cfg.replace(&models, "model_dir = \"/nonexistent/models\"")).unwrap();
    // relative paths resolve against the config file's directory
    let broken_in_demo = demo.join("broken.toml");
    std::fs::rename(&broken, &broken_in_demo).unwrap();
    let out = dir.path().join("out");
    let o = run(&["generate", "--config", p(&broken_in_demo), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("models"));
    assert!(!out.exists());
}
