use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use roadforge::annotate::read_manifest;
use roadforge::background::{median_background, BackgroundError};
use roadforge::eval::{evaluate, write_csv_row, EvalReport, THRESHOLDS};
use roadforge::geometry::io::{read_intrinsics, read_landmarks, write_json, PoseFile};
use roadforge::geometry::{solve_pnp, GeometryError, SolveOptions};
use roadforge::localize::read_detections;
use roadforge::pipeline::{self, demo, GenerateOptions, PipelineError};
use roadforge::ImageBuffer;

#[derive(Parser)]
#[command(name = "roadforge", version, about = "Synthetic roadside-camera datasets and bottom-center detection metrics")]
struct Cli {
    /// error, warn, info, debug, trace or off
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a camera pose from landmark correspondences.
    Calibrate {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a synthetic dataset from a TOML configuration.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Score a detection file against a dataset manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also append a table row (mAP, AP@20, AP@50, AR) to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Temporal median of every PNG in a directory.
    Background {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the calibration HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static files for the calibration UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Write a self-contained demo input set.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 720)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        #[arg(long, default_value_t = 4)]
        cameras: usize,
        #[arg(long, default_value_t = 10)]
        images_per_view: usize,
        #[arg(long, default_value = "baseline")]
        enhancement: String,
    },
}

enum Failure {
    /// Bad arguments or inputs: exit 2.
    Usage(String),
    /// Valid request that failed while running: exit 1.
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    let result = match cli.command {
        Cmd::Calibrate { landmarks, intrinsics, out } => calibrate(&landmarks, &intrinsics, &out),
        Cmd::Generate { config, seed, out, force } => generate(&config, seed, out, force),
        Cmd::Evaluate { manifest, detections, out, csv, label } => {
            evaluate_cmd(&manifest, &detections, &out, csv.as_deref(), &label)
        }
        Cmd::Background { frames, out } => background(&frames, &out),
        Cmd::Serve { port, host, ui } => serve(&host, port, ui),
        Cmd::Demo { out, width, height, cameras, images_per_view, enhancement } => {
            let opts = demo::DemoOptions { width, height, cameras, images_per_view, enhancement, ..Default::default() };
            demo::write_demo(&out, &opts).map(|p| println!("wrote {}", p.display())).map_err(runtime)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn calibrate(landmarks: &Path, intrinsics: &Path, out: &Path) -> CmdResult {
    let k = read_intrinsics(intrinsics).map_err(usage)?;
    let file = read_landmarks(landmarks).map_err(usage)?;
    let corrs = file.correspondences(&k).map_err(usage)?;
    let sol = match solve_pnp(&k, &corrs, &SolveOptions::default()) {
        Ok(s) => s,
        Err(e @ (GeometryError::NoConvergence { .. } | GeometryError::PointBehindCamera { .. })) => {
            return Err(runtime(e))
        }
        Err(e) => return Err(usage(e)),
    };
    for (c, e) in corrs.iter().zip(&sol.per_landmark_error) {
        if e.is_finite() {
            println!("{:<16} {:>10.4} px", c.name, e);
        } else {
            println!("{:<16} {:>10} px", c.name, "behind");
        }
    }
    println!("rms {:.6} px over {} landmarks ({} iterations)", sol.rms_error, corrs.len(), sol.iterations);
    write_json(out, &PoseFile::from_solution(&sol, &corrs)).map_err(runtime)
}

fn generate(config: &Path, seed: Option<u64>, out: Option<PathBuf>, force: bool) -> CmdResult {
    let classify = |e: PipelineError| match e {
        PipelineError::Config(_) => usage(e),
        _ => runtime(e),
    };
    let (mut cfg, bytes) = pipeline::load_config(config).map_err(classify)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let summary = pipeline::generate(&cfg, &bytes, &GenerateOptions { force }).map_err(classify)?;
    println!(
        "wrote {} images with {} annotations to {}",
        summary.images,
        summary.annotations,
        summary.output_dir.display()
    );
    Ok(())
}

fn report_json(report: &EvalReport, manifest: &Path, detections: &Path) -> serde_json::Value {
    serde_json::json!({
        "schema": "roadforge-eval/1",
        "config": {
            "manifest": manifest.display().to_string(),
            "detections": detections.display().to_string(),
            "thresholds_px": THRESHOLDS,
            "matching": "greedy nearest, strict d < threshold",
        },
        "report": report,
    })
}

fn evaluate_cmd(manifest_path: &Path, detections: &Path, out: &Path, csv: Option<&Path>, label: &str) -> CmdResult {
    let manifest = read_manifest(manifest_path).map_err(usage)?;
    let f = std::fs::File::open(detections).map_err(|e| usage(format!("{}: {e}", detections.display())))?;
    let dets = read_detections(BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", detections.display())))?;
    let report = evaluate(&manifest, &dets).map_err(usage)?;
    let mut text = serde_json::to_string_pretty(&report_json(&report, manifest_path, detections)).map_err(runtime)?;
    text.push('\n');
    std::fs::write(out, text).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    if let Some(path) = csv {
        let header = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        write_csv_row(file, label, manifest.images.len(), &report, header).map_err(runtime)?;
    }
    println!(
        "mAP {:.1}  AP@20 {:.1}  AP@50 {:.1}  AR {:.1}",
        report.map * 100.0,
        report.ap20 * 100.0,
        report.ap50 * 100.0,
        report.ar * 100.0
    );
    Ok(())
}

fn background(frames: &Path, out: &Path) -> CmdResult {
    let entries = std::fs::read_dir(frames).map_err(|e| usage(format!("{}: {e}", frames.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(|p| ImageBuffer::load_png(p).map_err(|e| usage(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let median = median_background(&images).map_err(|e| match &e {
        BackgroundError::DimensionMismatch { index, .. } => usage(format!("{}: {e}", paths[*index].display())),
        BackgroundError::EmptyInput => usage(format!("no PNG files in {}", frames.display())),
        _ => runtime(e),
    })?;
    median.save_png(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    println!("median of {} frames written to {}", images.len(), out.display());
    Ok(())
}

fn serve(host: &str, port: u16, ui: Option<PathBuf>) -> CmdResult {
    if let Some(dir) = &ui {
        if !dir.is_dir() {
            return Err(usage(format!("UI directory {} does not exist", dir.display())));
        }
    }
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| usage(format!("cannot bind {host}:{port}: {e}")))?;
        roadforge::service::serve(listener, ui).await.map_err(runtime)
    })
}
