mod error;
mod formats;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvdet::metrics::{eval_detections, eval_objects, mean_ap};
use mvdet::pipeline::{run_ablation, run_sequence, PipelineConfig};
use mvdet::simworld::generate_scene;

use error::CliError;
use formats::{
    load_config, read_json, write_json, write_text, ManifestSeeds, ReportFile, RunConfig, RunManifest, SceneFile,
    SCHEMA_VERSION,
};

#[derive(Parser)]
#[command(name = "mvdet", version, about = "Depth-guided multi-camera 3D detection on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Scene seed; overrides `scene.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Frame count; overrides `scene.frames`.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the detector over a scene and write a run report.
    Detect {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Record per-frame wall-clock time (the report is then not reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Compare fixed and depth-guided queries on a scene; writes a CSV table.
    Ablate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the AP table of a run report as CSV.
    Eval {
        #[arg(long)]
        report: PathBuf,
        /// Take thresholds and classes from this config instead of the report.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the bird's-eye view of one report frame as SVG.
    PlotBev {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

fn seeds(scene: u64, cfg: &PipelineConfig) -> ManifestSeeds {
    ManifestSeeds {
        scene,
        weights: cfg.seeds.weights,
        stubs: cfg.seeds.stubs,
        queries: cfg.seeds.queries,
    }
}

struct ManifestInput<'a> {
    command: &'a str,
    config: RunConfig,
    scene_seed: u64,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'a Path>,
    weights_checksum: Option<String>,
}

fn write_manifest(primary: &Path, m: ManifestInput<'_>) -> Result<PathBuf, CliError> {
    let path = RunManifest::path_for(primary);
    let mut outputs: Vec<String> = m.outputs.iter().map(|p| shown(p)).collect();
    outputs.push(shown(&path));
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        kind: RunManifest::KIND.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: m.command.into(),
        seeds: seeds(m.scene_seed, &m.config.pipeline),
        config: m.config,
        inputs: m.inputs.iter().map(|p| shown(p)).collect(),
        outputs,
        weights_checksum: m.weights_checksum,
    };
    write_json(&path, &manifest)?;
    Ok(path)
}

fn simulate(config: Option<&Path>, out: &Path, seed: Option<u64>, frames: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(f) = frames {
        cfg.scene.frames = f;
    }
    let seed = seed.unwrap_or(cfg.scene.seed);
    cfg.scene.seed = seed;
    let scene = generate_scene(&cfg.scene, seed)?;
    write_json(out, &SceneFile::new(scene))?;
    write_manifest(
        out,
        ManifestInput {
            command: "simulate",
            config: cfg,
            scene_seed: seed,
            inputs: config.into_iter().collect(),
            outputs: vec![out],
            weights_checksum: None,
        },
    )?;
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneFile, CliError> {
    read_json(path, SceneFile::KIND)
}

fn detect(scene_path: &Path, config: Option<&Path>, out: &Path, timings: bool) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    cfg.pipeline.record_timings = timings;
    let scene = load_scene(scene_path)?.scene;
    let report = run_sequence(&scene, &cfg.pipeline)?;
    let checksum = report.weights_checksum.clone();
    write_json(out, &ReportFile::new(scene.config.seed, cfg.pipeline.clone(), report))?;
    let mut inputs = vec![scene_path];
    inputs.extend(config);
    write_manifest(
        out,
        ManifestInput {
            command: "detect",
            scene_seed: scene.config.seed,
            config: cfg,
            inputs,
            outputs: vec![out],
            weights_checksum: Some(checksum),
        },
    )?;
    Ok(())
}

fn ablate(scene_path: &Path, config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let scene = load_scene(scene_path)?.scene;
    let (report, _) = run_ablation(&scene, &cfg.pipeline)?;
    if report.fixed.weights_checksum != report.depth_guided.weights_checksum {
        return Err(CliError::Invariant("ablation arms ran with different weights".into()));
    }
    write_text(out, &report.to_csv())?;
    let mut inputs = vec![scene_path];
    inputs.extend(config);
    write_manifest(
        out,
        ManifestInput {
            command: "ablate",
            scene_seed: scene.config.seed,
            config: cfg,
            inputs,
            outputs: vec![out],
            weights_checksum: Some(report.fixed.weights_checksum.clone()),
        },
    )?;
    Ok(())
}

fn eval(report_path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let file: ReportFile = read_json(report_path, ReportFile::KIND)?;
    let eval_cfg = match config {
        Some(_) => load_config(config)?.pipeline.eval,
        None => file.config.eval.clone(),
    };
    let mut preds = Vec::new();
    let mut objects = Vec::new();
    for f in &file.report.frames {
        preds.extend(eval_detections(f.frame, &f.detections));
        objects.extend(eval_objects(f.frame, &f.gt_boxes));
    }
    let csv = mean_ap(&preds, &objects, &eval_cfg).to_csv();
    match out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn plot_bev(report_path: &Path, frame: usize, out: &Path) -> Result<(), CliError> {
    let file: ReportFile = read_json(report_path, ReportFile::KIND)?;
    let frames = file.report.frames.len();
    let f = file
        .report
        .frames
        .iter()
        .find(|f| f.frame == frame)
        .ok_or_else(|| CliError::Config(format!("frame {frame} out of range ({frames} frames in report)")))?;
    write_text(out, &plot::bev_svg(f, &file.config.roi))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            frames,
        } => simulate(config.as_deref(), &out, seed, frames),
        Command::Detect {
            scene,
            config,
            out,
            timings,
        } => detect(&scene, config.as_deref(), &out, timings),
        Command::Ablate { scene, config, out } => ablate(&scene, config.as_deref(), &out),
        Command::Eval { report, config, out } => eval(&report, config.as_deref(), out.as_deref()),
        Command::PlotBev { report, frame, out } => plot_bev(&report, frame, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
