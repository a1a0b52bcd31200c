use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use markerprop::formats::{read_file, FormatError};
use markerprop::pipeline::{
    run_calibrate, run_hybrid_experiment, run_metrics, run_pose_variation, run_propagate, run_qa_filter, run_repair,
    run_sync, run_template, run_track, write_scene, PipelineError, Session,
};
use markerprop::qc::GesdScope;
use markerprop::synth::{generate_scene, SceneSpec};

#[derive(Parser)]
#[command(
    name = "markerprop",
    version,
    about = "Marker-driven keypoint annotation for multi-camera mo-cap rigs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit each camera's video→mo-cap clock from flash traces and store it in the manifest.
    Sync {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve camera extrinsics from calibration-marker clicks.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repair swapped marker labels.
    Repair {
        #[arg(long)]
        config: PathBuf,
    },
    /// Track the 6-DOF pose of every rigid body.
    Track {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate keypoint templates from manual clicks.
    Template {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate 2D/3D keypoints and boxes for every video frame.
    Propagate {
        #[arg(long)]
        config: PathBuf,
    },
    /// GESD filtering of external predictions against the generated annotations.
    QaFilter {
        #[arg(long)]
        config: PathBuf,
        /// Override the manifest's GESD grouping.
        #[arg(long, value_enum)]
        scope: Option<Scope>,
    },
    /// Per-keypoint RMSE and PCK of external predictions.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        /// PCK thresholds as fractions of box width.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1])]
        thresholds: Vec<f64>,
    },
    /// Count unique head/body orientations in the generated 3D keypoints.
    PoseVariation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        bin_deg: f64,
    },
    /// Gap-filling comparison of triangulation against linear interpolation.
    HybridExp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve frames, crops and annotation files over local HTTP.
    Serve {
        /// Session manifest; repeat to serve several sequences.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 8750)]
        port: u16,
    },
    /// Write a synthetic session with ground truth.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Scene settings (TOML); defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Scope {
    PerSequence,
    Pooled,
}

fn print<T: Serialize>(value: &T) -> Result<(), PipelineError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(FormatError::from)?);
    Ok(())
}

fn scene_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SceneSpec, PipelineError> {
    let mut spec = match path {
        Some(p) => {
            let text =
                String::from_utf8(read_file(p)?).map_err(|e| PipelineError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(FormatError::from)?
        }
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Sync { config } => {
            let mut s = Session::load(&config)?;
            let clocks = run_sync(&mut s)?;
            print(&clocks.into_iter().collect::<std::collections::BTreeMap<_, _>>())
        }
        Command::Calibrate { config } => {
            let (reports, uncalibrated) = run_calibrate(&Session::load(&config)?)?;
            print(&serde_json::json!({ "reports": reports, "uncalibrated": uncalibrated }))
        }
        Command::Repair { config } => {
            let logs = run_repair(&Session::load(&config)?)?;
            let summary: Vec<_> = logs
                .iter()
                .map(|l| serde_json::json!({ "body_id": l.body_id, "entries": l.entries.len() }))
                .collect();
            print(&summary)
        }
        Command::Track { config } => {
            let tracks = run_track(&Session::load(&config)?)?;
            let summary: Vec<_> = tracks
                .iter()
                .map(|t| {
                    let valid = t.samples.iter().filter(|s| s.valid_pose().is_some()).count();
                    serde_json::json!({ "body_id": t.body_id, "frames": t.samples.len(), "valid": valid })
                })
                .collect();
            print(&summary)
        }
        Command::Template { config } => print(&run_template(&Session::load(&config)?)?),
        Command::Propagate { config } => {
            let frames = run_propagate(&Session::load(&config)?)?;
            print(&serde_json::json!({ "frames": frames.len() }))
        }
        Command::QaFilter { config, scope } => {
            let s = Session::load(&config)?;
            let mut cfg = s.manifest.config.filter;
            if let Some(scope) = scope {
                cfg.scope = match scope {
                    Scope::PerSequence => GesdScope::PerSequence,
                    Scope::Pooled => GesdScope::Pooled,
                };
            }
            let r = run_qa_filter(&s, &cfg)?;
            print(&serde_json::json!({
                "kept": r.filter.kept.len(),
                "dropped": r.filter.dropped.len(),
                "drop_fraction": r.filter.drop_fraction,
                "gaps": r.gaps,
            }))
        }
        Command::Metrics { config, thresholds } => print(&run_metrics(&Session::load(&config)?, &thresholds)?),
        Command::PoseVariation { config, bin_deg } => print(&run_pose_variation(&Session::load(&config)?, bin_deg)?),
        Command::HybridExp { config, seed } => {
            let o = run_hybrid_experiment(&config, seed)?;
            eprint!("{}", o.comparison.to_table());
            print(&o)
        }
        Command::Serve { config, port } => {
            let sessions = config.iter().map(|p| Session::load(p)).collect::<Result<Vec<_>, _>>()?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Usage(e.to_string()))?;
            eprintln!("serving {} sequence(s) on http://127.0.0.1:{port}", sessions.len());
            rt.block_on(markerprop::service::serve(sessions, port))
        }
        Command::Synth { out, config, seed } => {
            let spec = scene_spec(config.as_deref(), seed)?;
            let scene = generate_scene(&spec);
            let manifest = write_scene(&scene, &out)?;
            print(&serde_json::json!({ "manifest": manifest }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
