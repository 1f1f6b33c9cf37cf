//! `gpm` command line. Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gpm_core::config::EngineConfig;
use gpm_core::feature_prep::FeatureSelection;
use gpm_core::graph_cut::{GraphCutParams, StrokeSet};
use gpm_core::imageio::{encode_label_png, read_label_png, write_rgb_png};
use serde::Serialize;

use crate::error::ServiceError;
use crate::workspace::{StackHandle, Workspace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gpm", version, about = "Feature-space compositing of generated image stacks")]
pub struct Cli {
    /// Data root for ingested stacks and sessions.
    #[arg(long, global = true, env = "GPM_DATA_DIR", default_value = "gpm-data")]
    pub data_dir: PathBuf,
    /// Engine config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy a stack into the data root and print its id.
    Ingest { manifest: PathBuf },
    /// Segment a stack from a stroke-set JSON file.
    Segment {
        /// Stack id or manifest path.
        #[arg(long)]
        stack: String,
        #[arg(long)]
        strokes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a composite bundle for a label map.
    Export {
        #[arg(long)]
        stack: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        base: usize,
    },
    /// Score a blended image against the stack.
    Metrics {
        #[arg(long)]
        stack: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        blended: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient-domain blend of the pixel composite.
    Poisson {
        #[arg(long)]
        stack: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        base: usize,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

/// Deterministic summary written next to a segmentation.
#[derive(Debug, Serialize)]
pub struct SegmentReport {
    pub stack_id: String,
    pub n_images: usize,
    pub image_size: (usize, usize),
    pub label_grid: (usize, usize),
    pub base_index: usize,
    pub stroke_count: usize,
    pub selection: FeatureSelection,
    pub params: GraphCutParams,
    /// Rounded to 1e-6 so the report does not depend on the last bits of
    /// the floating-point feature path.
    pub energy: f64,
    pub sweeps: usize,
    pub moves_accepted: usize,
    pub label_counts: Vec<usize>,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn internal(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ServiceError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| internal(path, e))
}

fn labels_for(h: &StackHandle, path: &Path) -> Result<gpm_core::LabelMap, ServiceError> {
    let labels = read_label_png(path).map_err(|e| ServiceError::Unprocessable {
        field: Some("labels".into()),
        message: e.to_string(),
    })?;
    let n = h.stack().n_images();
    if let Some(&bad) = labels.labels.iter().find(|&&l| l as usize >= n) {
        return Err(ServiceError::Unprocessable {
            field: Some("labels".into()),
            message: format!("label {bad} out of range for {n} images"),
        });
    }
    Ok(labels)
}

fn execute(cli: Cli) -> Result<(), ServiceError> {
    let config = match &cli.config {
        Some(path) => EngineConfig::load(path).map_err(|e| ServiceError::Unprocessable {
            field: Some("config".into()),
            message: e.to_string(),
        })?,
        None => EngineConfig::default(),
    };
    let ws = Workspace::open(&cli.data_dir, config)?;
    match cli.command {
        Command::Ingest { manifest } => {
            let id = ws.ingest_manifest(&manifest)?;
            println!("{id}");
        }
        Command::Segment {
            stack,
            strokes,
            out,
        } => {
            let h = ws.resolve(&stack)?;
            let text = fs::read(&strokes).map_err(|e| internal(&strokes, e))?;
            let strokes: StrokeSet =
                serde_json::from_slice(&text).map_err(|e| ServiceError::Unprocessable {
                    field: Some("strokes".into()),
                    message: e.to_string(),
                })?;
            let cfg = ws.config();
            let output = h.segment_with(&strokes, &cfg.selection, &cfg.params)?;
            let n = h.stack().n_images();
            fs::create_dir_all(&out).map_err(|e| internal(&out, e))?;

            let png = encode_label_png(&output.labels, n)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            let path = out.join("labels.png");
            fs::write(&path, png).map_err(|e| internal(&path, e))?;
            let path = out.join("preview.png");
            let preview = h.preview_png(&output.labels)?;
            fs::write(&path, preview).map_err(|e| internal(&path, e))?;

            let mut label_counts = vec![0; n];
            for &l in &output.labels.labels {
                label_counts[l as usize] += 1;
            }
            let report = SegmentReport {
                stack_id: h.id().to_string(),
                n_images: n,
                image_size: h.stack().size(),
                label_grid: (output.labels.width, output.labels.height),
                base_index: strokes.base_index,
                stroke_count: strokes.strokes.len(),
                selection: cfg.selection.clone(),
                params: cfg.params,
                energy: (output.labels.energy * 1e6).round() / 1e6,
                sweeps: output.trace.sweeps,
                moves_accepted: output.trace.accepted_moves(),
                label_counts,
            };
            write_json(&out.join("report.json"), &report)?;
            log::info!("segmented {} in {:?}", h.id(), output.timing.total());
        }
        Command::Export {
            stack,
            labels,
            out,
            base,
        } => {
            let h = ws.resolve(&stack)?;
            let labels = labels_for(&h, &labels)?;
            let bundle = h.export(&labels, base, &out)?;
            println!("{}", out.display());
            log::info!("exported bundle {}", bundle.label_map_hash);
        }
        Command::Metrics {
            stack,
            labels,
            blended,
            out,
        } => {
            let h = ws.resolve(&stack)?;
            let labels = labels_for(&h, &labels)?;
            let report = h.metrics(&labels, &blended)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Command::Poisson {
            stack,
            labels,
            out,
            base,
        } => {
            let h = ws.resolve(&stack)?;
            let labels = labels_for(&h, &labels)?;
            if base >= h.stack().n_images() {
                return Err(ServiceError::Unprocessable {
                    field: Some("base".into()),
                    message: format!("{base} is not an image index"),
                });
            }
            let blend = h.poisson(&labels, base)?;
            if let Some(reason) = &blend.fallback {
                eprintln!("warning: {reason}");
            }
            write_rgb_png(&out, &blend.image).map_err(|e| internal(&out, e))?;
        }
        Command::Serve { addr } => serve(Arc::new(ws), &addr)?,
    }
    Ok(())
}

fn serve(ws: Arc<Workspace>, addr: &str) -> Result<(), ServiceError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Internal(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::Internal(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?;
        eprintln!("listening on http://{local}");
        axum::serve(listener, crate::http::router(ws))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ServiceError::Internal(format!("server: {e}")))
    })
}
