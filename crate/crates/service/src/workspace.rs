//! On-disk data root shared by the CLI and the HTTP server.
//!
//! ```text
//! <root>/stacks/<id>/manifest.json        ingested stack (plus its files)
//! <root>/stacks/<id>/session.json         strokes, settings, version
//! <root>/stacks/<id>/cache/pca_<sel>.json PCA model per feature selection
//! <root>/stacks/<id>/exports/v<n>/        exported bundles
//! <root>/tmp/                             upload staging
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use gpm_core::compositor::{
    export_bundle, pixel_composite, poisson_blend, BlendOutcome, BundleManifest, CompositeError,
    Provenance,
};
use gpm_core::config::EngineConfig;
use gpm_core::feature_prep::{fit_pca, project, select_features, FeatureError, PcaModel};
use gpm_core::graph_cut::{
    segment_prepared, GraphCutParams, LabelMap, PreparedFeatures, SegmentError, SegmentOutput,
    SegmentTiming, Stroke, StrokeSet,
};
use gpm_core::imageio::{encode_label_png, encode_rgb_png, read_rgb_png};
use gpm_core::metrics::{evaluate, MetricsReport};
use gpm_core::tensor_store::{load_stack, FeatureStack, StackError, StackManifest};
use gpm_core::FeatureSelection;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

/// Stroke state of one stack. `version` increments on every accepted update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub stack_id: String,
    pub version: u64,
    pub strokes: StrokeSet,
    pub selection: FeatureSelection,
    pub params: GraphCutParams,
}

/// Body of a stroke update: the whole stroke set replaces the previous one.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokeUpdate {
    pub expected_version: u64,
    pub base_index: usize,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
    #[serde(default)]
    pub selection: Option<FeatureSelection>,
    #[serde(default)]
    pub params: Option<GraphCutParams>,
}

/// A solved label map for one session version.
#[derive(Debug)]
pub struct Segmentation {
    pub version: u64,
    pub output: SegmentOutput,
    pub png: Vec<u8>,
}

pub struct Workspace {
    root: PathBuf,
    config: EngineConfig,
    open: Mutex<HashMap<String, Arc<StackHandle>>>,
}

static STAGING_COUNTER: AtomicU64 = AtomicU64::new(0);

fn io_err(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Relative path with only normal components, safe to join under a directory.
pub fn check_relative(rel: &str) -> Result<(), ServiceError> {
    let path = Path::new(rel);
    let ok = !rel.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Unprocessable {
            field: None,
            message: format!("stack file path {rel:?} must be relative and stay inside the stack"),
        })
    }
}

fn stack_files(manifest: &StackManifest) -> Vec<&str> {
    let mut files: Vec<&str> = manifest
        .images
        .iter()
        .chain(manifest.tensors.values())
        .map(String::as_str)
        .collect();
    files.sort_unstable();
    files.dedup();
    files
}

/// Content address of a stack: the first 16 hex digits of a SHA-256 over
/// the canonical manifest JSON and every referenced file.
pub fn stack_id(manifest: &StackManifest, root: &Path) -> Result<String, ServiceError> {
    let mut h = Sha256::new();
    let canonical = serde_json::to_vec(manifest).expect("manifest serializes");
    h.update((canonical.len() as u64).to_le_bytes());
    h.update(&canonical);
    for rel in stack_files(manifest) {
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

fn stack_error(e: StackError) -> ServiceError {
    match e {
        StackError::Io { .. } => ServiceError::Internal(e.to_string()),
        other => ServiceError::Unprocessable {
            field: None,
            message: other.to_string(),
        },
    }
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>, config: EngineConfig) -> Result<Self, ServiceError> {
        let root = root.into();
        for dir in [root.join("stacks"), root.join("tmp")] {
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        Ok(Workspace {
            root,
            config,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn stack_dir(&self, id: &str) -> PathBuf {
        self.root.join("stacks").join(id)
    }

    fn staging_dir(&self) -> Result<PathBuf, ServiceError> {
        let n = STAGING_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self
            .root
            .join("tmp")
            .join(format!("stage-{}-{n}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }

    /// Moves a validated staging directory into place under its content id.
    fn commit(&self, staging: PathBuf) -> Result<String, ServiceError> {
        // Anything unreadable here was missing or malformed in the upload.
        let stack = load_stack(staging.join("manifest.json")).map_err(|e| {
            let _ = fs::remove_dir_all(&staging);
            ServiceError::Unprocessable {
                field: None,
                message: e.to_string(),
            }
        })?;
        let id = stack_id(stack.manifest(), &staging)?;
        let dest = self.stack_dir(&id);
        if dest.join("manifest.json").is_file() {
            let _ = fs::remove_dir_all(&staging);
        } else {
            fs::rename(&staging, &dest).map_err(|e| io_err(&dest, e))?;
            log::info!("ingested stack {id} ({} images)", stack.n_images());
        }
        Ok(id)
    }

    /// Copies a stack described by a manifest on disk into the data root.
    pub fn ingest_manifest(&self, manifest_path: &Path) -> Result<String, ServiceError> {
        let stack = load_stack(manifest_path).map_err(stack_error)?;
        let src_root = stack.root().to_path_buf();
        let manifest = stack.manifest();
        let files = stack_files(manifest);
        for rel in &files {
            check_relative(rel)?;
        }
        let id = stack_id(manifest, &src_root)?;
        if self.stack_dir(&id).join("manifest.json").is_file() {
            return Ok(id);
        }
        let staging = self.staging_dir()?;
        for rel in files {
            let dst = staging.join(rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::copy(src_root.join(rel), &dst).map_err(|e| io_err(&dst, e))?;
        }
        let text = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        fs::write(staging.join("manifest.json"), text).map_err(|e| io_err(&staging, e))?;
        self.commit(staging)
    }

    /// Ingests an uploaded manifest plus files keyed by their manifest paths.
    pub fn ingest_upload(
        &self,
        manifest_json: &[u8],
        files: Vec<(String, Vec<u8>)>,
    ) -> Result<String, ServiceError> {
        let manifest: StackManifest = serde_json::from_slice(manifest_json)
            .map_err(|e| ServiceError::BadRequest(format!("manifest: {e}")))?;
        let staging = self.staging_dir()?;
        let result = (|| {
            for (rel, bytes) in &files {
                check_relative(rel)?;
                let dst = staging.join(rel);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                }
                fs::write(&dst, bytes).map_err(|e| io_err(&dst, e))?;
            }
            let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            fs::write(staging.join("manifest.json"), text).map_err(|e| io_err(&staging, e))
        })();
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        self.commit(staging)
    }

    /// An ingested stack by id, loaded on first use.
    pub fn stack(&self, id: &str) -> Result<Arc<StackHandle>, ServiceError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_hexdigit());
        if !valid {
            return Err(ServiceError::UnknownStack(id.to_string()));
        }
        let mut open = self.open.lock().expect("stack table lock");
        if let Some(h) = open.get(id) {
            return Ok(h.clone());
        }
        let dir = self.stack_dir(id);
        if !dir.join("manifest.json").is_file() {
            return Err(ServiceError::UnknownStack(id.to_string()));
        }
        let handle = Arc::new(StackHandle::load(id, dir, &self.config)?);
        open.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Resolves either an ingested stack id or a path to a manifest, which is
    /// ingested first.
    pub fn resolve(&self, id_or_path: &str) -> Result<Arc<StackHandle>, ServiceError> {
        let path = Path::new(id_or_path);
        if path.is_file() {
            let id = self.ingest_manifest(path)?;
            return self.stack(&id);
        }
        self.stack(id_or_path)
    }
}

pub struct StackHandle {
    id: String,
    dir: PathBuf,
    stack: FeatureStack,
    session: Mutex<Session>,
    prepared: Mutex<HashMap<String, Arc<PreparedFeatures>>>,
    latest: Mutex<Option<Arc<Segmentation>>>,
}

#[derive(Serialize, Deserialize)]
struct PcaCacheFile {
    selection: FeatureSelection,
    model: PcaModel,
}

impl StackHandle {
    fn load(id: &str, dir: PathBuf, config: &EngineConfig) -> Result<Self, ServiceError> {
        let stack = load_stack(dir.join("manifest.json")).map_err(stack_error)?;
        let session_path = dir.join("session.json");
        let session = match fs::read(&session_path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", session_path.display())))?,
            Err(_) => Session {
                stack_id: id.to_string(),
                version: 0,
                strokes: StrokeSet::all_base(0),
                selection: config.selection.clone(),
                params: config.params,
            },
        };
        Ok(StackHandle {
            id: id.to_string(),
            dir,
            stack,
            session: Mutex::new(session),
            prepared: Mutex::new(HashMap::new()),
            latest: Mutex::new(None),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stack(&self) -> &FeatureStack {
        &self.stack
    }

    pub fn session(&self) -> Session {
        self.session.lock().expect("session lock").clone()
    }

    fn save_session(&self, session: &Session) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(session).expect("session serializes");
        write_atomic(&self.dir.join("session.json"), &bytes)
    }

    fn check_selection(&self, selection: &FeatureSelection) -> Result<(), ServiceError> {
        let invalid = |e: FeatureError| ServiceError::Unprocessable {
            field: Some("selection".into()),
            message: e.to_string(),
        };
        selection.resolve_layer(&self.stack).map_err(invalid)?;
        selection.resolve_timesteps(&self.stack).map_err(invalid)?;
        Ok(())
    }

    /// Replaces the stroke set if `expected_version` is current.
    pub fn update_strokes(&self, update: StrokeUpdate) -> Result<u64, ServiceError> {
        let mut session = self.session.lock().expect("session lock");
        if update.expected_version != session.version {
            return Err(ServiceError::Conflict {
                expected: update.expected_version,
                current: session.version,
            });
        }
        let strokes = StrokeSet {
            base_index: update.base_index,
            strokes: update.strokes,
        };
        let (w, h) = self.stack.size();
        strokes
            .validate(self.stack.n_images(), w, h)
            .map_err(|e| ServiceError::Unprocessable {
                field: Some(e.field.clone()),
                message: e.message.clone(),
            })?;
        let selection = update.selection.unwrap_or_else(|| session.selection.clone());
        self.check_selection(&selection)?;
        let params = update.params.unwrap_or(session.params);
        params.validate().map_err(|e| ServiceError::Unprocessable {
            field: Some("params".into()),
            message: e.to_string(),
        })?;

        let next = Session {
            stack_id: self.id.clone(),
            version: session.version + 1,
            strokes,
            selection,
            params,
        };
        self.save_session(&next)?;
        *session = next;
        Ok(session.version)
    }

    fn pca_cache_path(&self, selection: &FeatureSelection) -> PathBuf {
        self.dir
            .join("cache")
            .join(format!("pca_{}.json", selection.cache_key()))
    }

    fn load_cached_pca(&self, selection: &FeatureSelection, dim: usize) -> Option<PcaModel> {
        let bytes = fs::read(self.pca_cache_path(selection)).ok()?;
        match serde_json::from_slice::<PcaCacheFile>(&bytes) {
            Ok(file) if file.selection == *selection && file.model.dim == dim => Some(file.model),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable PCA cache for {}: {e}", self.id);
                None
            }
        }
    }

    /// Selected and PCA-reduced features, from memory, disk or computed.
    pub fn prepared(&self, selection: &FeatureSelection) -> Result<Arc<PreparedFeatures>, ServiceError> {
        let key = selection.cache_key();
        let mut cache = self.prepared.lock().expect("prepared cache lock");
        if let Some(p) = cache.get(&key) {
            return Ok(p.clone());
        }
        let feature_err = |e: FeatureError| ServiceError::Internal(e.to_string());
        let start = Instant::now();
        let grids = select_features(&self.stack, selection).map_err(feature_err)?;
        let select = start.elapsed();

        let start = Instant::now();
        let pca = match self.load_cached_pca(selection, grids.dim) {
            Some(model) => model,
            None => {
                let model = fit_pca(&grids).map_err(feature_err)?;
                let file = PcaCacheFile {
                    selection: selection.clone(),
                    model,
                };
                let cache_dir = self.dir.join("cache");
                fs::create_dir_all(&cache_dir).map_err(|e| io_err(&cache_dir, e))?;
                let bytes = serde_json::to_vec(&file).expect("pca model serializes");
                write_atomic(&self.pca_cache_path(selection), &bytes)?;
                file.model
            }
        };
        let reduced = project(&pca, &grids).map_err(feature_err)?;
        let prepared = Arc::new(PreparedFeatures {
            selection: selection.clone(),
            image_size: self.stack.size(),
            pca,
            reduced,
            timing: SegmentTiming {
                select,
                pca: start.elapsed(),
                ..Default::default()
            },
        });
        cache.insert(key, prepared.clone());
        Ok(prepared)
    }

    /// Segments an explicit stroke set with the given settings.
    pub fn segment_with(
        &self,
        strokes: &StrokeSet,
        selection: &FeatureSelection,
        params: &GraphCutParams,
    ) -> Result<SegmentOutput, ServiceError> {
        let (w, h) = self.stack.size();
        strokes
            .validate(self.stack.n_images(), w, h)
            .map_err(|e| ServiceError::Unprocessable {
                field: Some(e.field.clone()),
                message: e.message.clone(),
            })?;
        self.check_selection(selection)?;
        let prepared = self.prepared(selection)?;
        segment_prepared(&prepared, strokes, params).map_err(|e| match e {
            SegmentError::Stroke(e) => ServiceError::Unprocessable {
                field: Some(e.field),
                message: e.message,
            },
            other => ServiceError::Internal(other.to_string()),
        })
    }

    /// Segmentation of the current session, computed once per version.
    /// With `version`, it must name the current version.
    pub fn segmentation(&self, version: Option<u64>) -> Result<Arc<Segmentation>, ServiceError> {
        let session = self.session();
        if let Some(v) = version {
            if v != session.version {
                return Err(ServiceError::Conflict {
                    expected: v,
                    current: session.version,
                });
            }
        }
        if let Some(seg) = self.latest.lock().expect("segmentation lock").as_ref() {
            if seg.version == session.version {
                return Ok(seg.clone());
            }
        }
        let output = self.segment_with(&session.strokes, &session.selection, &session.params)?;
        let png = encode_label_png(&output.labels, self.stack.n_images())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let seg = Arc::new(Segmentation {
            version: session.version,
            output,
            png,
        });
        let mut latest = self.latest.lock().expect("segmentation lock");
        if latest.as_ref().is_none_or(|s| s.version <= seg.version) {
            *latest = Some(seg.clone());
        }
        Ok(seg)
    }

    pub fn preview_png(&self, labels: &LabelMap) -> Result<Vec<u8>, ServiceError> {
        let comp = pixel_composite(self.stack.images(), labels).map_err(composite_error)?;
        encode_rgb_png(&comp.image).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    pub fn poisson(&self, labels: &LabelMap, base_index: usize) -> Result<BlendOutcome, ServiceError> {
        let comp = pixel_composite(self.stack.images(), labels).map_err(composite_error)?;
        poisson_blend(&comp, self.stack.images(), base_index).map_err(composite_error)
    }

    pub fn metrics(&self, labels: &LabelMap, blended: &Path) -> Result<MetricsReport, ServiceError> {
        let img = read_rgb_png(blended).map_err(|e| ServiceError::Unprocessable {
            field: Some("blended".into()),
            message: e.to_string(),
        })?;
        self.metrics_for(labels, &img)
    }

    pub fn metrics_for(
        &self,
        labels: &LabelMap,
        blended: &RgbImage,
    ) -> Result<MetricsReport, ServiceError> {
        evaluate(blended, self.stack.images(), labels).map_err(|e| ServiceError::Unprocessable {
            field: None,
            message: e.to_string(),
        })
    }

    pub fn export(
        &self,
        labels: &LabelMap,
        base_index: usize,
        out_dir: &Path,
    ) -> Result<BundleManifest, ServiceError> {
        let session = self.session();
        let provenance = Provenance {
            stack_id: self.id.clone(),
            params: Some(session.params),
            selection: Some(session.selection),
        };
        export_bundle(&self.stack, labels, base_index, provenance, out_dir).map_err(composite_error)
    }
}

fn composite_error(e: CompositeError) -> ServiceError {
    match e {
        CompositeError::Io { .. }
        | CompositeError::Image(_)
        | CompositeError::Tensor(_)
        | CompositeError::Stack(_) => {
            ServiceError::Internal(e.to_string())
        }
        other => ServiceError::Unprocessable {
            field: Some("labels".into()),
            message: other.to_string(),
        },
    }
}
