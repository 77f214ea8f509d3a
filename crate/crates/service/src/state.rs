use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use histosynth::eval::{PatchRef, TrueKind, VisualTestSession};
use histosynth::gan::RefinerModel;
use histosynth::imageops::RgbImage;
use histosynth::phantom::{phantom_corpus, PhantomStyle};
use histosynth::store::io::{image_dimensions, read_rgb, write_atomic};
use histosynth::store::{
    generate_samples, ingest, GroupingRule, Manifest, SampleKind, MANIFEST_FILE,
};
use histosynth::synth::{RealPatch, SynthesisParams};
use histosynth::trainer::load_checkpoint;
use histosynth::{Error, Result};
use serde::{Deserialize, Serialize};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use crate::error::{ApiError, ApiResult};

/// Where a gallery patch's pixels come from.
#[derive(Debug, Clone)]
pub enum PatchSource {
    File(PathBuf),
    Image(Arc<RgbImage>),
}

/// A patch that may be shown in a visual test.
#[derive(Debug, Clone)]
pub struct GalleryPatch {
    pub patch: PatchRef,
    pub source: PatchSource,
}

impl GalleryPatch {
    pub fn load(&self) -> Result<RgbImage> {
        match &self.source {
            PatchSource::File(p) => read_rgb(p),
            PatchSource::Image(img) => Ok((**img).clone()),
        }
    }

    fn side(&self) -> Result<usize> {
        let (h, w) = match &self.source {
            PatchSource::File(p) => image_dimensions(p)?,
            PatchSource::Image(img) => img.shape(),
        };
        Ok(h.min(w))
    }
}

/// A saved parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub params: SynthesisParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
}

/// A refiner loaded from a checkpoint, shared read-only between requests.
#[derive(Debug)]
pub struct LoadedModel {
    pub refiner: RefinerModel,
    pub source: String,
    pub stage: String,
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Concurrent synthesis jobs.
    pub workers: usize,
    /// Jobs allowed to wait for a worker before requests get 429.
    pub queue: usize,
    /// Where presets and sessions persist; in memory only when `None`.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        Self {
            workers,
            queue: 4 * workers,
            data_dir: None,
        }
    }
}

/// Bounded pool for CPU-heavy jobs: `workers` run at once, `queue` more may wait.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    admitted: Arc<Semaphore>,
    running: Arc<Semaphore>,
}

/// A place in the pool. Dropping it frees the place.
#[derive(Debug)]
pub struct Reservation {
    _admitted: OwnedSemaphorePermit,
    running: Arc<Semaphore>,
}

impl WorkerPool {
    pub fn new(workers: usize, queue: usize) -> Self {
        let workers = workers.max(1);
        Self {
            admitted: Arc::new(Semaphore::new(workers + queue)),
            running: Arc::new(Semaphore::new(workers)),
        }
    }

    /// `None` when the pool and its queue are full.
    pub fn try_reserve(&self) -> Option<Reservation> {
        let permit = self.admitted.clone().try_acquire_owned().ok()?;
        Some(Reservation {
            _admitted: permit,
            running: self.running.clone(),
        })
    }
}

impl Reservation {
    /// Wait for a free worker, then run `job` on the blocking thread pool.
    pub async fn run<T: Send + 'static>(
        self,
        job: impl FnOnce() -> Result<T> + Send + 'static,
    ) -> ApiResult<T> {
        let _running = self
            .running
            .clone()
            .acquire_owned()
            .await
            .map_err(|_| ApiError::internal("worker pool closed"))?;
        let out = tokio::task::spawn_blocking(job)
            .await
            .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?;
        drop(self);
        Ok(out?)
    }
}

pub struct AppState {
    real: Arc<Vec<RealPatch>>,
    gallery: Vec<GalleryPatch>,
    display_size: usize,
    model: RwLock<Option<Arc<LoadedModel>>>,
    presets: Mutex<BTreeMap<String, Preset>>,
    sessions: Mutex<HashMap<String, VisualTestSession>>,
    session_seq: AtomicU64,
    pool: WorkerPool,
    data_dir: Option<PathBuf>,
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

const PRESETS_FILE: &str = "presets.json";

impl AppState {
    /// State over the given real sources and visual-test gallery. Presets and
    /// sessions already under `data_dir` are picked up.
    pub fn new(
        real: Vec<RealPatch>,
        gallery: Vec<GalleryPatch>,
        options: ServiceOptions,
    ) -> Result<Self> {
        let mut sides = Vec::with_capacity(gallery.len());
        for g in &gallery {
            sides.push(g.side()?);
        }
        let display_size = sides.into_iter().min().unwrap_or(0);
        let mut presets = BTreeMap::new();
        let mut sessions = HashMap::new();
        if let Some(dir) = &options.data_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(PRESETS_FILE);
            if path.is_file() {
                let list: Vec<Preset> = serde_json::from_slice(&std::fs::read(&path)?)?;
                presets = list.into_iter().map(|p| (p.name.clone(), p)).collect();
            }
            let sdir = dir.join("sessions");
            if sdir.is_dir() {
                for entry in std::fs::read_dir(&sdir)? {
                    let path = entry?.path();
                    if path.extension().is_some_and(|e| e == "json") {
                        let s = VisualTestSession::from_json(&std::fs::read(&path)?)?;
                        sessions.insert(s.id.clone(), s);
                    }
                }
            }
        }
        Ok(Self {
            real: Arc::new(real),
            gallery,
            display_size,
            model: RwLock::new(None),
            session_seq: AtomicU64::new(sessions.len() as u64),
            presets: Mutex::new(presets),
            sessions: Mutex::new(sessions),
            pool: WorkerPool::new(options.workers, options.queue),
            data_dir: options.data_dir,
        })
    }

    /// Load a corpus directory (a store with `manifest.jsonl`, or a folder of
    /// real patches grouped by parent directory). Without one, a procedural
    /// demo corpus is built so the service is usable out of the box.
    pub fn from_corpus(corpus: Option<&Path>, options: ServiceOptions) -> Result<Self> {
        let (real, gallery) = match corpus {
            Some(dir) if dir.join(MANIFEST_FILE).is_file() => {
                let manifest = Manifest::load(dir)?;
                let real = manifest.load_real(&manifest.style_groups())?;
                (real, manifest_gallery(&manifest))
            }
            Some(dir) => {
                let ing = ingest(dir, GroupingRule::ParentDir, None)?;
                for w in &ing.warnings {
                    tracing::warn!(?w, "ingestion warning");
                }
                let real = ing.manifest.load_real(&ing.groups)?;
                (real, manifest_gallery(&ing.manifest))
            }
            None => demo_corpus()?,
        };
        if real.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::new(real, gallery, options)
    }

    pub fn real(&self) -> Arc<Vec<RealPatch>> {
        self.real.clone()
    }

    pub fn styles(&self) -> Vec<String> {
        let mut s: Vec<String> = self.real.iter().map(|p| p.style_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn gallery(&self) -> &[GalleryPatch] {
        &self.gallery
    }

    /// Side length every visual-test image is cropped to, so image size
    /// cannot give a patch's kind away.
    pub fn display_size(&self) -> usize {
        self.display_size
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock").clone()
    }

    /// Swap in a new refiner; requests already running keep the old one.
    pub fn set_model(&self, model: LoadedModel) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn load_checkpoint(&self, path: &Path) -> Result<Arc<LoadedModel>> {
        let state = load_checkpoint(path)?;
        let model = LoadedModel {
            refiner: state.refiner,
            source: path.display().to_string(),
            stage: state.stage.as_str().to_string(),
        };
        tracing::info!(path = %path.display(), stage = %model.stage, "checkpoint loaded");
        self.set_model(model);
        Ok(self.model().expect("just set"))
    }

    pub fn presets(&self) -> Vec<Preset> {
        self.presets
            .lock()
            .expect("presets lock")
            .values()
            .cloned()
            .collect()
    }

    pub fn preset(&self, name: &str) -> Option<Preset> {
        self.presets
            .lock()
            .expect("presets lock")
            .get(name)
            .cloned()
    }

    /// Insert or replace; `created_at` survives replacement.
    pub fn put_preset(
        &self,
        name: &str,
        params: SynthesisParams,
        checkpoint: Option<String>,
    ) -> Result<Preset> {
        let mut presets = self.presets.lock().expect("presets lock");
        let now = now_millis();
        let created_at = presets.get(name).map_or(now, |p| p.created_at);
        let preset = Preset {
            name: name.to_string(),
            params,
            checkpoint,
            created_at,
            updated_at: now,
        };
        let previous = presets.insert(name.to_string(), preset.clone());
        if let Some(dir) = &self.data_dir {
            let list: Vec<&Preset> = presets.values().collect();
            if let Err(e) =
                write_atomic(&dir.join(PRESETS_FILE), &serde_json::to_vec_pretty(&list)?)
            {
                match previous {
                    Some(p) => presets.insert(name.to_string(), p),
                    None => presets.remove(name),
                };
                return Err(e);
            }
        }
        Ok(preset)
    }

    pub fn next_session_id(&self, seed: u64) -> String {
        let n = self.session_seq.fetch_add(1, Ordering::Relaxed) + 1;
        format!("vt{n:04}-{:08x}", seed as u32)
    }

    pub fn gallery_refs(&self) -> Vec<PatchRef> {
        self.gallery.iter().map(|g| g.patch.clone()).collect()
    }

    pub fn gallery_patch(&self, patch_id: &str) -> Option<&GalleryPatch> {
        self.gallery.iter().find(|g| g.patch.patch_id == patch_id)
    }

    /// Run `f` on a session and persist it afterwards when it changed.
    pub fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut VisualTestSession) -> ApiResult<T>,
    ) -> ApiResult<T> {
        let mut sessions = self.sessions.lock().expect("sessions lock");
        let session = sessions
            .get_mut(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
        let before = session.clone();
        let out = f(session);
        if *session != before {
            if let Some(dir) = &self.data_dir {
                if let Err(e) = session.save(dir) {
                    *session = before;
                    return Err(e.into());
                }
            }
        }
        out
    }

    pub fn insert_session(&self, session: VisualTestSession) -> Result<()> {
        if let Some(dir) = &self.data_dir {
            session.save(dir)?;
        }
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(session.id.clone(), session);
        Ok(())
    }
}

fn true_kind(kind: SampleKind) -> TrueKind {
    match kind {
        SampleKind::Real => TrueKind::Real,
        SampleKind::Initial => TrueKind::Initial,
        SampleKind::Refined => TrueKind::Refined,
    }
}

fn manifest_gallery(manifest: &Manifest) -> Vec<GalleryPatch> {
    manifest
        .records()
        .iter()
        .map(|r| GalleryPatch {
            patch: PatchRef {
                patch_id: r.id.clone(),
                kind: true_kind(r.kind),
            },
            source: PatchSource::File(manifest.path_of(&r.image)),
        })
        .collect()
}

/// Phantom sources in every palette style plus initial samples made from them.
fn demo_corpus() -> Result<(Vec<RealPatch>, Vec<GalleryPatch>)> {
    let mut real = Vec::new();
    for (k, style) in PhantomStyle::palette().iter().enumerate() {
        real.extend(phantom_corpus(style, 6, 256, 1000 * k as u64)?);
    }
    let params = SynthesisParams {
        patch_size: 96,
        ..Default::default()
    };
    let samples = generate_samples(&real, &params, 24, 0, None)?;
    let mut gallery: Vec<GalleryPatch> = real
        .iter()
        .map(|p| GalleryPatch {
            patch: PatchRef {
                patch_id: p.id.clone(),
                kind: TrueKind::Real,
            },
            source: PatchSource::Image(Arc::new(p.image.clone())),
        })
        .collect();
    gallery.extend(samples.into_iter().enumerate().map(|(i, s)| GalleryPatch {
        patch: PatchRef {
            patch_id: format!("demo_initial_{i:03}"),
            kind: TrueKind::Initial,
        },
        source: PatchSource::Image(Arc::new(s.image)),
    }));
    Ok((real, gallery))
}
