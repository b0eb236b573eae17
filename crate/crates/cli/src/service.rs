//! HTTP API: generation and composition jobs, training and evaluation jobs,
//! model introspection, and static asset hosting.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use animate_core::ablation::{build_eval_cases, evaluate_model, EvalOptions};
use animate_core::codec::LATENT_FACTOR;
use animate_core::container::video_to_bytes;
use animate_core::data::{generate_dataset, load_dataset, MotionClass, NULL_CLASS};
use animate_core::nn::{load_checkpoint, save_checkpoint, DenoiserModel};
use animate_core::train::train;
use animate_core::{compose, generate, CompositionLayer, CompositionRequest, GenerationRequest, MotionMask, Rng, TrainConfig, VideoTensor};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::imaging::{b64_decode, b64_encode, frame_to_png, image_from_png, mask_from_png};

/// Upper bounds that keep a single request from monopolizing the host.
pub const MAX_FRAMES: usize = 64;
pub const MAX_LAYERS: usize = 16;

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    /// Where train jobs write their checkpoints.
    pub workdir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    Compose,
    Train,
    Eval,
}

/// Ordered so that valid transitions only ever increase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Forward-only: queued → running → done | failed.
    pub fn can_advance_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
                | (JobState::Queued, JobState::Failed)
        )
    }
}

#[derive(Clone, Debug)]
enum JobOutput {
    Video(VideoTensor),
    Report(Value),
}

#[derive(Clone, Debug)]
struct JobRecord {
    kind: JobKind,
    state: JobState,
    progress: f64,
    error: Option<String>,
    output: Option<JobOutput>,
}

/// Public view of a job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    pub error: Option<String>,
    pub result: Option<String>,
}

#[derive(Default)]
struct JobRegistry {
    next_id: u64,
    jobs: BTreeMap<u64, JobRecord>,
}

impl JobRegistry {
    fn create(&mut self, kind: JobKind) -> u64 {
        self.next_id += 1;
        self.jobs.insert(
            self.next_id,
            JobRecord { kind, state: JobState::Queued, progress: 0.0, error: None, output: None },
        );
        self.next_id
    }

    fn advance(&mut self, id: u64, next: JobState) {
        if let Some(job) = self.jobs.get_mut(&id) {
            if job.state.can_advance_to(next) {
                job.state = next;
                if next == JobState::Done {
                    job.progress = 1.0;
                }
            }
        }
    }

    fn set_progress(&mut self, id: u64, fraction: f64) {
        if let Some(job) = self.jobs.get_mut(&id) {
            if job.state == JobState::Running {
                job.progress = job.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }

    fn view(&self, id: u64) -> Option<Job> {
        self.jobs.get(&id).map(|j| Job {
            id,
            kind: j.kind,
            state: j.state,
            progress: j.progress,
            error: j.error.clone(),
            result: (j.state == JobState::Done).then(|| format!("/api/jobs/{id}/result")),
        })
    }
}

pub struct AppState {
    model: RwLock<Option<Arc<DenoiserModel>>>,
    jobs: Mutex<JobRegistry>,
    training: AtomicBool,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> animate_core::Result<Arc<Self>> {
        let model = config.checkpoint.as_ref().map(load_checkpoint).transpose()?.map(Arc::new);
        Ok(Arc::new(Self {
            model: RwLock::new(model),
            jobs: Mutex::new(JobRegistry::default()),
            training: AtomicBool::new(false),
            config,
        }))
    }

    fn model(&self) -> Result<Arc<DenoiserModel>, ApiError> {
        self.model
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded; start with a checkpoint or run a train job"))
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, JobRegistry> {
        self.jobs.lock().unwrap()
    }

    /// Registers a job and runs `work` on the blocking pool.
    fn spawn<F>(self: &Arc<Self>, kind: JobKind, work: F) -> u64
    where
        F: FnOnce(u64, &dyn Fn(f64)) -> Result<JobOutput, String> + Send + 'static,
    {
        let id = self.registry().create(kind);
        let state = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            state.registry().advance(id, JobState::Running);
            let report = |f: f64| state.registry().set_progress(id, f);
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(id, &report)))
                .unwrap_or_else(|_| Err("job panicked".to_string()));
            let mut reg = state.registry();
            match outcome {
                Ok(out) => {
                    if let Some(job) = reg.jobs.get_mut(&id) {
                        job.output = Some(out);
                    }
                    reg.advance(id, JobState::Done);
                }
                Err(msg) => {
                    if let Some(job) = reg.jobs.get_mut(&id) {
                        job.error = Some(msg);
                    }
                    reg.advance(id, JobState::Failed);
                }
            }
        });
        id
    }
}

/// JSON error body: `{"error": ..., "fields": {name: message}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: BTreeMap<String, String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), fields: BTreeMap::new() }
    }

    fn validation(fields: BTreeMap<String, String>) -> Self {
        let message = fields.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("; ");
        Self { status: StatusCode::BAD_REQUEST, message, fields }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "fields": self.fields }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

#[derive(Default)]
struct FieldErrors(BTreeMap<String, String>);

impl FieldErrors {
    fn add(&mut self, field: impl Into<String>, msg: impl ToString) {
        self.0.entry(field.into()).or_insert_with(|| msg.to_string());
    }

    fn finish(self) -> Result<(), ApiError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ApiError::validation(self.0))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBody {
    pub image: String,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub class_id: usize,
    #[serde(default)]
    pub strength: Option<f64>,
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBody {
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub class_id: usize,
    #[serde(default)]
    pub strength: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeBody {
    pub image: String,
    pub layers: Vec<LayerBody>,
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn decode_image(errs: &mut FieldErrors, field: &str, b64: &str, model: &DenoiserModel) -> Option<VideoTensor> {
    match b64_decode(b64).and_then(|b| image_from_png(&b)) {
        Ok(img) => {
            let side = model.config().latent_hw * LATENT_FACTOR;
            if img.height() != side || img.width() != side {
                errs.add(field, format!("expected a {side}x{side} image, got {}x{}", img.height(), img.width()));
                None
            } else {
                Some(img)
            }
        }
        Err(e) => {
            errs.add(field, e);
            None
        }
    }
}

fn decode_mask(errs: &mut FieldErrors, field: &str, b64: Option<&str>, image: Option<&VideoTensor>, model: &DenoiserModel) -> Option<MotionMask> {
    let b64 = b64?;
    match b64_decode(b64).and_then(|b| mask_from_png(&b)) {
        Ok(m) => {
            let side = model.config().latent_hw * LATENT_FACTOR;
            let (h, w) = image.map_or((side, side), |i| (i.height(), i.width()));
            if m.height() != h || m.width() != w {
                errs.add(field, format!("mask is {}x{} but the image is {h}x{w}", m.height(), m.width()));
            }
            Some(m)
        }
        Err(e) => {
            errs.add(field, e);
            None
        }
    }
}

fn check_condition(errs: &mut FieldErrors, prefix: &str, class_id: usize, strength: Option<f64>, model: &DenoiserModel) -> f64 {
    if class_id >= model.config().num_classes {
        errs.add(format!("{prefix}class_id"), format!("must be in 0..{}", model.config().num_classes));
    }
    let s = strength.unwrap_or_else(|| model.strength_range.map_or(0.0, |r| r.median));
    if !s.is_finite() || s < 0.0 {
        errs.add(format!("{prefix}strength"), "must be a finite number >= 0");
    }
    s
}

fn check_sampler(errs: &mut FieldErrors, frames: Option<usize>, steps: Option<usize>, model: &DenoiserModel) -> (usize, usize) {
    let frames = frames.unwrap_or(animate_core::animate::DEFAULT_FRAMES);
    let steps = steps.unwrap_or(animate_core::animate::DEFAULT_STEPS);
    if !(1..=MAX_FRAMES).contains(&frames) {
        errs.add("frames", format!("must be in 1..={MAX_FRAMES}"));
    }
    let t = model.schedule.timesteps;
    if !(1..=t).contains(&steps) {
        errs.add("steps", format!("must be in 1..={t}"));
    }
    (frames, steps)
}

async fn post_generate(State(st): State<Arc<AppState>>, body: Result<Json<GenerateBody>, JsonRejection>) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    let model = st.model()?;
    let mut errs = FieldErrors::default();
    let image = decode_image(&mut errs, "image", &body.image, &model);
    let mask = decode_mask(&mut errs, "mask", body.mask.as_deref(), image.as_ref(), &model);
    let strength = check_condition(&mut errs, "", body.class_id, body.strength, &model);
    let (frames, steps) = check_sampler(&mut errs, body.frames, body.steps, &model);
    errs.finish()?;
    let req = GenerationRequest {
        image: image.expect("validated"),
        mask,
        class_id: body.class_id,
        strength,
        frames,
        steps,
        seed: body.seed,
    };
    let id = st.spawn(JobKind::Generate, move |_, report| {
        let sched = model.schedule.build().map_err(|e| e.to_string())?;
        generate(&req, &model, &sched, &mut |d, n| report(d as f64 / n as f64))
            .map(JobOutput::Video)
            .map_err(|e| e.to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

async fn post_compose(State(st): State<Arc<AppState>>, body: Result<Json<ComposeBody>, JsonRejection>) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    let model = st.model()?;
    let mut errs = FieldErrors::default();
    let image = decode_image(&mut errs, "image", &body.image, &model);
    if body.layers.is_empty() || body.layers.len() > MAX_LAYERS {
        errs.add("layers", format!("must contain 1..={MAX_LAYERS} layers"));
    }
    let mut layers = Vec::with_capacity(body.layers.len());
    for (k, l) in body.layers.iter().enumerate() {
        let mask = decode_mask(&mut errs, &format!("layers[{k}].mask"), l.mask.as_deref(), image.as_ref(), &model);
        let strength = check_condition(&mut errs, &format!("layers[{k}]."), l.class_id, l.strength, &model);
        layers.push(CompositionLayer { mask, class_id: l.class_id, strength });
    }
    let (frames, steps) = check_sampler(&mut errs, body.frames, body.steps, &model);
    errs.finish()?;
    let req = CompositionRequest { image: image.expect("validated"), layers, frames, steps, seed: body.seed };
    let id = st.spawn(JobKind::Compose, move |_, report| {
        let sched = model.schedule.build().map_err(|e| e.to_string())?;
        compose(&req, &model, &sched, &mut |d, n| report(d as f64 / n as f64))
            .map(JobOutput::Video)
            .map_err(|e| e.to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

/// Dataset source for train and eval jobs: a saved directory or a
/// procedurally generated set.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_source_frames")]
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    64
}

fn default_source_frames() -> usize {
    24
}

impl Default for DataSource {
    fn default() -> Self {
        Self { dir: None, count: default_count(), frames: default_source_frames(), seed: 0 }
    }
}

impl DataSource {
    fn load(&self, image_size: usize) -> Result<Vec<animate_core::data::DatasetItem>, String> {
        match &self.dir {
            Some(d) => load_dataset(d),
            None => generate_dataset(self.count, image_size, self.frames, &Rng::new(self.seed)),
        }
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBody {
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBody {
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_eval_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cases() -> usize {
    16
}

fn default_eval_steps() -> usize {
    animate_core::animate::DEFAULT_STEPS
}

/// Clears the training flag even if the job panics.
struct TrainingGuard(Arc<AppState>);

impl Drop for TrainingGuard {
    fn drop(&mut self) {
        self.0.training.store(false, Ordering::SeqCst);
    }
}

async fn post_train(State(st): State<Arc<AppState>>, body: Result<Json<TrainBody>, JsonRejection>) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    if let Err(e) = body.config.validate() {
        return Err(ApiError::validation(BTreeMap::from([("config".to_string(), e.to_string())])));
    }
    if st.training.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a train job is already running"));
    }
    let guard = TrainingGuard(Arc::clone(&st));
    let state = Arc::clone(&st);
    let id = st.spawn(JobKind::Train, move |id, report| {
        let _guard = guard;
        let cfg = body.config;
        let data = body.data.load(cfg.model.latent_hw * LATENT_FACTOR)?;
        let outcome = train(&cfg, &data, &mut |d, n| report(d as f64 / n.max(1) as f64)).map_err(|e| e.to_string())?;
        std::fs::create_dir_all(&state.config.workdir).map_err(|e| e.to_string())?;
        let path = state.config.workdir.join(format!("train-{id}.ckpt"));
        save_checkpoint(&path, &outcome.model).map_err(|e| e.to_string())?;
        let last = outcome.log.last().copied();
        *state.model.write().unwrap() = Some(Arc::new(outcome.model));
        Ok(JobOutput::Report(json!({ "checkpoint": path, "iterations": outcome.log.len(), "final": last })))
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

async fn post_eval(State(st): State<Arc<AppState>>, body: Result<Json<EvalBody>, JsonRejection>) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    let model = st.model()?;
    let mut errs = FieldErrors::default();
    if let Err(e) = body.config.validate() {
        errs.add("config", e);
    }
    if body.cases == 0 {
        errs.add("cases", "must be >= 1");
    }
    if !(1..=model.schedule.timesteps).contains(&body.steps) {
        errs.add("steps", format!("must be in 1..={}", model.schedule.timesteps));
    }
    errs.finish()?;
    let id = st.spawn(JobKind::Eval, move |_, report| {
        let data = body.data.load(model.config().latent_hw * LATENT_FACTOR)?;
        let cases = build_eval_cases(&data, &body.config, body.cases, body.seed).map_err(|e| e.to_string())?;
        let opts = EvalOptions::from_config(&body.config, body.steps);
        let sched = model.schedule.build().map_err(|e| e.to_string())?;
        let (agg, _) = evaluate_model(&model, &cases, &opts, &sched, &mut |d, n| report(d as f64 / n as f64))
            .map_err(|e| e.to_string())?;
        Ok(JobOutput::Report(serde_json::to_value(agg).map_err(|e| e.to_string())?))
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

fn unknown_job(id: u64) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("no job with id {id}"))
}

async fn get_job(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Json<Job>, ApiError> {
    st.registry().view(id).map(Json).ok_or_else(|| unknown_job(id))
}

#[derive(Debug, Deserialize)]
pub struct ResultQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn get_result(State(st): State<Arc<AppState>>, Path(id): Path<u64>, Query(q): Query<ResultQuery>) -> Result<Response, ApiError> {
    let (state, output) = {
        let reg = st.registry();
        let job = reg.jobs.get(&id).ok_or_else(|| unknown_job(id))?;
        (job.state, job.output.clone())
    };
    let output = match (state, output) {
        (JobState::Done, Some(o)) => o,
        (JobState::Failed, _) => return Err(ApiError::new(StatusCode::CONFLICT, "job failed; see GET /api/jobs/{id}")),
        _ => return Err(ApiError::new(StatusCode::CONFLICT, "job has not finished")),
    };
    match (output, q.format.as_deref()) {
        (JobOutput::Report(v), _) => Ok(Json(v).into_response()),
        (JobOutput::Video(v), Some("aav1")) => {
            Ok(([(header::CONTENT_TYPE, "application/octet-stream")], video_to_bytes(&v)).into_response())
        }
        (JobOutput::Video(v), None | Some("png")) => {
            let frames = (0..v.frames())
                .map(|f| frame_to_png(&v, f).map(|b| b64_encode(&b)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            Ok(Json(json!({ "frames": frames, "height": v.height(), "width": v.width() })).into_response())
        }
        (_, Some(other)) => Err(ApiError::validation(BTreeMap::from([(
            "format".to_string(),
            format!("unknown format {other:?}; use png or aav1"),
        )]))),
    }
}

async fn get_model(State(st): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let model = st.model()?;
    Ok(Json(json!({
        "config": model.config(),
        "param_count": model.param_count(),
        "strength_range": model.strength_range,
        "variant": model.variant,
        "schedule": model.schedule,
        "image_size": model.config().latent_hw * LATENT_FACTOR,
    })))
}

async fn get_classes() -> Json<Value> {
    let mut classes = vec![json!({ "id": NULL_CLASS, "name": "any" })];
    classes.extend(MotionClass::ALL.iter().map(|c| json!({ "id": c.id(), "name": c.name() })));
    Json(Value::Array(classes))
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/api/generate", post(post_generate))
        .route("/api/compose", post(post_compose))
        .route("/api/train", post(post_train))
        .route("/api/eval", post(post_eval))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/result", get(get_result))
        .route("/api/model", get(get_model))
        .route("/api/classes", get(get_classes))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(std::io::Error::other)?;
    axum::serve(listener, router(state)).await
}
