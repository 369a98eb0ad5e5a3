use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use divex_core::collab::{decode_message, encode_message, CollabMessage, Effect, Role, SessionState, SpectatorSnapshot};
use divex_core::colorfeat::{load_concept_scores, PaletteColor};
use divex_core::corpus::{parse_manifest, shot_view, Corpus, CorpusError};
use divex_core::search::{
    color_filter, concept_search, map_search, shot_filter, similarity_search, sketch_search, FeatureSpace,
    ResultSet, SearchError, SearchFeature, SearchHistory, Sketch,
};
use divex_core::som::{FeatureMap, MapCatalog, MapExport, MapKind};
use divex_core::taskserver::{
    load_tasks, ScoreLogEntry, Submission, Task, TaskBoard, UsageEvent, UsageFeature, UsageLog, UsageLogLine,
    UsageReport,
};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::cache::{catalog_digest, load_or_build_catalog};
use crate::{GatewayError, ServiceConfig};

/// Wall-clock source, swappable in tests.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance_ms(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl Clock for Arc<ManualClock> {
    fn now_ms(&self) -> u64 {
        self.as_ref().now_ms()
    }
}

/// One search request; the HTTP layer builds these from `/search/{kind}`
/// bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchRequest {
    Concept {
        query: String,
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Color {
        /// Palette color names.
        colors: Vec<String>,
        #[serde(default)]
        theta: Option<f64>,
    },
    Similarity {
        keyframe: String,
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_space")]
        space: FeatureSpace,
    },
    Sketch {
        /// Cell index (row-major, `"0"`..`"8"`) to palette color name;
        /// unset cells are simply absent.
        cells: BTreeMap<String, String>,
        #[serde(default)]
        min_match: Option<usize>,
    },
    /// Restricts the session's current result set to one video.
    ShotFilter { video: String },
}

fn default_space() -> FeatureSpace {
    FeatureSpace::Color
}

fn palette(name: &str) -> Result<PaletteColor, GatewayError> {
    PaletteColor::from_name(name).ok_or_else(|| GatewayError::BadRequest(format!("unknown color {name:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSession {
    pub user: String,
    pub role: Role,
    /// Collaboration session the user belongs to.
    pub team: String,
    #[serde(skip)]
    pub history: SearchHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct ActiveTask {
    started_ms: u64,
}

struct Judging {
    board: TaskBoard,
    active: Option<(String, ActiveTask)>,
    log_file: Option<File>,
}

struct Usage {
    log: UsageLog,
    file: Option<File>,
}

/// A collaboration session: authoritative state plus a fan-out channel of
/// applied wire messages.
pub struct CollabRoom {
    state: Mutex<SessionState>,
    tx: broadcast::Sender<String>,
}

impl CollabRoom {
    fn new() -> Self {
        CollabRoom {
            state: Mutex::new(SessionState::new()),
            tx: broadcast::channel(256).0,
        }
    }

    /// Decodes and applies one wire message addressed to `session`. Applied
    /// messages are re-encoded and broadcast to subscribers.
    pub fn apply_wire(&self, session: &str, bytes: &[u8]) -> Result<Effect, GatewayError> {
        let msg = decode_message(bytes)?;
        if msg.session() != session {
            return Err(GatewayError::BadRequest(format!(
                "message for session {:?} sent to {session:?}",
                msg.session()
            )));
        }
        self.apply(&msg)
    }

    pub fn apply(&self, msg: &CollabMessage) -> Result<Effect, GatewayError> {
        let effect = self.state.lock().unwrap().apply(msg)?;
        if effect == Effect::Applied {
            let wire = String::from_utf8(encode_message(msg)).expect("wire form is UTF-8");
            // no subscribers is fine
            let _ = self.tx.send(wire);
        }
        Ok(effect)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.tx.subscribe()
    }

    pub fn snapshot(&self) -> SpectatorSnapshot {
        self.state.lock().unwrap().snapshot()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub videos: usize,
    pub keyframes: usize,
    pub maps: usize,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MapSummary {
    pub id: String,
    pub title: String,
    pub kind: MapKind,
    pub width: usize,
    pub height: usize,
    pub member_count: usize,
}

impl From<&FeatureMap> for MapSummary {
    fn from(m: &FeatureMap) -> Self {
        MapSummary {
            id: m.id.clone(),
            title: m.title.clone(),
            kind: m.kind,
            width: m.width(),
            height: m.height(),
            member_count: m.member_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotEntry {
    pub shot_index: u32,
    pub start_frame: u64,
    pub end_frame: u64,
    pub keyframe: String,
    pub timestamp_sec: f64,
}

/// Everything the service serves. Corpus and catalog never change after
/// construction; the rest is session-scoped and guarded per concern.
pub struct Engine {
    corpus: Corpus,
    catalog: MapCatalog,
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    next_token: AtomicU64,
    token_salt: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<UserSession>>>>,
    rooms: Mutex<HashMap<String, Arc<CollabRoom>>>,
    judging: Mutex<Judging>,
    usage: Mutex<Usage>,
}

fn open_append(path: &Path) -> Result<File, GatewayError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

impl Engine {
    /// Loads corpus, concept scores, tasks and the (possibly cached) map
    /// catalog named in `config`.
    pub fn start(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        let manifest = std::fs::read(&config.manifest).map_err(|e| {
            CorpusError::MalformedManifest(format!("{}: {e}", config.manifest.display()))
        })?;
        let text = std::str::from_utf8(&manifest)
            .map_err(|e| CorpusError::MalformedManifest(format!("{}: {e}", config.manifest.display())))?;
        let base = config.manifest.parent().unwrap_or(Path::new("."));
        let mut corpus = parse_manifest(text, base)?;

        let concepts_raw = match &config.concepts {
            Some(p) => {
                corpus = corpus.with_concept_scores(&load_concept_scores(p)?)?;
                Some(std::fs::read(p)?)
            }
            None => None,
        };
        let tasks = match &config.tasks {
            Some(p) => load_tasks(p)?,
            None => Vec::new(),
        };
        let digest = catalog_digest(
            &manifest,
            concepts_raw.as_deref(),
            &config.som,
            config.min_members,
            config.concept_threshold,
        );
        let catalog = load_or_build_catalog(
            &corpus,
            config.catalog_cache.as_deref(),
            &digest,
            &config.som,
            config.min_members,
            config.concept_threshold,
        )?;
        Self::from_parts(corpus, catalog, tasks, config, clock)
    }

    /// Assembles an engine from already loaded parts. Log files named in
    /// `config` are opened for appending.
    pub fn from_parts(
        corpus: Corpus,
        catalog: MapCatalog,
        tasks: Vec<Task>,
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        let score_file = config.score_log.as_deref().map(open_append).transpose()?;
        let usage_file = config.usage_log.as_deref().map(open_append).transpose()?;
        Ok(Engine {
            corpus,
            catalog,
            clock,
            next_token: AtomicU64::new(1),
            token_salt: rand::random(),
            sessions: RwLock::default(),
            rooms: Mutex::default(),
            judging: Mutex::new(Judging {
                board: TaskBoard::new(tasks)?,
                active: None,
                log_file: score_file,
            }),
            usage: Mutex::new(Usage {
                log: UsageLog::new(),
                file: usage_file,
            }),
            config,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn catalog(&self) -> &MapCatalog {
        &self.catalog
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok",
            videos: self.corpus.videos().len(),
            keyframes: self.corpus.len(),
            maps: self.catalog.len(),
            tasks: self.judging.lock().unwrap().board.tasks().len(),
        }
    }

    /// Registers a user and returns an opaque session token.
    pub fn create_session(&self, user: &str, role: Role, team: &str) -> Result<String, GatewayError> {
        if user.is_empty() || team.is_empty() {
            return Err(GatewayError::BadRequest("user and team must be non-empty".into()));
        }
        let n = self.next_token.fetch_add(1, Ordering::SeqCst);
        let token = format!("{:016x}{n:08x}", self.token_salt);
        let session = UserSession {
            user: user.to_string(),
            role,
            team: team.to_string(),
            history: SearchHistory::new(),
        };
        self.sessions
            .write()
            .unwrap()
            .insert(token.clone(), Arc::new(Mutex::new(session)));
        Ok(token)
    }

    fn session(&self, token: &str) -> Result<Arc<Mutex<UserSession>>, GatewayError> {
        self.sessions
            .read()
            .unwrap()
            .get(token)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownSession(token.to_string()))
    }

    pub fn session_info(&self, token: &str) -> Result<UserSession, GatewayError> {
        Ok(self.session(token)?.lock().unwrap().clone())
    }

    /// Runs one search for a session, pushes the result onto its history
    /// and records a usage event when a task is running.
    pub fn dispatch_search(&self, token: &str, request: SearchRequest) -> Result<ResultSet, GatewayError> {
        let session = self.session(token)?;
        let mut s = session.lock().unwrap();
        let cfg = &self.config;
        let results = match request {
            SearchRequest::Concept { query, theta, limit } => concept_search(
                &self.corpus,
                &query,
                theta.unwrap_or(cfg.concept_theta),
                limit.unwrap_or(cfg.result_limit),
            )?,
            SearchRequest::Color { colors, theta } => {
                let wanted = colors.iter().map(|c| palette(c)).collect::<Result<BTreeSet<_>, _>>()?;
                color_filter(&self.corpus, &wanted, theta.unwrap_or(cfg.coverage_theta))?
            }
            SearchRequest::Similarity { keyframe, k, space } => {
                similarity_search(&self.corpus, &keyframe, k.unwrap_or(cfg.similarity_k), space)?
            }
            SearchRequest::Sketch { cells, min_match } => {
                let mut sketch = Sketch::default();
                for (idx, name) in &cells {
                    let slot = idx
                        .parse::<usize>()
                        .ok()
                        .and_then(|i| sketch.0.get_mut(i))
                        .ok_or_else(|| GatewayError::BadRequest(format!("sketch cell {idx:?} is not in 0..9")))?;
                    *slot = Some(palette(name)?);
                }
                let set = sketch.set_cells();
                sketch_search(&self.corpus, &sketch, min_match.unwrap_or(set))?
            }
            SearchRequest::ShotFilter { video } => {
                let current = s.history.current().ok_or_else(|| {
                    SearchError::InvalidParameter("no current result set to filter".into())
                })?;
                shot_filter(&self.corpus, current, &video)?
            }
        };
        let results = results.stamped(self.clock.now_ms());
        s.history.push(results.clone());
        self.record_usage_for(&s, results.query.feature.into());
        Ok(results)
    }

    /// Textual map search. With a session token the call counts as a
    /// `map_search` usage event.
    pub fn search_maps(&self, token: Option<&str>, query: &str) -> Result<Vec<MapSummary>, GatewayError> {
        let session = token.map(|t| self.session(t)).transpose()?;
        let ids = map_search(&self.catalog, query)?;
        if let Some(session) = session {
            self.record_usage_for(&session.lock().unwrap(), SearchFeature::MapSearch.into());
        }
        Ok(ids
            .iter()
            .filter_map(|id| self.catalog.get(id))
            .map(MapSummary::from)
            .collect())
    }

    pub fn list_maps(&self) -> Vec<MapSummary> {
        self.catalog.maps.iter().map(MapSummary::from).collect()
    }

    pub fn map_export(&self, id: &str) -> Result<MapExport, GatewayError> {
        self.catalog
            .get(id)
            .map(|m| m.to_export(false))
            .ok_or_else(|| GatewayError::UnknownMap(id.to_string()))
    }

    pub fn shots(&self, video: &str) -> Result<Vec<ShotEntry>, GatewayError> {
        Ok(shot_view(&self.corpus, video)?
            .into_iter()
            .map(|(shot, kf)| ShotEntry {
                shot_index: shot.shot_index,
                start_frame: shot.start_frame,
                end_frame: shot.end_frame,
                keyframe: kf.id.clone(),
                timestamp_sec: kf.timestamp_sec,
            })
            .collect())
    }

    /// Pops the latest result set and returns the one now on top.
    pub fn history_back(&self, token: &str) -> Result<Option<ResultSet>, GatewayError> {
        let session = self.session(token)?;
        let mut s = session.lock().unwrap();
        s.history.back();
        Ok(s.history.current().cloned())
    }

    pub fn similarity_tab(&self, token: &str) -> Result<Option<ResultSet>, GatewayError> {
        Ok(self.session(token)?.lock().unwrap().history.last_similarity().cloned())
    }

    /// Records a UI-originated event (`map_browsing`, `video_inspection`,
    /// ...). Returns whether a task was running, i.e. whether anything was
    /// recorded.
    pub fn record_usage(&self, token: &str, feature: UsageFeature) -> Result<bool, GatewayError> {
        let session = self.session(token)?;
        let s = session.lock().unwrap();
        Ok(self.record_usage_for(&s, feature))
    }

    fn record_usage_for(&self, s: &UserSession, feature: UsageFeature) -> bool {
        let (task_id, task_type, at_sec) = {
            let j = self.judging.lock().unwrap();
            let Some((task_id, active)) = &j.active else {
                return false;
            };
            let task_type = j.board.task(task_id).expect("active task exists").task_type;
            (task_id.clone(), task_type, self.seconds_since(active.started_ms))
        };
        let event = UsageEvent {
            session: s.team.clone(),
            user: s.user.clone(),
            role: s.role,
            task_id,
            feature,
            at_sec,
        };
        let mut usage = self.usage.lock().unwrap();
        if let Some(f) = usage.file.as_mut() {
            let line = UsageLogLine {
                event: event.clone(),
                task_type,
            };
            if let Err(e) = f.write_all(line.to_json_line().as_bytes()) {
                tracing::error!(error = %e, "usage log write failed");
            }
        }
        usage.log.record(event);
        true
    }

    fn seconds_since(&self, start_ms: u64) -> f64 {
        self.clock.now_ms().saturating_sub(start_ms) as f64 / 1000.0
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.judging.lock().unwrap().board.tasks().to_vec()
    }

    /// Starts (or restarts) a task; it stays the running task until another
    /// one is started.
    pub fn start_task(&self, task_id: &str) -> Result<Task, GatewayError> {
        let mut j = self.judging.lock().unwrap();
        let task = j
            .board
            .task(task_id)
            .cloned()
            .ok_or_else(|| divex_core::taskserver::TaskError::UnknownTask(task_id.to_string()))?;
        j.active = Some((
            task_id.to_string(),
            ActiveTask {
                started_ms: self.clock.now_ms(),
            },
        ));
        Ok(task)
    }

    pub fn active_task(&self) -> Option<String> {
        self.judging.lock().unwrap().active.as_ref().map(|(id, _)| id.clone())
    }

    /// Judges a submission against the running task. The submission time is
    /// taken from the service clock.
    pub fn submit(
        &self,
        token: &str,
        task_id: &str,
        video: &str,
        shot_index: u32,
        timestamp_sec: f64,
    ) -> Result<ScoreLogEntry, GatewayError> {
        let s = self.session_info(token)?;
        let mut j = self.judging.lock().unwrap();
        if j.board.task(task_id).is_none() {
            return Err(divex_core::taskserver::TaskError::UnknownTask(task_id.to_string()).into());
        }
        let started_ms = match &j.active {
            Some((id, active)) if id == task_id => active.started_ms,
            _ => return Err(GatewayError::TaskNotActive(task_id.to_string())),
        };
        let sub = Submission {
            task_id: task_id.to_string(),
            session: s.team,
            user: s.user,
            role: s.role,
            video: video.to_string(),
            shot_index,
            timestamp_sec,
            at_sec: self.seconds_since(started_ms),
        };
        let entry = j.board.submit(sub)?;
        if let Some(f) = j.log_file.as_mut() {
            f.write_all(entry.to_json_line().as_bytes())?;
        }
        Ok(entry)
    }

    pub fn score_log(&self) -> Vec<ScoreLogEntry> {
        self.judging.lock().unwrap().board.score_log().to_vec()
    }

    pub fn usage_events(&self) -> Vec<UsageEvent> {
        self.usage.lock().unwrap().log.events().to_vec()
    }

    pub fn usage_report(&self) -> Result<UsageReport, GatewayError> {
        let tasks = self.tasks();
        let usage = self.usage.lock().unwrap();
        Ok(divex_core::taskserver::usage_report(&usage.log, &tasks)?)
    }

    /// The collaboration room for `session`, created on first use.
    pub fn room(&self, session: &str) -> Arc<CollabRoom> {
        self.rooms
            .lock()
            .unwrap()
            .entry(session.to_string())
            .or_insert_with(|| Arc::new(CollabRoom::new()))
            .clone()
    }

    pub fn spectator(&self, session: &str) -> SpectatorSnapshot {
        self.room(session).snapshot()
    }
}
