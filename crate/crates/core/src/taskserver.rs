//! Simulated evaluation server: timed known-item (KIS) and ad-hoc (AVS)
//! search tasks, immediate judgment of submissions, and feature-usage
//! reports.
//!
//! The scoring formulas are provisional stand-ins, not the rules of any real
//! evaluation campaign; every score log line says so in its `scoring` field.
//! They keep the qualitative shape that matters for analysis: KIS scores
//! decay with time and with earlier wrong submissions, AVS rewards every
//! distinct correct shot and penalizes wrong ones, and duplicates are free.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collab::Role;
use crate::search::SearchFeature;

/// Value of the `scoring` field in score log lines.
pub const SCORING_RULE: &str = "provisional-standin-v1";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("malformed task file: {0}")]
    MalformedTask(String),
    #[error("task {task:?} violates an invariant: {reason}")]
    InvariantViolation { task: String, reason: String },
    #[error("submission for task {submitted:?} judged against task {task:?}")]
    TaskMismatch { task: String, submitted: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
    #[error("malformed log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    KisVisual,
    KisTextual,
    Avs,
}

impl TaskType {
    pub fn is_kis(self) -> bool {
        matches!(self, TaskType::KisVisual | TaskType::KisTextual)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::KisVisual => "kis_visual",
            TaskType::KisTextual => "kis_textual",
            TaskType::Avs => "avs",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KisTarget {
    pub video: String,
    pub start_sec: f64,
    pub end_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotRef {
    pub video: String,
    pub shot_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    #[serde(rename = "type")]
    pub task_type: TaskType,
    pub duration_sec: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<KisTarget>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub relevant: BTreeSet<ShotRef>,
    #[serde(default)]
    pub prompt: String,
}

impl Task {
    pub fn validate(&self) -> Result<(), TaskError> {
        let violation = |reason: &str| {
            Err(TaskError::InvariantViolation {
                task: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return violation("empty id");
        }
        if !(self.duration_sec > 0.0) {
            return violation("duration must be positive");
        }
        if self.task_type.is_kis() {
            let Some(t) = &self.target else {
                return violation("KIS task needs a target");
            };
            if !self.relevant.is_empty() {
                return violation("KIS task must not list relevant shots");
            }
            if !(t.start_sec < t.end_sec) {
                return violation("target start must be before its end");
            }
        } else {
            if self.target.is_some() {
                return violation("AVS task must not have a KIS target");
            }
            if self.relevant.is_empty() {
                return violation("AVS task needs at least one relevant shot");
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSON list of tasks.
pub fn parse_tasks(text: &str) -> Result<Vec<Task>, TaskError> {
    let tasks: Vec<Task> =
        serde_json::from_str(text).map_err(|e| TaskError::MalformedTask(e.to_string()))?;
    let mut ids = BTreeSet::new();
    for t in &tasks {
        t.validate()?;
        if !ids.insert(t.id.as_str()) {
            return Err(TaskError::InvariantViolation {
                task: t.id.clone(),
                reason: "duplicate task id".into(),
            });
        }
    }
    Ok(tasks)
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>, TaskError> {
    parse_tasks(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub session: String,
    pub user: String,
    pub role: Role,
    pub video: String,
    pub shot_index: u32,
    /// Time of the submitted keyframe within its video.
    pub timestamp_sec: f64,
    /// Seconds since the task started.
    pub at_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Wrong,
    Duplicate,
    TooLate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub verdict: Verdict,
    pub score_delta: f64,
}

/// KIS score for a correct submission.
pub fn score_kis(at_sec: f64, duration_sec: f64, wrong_count_before: u32) -> f64 {
    (100.0 - 50.0 * (at_sec / duration_sec) - 10.0 * wrong_count_before as f64).max(0.0)
}

/// AVS session total.
pub fn score_avs(correct_count: u32, wrong_count: u32) -> f64 {
    (10.0 * correct_count as f64 - 5.0 * wrong_count as f64).max(0.0)
}

/// Per-session judging state for one task.
#[derive(Debug, Default)]
struct Tally {
    found: BTreeSet<ShotRef>,
    correct: u32,
    wrong: u32,
    kis_scored: bool,
}

impl Tally {
    fn judge(&mut self, task: &Task, sub: &Submission) -> Judgment {
        let judgment = |verdict, score_delta| Judgment {
            verdict,
            score_delta,
        };
        if sub.at_sec > task.duration_sec {
            return judgment(Verdict::TooLate, 0.0);
        }
        if let Some(target) = &task.target {
            let hit = sub.video == target.video
                && target.start_sec <= sub.timestamp_sec
                && sub.timestamp_sec <= target.end_sec;
            if hit {
                let delta = if self.kis_scored {
                    0.0
                } else {
                    score_kis(sub.at_sec, task.duration_sec, self.wrong)
                };
                self.kis_scored = true;
                self.correct += 1;
                judgment(Verdict::Correct, delta)
            } else {
                self.wrong += 1;
                judgment(Verdict::Wrong, 0.0)
            }
        } else {
            let shot = ShotRef {
                video: sub.video.clone(),
                shot_index: sub.shot_index,
            };
            let before = score_avs(self.correct, self.wrong);
            if !task.relevant.contains(&shot) {
                self.wrong += 1;
                judgment(Verdict::Wrong, score_avs(self.correct, self.wrong) - before)
            } else if self.found.insert(shot) {
                self.correct += 1;
                judgment(Verdict::Correct, score_avs(self.correct, self.wrong) - before)
            } else {
                judgment(Verdict::Duplicate, 0.0)
            }
        }
    }
}

/// Judges `sub` given the earlier submissions in `prior_subs` (any task,
/// any session; only those of the same task and session matter).
pub fn judge(task: &Task, sub: &Submission, prior_subs: &[Submission]) -> Result<Judgment, TaskError> {
    if sub.task_id != task.id {
        return Err(TaskError::TaskMismatch {
            task: task.id.clone(),
            submitted: sub.task_id.clone(),
        });
    }
    if !(sub.at_sec >= 0.0) {
        return Err(TaskError::InvalidSubmission("at_sec must be non-negative".into()));
    }
    let mut tally = Tally::default();
    for p in prior_subs
        .iter()
        .filter(|p| p.task_id == task.id && p.session == sub.session && p.at_sec >= 0.0)
    {
        tally.judge(task, p);
    }
    Ok(tally.judge(task, sub))
}

/// One line of the append-only score log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLogEntry {
    #[serde(flatten)]
    pub submission: Submission,
    pub verdict: Verdict,
    pub score_delta: f64,
    pub scoring: String,
}

impl ScoreLogEntry {
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log serialization is infallible");
        line.push('\n');
        line
    }
}

pub fn parse_score_log(text: &str) -> Result<Vec<ScoreLogEntry>, TaskError> {
    parse_json_lines(text)
}

fn parse_json_lines<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, TaskError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TaskError::MalformedLog {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Tasks plus the submissions received so far. Judging is serialized
/// through `&mut self`.
#[derive(Debug, Clone, Default)]
pub struct TaskBoard {
    tasks: Vec<Task>,
    submissions: BTreeMap<String, Vec<Submission>>,
    log: Vec<ScoreLogEntry>,
}

impl TaskBoard {
    pub fn new(tasks: Vec<Task>) -> Result<Self, TaskError> {
        for t in &tasks {
            t.validate()?;
        }
        Ok(TaskBoard {
            tasks,
            ..Default::default()
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Judges and records a submission, returning the new log entry.
    pub fn submit(&mut self, sub: Submission) -> Result<ScoreLogEntry, TaskError> {
        let task = self
            .task(&sub.task_id)
            .ok_or_else(|| TaskError::UnknownTask(sub.task_id.clone()))?;
        let prior = self.submissions.get(&sub.task_id).map_or(&[][..], Vec::as_slice);
        let j = judge(task, &sub, prior)?;
        let entry = ScoreLogEntry {
            submission: sub.clone(),
            verdict: j.verdict,
            score_delta: j.score_delta,
            scoring: SCORING_RULE.to_string(),
        };
        self.submissions.entry(sub.task_id.clone()).or_default().push(sub);
        self.log.push(entry.clone());
        Ok(entry)
    }

    pub fn score_log(&self) -> &[ScoreLogEntry] {
        &self.log
    }

    /// Sum of score deltas for one session on one task.
    pub fn session_score(&self, task_id: &str, session: &str) -> f64 {
        self.log
            .iter()
            .filter(|e| e.submission.task_id == task_id && e.submission.session == session)
            .map(|e| e.score_delta)
            .sum()
    }
}

/// Re-judges every logged submission in order and returns the fresh log.
pub fn replay_score_log(tasks: &[Task], log: &[ScoreLogEntry]) -> Result<Vec<ScoreLogEntry>, TaskError> {
    let mut board = TaskBoard::new(tasks.to_vec())?;
    log.iter()
        .map(|e| board.submit(e.submission.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageFeature {
    ConceptSearch,
    MapSearch,
    ColorFilter,
    SimilaritySearch,
    Sketch,
    ShotFilter,
    MapBrowsing,
    VideoInspection,
}

impl UsageFeature {
    pub fn as_str(self) -> &'static str {
        match self {
            UsageFeature::MapBrowsing => "map_browsing",
            UsageFeature::VideoInspection => "video_inspection",
            UsageFeature::ConceptSearch => SearchFeature::ConceptSearch.as_str(),
            UsageFeature::MapSearch => SearchFeature::MapSearch.as_str(),
            UsageFeature::ColorFilter => SearchFeature::ColorFilter.as_str(),
            UsageFeature::SimilaritySearch => SearchFeature::SimilaritySearch.as_str(),
            UsageFeature::Sketch => SearchFeature::Sketch.as_str(),
            UsageFeature::ShotFilter => SearchFeature::ShotFilter.as_str(),
        }
    }
}

impl From<SearchFeature> for UsageFeature {
    fn from(f: SearchFeature) -> Self {
        match f {
            SearchFeature::ConceptSearch => UsageFeature::ConceptSearch,
            SearchFeature::MapSearch => UsageFeature::MapSearch,
            SearchFeature::ColorFilter => UsageFeature::ColorFilter,
            SearchFeature::SimilaritySearch => UsageFeature::SimilaritySearch,
            SearchFeature::Sketch => UsageFeature::Sketch,
            SearchFeature::ShotFilter => UsageFeature::ShotFilter,
        }
    }
}

impl fmt::Display for UsageFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub session: String,
    pub user: String,
    pub role: Role,
    pub task_id: String,
    pub feature: UsageFeature,
    pub at_sec: f64,
}

/// Usage event as persisted: the task type travels with the event so a log
/// can be reported on without the task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageLogLine {
    #[serde(flatten)]
    pub event: UsageEvent,
    pub task_type: TaskType,
}

impl UsageLogLine {
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log serialization is infallible");
        line.push('\n');
        line
    }
}

pub fn parse_usage_log(text: &str) -> Result<Vec<UsageLogLine>, TaskError> {
    parse_json_lines(text)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UsageLog {
    events: Vec<UsageEvent>,
}

impl UsageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: UsageEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[UsageEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRow {
    pub role: Role,
    pub task_type: TaskType,
    pub feature: UsageFeature,
    pub count: u64,
}

/// Event counts per (role, task type, feature), rows sorted by those three
/// names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UsageReport {
    pub rows: Vec<UsageRow>,
}

impl UsageReport {
    pub fn from_triples(triples: impl IntoIterator<Item = (Role, TaskType, UsageFeature)>) -> Self {
        let mut counts: BTreeMap<(&str, &str, &str), UsageRow> = BTreeMap::new();
        for (role, task_type, feature) in triples {
            counts
                .entry((role.as_str(), task_type.as_str(), feature.as_str()))
                .or_insert(UsageRow {
                    role,
                    task_type,
                    feature,
                    count: 0,
                })
                .count += 1;
        }
        UsageReport {
            rows: counts.into_values().collect(),
        }
    }

    pub fn from_log_lines(lines: &[UsageLogLine]) -> Self {
        Self::from_triples(lines.iter().map(|l| (l.event.role, l.task_type, l.event.feature)))
    }

    pub fn count(&self, role: Role, task_type: TaskType, feature: UsageFeature) -> u64 {
        self.rows
            .iter()
            .find(|r| r.role == role && r.task_type == task_type && r.feature == feature)
            .map_or(0, |r| r.count)
    }

    /// Rows for one (role, task type) cell.
    pub fn cell(&self, role: Role, task_type: TaskType) -> impl Iterator<Item = &UsageRow> {
        self.rows
            .iter()
            .filter(move |r| r.role == role && r.task_type == task_type)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("role,task_type,feature,count\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.role, r.task_type, r.feature, r.count));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Aggregates usage events; every event must reference a known task.
pub fn usage_report(log: &UsageLog, tasks: &[Task]) -> Result<UsageReport, TaskError> {
    let types: BTreeMap<&str, TaskType> = tasks.iter().map(|t| (t.id.as_str(), t.task_type)).collect();
    let triples = log
        .events()
        .iter()
        .map(|e| {
            types
                .get(e.task_id.as_str())
                .map(|tt| (e.role, *tt, e.feature))
                .ok_or_else(|| TaskError::UnknownTask(e.task_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(UsageReport::from_triples(triples))
}
