#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use divex_core::colorfeat::{ConceptVector, PaletteColor};
use divex_core::corpus::{Corpus, Image, Keyframe, Shot};
use divex_core::som::{build_map_catalog, SomConfig};
use divex_core::taskserver::{KisTarget, ShotRef, Task, TaskType};
use divex_gateway::{Engine, ManualClock, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

/// Two videos, five keyframes, one solid color each.
///
/// | id | video/shot | color | concepts |
/// |---|---|---|---|
/// | k10 | v1/0 | red | faces .9, sky .2 |
/// | k11 | v1/1 | red | faces .7 |
/// | k12 | v1/2 | blue | sky .8 |
/// | k20 | v2/0 | green | faces .6, texts .9 |
/// | k21 | v2/1 | blue | texts .5 |
pub fn corpus() -> Corpus {
    let rows: [(&str, &str, u32, PaletteColor, &[(&str, f64)]); 5] = [
        ("k10", "v1", 0, PaletteColor::Red, &[("faces", 0.9), ("sky", 0.2)]),
        ("k11", "v1", 1, PaletteColor::Red, &[("faces", 0.7)]),
        ("k12", "v1", 2, PaletteColor::Blue, &[("sky", 0.8)]),
        ("k20", "v2", 0, PaletteColor::Green, &[("faces", 0.6), ("texts", 0.9)]),
        ("k21", "v2", 1, PaletteColor::Blue, &[("texts", 0.5)]),
    ];
    let mut shots = Vec::new();
    let mut kfs = Vec::new();
    for (id, video, idx, color, concepts) in rows {
        let start = idx as u64 * 25;
        shots.push(Shot {
            video_id: video.into(),
            shot_index: idx,
            start_frame: start,
            end_frame: start + 24,
            keyframe_id: id.into(),
        });
        let img = Image::filled(6, 6, color.rgb()).unwrap();
        let kf = Keyframe::from_image(id, video, idx, (start + 12) as f64 / 25.0, &img).unwrap();
        kfs.push(kf.with_concepts(ConceptVector::from_scores(concepts.iter().copied()).unwrap()));
    }
    Corpus::from_parts(vec!["v1".into(), "v2".into()], shots, kfs).unwrap()
}

pub fn som() -> SomConfig {
    SomConfig::new(3, 3).with_epochs(5).with_seed(7)
}

pub fn tasks() -> Vec<Task> {
    vec![
        Task {
            id: "kis1".into(),
            task_type: TaskType::KisVisual,
            duration_sec: 300.0,
            target: Some(KisTarget {
                video: "v1".into(),
                start_sec: 1.0,
                end_sec: 1.5,
            }),
            relevant: BTreeSet::new(),
            prompt: "red close-up".into(),
        },
        Task {
            id: "avs1".into(),
            task_type: TaskType::Avs,
            duration_sec: 300.0,
            target: None,
            relevant: BTreeSet::from([
                ShotRef {
                    video: "v1".into(),
                    shot_index: 0,
                },
                ShotRef {
                    video: "v2".into(),
                    shot_index: 0,
                },
            ]),
            prompt: "faces".into(),
        },
    ]
}

pub struct Fixture {
    pub engine: Arc<Engine>,
    pub clock: Arc<ManualClock>,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_config(ServiceConfig {
            min_members: 2,
            som: som(),
            ..ServiceConfig::new("unused.json")
        })
    }

    pub fn with_config(config: ServiceConfig) -> Self {
        let corpus = corpus();
        let catalog = build_map_catalog(&corpus, &config.som, config.min_members, config.concept_threshold).unwrap();
        let clock = Arc::new(ManualClock::new(1_000_000));
        let engine = Engine::from_parts(corpus, catalog, tasks(), config, Arc::new(clock.clone())).unwrap();
        Fixture {
            engine: Arc::new(engine),
            clock,
        }
    }

    pub fn router(&self) -> Router {
        divex_gateway::api::router(self.engine.clone())
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call_raw(method, uri, body).await;
        let json = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, json)
    }

    pub async fn call_raw(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.router().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
    }

    pub async fn session(&self, user: &str, role: &str, team: &str) -> String {
        let (status, v) = self
            .call(
                "POST",
                "/sessions",
                Some(serde_json::json!({"user": user, "role": role, "team": team})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["session"].as_str().unwrap().to_string()
    }
}
