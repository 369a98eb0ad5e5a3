mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::Fixture;
use divex_core::corpus::{write_manifest, CorpusError};
use divex_core::search::{concept_search, ResultSet};
use divex_core::taskserver::{UsageFeature, Verdict};
use divex_gateway::{Engine, GatewayError, ServiceConfig, SystemClock};
use serde_json::{json, Value};

fn without_timestamp(mut v: Value) -> Value {
    v["query"]["issued_at_ms"] = json!(0);
    v
}

#[tokio::test]
async fn health_reports_counts() {
    let f = Fixture::new();
    let (status, v) = f.call("GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "videos": 2, "keyframes": 5, "maps": 3, "tasks": 2}));
}

#[tokio::test]
async fn concept_search_passes_through() {
    let f = Fixture::new();
    let s = f.session("u1", "expert", "team").await;
    let (status, v) = f
        .call("POST", "/search/concept", Some(json!({"session": s, "query": "fac"})))
        .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let direct = concept_search(f.engine.corpus(), "fac", 0.0, 1000).unwrap();
    let served: ResultSet = serde_json::from_value(without_timestamp(v.clone())).unwrap();
    assert_eq!(served, direct);
    assert_eq!(served.ids().collect::<Vec<_>>(), ["k10", "k11", "k20"]);
    assert_eq!(v["query"]["issued_at_ms"], 1_000_000);
}

#[tokio::test]
async fn identical_requests_give_identical_bodies() {
    let f = Fixture::new();
    let s = f.session("u1", "novice", "team").await;
    let body = json!({"session": s, "keyframe": "k10", "k": 3, "space": "concept"});
    let mut seen = Vec::new();
    for _ in 0..4 {
        f.clock.advance_ms(17);
        let (status, v) = f.call("POST", "/search/similarity", Some(body.clone())).await;
        assert_eq!(status, StatusCode::OK);
        seen.push(without_timestamp(v));
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(seen[0]["entries"][0]["keyframe_id"], "k11");
}

#[tokio::test]
async fn history_back_and_similarity_tab() {
    let f = Fixture::new();
    let s = f.session("u1", "expert", "team").await;
    let (_, first) = f
        .call("POST", "/search/color", Some(json!({"session": s, "colors": ["red"]})))
        .await;
    assert_eq!(first["entries"].as_array().unwrap().len(), 2);
    let (_, sim) = f
        .call("POST", "/search/similarity", Some(json!({"session": s, "keyframe": "k12"})))
        .await;
    assert_eq!(sim["entries"][0]["keyframe_id"], "k21");
    let (status, sketch) = f
        .call("POST", "/search/sketch", Some(json!({"session": s, "cells": {"4": "blue"}})))
        .await;
    assert_eq!(status, StatusCode::OK, "{sketch}");
    assert_eq!(sketch["entries"].as_array().unwrap().len(), 2);

    let (status, back) = f.call("POST", "/history/back", Some(json!({"session": s}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(back, sim);
    let (_, back) = f.call("POST", "/history/back", Some(json!({"session": s}))).await;
    assert_eq!(back, first);
    let (status, _) = f.call("POST", "/history/back", Some(json!({"session": s}))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);

    let (status, tab) = f.call("GET", &format!("/similarity-tab?session={s}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tab, sim);

    let other = f.session("u2", "novice", "team").await;
    let (status, _) = f.call("GET", &format!("/similarity-tab?session={other}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn shot_filter_narrows_the_current_results() {
    let f = Fixture::new();
    let s = f.session("u1", "expert", "team").await;
    let (status, _) = f.call("POST", "/search/shot_filter", Some(json!({"session": s, "video": "v2"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    f.call("POST", "/search/concept", Some(json!({"session": s, "query": "faces"}))).await;
    let (status, v) = f.call("POST", "/search/shot_filter", Some(json!({"session": s, "video": "v2"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["entries"], json!([{"keyframe_id": "k20", "score": 0.6}]));
    assert_eq!(v["query"]["feature"], "shot_filter");
}

#[tokio::test]
async fn bad_requests() {
    let f = Fixture::new();
    let s = f.session("u1", "expert", "team").await;
    let cases = [
        ("/search/concept", json!({"session": "nope", "query": "x"}), StatusCode::NOT_FOUND),
        ("/search/concept", json!({"session": s, "query": "  "}), StatusCode::BAD_REQUEST),
        ("/search/color", json!({"session": s, "colors": ["mauve"]}), StatusCode::BAD_REQUEST),
        ("/search/sketch", json!({"session": s, "cells": {"9": "red"}}), StatusCode::BAD_REQUEST),
        ("/search/similarity", json!({"session": s, "keyframe": "k99"}), StatusCode::BAD_REQUEST),
        ("/search/dance", json!({"session": s}), StatusCode::BAD_REQUEST),
    ];
    for (uri, body, want) in cases {
        let (status, v) = f.call("POST", uri, Some(body.clone())).await;
        assert_eq!(status, want, "{uri} {body} -> {v}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn maps_and_shots() {
    let f = Fixture::new();
    let (_, all) = f.call("GET", "/maps", None).await;
    let ids: Vec<&str> = all.as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["color:all", "concept:faces", "concept:texts"]);
    assert_eq!(all[1]["memberCount"], 3);

    let (_, hits) = f.call("GET", "/maps?query=fac", None).await;
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(hits[0]["id"], "concept:faces");

    let (status, map) = f.call("GET", "/maps/concept:texts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(map["conceptLabel"], "texts");
    assert_eq!(map["cells"].as_array().unwrap().len(), 9);
    assert!(map.get("weights").is_none());
    let (status, _) = f.call("GET", "/maps/concept:sky", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, shots) = f.call("GET", "/videos/v1/shots", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(shots.as_array().unwrap().len(), 3);
    assert_eq!(shots[2]["keyframe"], "k12");
    assert_eq!(shots[1]["start_frame"], 25);
    let (status, _) = f.call("GET", "/videos/v9/shots", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn usage_events_only_while_a_task_runs() {
    let f = Fixture::new();
    let s = f.session("u1", "novice", "team").await;
    let search = json!({"session": s, "query": "faces"});
    f.call("POST", "/search/concept", Some(search.clone())).await;
    assert!(f.engine.usage_events().is_empty());

    f.call("POST", "/tasks/avs1/start", None).await;
    f.clock.advance_ms(2_500);
    f.call("POST", "/search/concept", Some(search.clone())).await;
    let events = f.engine.usage_events();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].feature, UsageFeature::ConceptSearch);
    assert_eq!(events[0].task_id, "avs1");
    assert_eq!(events[0].at_sec, 2.5);

    f.call("GET", &format!("/maps?query=tex&session={s}"), None).await;
    let (_, r) = f
        .call("POST", "/usage", Some(json!({"session": s, "feature": "video_inspection"})))
        .await;
    assert_eq!(r, json!({"recorded": true}));
    let (_, csv) = f.call_raw("GET", "/reports/usage?format=csv", None).await;
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "role,task_type,feature,count\n\
         novice,avs,concept_search,1\n\
         novice,avs,map_search,1\n\
         novice,avs,video_inspection,1\n"
    );
    let (_, json_report) = f.call("GET", "/reports/usage", None).await;
    assert_eq!(json_report.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn task_submission_flow() {
    let f = Fixture::new();
    let s = f.session("u1", "expert", "team").await;
    let sub = |video: &str, shot: u32, ts: f64| json!({"session": s, "video": video, "shot_index": shot, "timestamp_sec": ts});

    let (status, _) = f.call("POST", "/tasks/kis1/submit", Some(sub("v1", 1, 1.48))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = f.call("POST", "/tasks/zzz/start", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, task) = f.call("POST", "/tasks/kis1/start", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["type"], "kis_visual");

    f.clock.advance_ms(30_000);
    let (_, j) = f.call("POST", "/tasks/kis1/submit", Some(sub("v1", 0, 0.48))).await;
    assert_eq!(j["verdict"], "wrong");
    f.clock.advance_ms(30_000);
    let (_, j) = f.call("POST", "/tasks/kis1/submit", Some(sub("v1", 1, 1.48))).await;
    assert_eq!(j["verdict"], "correct");
    // 100 - 50 * 60/300 - 10
    assert_eq!(j["score_delta"], 80.0);
    assert_eq!(j["at_sec"], 60.0);
    assert_eq!(j["scoring"], divex_core::taskserver::SCORING_RULE);

    f.clock.advance_ms(300_000);
    let (_, j) = f.call("POST", "/tasks/kis1/submit", Some(sub("v1", 1, 1.48))).await;
    assert_eq!(j["verdict"], "too_late");

    let log = f.engine.score_log();
    assert_eq!(
        log.iter().map(|e| e.verdict).collect::<Vec<_>>(),
        [Verdict::Wrong, Verdict::Correct, Verdict::TooLate]
    );
}

#[tokio::test]
async fn spectator_of_an_empty_session() {
    let f = Fixture::new();
    let (status, v) = f.call("GET", "/spectator/nobody", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"users": [], "hints": [], "revision": 0}));
}

fn write_inputs(dir: &std::path::Path) -> ServiceConfig {
    std::fs::write(dir.join("manifest.json"), write_manifest(&common::corpus())).unwrap();
    std::fs::write(dir.join("concepts.csv"), "# extra\nk12,faces,0.55\n").unwrap();
    std::fs::write(dir.join("tasks.json"), serde_json::to_string(&common::tasks()).unwrap()).unwrap();
    std::fs::write(
        dir.join("divex.json"),
        json!({
            "manifest": "manifest.json",
            "concepts": "concepts.csv",
            "tasks": "tasks.json",
            "catalog_cache": "cache",
            "score_log": "logs/scores.jsonl",
            "usage_log": "logs/usage.jsonl",
            "min_members": 2,
            "som": common::som(),
        })
        .to_string(),
    )
    .unwrap();
    ServiceConfig::load(&dir.join("divex.json")).unwrap()
}

#[test]
fn startup_from_files_uses_the_catalog_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());
    let first = Engine::start(cfg.clone(), Arc::new(SystemClock)).unwrap();
    // the CSV row adds a fourth faces member
    assert_eq!(first.catalog().get("concept:faces").unwrap().member_count(), 4);
    let cached: Vec<_> = std::fs::read_dir(dir.path().join("cache")).unwrap().collect();
    assert_eq!(cached.len(), 1);

    let second = Engine::start(cfg, Arc::new(SystemClock)).unwrap();
    assert_eq!(second.catalog(), first.catalog());
    assert_eq!(second.health(), first.health());
}

#[test]
fn missing_manifest_fails_startup() {
    let cfg = ServiceConfig::new("/definitely/not/here.json");
    assert!(matches!(
        Engine::start(cfg, Arc::new(SystemClock)),
        Err(GatewayError::Corpus(CorpusError::MalformedManifest(_)))
    ));
}

#[test]
fn logs_are_appended_as_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());
    let engine = Engine::start(cfg, Arc::new(SystemClock)).unwrap();
    let s = engine
        .create_session("u1", divex_core::collab::Role::Expert, "team")
        .unwrap();
    engine.start_task("avs1").unwrap();
    engine
        .dispatch_search(
            &s,
            divex_gateway::SearchRequest::Concept {
                query: "faces".into(),
                theta: None,
                limit: None,
            },
        )
        .unwrap();
    engine.submit(&s, "avs1", "v1", 0, 0.5).unwrap();
    engine.submit(&s, "avs1", "v1", 0, 0.5).unwrap();

    let scores =
        divex_core::taskserver::parse_score_log(&std::fs::read_to_string(dir.path().join("logs/scores.jsonl")).unwrap())
            .unwrap();
    assert_eq!(scores, engine.score_log());
    assert_eq!(scores[1].verdict, Verdict::Duplicate);
    let usage =
        divex_core::taskserver::parse_usage_log(&std::fs::read_to_string(dir.path().join("logs/usage.jsonl")).unwrap())
            .unwrap();
    assert_eq!(usage.len(), 1);
    assert_eq!(usage[0].event.feature, UsageFeature::ConceptSearch);
}
