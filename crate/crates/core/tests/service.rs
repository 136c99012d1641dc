mod common;

use std::sync::Arc;

use ais_core::service::router;
use ais_core::workflow::{Engine, WorkflowConfig};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, String) {
    call(app, Method::POST, uri, Some(body)).await
}

fn error_code(body: &str) -> String {
    serde_json::from_str::<Value>(body).unwrap()["error"]
        .as_str()
        .unwrap()
        .to_string()
}

/// App with `n` conversational tasks assigned to annotators a and b (R = 2).
async fn app_with_tasks(n: usize, pilot: bool) -> Router {
    let engine = Engine::in_memory(WorkflowConfig::with_replication(2).pilot(pilot)).unwrap();
    let app = router(Arc::new(engine));
    let (status, body) = post(
        &app,
        "/datasets/import",
        json!({"dataset_id": "qa", "kind": "conversational_qa", "jsonl": common::qa_corpus(n, "m")}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, body) = post(&app, "/assignments", json!({"dataset_id": "qa", "pool": ["a", "b"], "seed": 1})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["created"], 2 * n);
    app
}

#[tokio::test]
async fn full_two_stage_session() {
    let app = app_with_tasks(2, false).await;

    let (status, body) = get(&app, "/tasks/next?annotator=a").await;
    assert_eq!(status, StatusCode::OK);
    let payload: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(payload["stage"], 1);
    assert!(payload.get("source").is_none());
    assert!(!body.contains("SOURCE-PASSAGE"));
    assert_eq!(payload["require_justification"], false);
    assert!(payload["question_text"].as_str().unwrap().contains("interpretable"));
    let task = payload["task_id"].as_str().unwrap().to_string();

    let (status, body) = post(
        &app,
        "/ratings/stage1",
        json!({"task_id": task, "annotator_id": "a", "interpretable": true}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["state"], "awaiting_stage2");

    let (_, body) = get(&app, "/tasks/next?annotator=a").await;
    let payload: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(payload["stage"], 2);
    assert_eq!(payload["task_id"], task.as_str());
    assert!(payload["source"]["text"].as_str().unwrap().starts_with("SOURCE-PASSAGE"));

    let (status, body) = post(&app, "/ratings/stage2", json!({"task_id": task, "annotator_id": "a", "ais": true})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["state"], "complete");

    let (_, body) = get(&app, "/tasks/next?annotator=a").await;
    let other = serde_json::from_str::<Value>(&body).unwrap()["task_id"].as_str().unwrap().to_string();
    let (status, body) = post(
        &app,
        "/ratings/flag",
        json!({"task_id": other, "annotator_id": "a", "reason": "expert_knowledge_required"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["state"], "flagged");

    let (status, body) = get(&app, "/tasks/next?annotator=a").await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(body.is_empty());

    let (status, body) = get(&app, "/progress?annotator=a").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"completed": 2, "assigned": 2}));

    let resp = app
        .clone()
        .oneshot(Request::get("/datasets/qa/ratings").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/x-ndjson");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let lines: Vec<Value> = std::str::from_utf8(&bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().any(|l| l["response"] == json!({"type": "full", "ais": true})));
    assert!(lines
        .iter()
        .any(|l| l["response"] == json!({"type": "flag", "reason": "expert_knowledge_required"})));
}

#[tokio::test]
async fn stage1_no_completes_without_stage2() {
    let app = app_with_tasks(1, false).await;
    let (_, body) = get(&app, "/tasks/next?annotator=b").await;
    let task = serde_json::from_str::<Value>(&body).unwrap()["task_id"].as_str().unwrap().to_string();
    let (status, body) = post(
        &app,
        "/ratings/stage1",
        json!({"task_id": task, "annotator_id": "b", "interpretable": false}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["state"], "complete");
    let (status, body) = post(&app, "/ratings/stage2", json!({"task_id": task, "annotator_id": "b", "ais": true})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "stage_order_violation");
}

#[tokio::test]
async fn errors_use_status_codes() {
    let app = app_with_tasks(1, true).await;
    let task = "m-0000";

    let (status, body) = get(&app, "/tasks/next?annotator=nobody").await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "unknown_annotator"));

    let (status, body) = post(&app, "/ratings/stage2", json!({"task_id": task, "annotator_id": "a", "ais": true, "justification": "x"})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::CONFLICT, "stage_order_violation"));

    let (status, body) = post(&app, "/ratings/stage1", json!({"task_id": task, "annotator_id": "a", "interpretable": true})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "missing_justification"));

    let (status, _) = post(&app, "/ratings/stage1", json!({"task_id": task, "annotator_id": "a", "interpretable": false, "justification": "garbled"})).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = post(&app, "/ratings/stage1", json!({"task_id": task, "annotator_id": "a", "interpretable": true, "justification": "again"})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::CONFLICT, "duplicate_rating"));
    let (status, body) = post(&app, "/ratings/flag", json!({"task_id": task, "annotator_id": "a", "reason": "malformed_text"})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::CONFLICT, "already_complete"));

    let (status, body) = post(&app, "/ratings/stage1", json!({"task_id": "nope", "annotator_id": "a", "interpretable": true, "justification": "x"})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "no_assignment"));

    let (status, _) = post(&app, "/ratings/flag", json!({"task_id": task, "annotator_id": "b", "reason": "not_a_reason"})).await;
    assert!(status.is_client_error());

    let (status, body) = post(&app, "/assignments", json!({"dataset_id": "qa", "pool": ["a"]})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "pool_too_small"));
    let (status, body) = post(&app, "/assignments", json!({"dataset_id": "zz", "pool": ["a", "b"]})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "unknown_dataset"));

    let (status, body) = post(
        &app,
        "/datasets/import",
        json!({"dataset_id": "qa2", "kind": "conversational_qa", "jsonl": common::qa_corpus(1, "m")}),
    )
    .await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::CONFLICT, "duplicate_task_id"));
    let (status, body) = post(&app, "/datasets/import", json!({"dataset_id": "x", "kind": "summarization"})).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "bad_request"));
    let (status, _) = post(&app, "/datasets/import", json!({"dataset_id": "x", "kind": "summarization", "path": "/no/such/file.jsonl"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = get(&app, "/datasets/zz/ratings").await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "unknown_dataset"));
}

#[tokio::test]
async fn import_reports_rejected_lines() {
    let app = router(Arc::new(Engine::in_memory(WorkflowConfig::default()).unwrap()));
    let jsonl = format!("{}\nnot json\n{}\n", common::qa_line("x1", "m"), common::qa_line("x2", "m"));
    let (status, body) = post(
        &app,
        "/datasets/import",
        json!({"dataset_id": "qa", "kind": "conversational_qa", "jsonl": jsonl}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let summary: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(summary["accepted"], 2);
    assert_eq!(summary["rejected"], 1);
    assert_eq!(summary["violations"], json!([{"line": 2, "code": "invalid_json"}]));
}

#[tokio::test]
async fn import_from_server_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(&path, common::qa_corpus(3, "m")).unwrap();
    let app = router(Arc::new(Engine::in_memory(WorkflowConfig::default()).unwrap()));
    let (status, body) = post(
        &app,
        "/datasets/import",
        json!({"dataset_id": "qa", "kind": "conversational_qa", "path": path}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["accepted"], 3);
}

#[tokio::test]
async fn concurrent_requests_never_double_rate() {
    let app = app_with_tasks(20, false).await;
    let mut handles = Vec::new();
    for annotator in ["a", "b"] {
        for _ in 0..3 {
            let app = app.clone();
            handles.push(tokio::spawn(async move {
                loop {
                    let (status, body) = get(&app, &format!("/tasks/next?annotator={annotator}")).await;
                    if status == StatusCode::NO_CONTENT {
                        break;
                    }
                    let p: Value = serde_json::from_str(&body).unwrap();
                    let task = p["task_id"].as_str().unwrap();
                    let (uri, body) = if p["stage"] == 1 {
                        ("/ratings/stage1", json!({"task_id": task, "annotator_id": annotator, "interpretable": true}))
                    } else {
                        ("/ratings/stage2", json!({"task_id": task, "annotator_id": annotator, "ais": false}))
                    };
                    let (status, _) = post(&app, uri, body).await;
                    // A racing worker may have answered the same stage first.
                    assert!(status == StatusCode::OK || status == StatusCode::CONFLICT);
                }
            }));
        }
    }
    for h in handles {
        h.await.unwrap();
    }
    let (_, body) = get(&app, "/datasets/qa/ratings").await;
    assert_eq!(body.lines().count(), 40);
    let pairs: std::collections::HashSet<(String, String)> = body
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["task_id"].as_str().unwrap().into(), v["annotator_id"].as_str().unwrap().into())
        })
        .collect();
    assert_eq!(pairs.len(), 40);
}
