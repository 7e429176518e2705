use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use objfield::dataset::render_view_exact;
use objfield::session::FramePayload;
use objfield::AnalyticScene;
use objfield_cli::server::{router, AppState, SessionCreated};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn open(app: &Router) -> SessionCreated {
    let (status, body) = call(app, "POST", "/session", Some(json!({ "scene": "toy3", "resolution": 40 }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    serde_json::from_value(body).unwrap()
}

#[tokio::test]
async fn pick_agrees_with_rendered_labels() {
    let app = router(AppState::new());
    let s = open(&app).await;
    assert_eq!(s.num_objects, 4);

    let (status, _) = call(&app, "POST", &format!("/session/{}/pick", s.id), Some(json!({ "u": 1, "v": 1 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, frame) = call(&app, "GET", &format!("/session/{}/frame", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let frame: FramePayload = serde_json::from_value(frame).unwrap();
    assert_eq!((frame.width, frame.height), (40, 40));

    // exact masks of the analytic scene; only pixels away from silhouettes
    let exact = render_view_exact(&AnalyticScene::toy3(), &s.camera).unwrap().mask;
    let w = 40usize;
    let mut checked = std::collections::BTreeSet::new();
    for v in 1..39usize {
        for u in 1..39usize {
            let l = exact[v * w + u];
            let uniform = (0..3).all(|dv| (0..3).all(|du| exact[(v + dv - 1) * w + u + du - 1] == l));
            if !uniform || (checked.contains(&l) && (u + v) % 7 != 0) {
                continue;
            }
            checked.insert(l);
            let (status, body) = call(&app, "POST", &format!("/session/{}/pick", s.id), Some(json!({ "u": u, "v": v }))).await;
            assert_eq!(status, StatusCode::OK);
            let expected = if l == 0 { Value::Null } else { json!(l) };
            assert_eq!(body["object"], expected, "pixel ({u}, {v})");
            assert_eq!(frame.labels[v * w + u], l);
        }
    }
    assert!(checked.len() >= 4, "labels seen: {checked:?}");

    let (status, _) = call(&app, "POST", &format!("/session/{}/pick", s.id), Some(json!({ "u": 40, "v": 0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn manipulate_applies_rejects_and_undoes() {
    let app = router(AppState::new());
    let s = open(&app).await;
    let uri = format!("/session/{}/manipulate", s.id);

    let (_, plain) = call(&app, "GET", &format!("/session/{}/frame", s.id), None).await;
    let (status, same) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 3 } }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(same["color_png"], plain["color_png"]);
    assert_eq!(same["applied"], json!(true), "{}", same["collisions"]);

    // object 1 sits partly behind sphere 3 in this view; the occlusion rule
    // relabels its hidden samples as sphere 3, so even a null edit is refused
    let (status, hidden) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 1 } }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(hidden["applied"], json!(false));
    assert!(hidden["collisions"].as_array().unwrap().iter().all(|c| c["occupying"] == json!(3)));

    let (status, moved) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 3, "translate": [0.3, 0.0, 0.0] } }))).await;
    assert_eq!(status, StatusCode::OK);
    let moved: FramePayload = serde_json::from_value(moved).unwrap();
    assert!(moved.applied && moved.collisions.is_empty());
    assert_ne!(moved.color_png, plain["color_png"].as_str().unwrap());

    let (status, hit) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 3, "translate": [0.05, -0.45, -0.45] } }))).await;
    assert_eq!(status, StatusCode::OK);
    let hit: FramePayload = serde_json::from_value(hit).unwrap();
    assert!(!hit.applied);
    assert!(!hit.collisions.is_empty());
    assert!(hit.collisions.iter().all(|c| c.target == 3 && c.occupying == 2));
    assert!(hit.rejected_color_png.is_some());
    assert_eq!(hit.color_png, moved.color_png);

    let (status, back) = call(&app, "POST", &format!("/session/{}/undo", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(back["edits"].as_array().unwrap().len(), 1);
    assert_eq!(back["edits"][0]["target"], json!(3));
}

#[tokio::test]
async fn bad_requests() {
    let state = AppState::new();
    let app = router(Arc::clone(&state));
    let (status, _) = call(&app, "GET", "/session/nope/frame", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let s = open(&app).await;
    let uri = format!("/session/{}/manipulate", s.id);
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 2, "scale": "big" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "spec": { "target": 7 } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &format!("/session/{}/undo", s.id), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", "/session", Some(json!({ "scene": "toy3", "resolution": 4 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(state.session_count(), 1);
    let (status, _) = call(&app, "DELETE", &format!("/session/{}", s.id), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn camera_orbit_changes_the_frame() {
    let app = router(AppState::new());
    let s = open(&app).await;
    let (_, a) = call(&app, "GET", &format!("/session/{}/frame", s.id), None).await;
    let (status, b) = call(
        &app,
        "POST",
        &format!("/session/{}/camera", s.id),
        Some(json!({ "orbit": { "azimuth_deg": 120.0, "elevation_deg": 20.0, "radius": 4.0 } })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(a["color_png"], b["color_png"]);
    assert!(b["frame_id"].as_u64() > a["frame_id"].as_u64());
}
