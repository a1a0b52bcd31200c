use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use markerprop::pipeline::{run_propagate, run_template, write_scene, Session};
use markerprop::service::{router, AppState};
use markerprop::synth::{generate_scene, SceneSpec};
use serde_json::Value;
use tower::ServiceExt;

fn session(dir: &Path, spec: SceneSpec) -> Session {
    let manifest = write_scene(&generate_scene(&spec), dir).unwrap();
    Session::load(&manifest).unwrap()
}

fn small(dir: &Path) -> Session {
    session(
        dir,
        SceneSpec {
            seed: 4,
            video_frames: 120,
            ..SceneSpec::default()
        },
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::from(body))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = res.into_parts();
    (
        parts.status,
        parts.headers,
        body.collect().await.unwrap().to_bytes().to_vec(),
    )
}

fn error_code(body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap();
    v["error"]["code"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn lists_sequences_and_serves_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    let frame = std::fs::read(tmp.path().join("frames/cam1/000001.png")).unwrap();
    let app = router(AppState::new(vec![s]).unwrap());

    let (st, _, body) = call(&app, "GET", "/sequences", vec![]).await;
    assert_eq!(st, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v[0]["sequence_id"], "synth4");
    assert_eq!(v[0]["cameras"], serde_json::json!(["cam0", "cam1", "cam2", "cam3"]));
    assert_eq!(v[0]["individuals"], serde_json::json!(["bird0", "bird1"]));

    let (st, headers, body) = call(&app, "GET", "/sequences/synth4/frames/cam1/1", vec![]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(body, frame);

    for uri in [
        "/sequences/nope/frames/cam1/1",
        "/sequences/synth4/frames/cam9/1",
        "/sequences/synth4/frames/cam1/50",
    ] {
        let (st, _, body) = call(&app, "GET", uri, vec![]).await;
        assert_eq!(st, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(error_code(&body), "NotFound");
    }
}

#[tokio::test]
async fn annotations_round_trip_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    let app = router(AppState::new(vec![s]).unwrap());

    let (st, _, original) = call(&app, "GET", "/annotations/synth4", vec![]).await;
    assert_eq!(st, StatusCode::OK);
    let parsed: Value = serde_json::from_slice(&original).unwrap();
    let compact = serde_json::to_vec(&parsed).unwrap();
    assert_ne!(compact, original);

    let (st, _, _) = call(&app, "PUT", "/annotations/synth4", compact.clone()).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (_, _, back) = call(&app, "GET", "/annotations/synth4", vec![]).await;
    assert_eq!(back, compact);
    assert_eq!(std::fs::read(tmp.path().join("annotations.json")).unwrap(), compact);
}

#[tokio::test]
async fn invalid_annotations_are_rejected_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    let before = std::fs::read(tmp.path().join("annotations.json")).unwrap();
    let app = router(AppState::new(vec![s]).unwrap());

    let click = |kp: &str, cam: &str, ind: &str| {
        format!(r#"{{"individual_id":"{ind}","camera_id":"{cam}","video_frame":3,"keypoint":"{kp}","u":1.0,"v":2.0}}"#)
    };
    let bad = [
        format!("[{}]", click("elbow", "cam0", "bird0")),
        format!("[{}]", click("beak", "cam7", "bird0")),
        format!("[{}]", click("beak", "cam0", "bird9")),
        format!("[{0},{0}]", click("beak", "cam0", "bird0")),
        r#"[{"individual_id":"bird0","camera_id":"cam0","video_frame":3,"keypoint":"beak","u":1.0,"v":2.0,"occluded":true}]"#.to_string(),
        "{not json".to_string(),
    ];
    for body in bad {
        let (st, _, resp) = call(&app, "PUT", "/annotations/synth4", body.clone().into_bytes()).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_eq!(error_code(&resp), "SchemaInvalid");
    }
    assert_eq!(std::fs::read(tmp.path().join("annotations.json")).unwrap(), before);

    let (st, _, _) = call(&app, "PUT", "/annotations/other", b"[]".to_vec()).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn calibration_clicks_round_trip_and_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    std::fs::remove_file(tmp.path().join("calibration_clicks.json")).unwrap();
    let app = router(AppState::new(vec![s]).unwrap());

    let (st, _, body) = call(&app, "GET", "/calibration-clicks/synth4", vec![]).await;
    assert_eq!((st, body.as_slice()), (StatusCode::OK, b"[]".as_slice()));

    let good =
        br#"[{"camera_id":"cam2","video_frame":5,"clicks":[{"marker_id":"wand_1","u":10.5,"v":20.25}]}]"#.to_vec();
    let (st, _, _) = call(&app, "PUT", "/calibration-clicks/synth4", good.clone()).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", "/calibration-clicks/synth4", vec![]).await.2, good);

    let dup = br#"[{"camera_id":"cam2","video_frame":5,"clicks":[{"marker_id":"wand_1","u":1,"v":2},{"marker_id":"wand_1","u":3,"v":4}]}]"#;
    let unknown = br#"[{"camera_id":"camX","video_frame":5,"clicks":[]}]"#;
    for body in [dup.to_vec(), unknown.to_vec()] {
        let (st, _, resp) = call(&app, "PUT", "/calibration-clicks/synth4", body).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(error_code(&resp), "SchemaInvalid");
    }
}

#[tokio::test]
async fn template_build_matches_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    let app = router(AppState::new(vec![s.clone()]).unwrap());
    let (st, _, body) = call(&app, "POST", "/template/synth4/build", vec![]).await;
    assert_eq!(st, StatusCode::OK);
    let served: Value = serde_json::from_slice(&body).unwrap();
    let written = std::fs::read(tmp.path().join("out/templates/bird0.json")).unwrap();

    let direct = serde_json::to_value(run_template(&s).unwrap()).unwrap();
    assert_eq!(served, direct);
    assert_eq!(
        std::fs::read(tmp.path().join("out/templates/bird0.json")).unwrap(),
        written
    );

    let (st, _, _) = call(&app, "POST", "/template/none/build", vec![]).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn template_build_without_clicks_is_unprocessable() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    std::fs::write(tmp.path().join("annotations.json"), "[]").unwrap();
    let app = router(AppState::new(vec![s]).unwrap());
    let (st, _, body) = call(&app, "POST", "/template/synth4/build", vec![]).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "MissingInput");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_template_builds_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let s = session(
        tmp.path(),
        SceneSpec {
            seed: 5,
            video_frames: 20_000,
            annotated_frames: 40,
            ..SceneSpec::default()
        },
    );
    let app = router(AppState::new(vec![s]).unwrap());
    let first = tokio::spawn({
        let app = app.clone();
        async move { call(&app, "POST", "/template/synth5/build", vec![]).await.0 }
    });
    let mut statuses = Vec::new();
    while !first.is_finished() {
        statuses.push(call(&app, "POST", "/template/synth5/build", vec![]).await.0);
        tokio::task::yield_now().await;
    }
    statuses.push(first.await.unwrap());
    assert!(statuses.contains(&StatusCode::CONFLICT), "{statuses:?}");
    assert!(statuses.contains(&StatusCode::OK), "{statuses:?}");
    assert!(statuses
        .iter()
        .all(|s| *s == StatusCode::OK || *s == StatusCode::CONFLICT));
}

#[tokio::test]
async fn crops_carry_their_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small(tmp.path());
    let app = router(AppState::new(vec![s.clone()]).unwrap());
    let uri = "/sequences/synth4/crops/bird0/cam0/0";
    assert_eq!(call(&app, "GET", uri, vec![]).await.0, StatusCode::NOT_FOUND);

    run_propagate(&s).unwrap();
    let (st, headers, body) = call(&app, "GET", uri, vec![]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    let origin: Vec<u32> = headers["x-crop-origin"]
        .to_str()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();

    let boxes =
        markerprop::annotate::read_boxes_csv(std::fs::File::open(tmp.path().join("out/boxes.csv")).unwrap()).unwrap();
    let b = boxes
        .iter()
        .find(|b| b.frame == 0 && b.individual == "bird0" && b.camera == "cam0")
        .unwrap();
    assert_eq!(
        origin,
        vec![b.x_min.floor().max(0.0) as u32, b.y_min.floor().max(0.0) as u32]
    );
    let crop = image::load_from_memory(&body).unwrap();
    assert_eq!(crop.width(), (b.x_max.ceil().min(3840.0) as u32) - origin[0]);
    assert_eq!(crop.height(), (b.y_max.ceil().min(2160.0) as u32) - origin[1]);

    let full = image::load_from_memory(&std::fs::read(tmp.path().join("frames/cam0/000000.png")).unwrap())
        .unwrap()
        .to_luma8();
    let crop = crop.to_luma8();
    for (x, y, p) in crop.enumerate_pixels().step_by(97) {
        assert_eq!(p, full.get_pixel(x + origin[0], y + origin[1]));
    }

    assert_eq!(
        call(&app, "GET", "/sequences/synth4/crops/bird7/cam0/0", vec![])
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}
